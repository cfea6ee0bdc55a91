"""End-to-end acceptance suite.

Each test evaluates one numbered criterion at its stated tolerance and prints
a single PASS/FAIL line (echoed again in the pytest terminal summary).
Criteria 1-3 and 6-7 use the session-scoped trained models from conftest;
criteria 4-5 are deterministic oracle and gradient suites.
"""
import numpy as np
import pytest
import torch
from scipy.stats import kstest

from conftest import cached_array, record
from gradcheck import relative_gradient_errors
from fusepde.data import ChannelMask
from fusepde.fmpe import (
    ConditionalEncoder,
    FlowField,
    fmpe_loss_given,
    integrate_flow,
    ot_path,
)
from fusepde.forward import ForwardModel, forward_loss
from fusepde.metrics import (
    crps_cdf_integral,
    crps_empirical,
    crps_parameters,
    relative_lp_error,
    tv_pushforward_check,
)
from fusepde.spectral import (
    ParameterLifting,
    _uniform_phase,
    dft_truncated,
    idft_on_grid,
    resample,
)
from fusepde.synth import solve_closed_form


def forward_rel_l1(model, xi, s):
    return np.array(
        [relative_lp_error(model.predict(xi[i]).values, s[i], 1) for i in range(len(xi))]
    )


def unified_rel_l1(model, ensembles, s):
    return np.array(
        [
            relative_lp_error(model.propagate_parameters(ensembles[i]).mean, s[i], 1)
            for i in range(len(s))
        ]
    )


def mean_crps(ensembles, xi, prior):
    return float(
        np.mean([crps_parameters(ensembles[i], xi[i], prior) for i in range(len(xi))])
    )


def test_criterion_1_synthetic_end_to_end(acceptance):
    model = acceptance["models"][2048]
    dataset = acceptance["dataset"]
    xi, _, s = dataset.split("test")
    ens = acceptance["ensembles_128"][2048]

    fwd = forward_rel_l1(model, xi, s).mean()
    uni = unified_rel_l1(model, ens, s).mean()
    crps = mean_crps(ens, xi, dataset.prior) * 100.0

    passed = fwd < 0.02 and uni < 0.05 and crps < 5.0
    record(
        "criterion 1 (end-to-end)",
        passed,
        f"forward rel L1 {100 * fwd:.3f}% (< 2%), unified rel L1 {100 * uni:.3f}% "
        f"(< 5%), parameter CRPS x100 {crps:.3f} (< 5)",
    )
    assert passed


def test_criterion_2_data_scaling(acceptance):
    dataset = acceptance["dataset"]
    xi, _, s = dataset.split("test")
    crps_by_n, uni_by_n = [], []
    for n in (128, 512, 2048):
        ens = acceptance["ensembles_128"][n]
        crps_by_n.append(mean_crps(ens, xi, dataset.prior))
        uni_by_n.append(unified_rel_l1(acceptance["models"][n], ens, s).mean())
    passed = all(a > b for a, b in zip(crps_by_n, crps_by_n[1:])) and all(
        a > b for a, b in zip(uni_by_n, uni_by_n[1:])
    )
    record(
        "criterion 2 (data scaling)",
        passed,
        "n=128/512/2048: CRPS x100 "
        + "/".join(f"{100 * c:.2f}" for c in crps_by_n)
        + ", unified rel L1 "
        + "/".join(f"{100 * u:.2f}%" for u in uni_by_n)
        + " (both strictly decreasing)",
    )
    assert passed


def test_criterion_3_ensemble_plateau(acceptance):
    dataset = acceptance["dataset"]
    xi, _, _ = dataset.split("test")
    big = acceptance["plateau_4096"]
    crps_512 = mean_crps(big[:, :512], xi[:32], dataset.prior)
    crps_4096 = mean_crps(big, xi[:32], dataset.prior)
    rel = abs(crps_512 - crps_4096) / crps_4096
    passed = rel < 0.10
    record(
        "criterion 3 (ensemble plateau)",
        passed,
        f"CRPS x100 at M=512: {100 * crps_512:.3f}, at M=4096: {100 * crps_4096:.3f}, "
        f"relative gap {100 * rel:.2f}% (< 10%) on 32 test inputs",
    )
    assert passed


def test_criterion_4_oracle_suites():
    worst = {}

    # CRPS plug-in vs exact CDF-integral oracle
    rng = np.random.default_rng(2)
    worst["crps"] = max(
        abs(crps_empirical(x, y) - crps_cdf_integral(x, y))
        for x, y in (
            (rng.normal(size=rng.integers(1, 8)), rng.normal()) for _ in range(50)
        )
    )

    # relative Lp worked examples
    truth = np.ones((1, 4))
    pred = truth.copy()
    pred[0, 0] += 1.0
    worst["rel_lp"] = max(
        abs(relative_lp_error(pred, truth, 1) - 0.25),
        abs(relative_lp_error(pred, truth, 2) - 0.5),
        abs(relative_lp_error(1.1 * truth, truth, 1) - 0.1),
    )

    # DFT / inverse round trip at the full band, both grid parities
    rt = 0.0
    for n in (16, 17):
        x = torch.from_numpy(rng.normal(size=(3, n)))
        k = n // 2 + 1
        back = idft_on_grid(dft_truncated(x, k), _uniform_phase(n))
        rt = max(rt, (back - x).abs().max().item())
    worst["round_trip"] = rt

    # discretization invariance: lifting, encoder, forward predictions
    torch.manual_seed(0)
    lift = ParameterLifting(in_dim=3, channels=4, k_max=4)
    xi = torch.randn(2, 3, dtype=torch.float64)
    l_coarse = lift(xi, _uniform_phase(16))
    l_fine = lift(xi, _uniform_phase(32))
    inv = (l_fine[..., ::2] - l_coarse).abs().max().item()

    torch.manual_seed(1)
    enc = ConditionalEncoder(d_u=2, width=4, k_max=6, depth=2, k_embed=3, n_internal=32)
    coeffs = rng.normal(size=(2, 6)) + 1j * rng.normal(size=(2, 6))
    coeffs[:, 0] = coeffs[:, 0].real
    c = torch.from_numpy(coeffs)
    u32 = idft_on_grid(c, _uniform_phase(32)).unsqueeze(0)
    u64 = resample(idft_on_grid(c, _uniform_phase(64)).unsqueeze(0), 6, _uniform_phase(32))
    inv = max(inv, (enc(u32) - enc(u64)).abs().max().item())

    torch.manual_seed(2)
    fwd = ForwardModel(m=3, d_s=2, width=4, k_max=4, depth=2, proj_width=4, n_internal=16)
    with torch.no_grad():
        base = fwd(xi)
        fine = fwd.predict_on_phase(xi, _uniform_phase(32))
    inv = max(inv, (fine[..., ::2] - base).abs().max().item())
    worst["invariance"] = inv

    # RK4 sampler against the closed-form linear ODE xi' = -xi
    class Decay(FlowField):
        def __init__(self):
            super().__init__(m=3, embedding_dim=1, width=4, depth=1)

        def forward(self, t, xi, embedding):
            return -xi

    z0 = torch.from_numpy(rng.normal(size=(10, 3)))
    out = integrate_flow(Decay(), torch.zeros(1, dtype=torch.float64), z0, steps=100)
    worst["ode"] = float(
        np.max(np.abs(out.numpy() - np.exp(-1.0) * z0.numpy()) / np.abs(np.exp(-1.0) * z0.numpy()))
    )

    # flow-matching loss with the analytic conditional field plugged in
    xi1 = torch.from_numpy(rng.normal(size=(1, 3)))

    class Analytic(FlowField):
        def __init__(self):
            super().__init__(m=3, embedding_dim=1, width=4, depth=1, sigma_min=1e-4)

        def forward(self, t, xi, embedding):
            return (xi1 - (1 - self.sigma_min) * xi) / (1 - (1 - self.sigma_min) * t)

    gen = torch.Generator().manual_seed(0)
    t = torch.rand(100000, 1, dtype=torch.float64, generator=gen)
    xi0 = torch.randn(100000, 3, dtype=torch.float64, generator=gen)
    worst["fmpe"] = fmpe_loss_given(
        Analytic(), torch.zeros(100000, 1, dtype=torch.float64), xi1.expand(100000, 3), t, xi0
    ).item()

    # total-variation data-processing property, 1000 randomized instances
    viol = 0.0
    rng2 = np.random.default_rng(9)
    for _ in range(1000):
        n = int(rng2.integers(2, 9))
        p, q = rng2.dirichlet(np.ones(n)), rng2.dirichlet(np.ones(n))
        before, after = tv_pushforward_check(p, q, rng2.integers(0, n, size=n))
        viol = max(viol, after - before)
    worst["tv"] = viol

    passed = (
        worst["crps"] < 1e-6
        and worst["rel_lp"] < 1e-12
        and worst["round_trip"] < 1e-10
        and worst["invariance"] < 1e-8
        and worst["ode"] < 1e-6
        and worst["fmpe"] < 1e-3
        and worst["tv"] <= 1e-12
    )
    record(
        "criterion 4 (oracle suites)",
        passed,
        f"crps {worst['crps']:.1e} (<1e-6), round trip {worst['round_trip']:.1e} "
        f"(<1e-10), invariance {worst['invariance']:.1e} (<1e-8), ode "
        f"{worst['ode']:.1e} (<1e-6), fmpe {worst['fmpe']:.1e} (<1e-3), tv "
        f"violation {worst['tv']:.1e} (<=1e-12)",
    )
    assert passed


def test_criterion_5_gradient_checks():
    torch.manual_seed(3)
    fwd = ForwardModel(m=3, d_s=2, width=4, k_max=4, depth=2, proj_width=4, n_internal=16)
    torch.manual_seed(4)
    xi = torch.randn(4, 3, dtype=torch.float64)
    target = torch.randn(4, 2, 16, dtype=torch.float64)
    err_fwd = relative_gradient_errors(
        lambda: forward_loss(fwd, xi, target), fwd.parameters(), n_entries=100, seed=0
    ).max()

    torch.manual_seed(8)
    enc = ConditionalEncoder(d_u=2, width=4, k_max=6, depth=2, k_embed=3, n_internal=32)
    torch.manual_seed(9)
    flow = FlowField(m=3, embedding_dim=enc.embedding_dim, width=16, depth=2)
    torch.manual_seed(10)
    u = torch.randn(4, 2, 32, dtype=torch.float64)
    xi1 = torch.rand(4, 3, dtype=torch.float64)
    t = torch.rand(4, 1, dtype=torch.float64)
    xi0 = torch.randn(4, 3, dtype=torch.float64)
    err_fmpe = relative_gradient_errors(
        lambda: fmpe_loss_given(flow, enc(u), xi1, t, xi0),
        list(flow.parameters()) + list(enc.parameters()),
        n_entries=100,
        seed=1,
    ).max()

    passed = err_fwd < 1e-4 and err_fmpe < 1e-4
    record(
        "criterion 5 (gradient checks)",
        passed,
        f"max relative error vs central differences: forward loss {err_fwd:.1e}, "
        f"flow-matching loss {err_fmpe:.1e} (both < 1e-4, 100 weights each)",
    )
    assert passed


def test_criterion_6_posterior_sanity(acceptance):
    model = acceptance["models"][2048]
    dataset = acceptance["dataset"]
    xi, u_test, _ = dataset.split("test")
    ens = acceptance["coverage_512"]

    inside = [
        bool(np.all((ens[i].min(axis=0) <= xi[i]) & (xi[i] <= ens[i].max(axis=0))))
        for i in range(len(xi))
    ]
    coverage = float(np.mean(inside))

    mask = ChannelMask((False,) * len(model.u_channel_names))
    prior_samples = cached_array(
        acceptance["config"],
        "post-fullmask-M4096",
        lambda: model.sample_posterior(
            u_test[0], 4096, model.config.evaluation.ode_steps, seed=77, mask=mask
        ).samples,
    )
    unit = dataset.prior.to_unit(prior_samples)
    ks = [kstest(unit[:, j], "uniform").statistic for j in range(dataset.prior.dim)]

    passed = coverage >= 0.90 and max(ks) < 0.2
    record(
        "criterion 6 (posterior sanity)",
        passed,
        f"min-max box coverage {100 * coverage:.1f}% (>= 90%, M=512), full-mask "
        f"KS to uniform prior max {max(ks):.3f} (< 0.2, per-parameter "
        + "/".join(f"{k:.3f}" for k in ks)
        + ")",
    )
    assert passed


def test_criterion_7_sensitivity_fingerprint(acceptance):
    model = acceptance["models"][2048]
    prior = acceptance["dataset"].prior
    problem = acceptance["problem"]
    # sweep a 10% of its prior width beyond the upper bound; c inside the prior
    width_a = prior.upper[0] - prior.lower[0]
    values_a = np.linspace(prior.lower[0], prior.upper[0] + 0.1 * width_a, 20)
    values_c = np.linspace(prior.lower[3], prior.upper[3], 20)
    surrogate = model.pairwise_fingerprint(
        0, 3, values_a, values_c, statistic=np.max, allow_out_of_distribution=True
    )
    defaults = 0.5 * (prior.lower + prior.upper)
    truth = np.empty_like(surrogate)
    for i, a in enumerate(values_a):
        for j, c in enumerate(values_c):
            xi = defaults.copy()
            xi[0], xi[3] = a, c
            truth[i, j] = solve_closed_form(xi, problem.sensors, problem.grid).values.max()
    rel_l1 = float(np.abs(surrogate - truth).sum() / np.abs(truth).sum())
    worst_point = float(np.max(np.abs(surrogate - truth) / np.abs(truth)))
    passed = rel_l1 < 0.05
    record(
        "criterion 7 (sensitivity fingerprint)",
        passed,
        f"20x20 (a, c) peak-value sweep incl. 10% out-of-prior band in a: rel L1 "
        f"{100 * rel_l1:.2f}% (< 5%), worst point {100 * worst_point:.2f}%",
    )
    assert passed
