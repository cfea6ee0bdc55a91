"""Unified model: decoupled training, uncertainty propagation, fingerprints,
and checkpoint serialization."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .data import (
    DataError,
    Dataset,
    FunctionSample,
    NormalizationStats,
    ParameterPrior,
    denormalize_values,
    fit_normalization,
    normalize_values,
)
from .fmpe import (
    ConditionalEncoder,
    FlowField,
    PosteriorEnsemble,
    base_draws,
    fmpe_loss_given,
    integrate_flow,
)
from .forward import ForwardModel, NumericalError, forward_loss
from .spectral import to_phase

CHECKPOINT_FORMAT_VERSION = "fusepde-checkpoint-1"


@dataclass(frozen=True)
class EnsemblePrediction:
    """Propagated output ensemble with mean and (M-1)-normalized std."""

    samples: np.ndarray  # (M, d_s, N), prior units
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "EnsemblePrediction":
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 3 or samples.shape[0] < 2:
            raise DataError("need at least two (d_s, N) output samples")
        return cls(samples, samples.mean(axis=0), samples.std(axis=0, ddof=1))


class FuseModel:
    """Paired forward surrogate and inverse flow with shared normalization."""

    def __init__(
        self,
        config: RunConfig,
        prior: ParameterPrior,
        grid: np.ndarray,
        u_channel_names: tuple[str, ...],
        s_channel_names: tuple[str, ...],
        stats_u: NormalizationStats,
        stats_s: NormalizationStats,
    ):
        config.validate()
        self.config = config
        self.prior = prior
        self.grid = np.ascontiguousarray(grid, dtype=np.float64)
        self.u_channel_names = tuple(u_channel_names)
        self.s_channel_names = tuple(s_channel_names)
        self.stats_u = stats_u
        self.stats_s = stats_s
        n = len(self.grid)
        self.t0 = float(self.grid[0])
        self.period = float(n * (self.grid[1] - self.grid[0]))

        self.forward_model = ForwardModel(
            m=prior.dim,
            d_s=len(s_channel_names),
            width=config.forward.width,
            k_max=config.forward.k_max,
            depth=config.forward.depth,
            proj_width=config.forward.proj_width,
            n_internal=n,
        )
        self.encoder = ConditionalEncoder(
            d_u=len(u_channel_names),
            width=config.encoder.width,
            k_max=config.encoder.k_max,
            depth=config.encoder.depth,
            k_embed=config.encoder.k_embed,
            n_internal=n,
        )
        self.flow = FlowField(
            m=prior.dim,
            embedding_dim=self.encoder.embedding_dim,
            width=config.flow.width,
            depth=config.flow.depth,
            num_time_features=config.flow.num_time_features,
            sigma_min=config.flow.sigma_min,
        )

    # -- prediction ----------------------------------------------------------

    def phase(self, grid) -> torch.Tensor:
        return to_phase(grid, self.t0, self.period)

    def predict(self, xi, grid=None) -> FunctionSample:
        """Forward surrogate prediction in prior units."""
        xi = np.asarray(xi, dtype=np.float64)
        grid = self.grid if grid is None else np.asarray(grid, dtype=np.float64)
        with torch.no_grad():
            pred = self.forward_model.predict_on_phase(
                torch.from_numpy(self.prior.to_unit(xi)), self.phase(grid)
            )
        return FunctionSample(
            grid, denormalize_values(pred.numpy(), self.stats_s), self.s_channel_names
        )

    def _normalized_input(self, u, mask=None) -> torch.Tensor:
        """Normalize a (d_u, N) series and zero-fill masked channels.

        Masking happens in normalized space: a masked channel is exactly the
        zero signal the encoder saw during masking augmentation.
        """
        if isinstance(u, FunctionSample):
            u = u.values
        values = normalize_values(np.asarray(u, dtype=np.float64), self.stats_u)
        if mask is not None:
            if len(mask) != values.shape[0]:
                raise DataError("mask length does not match input channels")
            values = values.copy()
            values[[not k for k in mask.keep]] = 0.0
        return torch.from_numpy(values)

    def sample_posterior(
        self, u, m_samples: int, steps: int, seed: int, mask=None
    ) -> PosteriorEnsemble:
        """Draw posterior parameter samples conditioned on a series u."""
        values = self._normalized_input(u, mask)
        with torch.no_grad():
            embedding = self.encoder(values.unsqueeze(0)).squeeze(0)
        z0 = torch.from_numpy(base_draws(seed, m_samples, self.prior.dim))
        z1 = integrate_flow(self.flow, embedding, z0, steps).numpy()
        return PosteriorEnsemble(self.prior.from_unit(z1), conditioning=f"seed={seed}")

    def propagate(
        self, u, m_samples: int, seed: int, steps: int | None = None, mask=None
    ) -> tuple[PosteriorEnsemble, EnsemblePrediction]:
        """Posterior sampling followed by forward evaluation of every member."""
        if m_samples < 2:
            raise DataError("propagation needs at least two ensemble members")
        steps = self.config.evaluation.ode_steps if steps is None else steps
        ensemble = self.sample_posterior(u, m_samples, steps, seed, mask)
        prediction = self.propagate_parameters(ensemble.samples)
        return ensemble, prediction

    def propagate_parameters(self, params: np.ndarray) -> EnsemblePrediction:
        """Forward-evaluate an explicit (M, m) parameter ensemble."""
        unit = torch.from_numpy(np.ascontiguousarray(self.prior.to_unit(params)))
        with torch.no_grad():
            pred = self.forward_model(unit).numpy()
        return EnsemblePrediction.from_samples(
            denormalize_values(pred, self.stats_s)
        )

    # -- sensitivity ---------------------------------------------------------

    def _sweep_values(self, param_index: int, values, allow_oob: bool) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        lo = self.prior.lower[param_index]
        hi = self.prior.upper[param_index]
        if not allow_oob and (values.min() < lo or values.max() > hi):
            raise DataError(
                f"sweep of {self.prior.names[param_index]!r} leaves the prior "
                f"[{lo}, {hi}]; pass allow_out_of_distribution to override"
            )
        return values

    def fingerprint(
        self,
        param_index: int,
        n_values: int,
        defaults=None,
        values=None,
        allow_out_of_distribution: bool = False,
    ) -> tuple[np.ndarray, list[FunctionSample]]:
        """One-at-a-time sweep of a single parameter, others at their defaults."""
        if not 0 <= param_index < self.prior.dim:
            raise DataError(f"param_index {param_index} out of range")
        defaults = (
            0.5 * (self.prior.lower + self.prior.upper)
            if defaults is None
            else np.asarray(defaults, dtype=np.float64)
        )
        if not allow_out_of_distribution and not self.prior.contains(defaults):
            raise DataError("defaults outside the prior box")
        if values is None:
            values = np.linspace(
                self.prior.lower[param_index], self.prior.upper[param_index], n_values
            )
        values = self._sweep_values(param_index, values, allow_out_of_distribution)
        outputs = []
        for v in values:
            xi = defaults.copy()
            xi[param_index] = v
            outputs.append(self.predict(xi))
        return values, outputs

    def pairwise_fingerprint(
        self,
        index_i: int,
        index_j: int,
        values_i,
        values_j,
        statistic=np.max,
        defaults=None,
        allow_out_of_distribution: bool = False,
    ) -> np.ndarray:
        """Statistic of the prediction over a grid_i x grid_j parameter sweep."""
        if index_i == index_j:
            raise DataError("pairwise fingerprint needs two distinct parameters")
        defaults = (
            0.5 * (self.prior.lower + self.prior.upper)
            if defaults is None
            else np.asarray(defaults, dtype=np.float64)
        )
        values_i = self._sweep_values(index_i, values_i, allow_out_of_distribution)
        values_j = self._sweep_values(index_j, values_j, allow_out_of_distribution)
        out = np.empty((len(values_i), len(values_j)))
        for a, vi in enumerate(values_i):
            for b, vj in enumerate(values_j):
                xi = defaults.copy()
                xi[index_i] = vi
                xi[index_j] = vj
                out[a, b] = statistic(self.predict(xi).values)
        return out

    # -- serialization -------------------------------------------------------

    def _state_dict(self) -> dict:
        return {
            "forward": self.forward_model.state_dict(),
            "encoder": self.encoder.state_dict(),
            "flow": self.flow.state_dict(),
        }

    def save(self, path, training_log=None) -> None:
        """Checkpoint directory: model.json + weights.bin (float64 LE).

        Complex spectral weights live in trailing-2 tensors, i.e. interleaved
        real/imag pairs in the blob.
        """
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest = []
        blobs = []
        for module_name, state in sorted(self._state_dict().items()):
            for tensor_name in sorted(state):
                tensor = state[tensor_name].detach().numpy().astype("<f8")
                manifest.append(
                    {
                        "name": f"{module_name}.{tensor_name}",
                        "shape": list(tensor.shape),
                        "dtype": "<f8",
                    }
                )
                blobs.append(tensor)
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "prior": {
                "names": list(self.prior.names),
                "lower": self.prior.lower.tolist(),
                "upper": self.prior.upper.tolist(),
            },
            "grid": self.grid.tolist(),
            "u_channel_names": list(self.u_channel_names),
            "s_channel_names": list(self.s_channel_names),
            "normalization": {
                "u": self.stats_u.to_dict(),
                "s": self.stats_s.to_dict(),
            },
            "weights": manifest,
        }
        (path / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        with open(path / "weights.bin", "wb") as fh:
            for blob in blobs:
                fh.write(blob.tobytes())
        if training_log is not None:
            (path / "training_log.json").write_text(
                json.dumps(training_log, indent=2) + "\n"
            )

    @classmethod
    def load(cls, path) -> "FuseModel":
        path = Path(path)
        meta_path = path / "model.json"
        if not meta_path.exists():
            raise DataError(f"no model.json in {path}")
        meta = json.loads(meta_path.read_text())
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        model = cls(
            config=RunConfig.from_dict(meta["config"]),
            prior=ParameterPrior(
                meta["prior"]["names"], meta["prior"]["lower"], meta["prior"]["upper"]
            ),
            grid=np.asarray(meta["grid"], dtype=np.float64),
            u_channel_names=meta["u_channel_names"],
            s_channel_names=meta["s_channel_names"],
            stats_u=NormalizationStats.from_dict(meta["normalization"]["u"]),
            stats_s=NormalizationStats.from_dict(meta["normalization"]["s"]),
        )
        raw = np.fromfile(path / "weights.bin", dtype="<f8")
        states = {"forward": {}, "encoder": {}, "flow": {}}
        offset = 0
        for entry in meta["weights"]:
            size = int(np.prod(entry["shape"])) if entry["shape"] else 1
            chunk = raw[offset : offset + size].reshape(entry["shape"])
            offset += size
            module_name, _, tensor_name = entry["name"].partition(".")
            states[module_name][tensor_name] = torch.from_numpy(chunk.copy())
        if offset != raw.size:
            raise DataError("weights.bin size does not match manifest")
        model.forward_model.load_state_dict(states["forward"])
        model.encoder.load_state_dict(states["encoder"])
        model.flow.load_state_dict(states["flow"])
        return model


def _masked_batch(
    u: torch.Tensor, masking_prob: float, generator: torch.Generator
) -> torch.Tensor:
    """Masking augmentation: with probability masking_prob per sample, zero a
    random channel subset (each channel independently with probability 1/2)."""
    if masking_prob == 0:
        return u
    b, d, _ = u.shape
    trigger = torch.rand(b, generator=generator, dtype=torch.float64) < masking_prob
    channels = torch.rand(b, d, generator=generator, dtype=torch.float64) < 0.5
    mask = trigger[:, None] & channels
    out = u.clone()
    out[mask] = 0.0
    return out


def train(dataset: Dataset, config: RunConfig, seed: int | None = None) -> tuple[FuseModel, list[dict]]:
    """Decoupled training of the forward and inverse objectives.

    Each batch takes one optimizer step on the L1 forward loss (theta only)
    and one on the flow-matching loss (phi only). The returned model carries
    the weights of the epoch with the best validation score (val L1 + val
    flow-matching loss on frozen Monte Carlo draws).
    """
    config.validate()
    seed = config.seed if seed is None else seed
    if dataset.split_sizes["train"] < 1 or dataset.split_sizes["val"] < 1:
        raise DataError("training requires non-empty train and val splits")

    xi_tr, u_tr, s_tr = dataset.split("train")
    xi_va, u_va, s_va = dataset.split("val")
    mode = config.training.normalization_mode
    stats_u = fit_normalization(u_tr, mode)
    stats_s = fit_normalization(s_tr, mode)

    torch.manual_seed(seed)
    model = FuseModel(
        config=config,
        prior=dataset.prior,
        grid=dataset.grid,
        u_channel_names=dataset.u_channel_names,
        s_channel_names=dataset.s_channel_names,
        stats_u=stats_u,
        stats_s=stats_s,
    )

    def prep(xi, u, s):
        return (
            torch.from_numpy(np.ascontiguousarray(dataset.prior.to_unit(xi))),
            torch.from_numpy(normalize_values(u, stats_u)),
            torch.from_numpy(normalize_values(s, stats_s)),
        )

    xi_tr_t, u_tr_t, s_tr_t = prep(xi_tr, u_tr, s_tr)
    xi_va_t, u_va_t, s_va_t = prep(xi_va, u_va, s_va)

    # frozen validation draws so the selection metric is comparable across epochs
    val_gen = torch.Generator().manual_seed(seed + 1)
    t_val = torch.rand(len(xi_va_t), 1, dtype=torch.float64, generator=val_gen)
    xi0_val = torch.randn(len(xi_va_t), dataset.prior.dim, dtype=torch.float64, generator=val_gen)

    opt_forward = torch.optim.Adam(
        model.forward_model.parameters(), lr=config.training.learning_rate
    )
    opt_inverse = torch.optim.Adam(
        list(model.encoder.parameters()) + list(model.flow.parameters()),
        lr=config.training.learning_rate,
    )
    epochs = config.training.epochs
    sched_forward = torch.optim.lr_scheduler.CosineAnnealingLR(opt_forward, epochs)
    sched_inverse = torch.optim.lr_scheduler.CosineAnnealingLR(opt_inverse, epochs)

    gen = torch.Generator().manual_seed(seed)
    batch = config.training.batch_size
    n_train = len(xi_tr_t)
    log: list[dict] = []
    best_score = float("inf")
    best_state = None
    initial_l1 = initial_l2 = None

    for epoch in range(epochs):
        perm = torch.randperm(n_train, generator=gen)
        sum_l1 = sum_l2 = 0.0
        n_batches = 0
        for start in range(0, n_train, batch):
            idx = perm[start : start + batch]
            xi_b, u_b, s_b = xi_tr_t[idx], u_tr_t[idx], s_tr_t[idx]

            loss1 = forward_loss(model.forward_model, xi_b, s_b)
            opt_forward.zero_grad()
            loss1.backward()
            opt_forward.step()

            u_masked = _masked_batch(u_b, config.training.masking_prob, gen)
            t_b = torch.rand(len(idx), 1, dtype=torch.float64, generator=gen)
            xi0_b = torch.randn(len(idx), dataset.prior.dim, dtype=torch.float64, generator=gen)
            loss2 = fmpe_loss_given(model.flow, model.encoder(u_masked), xi_b, t_b, xi0_b)
            opt_inverse.zero_grad()
            loss2.backward()
            opt_inverse.step()

            sum_l1 += loss1.item()
            sum_l2 += loss2.item()
            n_batches += 1
        sched_forward.step()
        sched_inverse.step()

        train_l1 = sum_l1 / n_batches
        train_l2 = sum_l2 / n_batches
        if initial_l1 is None:
            initial_l1, initial_l2 = train_l1, train_l2
        if train_l1 > 1e3 * initial_l1 or train_l2 > 1e3 * initial_l2:
            raise NumericalError(
                f"training diverged at epoch {epoch}: "
                f"L1 {train_l1:.3e} (initial {initial_l1:.3e}), "
                f"flow loss {train_l2:.3e} (initial {initial_l2:.3e})"
            )

        with torch.no_grad():
            val_l1 = forward_loss(model.forward_model, xi_va_t, s_va_t).item()
            val_l2 = fmpe_loss_given(
                model.flow, model.encoder(u_va_t), xi_va_t, t_val, xi0_val
            ).item()
        score = val_l1 + val_l2
        log.append(
            {
                "epoch": epoch,
                "train_l1": train_l1,
                "train_fmpe": train_l2,
                "val_l1": val_l1,
                "val_fmpe": val_l2,
                "val_score": score,
            }
        )
        if score < best_score:
            best_score = score
            best_state = copy.deepcopy(model._state_dict())

    model.forward_model.load_state_dict(best_state["forward"])
    model.encoder.load_state_dict(best_state["encoder"])
    model.flow.load_state_dict(best_state["flow"])
    return model, log
