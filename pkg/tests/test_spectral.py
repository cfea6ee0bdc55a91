import numpy as np
import pytest
import torch

from fusepde.spectral import (
    ParameterLifting,
    ShapeError,
    SpectralLayer,
    SpectralStack,
    _uniform_phase,
    dft_truncated,
    idft_on_grid,
    resample,
    to_phase,
)

torch.manual_seed(0)


def random_band_limited(channels, k_max, seed):
    """Complex one-sided coefficients with no energy at or above k_max."""
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(channels, k_max)) + 1j * rng.normal(size=(channels, k_max))
    c[:, 0] = c[:, 0].real  # mode 0 of a real signal is real
    return torch.from_numpy(c)


class TestDft:
    def test_constant_signal(self):
        c = dft_truncated(torch.ones(1, 4, dtype=torch.float64), 2)
        assert c[0, 0] == pytest.approx(1.0)
        assert abs(c[0, 1]) == pytest.approx(0.0, abs=1e-15)

    def test_single_mode_by_direct_summation(self):
        # [0, 1, 0, -1] has c_1 = -0.5i from the defining sum
        c = dft_truncated(torch.tensor([[0.0, 1.0, 0.0, -1.0]]), 2)
        assert c[0, 1].real == pytest.approx(0.0, abs=1e-15)
        assert c[0, 1].imag == pytest.approx(-0.5)

    def test_matches_direct_summation_random(self):
        rng = np.random.default_rng(7)
        u = rng.normal(size=(1, 11))
        c = dft_truncated(torch.from_numpy(u), 5).numpy()[0]
        n = 11
        for k in range(5):
            direct = np.sum(u[0] * np.exp(-2j * np.pi * k * np.arange(n) / n)) / n
            assert c[k] == pytest.approx(direct, abs=1e-12)

    def test_linearity(self):
        u = torch.randn(2, 16, dtype=torch.float64)
        v = torch.randn(2, 16, dtype=torch.float64)
        lhs = dft_truncated(2.5 * u - 1.5 * v, 6)
        rhs = 2.5 * dft_truncated(u, 6) - 1.5 * dft_truncated(v, 6)
        assert (lhs - rhs).abs().max() < 1e-12

    def test_band_limit_validation(self):
        with pytest.raises(ShapeError):
            dft_truncated(torch.zeros(1, 8), 6)
        with pytest.raises(ShapeError):
            dft_truncated(torch.zeros(1, 8), 0)


class TestIdft:
    def test_constant_coefficient(self):
        c = torch.zeros(1, 3, dtype=torch.complex128)
        c[0, 0] = 1.0
        out = idft_on_grid(c, torch.linspace(0, 0.9, 7, dtype=torch.float64))
        np.testing.assert_allclose(out.numpy(), 1.0)

    def test_full_band_round_trip(self):
        # includes the Nyquist mode of an even grid
        for n in (16, 17):
            x = torch.randn(3, n, dtype=torch.float64)
            back = idft_on_grid(dft_truncated(x, n // 2 + 1), _uniform_phase(n))
            assert (x - back).abs().max() < 1e-10

    def test_band_limited_round_trip(self):
        c = random_band_limited(2, 5, seed=1)
        u = idft_on_grid(c, _uniform_phase(16))
        assert (dft_truncated(u, 5) - c).abs().max() < 1e-10

    def test_nyquist_exact_resampling(self):
        # same coefficients on N=4 and N=8 grids re-transform identically
        c = random_band_limited(1, 2, seed=2)
        u4 = idft_on_grid(c, _uniform_phase(4))
        u8 = idft_on_grid(c, _uniform_phase(8))
        assert (dft_truncated(u4, 2) - dft_truncated(u8, 2)).abs().max() < 1e-12

    def test_parseval_full_band(self):
        n = 16
        x = torch.randn(1, n, dtype=torch.float64)
        c = dft_truncated(x, n // 2 + 1).numpy()[0]
        # undo the stored Nyquist halving for the energy count
        c[-1] *= 2.0
        weights = np.ones(len(c))
        weights[1:-1] = 2.0  # conjugate modes
        energy_spectral = np.sum(weights * np.abs(c) ** 2)
        energy_grid = float((x**2).mean())
        assert energy_spectral == pytest.approx(energy_grid, rel=1e-12)


class TestToPhase:
    def test_maps_grid_to_unit_interval(self):
        grid = np.arange(8) / 8 * 4.0 + 2.0
        phase = to_phase(grid, 2.0, 4.0)
        np.testing.assert_allclose(phase.numpy(), np.arange(8) / 8)


class TestLifting:
    def test_zero_map_gives_zero_function(self):
        lift = ParameterLifting(3, 2, 4)
        with torch.no_grad():
            lift.linear.weight.zero_()
            lift.linear.bias.zero_()
        out = lift(torch.zeros(1, 3, dtype=torch.float64), _uniform_phase(16))
        assert out.abs().max() == 0.0

    def test_resolution_invariant_coefficients(self):
        lift = ParameterLifting(5, 3, 8)
        xi = torch.randn(2, 5, dtype=torch.float64)
        a = lift(xi, _uniform_phase(128))
        b = lift(xi, _uniform_phase(256))
        assert (dft_truncated(a, 8) - dft_truncated(b, 8)).abs().max() < 1e-10

    def test_affine_in_parameters(self):
        lift = ParameterLifting(4, 2, 6)
        x1 = torch.randn(1, 4, dtype=torch.float64)
        x2 = torch.randn(1, 4, dtype=torch.float64)
        phase = _uniform_phase(32)
        lhs = lift(x1, phase) + lift(x2, phase) - lift(torch.zeros(1, 4, dtype=torch.float64), phase)
        rhs = lift(x1 + x2, phase)
        assert (lhs - rhs).abs().max() < 1e-10

    def test_shape_mismatch(self):
        lift = ParameterLifting(4, 2, 6)
        with pytest.raises(ShapeError):
            lift(torch.zeros(1, 3, dtype=torch.float64), _uniform_phase(8))


def configure_identity(layer: SpectralLayer):
    with torch.no_grad():
        layer.weight.zero_()
        for k in range(layer.k_max):
            for c in range(layer.in_channels):
                layer.weight[k, c, c, 0] = 1.0
        layer.bypass.zero_()


class TestSpectralLayer:
    def test_identity_spectral_weights(self):
        layer = SpectralLayer(3, 3, 9)  # full band for N=16
        configure_identity(layer)
        x = torch.randn(2, 3, 16, dtype=torch.float64)
        assert (layer(x, activation=False) - x).abs().max() < 1e-10

    def test_identity_bypass(self):
        layer = SpectralLayer(3, 3, 4)
        with torch.no_grad():
            layer.weight.zero_()
            layer.bypass.copy_(torch.eye(3, dtype=torch.float64))
        x = torch.randn(2, 3, 16, dtype=torch.float64)
        assert (layer(x, activation=False) - x).abs().max() < 1e-12

    def test_mode_zero_arithmetic(self):
        # K_max=1 keeps only the mean; output = mean * weight per channel
        layer = SpectralLayer(1, 1, 1)
        with torch.no_grad():
            layer.weight.zero_()
            layer.weight[0, 0, 0, 0] = 3.0
            layer.bypass.zero_()
        x = torch.randn(1, 1, 8, dtype=torch.float64)
        out = layer(x, activation=False)
        np.testing.assert_allclose(out.detach().numpy(), 3.0 * x.mean().item(), atol=1e-12)

    def test_linear_without_activation(self):
        layer = SpectralLayer(2, 2, 5)
        x = torch.randn(1, 2, 16, dtype=torch.float64)
        y = torch.randn(1, 2, 16, dtype=torch.float64)
        lhs = layer(2.0 * x + 3.0 * y, activation=False)
        rhs = 2.0 * layer(x, activation=False) + 3.0 * layer(y, activation=False)
        assert (lhs - rhs).abs().max() < 1e-10

    def test_discretization_invariance_before_activation(self):
        layer = SpectralLayer(2, 2, 6)
        c = random_band_limited(2, 6, seed=3)
        x64 = idft_on_grid(c, _uniform_phase(64)).unsqueeze(0)
        x128 = idft_on_grid(c, _uniform_phase(128)).unsqueeze(0)
        out64 = layer(x64, activation=False)
        out128 = layer(x128, activation=False)
        diff = dft_truncated(out64, 6) - dft_truncated(out128, 6)
        assert diff.abs().max() < 1e-8

    def test_channel_mismatch(self):
        layer = SpectralLayer(2, 2, 4)
        with pytest.raises(ShapeError):
            layer(torch.zeros(1, 3, 16, dtype=torch.float64))


class TestResample:
    def test_band_limited_interpolation_exact(self):
        c = random_band_limited(1, 4, seed=4)
        coarse = idft_on_grid(c, _uniform_phase(16))
        fine = idft_on_grid(c, _uniform_phase(48))
        assert (resample(coarse, 8, _uniform_phase(48)) - fine).abs().max() < 1e-10


class TestStack:
    def test_depth_one_skips_activation(self):
        stack = SpectralStack(2, 4, 1)
        x = torch.randn(1, 2, 16, dtype=torch.float64)
        direct = stack.layers[0](x, activation=False)
        assert torch.equal(stack(x), direct)
