"""Band-limited Fourier machinery shared by the forward and inverse models.

Conventions, fixed so serialized weights are portable:
  forward transform   c_k = (1/N) * sum_n u_n * exp(-2*pi*i*k*n/N),  k = 0..K-1
  inverse evaluation  u(t) = Re[ c_0 + 2 * sum_{k>=1} c_k * exp(+2*pi*i*k*t) ]
for t on the normalized period [0, 1). Only nonnegative modes are stored;
negative modes are implied by conjugate symmetry of real signals. When the
retained band includes the Nyquist mode of an even-length grid (K = N/2 + 1),
that coefficient is stored halved so the weight-2 inverse stays an exact
inverse; plain truncation (K <= N/2) is unaffected.

Transforms are dense O(N*K) matrix products, which also handles evaluation
on irregular query grids.
"""
from __future__ import annotations

import functools
import math

import numpy as np
import torch
from torch import nn


class ShapeError(ValueError):
    """Inconsistent tensor shapes or band limits."""


def check_band_limit(k_max: int, n: int) -> None:
    if not 1 <= k_max <= n // 2 + 1:
        raise ShapeError(f"k_max={k_max} outside [1, {n // 2 + 1}] for grid length {n}")


def to_phase(grid, t0: float, period: float) -> torch.Tensor:
    """Map physical grid points onto the normalized period [0, 1)."""
    if isinstance(grid, np.ndarray):
        grid = torch.from_numpy(np.array(grid, dtype=np.float64))
    else:
        grid = torch.as_tensor(grid, dtype=torch.float64)
    return (grid - t0) / period


@functools.lru_cache(maxsize=64)
def _forward_matrix(n: int, k_max: int) -> torch.Tensor:
    # (k_max, n) complex, includes the 1/N normalization and Nyquist halving
    k = torch.arange(k_max, dtype=torch.float64)[:, None]
    t = torch.arange(n, dtype=torch.float64)[None, :] / n
    mat = torch.exp(-2j * math.pi * k * t) / n
    if n % 2 == 0 and k_max == n // 2 + 1:
        mat[-1] *= 0.5
    return mat


@functools.lru_cache(maxsize=64)
def _uniform_phase(n: int) -> torch.Tensor:
    return torch.arange(n, dtype=torch.float64) / n


def dft_truncated(values, k_max: int) -> torch.Tensor:
    """Leading k_max Fourier coefficients of real channels, shape (..., C, k_max)."""
    if isinstance(values, np.ndarray):
        values = torch.from_numpy(np.array(values, dtype=np.float64))
    else:
        values = torch.as_tensor(values, dtype=torch.float64)
    n = values.shape[-1]
    check_band_limit(k_max, n)
    mat = _forward_matrix(n, k_max)
    return values.to(torch.complex128) @ mat.mT


def idft_on_grid(coeffs, phase) -> torch.Tensor:
    """Evaluate one-sided coefficients at arbitrary phase points in [0, 1)."""
    coeffs = torch.as_tensor(coeffs)
    if not coeffs.is_complex():
        coeffs = coeffs.to(torch.complex128)
    phase = torch.as_tensor(phase, dtype=torch.float64)
    k_max = coeffs.shape[-1]
    weights = torch.full((k_max,), 2.0, dtype=torch.float64)
    weights[0] = 1.0
    k = torch.arange(k_max, dtype=torch.float64)[:, None]
    basis = torch.exp(2j * math.pi * k * phase[None, :])  # (k_max, P)
    return ((coeffs * weights.to(coeffs.dtype)) @ basis).real


def resample(values, k_max: int, phase) -> torch.Tensor:
    """Band-limited interpolation: truncated transform, then evaluation."""
    return idft_on_grid(dft_truncated(values, k_max), phase)


def _complex_weight(tensor: torch.Tensor) -> torch.Tensor:
    # trailing dimension 2 holds (real, imag)
    return torch.view_as_complex(tensor.contiguous())


class ParameterLifting(nn.Module):
    """Affine map from parameters to band-limited functions.

    A linear layer produces complex coefficients of shape (channels, k_max),
    which are then evaluated on the requested phase grid; the output has at
    most k_max active modes at any resolution.
    """

    def __init__(self, in_dim: int, channels: int, k_max: int):
        super().__init__()
        self.in_dim = in_dim
        self.channels = channels
        self.k_max = k_max
        self.linear = nn.Linear(in_dim, channels * k_max * 2).double()

    def coefficients(self, xi: torch.Tensor) -> torch.Tensor:
        if xi.shape[-1] != self.in_dim:
            raise ShapeError(f"expected {self.in_dim} parameters, got {xi.shape[-1]}")
        raw = self.linear(xi).view(*xi.shape[:-1], self.channels, self.k_max, 2)
        return _complex_weight(raw)

    def forward(self, xi: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
        return idft_on_grid(self.coefficients(xi), phase)


class SpectralLayer(nn.Module):
    """One operator layer: per-mode complex linear map plus pointwise bypass.

    output = activation( idft( W_k * dft_K(x) ) + B^T x )  evaluated on the
    uniform grid carried by x. The activation is optional so a trailing layer
    (or a linearity test) can skip it.
    """

    def __init__(self, in_channels: int, out_channels: int, k_max: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.k_max = k_max
        scale = 1.0 / (in_channels * k_max) ** 0.5
        self.weight = nn.Parameter(
            scale * torch.randn(k_max, in_channels, out_channels, 2, dtype=torch.float64)
        )
        self.bypass = nn.Parameter(
            torch.randn(in_channels, out_channels, dtype=torch.float64)
            / in_channels**0.5
        )

    def mix_coefficients(self, coeffs: torch.Tensor) -> torch.Tensor:
        """Apply the per-mode complex weights to (..., in_channels, k_max)."""
        return torch.einsum("...ck,kcd->...dk", coeffs, _complex_weight(self.weight))

    def forward(self, x: torch.Tensor, activation: bool = True) -> torch.Tensor:
        if x.shape[-2] != self.in_channels:
            raise ShapeError(
                f"expected {self.in_channels} channels, got {x.shape[-2]}"
            )
        n = x.shape[-1]
        phase = _uniform_phase(n)
        spectral = idft_on_grid(self.mix_coefficients(dft_truncated(x, self.k_max)), phase)
        out = spectral + torch.einsum("...cn,cd->...dn", x, self.bypass)
        return torch.nn.functional.gelu(out) if activation else out


class SpectralStack(nn.Module):
    """Several spectral layers; activation after each except the last."""

    def __init__(self, channels: int, k_max: int, depth: int):
        super().__init__()
        self.layers = nn.ModuleList(
            SpectralLayer(channels, channels, k_max) for _ in range(depth)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x, activation=i < last)
        return x
