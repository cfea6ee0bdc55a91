"""Deterministic forward surrogate: parameters -> normalized output series.

The network is projection o spectral stack o band-limited lifting. All
spectral work happens on a fixed internal uniform grid; queries on other
grids are answered by band-limited interpolation of the internal output,
which makes predictions exactly discretization invariant.
"""
from __future__ import annotations

import torch
from torch import nn

from .spectral import (
    ParameterLifting,
    ShapeError,
    SpectralStack,
    _uniform_phase,
    resample,
)


class NumericalError(RuntimeError):
    """A numerical failure (NaN/Inf) that must not propagate silently."""


class ForwardModel(nn.Module):
    def __init__(
        self,
        m: int,
        d_s: int,
        width: int = 32,
        k_max: int = 16,
        depth: int = 4,
        proj_width: int = 64,
        n_internal: int = 128,
    ):
        super().__init__()
        self.m = m
        self.d_s = d_s
        self.k_max = k_max
        self.n_internal = n_internal
        self.lifting = ParameterLifting(m, width, k_max)
        self.stack = SpectralStack(width, k_max, depth)
        self.proj_hidden = nn.Linear(width, proj_width).double()
        self.proj_out = nn.Linear(proj_width, d_s).double()

    def forward(self, xi: torch.Tensor) -> torch.Tensor:
        """Predict on the internal uniform grid; xi (..., m) -> (..., d_s, N)."""
        if xi.shape[-1] != self.m:
            raise ShapeError(f"expected {self.m} parameters, got {xi.shape[-1]}")
        x = self.lifting(xi, _uniform_phase(self.n_internal))
        x = self.stack(x)
        x = x.mT  # (..., N, width), pointwise projection
        x = self.proj_out(torch.nn.functional.gelu(self.proj_hidden(x)))
        return x.mT

    def predict_on_phase(self, xi: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
        """Evaluate at arbitrary phase points via band-limited interpolation."""
        internal = self.forward(xi)
        uniform = _uniform_phase(self.n_internal)
        if phase.shape == uniform.shape and torch.equal(phase, uniform):
            return internal
        return resample(internal, self.n_internal // 2 + 1, phase)


def forward_loss(model: ForwardModel, xi: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Discretized L1 objective: mean absolute error over batch x channels x grid."""
    pred = model(xi)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {tuple(pred.shape)} != target {tuple(target.shape)}")
    if not torch.all(torch.isfinite(pred)):
        raise NumericalError("non-finite values in forward prediction")
    return (pred - target).abs().mean()
