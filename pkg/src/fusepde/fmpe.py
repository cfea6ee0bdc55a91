"""Flow-matching posterior estimation over the (unit-box) parameter space.

A spectral encoder compresses the conditioning series u into a fixed-size
embedding; a fully connected velocity field is trained with the
optimal-transport conditional path

    xi_t = (1 - (1 - sigma_min) t) xi_0 + t xi_1
    l_t  = (xi_1 - (1 - sigma_min) xi_t) / (1 - (1 - sigma_min) t)

and sampling integrates dxi/dt = v(t, xi, embedding) from the standard
normal at t=0 to the posterior at t=1 with fixed-step RK4. Parameters are
normalized to [0,1]^m by the prior box throughout this module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .forward import NumericalError
from .spectral import ShapeError, SpectralStack, dft_truncated


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Parameter samples (M, m) in prior units, plus what conditioned them."""

    samples: np.ndarray
    conditioning: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ShapeError("ensemble must be a non-empty (M, m) matrix")
        if not np.all(np.isfinite(samples)):
            raise NumericalError("non-finite posterior samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def size(self) -> int:
        return self.samples.shape[0]


class ConditionalEncoder(nn.Module):
    """FNO-style encoder producing a grid-independent embedding.

    Pointwise lifting, spectral stack, then a truncated forward transform
    whose real/imag parts are flattened; the embedding size
    width * k_embed * 2 does not depend on the input grid length.
    """

    def __init__(
        self,
        d_u: int,
        width: int = 32,
        k_max: int = 32,
        depth: int = 3,
        k_embed: int = 16,
        n_internal: int = 128,
    ):
        super().__init__()
        self.d_u = d_u
        self.width = width
        self.k_embed = k_embed
        self.n_internal = n_internal
        self.lifting = nn.Linear(d_u, width).double()
        self.stack = SpectralStack(width, k_max, depth)

    @property
    def embedding_dim(self) -> int:
        return self.width * self.k_embed * 2

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        """u (..., d_u, N) on the internal uniform grid -> (..., embedding_dim)."""
        if u.shape[-2] != self.d_u:
            raise ShapeError(f"expected {self.d_u} channels, got {u.shape[-2]}")
        x = self.lifting(u.mT).mT
        x = self.stack(x)
        coeffs = dft_truncated(x, self.k_embed)
        flat = coeffs.flatten(-2)
        return torch.cat([flat.real, flat.imag], dim=-1)


def time_features(t: torch.Tensor, num: int) -> torch.Tensor:
    """Sinusoidal embedding of t in [0,1]; t has shape (..., 1)."""
    freq = 2.0 ** torch.arange(num // 2, dtype=torch.float64) * math.pi
    return torch.cat([torch.sin(freq * t), torch.cos(freq * t)], dim=-1)


class FlowField(nn.Module):
    """Velocity net v(t, xi, embedding) -> R^m."""

    def __init__(
        self,
        m: int,
        embedding_dim: int,
        width: int = 256,
        depth: int = 4,
        num_time_features: int = 16,
        sigma_min: float = 1e-4,
    ):
        super().__init__()
        if not 0.0 < sigma_min <= 0.1:
            raise ValueError(f"sigma_min must be in (0, 0.1], got {sigma_min}")
        self.m = m
        self.sigma_min = sigma_min
        self.num_time_features = num_time_features
        dims = [m + embedding_dim + num_time_features] + [width] * depth
        self.hidden = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]).double() for i in range(depth)
        )
        self.out = nn.Linear(width, m).double()

    def forward(self, t: torch.Tensor, xi: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        h = torch.cat([xi, embedding, time_features(t, self.num_time_features)], dim=-1)
        for layer in self.hidden:
            h = torch.nn.functional.gelu(layer(h))
        return self.out(h)


def ot_path(xi0, xi1, t, sigma_min: float):
    """Optimal-transport conditional path point and its target field."""
    xi0 = torch.as_tensor(xi0, dtype=torch.float64)
    xi1 = torch.as_tensor(xi1, dtype=torch.float64)
    t = torch.as_tensor(t, dtype=torch.float64)
    if torch.any(t < 0) or torch.any(t >= 1):
        raise ValueError("path time t must lie in [0, 1)")
    shrink = 1.0 - (1.0 - sigma_min) * t
    xi_t = shrink * xi0 + t * xi1
    target = (xi1 - (1.0 - sigma_min) * xi_t) / shrink
    return xi_t, target


def fmpe_loss_given(
    flow: FlowField,
    embedding: torch.Tensor,
    xi1: torch.Tensor,
    t: torch.Tensor,
    xi0: torch.Tensor,
) -> torch.Tensor:
    """Flow-matching residual for fixed path draws (deterministic)."""
    xi_t, target = ot_path(xi0, xi1, t, flow.sigma_min)
    residual = flow(t, xi_t, embedding) - target
    loss = (residual**2).sum(dim=-1).mean()
    if not torch.isfinite(loss):
        raise NumericalError("non-finite flow-matching residual")
    return loss


def fmpe_loss(
    flow: FlowField,
    encoder: ConditionalEncoder,
    u: torch.Tensor,
    xi1: torch.Tensor,
    generator: torch.Generator,
) -> torch.Tensor:
    """Monte Carlo flow-matching loss on a batch of (u, unit-box xi) pairs."""
    b = xi1.shape[0]
    t = torch.rand(b, 1, dtype=torch.float64, generator=generator)
    xi0 = torch.randn(b, flow.m, dtype=torch.float64, generator=generator)
    return fmpe_loss_given(flow, encoder(u), xi1, t, xi0)


def base_draws(seed: int, m_samples: int, dim: int) -> np.ndarray:
    """Standard-normal starting points, one RNG stream per (seed, index)."""
    out = np.empty((m_samples, dim))
    for i in range(m_samples):
        out[i] = np.random.default_rng([seed, i]).standard_normal(dim)
    return out


@torch.no_grad()
def integrate_flow(
    flow: FlowField,
    embedding: torch.Tensor,
    z0: torch.Tensor,
    steps: int,
) -> torch.Tensor:
    """Fixed-step RK4 from t=0 to t=1."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z = z0
    h = 1.0 / steps
    if embedding.dim() == 1:
        embedding = embedding.expand(z.shape[0], -1)
    for i in range(steps):
        t = torch.full((z.shape[0], 1), i * h, dtype=torch.float64)
        k1 = flow(t, z, embedding)
        k2 = flow(t + h / 2, z + h / 2 * k1, embedding)
        k3 = flow(t + h / 2, z + h / 2 * k2, embedding)
        k4 = flow(t + h, z + h * k3, embedding)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not torch.all(torch.isfinite(z)):
            raise NumericalError(f"non-finite flow state at t={(i + 1) * h:.4f}")
    return z


def sample_posterior_unit(
    flow: FlowField,
    encoder: ConditionalEncoder,
    u: torch.Tensor,
    m_samples: int,
    steps: int,
    seed: int,
) -> np.ndarray:
    """Unit-box posterior samples (M, m) for one conditioning series u (d_u, N)."""
    if m_samples < 1:
        raise ValueError("need at least one posterior sample")
    with torch.no_grad():
        embedding = encoder(u.unsqueeze(0)).squeeze(0)
    z0 = torch.from_numpy(base_draws(seed, m_samples, flow.m))
    return integrate_flow(flow, embedding, z0, steps).numpy()
