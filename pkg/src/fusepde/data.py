"""Core domain types: priors, function samples, datasets, normalization, masking.

All containers are immutable after construction and hold float64 numpy
arrays, so they can be shared freely between workers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = "fusepde-dataset-1"

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Invalid or inconsistent data (shapes, finiteness, file format)."""


def _as_array(x, name: str, ndim: int) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != ndim:
        raise DataError(f"{name} must have {ndim} dimension(s), got {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite values")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParameterVector:
    """A point in the m-dimensional parameter space."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_array(self.values, "values", 1))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ParameterPrior:
    """Box prior with independent uniform components."""

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", _as_array(self.lower, "lower", 1))
        object.__setattr__(self, "upper", _as_array(self.upper, "upper", 1))
        if not (len(self.names) == len(self.lower) == len(self.upper)):
            raise DataError("prior names/lower/upper lengths differ")
        if not np.all(self.lower < self.upper):
            raise DataError("prior requires lower < upper in every component")

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n parameter vectors uniformly from the box, shape (n, m)."""
        return self.lower + rng.random((n, self.dim)) * self.width

    def contains(self, xi) -> bool:
        xi = np.asarray(xi, dtype=np.float64)
        return bool(np.all(xi >= self.lower) and np.all(xi <= self.upper))

    def to_unit(self, xi) -> np.ndarray:
        """Map parameters into [0,1]^m by the box bounds."""
        return (np.asarray(xi, dtype=np.float64) - self.lower) / self.width

    def from_unit(self, z) -> np.ndarray:
        return self.lower + np.asarray(z, dtype=np.float64) * self.width


@dataclass(frozen=True)
class FunctionSample:
    """A multichannel time series on an explicit, strictly increasing grid."""

    grid: np.ndarray
    values: np.ndarray
    channel_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "grid", _as_array(self.grid, "grid", 1))
        object.__setattr__(self, "values", _as_array(self.values, "values", 2))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if np.any(np.diff(self.grid) <= 0):
            raise DataError("grid must be strictly increasing")
        c, n = self.values.shape
        if c != len(self.channel_names):
            raise DataError(
                f"values has {c} channels but {len(self.channel_names)} names given"
            )
        if n != len(self.grid):
            raise DataError(f"values has {n} columns but grid has {len(self.grid)}")

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ChannelMask:
    """Boolean keep-flag per input channel; masked channels are zero-filled."""

    keep: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "keep", tuple(bool(k) for k in self.keep))

    def __len__(self) -> int:
        return len(self.keep)

    @classmethod
    def keep_all(cls, n: int) -> "ChannelMask":
        return cls((True,) * n)

    @classmethod
    def from_names(cls, channel_names, masked_names) -> "ChannelMask":
        unknown = set(masked_names) - set(channel_names)
        if unknown:
            raise DataError(f"unknown channel names in mask: {sorted(unknown)}")
        return cls(tuple(name not in set(masked_names) for name in channel_names))


def apply_mask(sample: FunctionSample, mask: ChannelMask) -> FunctionSample:
    """Zero-fill masked channels; kept channels and the grid are unchanged."""
    if len(mask) != sample.num_channels:
        raise DataError(
            f"mask length {len(mask)} != channel count {sample.num_channels}"
        )
    values = sample.values.copy()
    values[[not k for k in mask.keep]] = 0.0
    return FunctionSample(sample.grid, values, sample.channel_names)


@dataclass(frozen=True)
class NormalizationStats:
    """Frozen per-channel scaling fitted on the training split.

    mode "min-max" rescales each channel to [0,1] over the training data;
    mode "max-scale" divides each channel by its training maximum.
    """

    mode: str
    channel_min: np.ndarray
    channel_max: np.ndarray

    def __post_init__(self):
        if self.mode not in ("min-max", "max-scale"):
            raise DataError(f"unknown normalization mode {self.mode!r}")
        object.__setattr__(
            self, "channel_min", _as_array(self.channel_min, "channel_min", 1)
        )
        object.__setattr__(
            self, "channel_max", _as_array(self.channel_max, "channel_max", 1)
        )

    @property
    def num_channels(self) -> int:
        return len(self.channel_max)

    def scale(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (offset, divisor) so that normalized = (x - offset)/divisor."""
        if self.mode == "min-max":
            return self.channel_min, self.channel_max - self.channel_min
        return np.zeros_like(self.channel_max), self.channel_max

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "channel_min": self.channel_min.tolist(),
            "channel_max": self.channel_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(d["mode"], np.asarray(d["channel_min"]), np.asarray(d["channel_max"]))


def fit_normalization(values: np.ndarray, mode: str) -> NormalizationStats:
    """Fit per-channel stats on an (n, channels, N) array of training samples.

    Channels with zero range (min-max) or zero maximum (max-scale) are
    rejected, since they cannot be rescaled invertibly.
    """
    values = _as_array(values, "values", 3)
    cmin = values.min(axis=(0, 2))
    cmax = values.max(axis=(0, 2))
    if mode == "min-max":
        bad = np.nonzero(cmax - cmin <= 0)[0]
        if bad.size:
            raise DataError(f"zero-range channel(s) {bad.tolist()} in min-max mode")
    elif mode == "max-scale":
        bad = np.nonzero(cmax == 0)[0]
        if bad.size:
            raise DataError(f"zero-max channel(s) {bad.tolist()} in max-scale mode")
    else:
        raise DataError(f"unknown normalization mode {mode!r}")
    return NormalizationStats(mode, cmin, cmax)


def normalize_values(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Normalize a (channels, N) or (n, channels, N) array."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2] != stats.num_channels:
        raise DataError(
            f"channel count {values.shape[-2]} != stats channels {stats.num_channels}"
        )
    offset, divisor = stats.scale()
    return (values - offset[:, None]) / divisor[:, None]


def denormalize_values(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2] != stats.num_channels:
        raise DataError(
            f"channel count {values.shape[-2]} != stats channels {stats.num_channels}"
        )
    offset, divisor = stats.scale()
    return values * divisor[:, None] + offset[:, None]


def normalize(sample: FunctionSample, stats: NormalizationStats) -> FunctionSample:
    return FunctionSample(
        sample.grid, normalize_values(sample.values, stats), sample.channel_names
    )


def denormalize(sample: FunctionSample, stats: NormalizationStats) -> FunctionSample:
    return FunctionSample(
        sample.grid, denormalize_values(sample.values, stats), sample.channel_names
    )


@dataclass(frozen=True)
class Dataset:
    """Paired (xi, u, s) samples on a shared grid, partitioned into splits.

    Arrays are stored split-concatenated in train|val|test order:
    params (n, m), u (n, d_u, N), s (n, d_s, N).
    """

    prior: ParameterPrior
    grid: np.ndarray
    params: np.ndarray
    u: np.ndarray
    s: np.ndarray
    u_channel_names: tuple[str, ...]
    s_channel_names: tuple[str, ...]
    split_sizes: dict = field(default_factory=dict)
    normalization_mode: str = "min-max"

    def __post_init__(self):
        object.__setattr__(self, "grid", _as_array(self.grid, "grid", 1))
        object.__setattr__(self, "params", _as_array(self.params, "params", 2))
        object.__setattr__(self, "u", _as_array(self.u, "u", 3))
        object.__setattr__(self, "s", _as_array(self.s, "s", 3))
        object.__setattr__(self, "u_channel_names", tuple(self.u_channel_names))
        object.__setattr__(self, "s_channel_names", tuple(self.s_channel_names))
        n = self.params.shape[0]
        if self.u.shape[0] != n or self.s.shape[0] != n:
            raise DataError("params/u/s sample counts differ")
        if self.params.shape[1] != self.prior.dim:
            raise DataError("params dimension does not match prior")
        ng = len(self.grid)
        if self.u.shape[2] != ng or self.s.shape[2] != ng:
            raise DataError("u/s grid length does not match grid")
        if self.u.shape[1] != len(self.u_channel_names):
            raise DataError("u channel count does not match names")
        if self.s.shape[1] != len(self.s_channel_names):
            raise DataError("s channel count does not match names")
        if set(self.split_sizes) != set(SPLITS):
            raise DataError(f"split_sizes must have keys {SPLITS}")
        if sum(self.split_sizes.values()) != n:
            raise DataError("split sizes do not sum to sample count")

    def __len__(self) -> int:
        return self.params.shape[0]

    def _split_slice(self, split: str) -> slice:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        start = 0
        for name in SPLITS:
            size = self.split_sizes[name]
            if name == split:
                return slice(start, start + size)
            start += size
        raise AssertionError

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (params, u, s) views for one split."""
        sl = self._split_slice(name)
        return self.params[sl], self.u[sl], self.s[sl]

    def sample(self, index: int) -> tuple[ParameterVector, FunctionSample, FunctionSample]:
        return (
            ParameterVector(self.params[index]),
            FunctionSample(self.grid, self.u[index], self.u_channel_names),
            FunctionSample(self.grid, self.s[index], self.s_channel_names),
        )

    def save(self, path, config_hash: str | None = None, force: bool = False) -> None:
        """Write manifest.json plus params.bin/u.bin/s.bin (float64 LE)."""
        path = Path(path)
        if path.exists() and any(path.iterdir()) and not force:
            raise DataError(f"output directory {path} exists; pass force to overwrite")
        path.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": FORMAT_VERSION,
            "m": self.prior.dim,
            "param_names": list(self.prior.names),
            "prior_lower": self.prior.lower.tolist(),
            "prior_upper": self.prior.upper.tolist(),
            "grid": self.grid.tolist(),
            "u_channel_names": list(self.u_channel_names),
            "s_channel_names": list(self.s_channel_names),
            "split_sizes": {k: int(v) for k, v in self.split_sizes.items()},
            "normalization_mode": self.normalization_mode,
        }
        if config_hash is not None:
            manifest["config_hash"] = config_hash
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        for name, arr in (("params", self.params), ("u", self.u), ("s", self.s)):
            arr.astype("<f8").tofile(path / f"{name}.bin")

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        manifest_path = path / "manifest.json"
        if not manifest_path.exists():
            raise DataError(f"no manifest.json in {path}")
        man = json.loads(manifest_path.read_text())
        if man.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported dataset format {man.get('format_version')!r}")
        prior = ParameterPrior(
            man["param_names"], man["prior_lower"], man["prior_upper"]
        )
        grid = np.asarray(man["grid"], dtype=np.float64)
        n = sum(man["split_sizes"].values())
        d_u = len(man["u_channel_names"])
        d_s = len(man["s_channel_names"])
        ng = len(grid)

        def read(name, shape):
            arr = np.fromfile(path / f"{name}.bin", dtype="<f8")
            if arr.size != int(np.prod(shape)):
                raise DataError(f"{name}.bin has {arr.size} values, expected {shape}")
            return arr.reshape(shape)

        return cls(
            prior=prior,
            grid=grid,
            params=read("params", (n, prior.dim)),
            u=read("u", (n, d_u, ng)),
            s=read("s", (n, d_s, ng)),
            u_channel_names=man["u_channel_names"],
            s_channel_names=man["s_channel_names"],
            split_sizes=man["split_sizes"],
            normalization_mode=man.get("normalization_mode", "min-max"),
        )
