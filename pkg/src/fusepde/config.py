"""Run configuration: JSON round trip, validation, and content hashing.

A run is reproducible from (config, dataset, seed); every artifact written
by the CLI embeds the config hash so outputs can be traced back.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class ProblemConfig:
    n_points: int = 128
    t_end: float = 10.0
    sensors: tuple[float, ...] = (5.0, 8.0, 12.0, 15.0)
    param_names: tuple[str, ...] = ("a", "x_c", "x_r", "c", "kappa")
    prior_lower: tuple[float, ...] = (0.5, 1.0, 0.5, 0.5, 0.0)
    prior_upper: tuple[float, ...] = (2.5, 3.0, 2.0, 2.0, 0.5)


@dataclass
class ForwardConfig:
    width: int = 32
    k_max: int = 16
    depth: int = 4
    proj_width: int = 64


@dataclass
class EncoderConfig:
    width: int = 32
    k_max: int = 32
    depth: int = 3
    k_embed: int = 16


@dataclass
class FlowConfig:
    width: int = 256
    depth: int = 4
    num_time_features: int = 16
    sigma_min: float = 1e-4


@dataclass
class TrainingConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    masking_prob: float = 0.5
    normalization_mode: str = "min-max"


@dataclass
class EvalConfig:
    ensemble_size: int = 128
    ode_steps: int = 64


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def validate(self) -> "RunConfig":
        p = self.problem
        if len(p.param_names) != len(p.prior_lower) or len(p.param_names) != len(
            p.prior_upper
        ):
            raise ConfigError("prior bounds must match param_names length")
        if any(lo >= hi for lo, hi in zip(p.prior_lower, p.prior_upper)):
            raise ConfigError("prior requires lower < upper per component")
        if p.n_points < 4:
            raise ConfigError("n_points too small")
        nyquist = p.n_points // 2 + 1
        for name, k in (
            ("forward.k_max", self.forward.k_max),
            ("encoder.k_max", self.encoder.k_max),
            ("encoder.k_embed", self.encoder.k_embed),
        ):
            if not 1 <= k <= nyquist:
                raise ConfigError(f"{name}={k} outside [1, {nyquist}]")
        t = self.training
        if t.epochs < 1 or t.batch_size < 1 or t.learning_rate <= 0:
            raise ConfigError("invalid training schedule")
        if not 0.0 <= t.masking_prob <= 1.0:
            raise ConfigError("masking_prob must be in [0, 1]")
        if t.normalization_mode not in ("min-max", "max-scale"):
            raise ConfigError(f"unknown normalization mode {t.normalization_mode!r}")
        if not 0.0 < self.flow.sigma_min <= 0.1:
            raise ConfigError("flow.sigma_min must be in (0, 0.1]")
        if self.evaluation.ensemble_size < 2 or self.evaluation.ode_steps < 1:
            raise ConfigError("invalid evaluation settings")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {
            "problem": ProblemConfig,
            "forward": ForwardConfig,
            "encoder": EncoderConfig,
            "flow": FlowConfig,
            "training": TrainingConfig,
            "evaluation": EvalConfig,
        }
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                known = {f.name for f in dataclasses.fields(sections[key])}
                extra = set(value) - known
                if extra:
                    raise ConfigError(f"unknown keys in '{key}': {sorted(extra)}")
                value = {
                    k: tuple(v) if isinstance(v, list) else v for k, v in value.items()
                }
                kwargs[key] = sections[key](**value)
            elif key == "seed":
                kwargs["seed"] = int(value)
            else:
                raise ConfigError(f"unknown config section {key!r}")
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]
