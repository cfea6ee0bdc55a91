"""Scikit-learn style front end.

FuseEstimator wraps dataset assembly, training, and the three inference
surfaces (forward predict, posterior sampling, propagation) behind the
fit/predict/get_params idiom so the model composes with sklearn tooling
(cloning, grid search over the exposed hyperparameters, pipelines that
produce parameter arrays).
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .config import RunConfig
from .data import DataError, Dataset, ParameterPrior
from .model import FuseModel, train


def _check_array(x, name: str, ndim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} contains non-finite values")
    return x


class FuseEstimator:
    """Estimator over (parameters, function outputs) pairs.

    Parameters mirror the RunConfig fields that most affect quality; the
    full config can be supplied via `config` and individual keyword
    arguments override it. `fit` takes X of shape (n, m) (PDE parameters)
    and y of shape (n, d_s, N) (output series); measurements u default to y
    when not given, matching problems where inputs and outputs coincide.
    """

    def __init__(
        self,
        prior: ParameterPrior | None = None,
        grid=None,
        config: RunConfig | None = None,
        epochs: int | None = None,
        batch_size: int | None = None,
        learning_rate: float | None = None,
        masking_prob: float | None = None,
        val_fraction: float = 0.1,
        seed: int = 0,
    ):
        self.prior = prior
        self.grid = grid
        self.config = config
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.masking_prob = masking_prob
        self.val_fraction = val_fraction
        self.seed = seed

    # sklearn protocol ------------------------------------------------------

    def get_params(self, deep: bool = True) -> dict:
        return {
            name: getattr(self, name)
            for name in (
                "prior",
                "grid",
                "config",
                "epochs",
                "batch_size",
                "learning_rate",
                "masking_prob",
                "val_fraction",
                "seed",
            )
        }

    def set_params(self, **params) -> "FuseEstimator":
        valid = self.get_params()
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for FuseEstimator")
            setattr(self, key, value)
        return self

    # fitting ---------------------------------------------------------------

    def _resolved_config(self) -> RunConfig:
        config = self.config if self.config is not None else RunConfig()
        config = RunConfig.from_dict(config.to_dict())  # defensive copy
        training = config.training
        overrides = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "masking_prob": self.masking_prob,
        }
        for key, value in overrides.items():
            if value is not None:
                setattr(training, key, value)
        if self.prior is not None:
            config.problem = dataclasses.replace(
                config.problem,
                param_names=tuple(self.prior.names),
                prior_lower=tuple(self.prior.lower),
                prior_upper=tuple(self.prior.upper),
            )
        if self.grid is not None:
            grid = np.asarray(self.grid, dtype=np.float64)
            config.problem = dataclasses.replace(
                config.problem,
                n_points=len(grid),
                t_end=float(len(grid) * (grid[1] - grid[0])),
            )
        return config.validate()

    def fit(self, X, y, u=None) -> "FuseEstimator":
        X = _check_array(X, "X", 2)
        y = _check_array(y, "y", 3)
        if self.prior is None or self.grid is None:
            raise DataError("FuseEstimator requires prior and grid before fit")
        u = y if u is None else _check_array(u, "u", 3)
        if not (len(X) == len(y) == len(u)):
            raise DataError("X, y, u must have the same sample count")
        n = len(X)
        n_val = max(1, int(round(self.val_fraction * n)))
        if n_val >= n:
            raise DataError("not enough samples for a validation split")
        grid = np.asarray(self.grid, dtype=np.float64)
        d_u, d_s = u.shape[1], y.shape[1]
        config = self._resolved_config()
        dataset = Dataset(
            prior=self.prior,
            grid=grid,
            params=X,
            u=u,
            s=y,
            u_channel_names=tuple(f"u{i}" for i in range(d_u)),
            s_channel_names=tuple(f"s{i}" for i in range(d_s)),
            split_sizes={"train": n - n_val, "val": n_val, "test": 0},
            normalization_mode=config.training.normalization_mode,
        )
        self.model_, self.training_log_ = train(dataset, config, seed=self.seed)
        return self

    def _require_fitted(self) -> FuseModel:
        if not hasattr(self, "model_"):
            raise DataError("estimator is not fitted; call fit first")
        return self.model_

    # inference -------------------------------------------------------------

    def predict(self, X) -> np.ndarray:
        """Forward predictions, shape (n, d_s, N)."""
        model = self._require_fitted()
        X = _check_array(X, "X", 2)
        return np.stack([model.predict(xi).values for xi in X])

    def sample_posterior(self, u, m_samples: int = 128, steps: int = 64, seed: int = 0):
        """Posterior parameter samples (m_samples, m) for one series (d_u, N)."""
        model = self._require_fitted()
        return model.sample_posterior(
            _check_array(u, "u", 2), m_samples, steps, seed
        ).samples

    def propagate(self, u, m_samples: int = 128, seed: int = 0):
        """Posterior ensemble plus propagated output mean/std for one series."""
        model = self._require_fitted()
        ensemble, prediction = model.propagate(
            _check_array(u, "u", 2), m_samples, seed
        )
        return ensemble.samples, prediction.mean, prediction.std

    def score(self, X, y) -> float:
        """Negative mean relative L1 error (higher is better, sklearn-style)."""
        from .metrics import relative_lp_error

        pred = self.predict(X)
        y = _check_array(y, "y", 3)
        return -float(
            np.mean([relative_lp_error(p, t, 1) for p, t in zip(pred, y)])
        )
