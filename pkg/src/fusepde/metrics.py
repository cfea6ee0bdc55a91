"""Evaluation metrics: empirical CRPS, relative Lp errors, and a
total-variation data-processing check on finite discrete distributions."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, ParameterPrior

REPORT_FORMAT_VERSION = "fusepde-report-1"


def crps_empirical(ensemble, y: float) -> float:
    """Plug-in CRPS of an ensemble against a scalar truth.

    (1/M) sum|x_i - y| - 1/(2 M^2) sum_ij |x_i - x_j|; the double sum is
    computed from the sorted ensemble in O(M log M).
    """
    x = np.asarray(ensemble, dtype=np.float64).ravel()
    m = x.size
    if m == 0:
        raise DataError("empty ensemble")
    mae = np.abs(x - y).mean()
    xs = np.sort(x)
    idx = np.arange(m)
    pair_sum = 2.0 * np.sum((2 * idx - m + 1) * xs)
    return float(mae - pair_sum / (2.0 * m * m))


def crps_cdf_integral(ensemble, y: float) -> float:
    """Independent CRPS oracle: integral of (F_emp(z) - 1{z >= y})^2 dz.

    The integrand is piecewise constant with breakpoints at the ensemble
    members and y, and vanishes outside their range, so the integral is
    evaluated exactly from midpoint values on each piece.
    """
    x = np.sort(np.asarray(ensemble, dtype=np.float64).ravel())
    if x.size == 0:
        raise DataError("empty ensemble")
    points = np.unique(np.append(x, y))
    mids = 0.5 * (points[1:] + points[:-1])
    f_emp = np.searchsorted(x, mids, side="right") / x.size
    heav = (mids >= y).astype(np.float64)
    return float(np.sum((f_emp - heav) ** 2 * np.diff(points)))


def crps_parameters(samples: np.ndarray, xi_true, prior: ParameterPrior) -> float:
    """Mean per-component CRPS in prior-normalized coordinates."""
    samples = np.asarray(samples, dtype=np.float64)
    xi_true = np.asarray(xi_true, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != prior.dim or xi_true.shape != (prior.dim,):
        raise DataError("ensemble/truth shapes inconsistent with prior")
    unit_samples = prior.to_unit(samples)
    unit_true = prior.to_unit(xi_true)
    return float(
        np.mean(
            [crps_empirical(unit_samples[:, j], unit_true[j]) for j in range(prior.dim)]
        )
    )


def relative_lp_error(pred, truth, p: int) -> float:
    """Grid-discretized relative Lp error over all channels jointly."""
    if p not in (1, 2):
        raise DataError(f"p must be 1 or 2, got {p}")
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {truth.shape}")
    denom = np.sum(np.abs(truth) ** p)
    if denom == 0:
        raise DataError("relative error undefined for zero-norm truth")
    return float((np.sum(np.abs(pred - truth) ** p) / denom) ** (1.0 / p))


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DataError("distributions must share a support")
    return 0.5 * float(np.abs(p - q).sum())


def tv_pushforward_check(p, q, f_map) -> tuple[float, float]:
    """TV distance before and after pushing both distributions through a map.

    f_map[i] is the target index of support point i. The data-processing
    property says the second value never exceeds the first.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    f_map = np.asarray(f_map, dtype=np.intp)
    if not (p.shape == q.shape == f_map.shape):
        raise DataError("distributions and map must share a support")
    size = int(f_map.max()) + 1 if f_map.size else 0
    p_push = np.bincount(f_map, weights=p, minlength=size)
    q_push = np.bincount(f_map, weights=q, minlength=size)
    return total_variation(p, q), total_variation(p_push, q_push)


@dataclass
class MetricReport:
    """Per-sample metric values grouped into named sections.

    sections maps section -> metric -> 1-D array of per-sample values.
    CRPS values are stored raw; the x100 reporting convention is applied
    only in the human-readable summary.
    """

    sections: dict = field(default_factory=dict)
    config_hash: str = ""

    def add(self, section: str, metric: str, values) -> None:
        self.sections.setdefault(section, {})[metric] = np.asarray(
            values, dtype=np.float64
        )

    def aggregate(self) -> dict:
        out = {}
        for section, metrics in self.sections.items():
            out[section] = {
                name: {"mean": float(v.mean()), "std": float(v.std(ddof=0))}
                for name, v in metrics.items()
            }
        return out

    def summary_lines(self) -> list[str]:
        lines = []
        for section, metrics in self.aggregate().items():
            for name, agg in metrics.items():
                value, std = agg["mean"], agg["std"]
                if name == "crps":
                    lines.append(
                        f"{section:12s} {name:8s} {100 * value:8.3f} ± {100 * std:.3f} (x10^2)"
                    )
                else:
                    lines.append(f"{section:12s} {name:8s} {value:8.5f} ± {std:.5f}")
        return lines

    def to_json(self, path) -> None:
        payload = {
            "format_version": REPORT_FORMAT_VERSION,
            "config_hash": self.config_hash,
            "aggregate": self.aggregate(),
            "per_sample": {
                section: {name: v.tolist() for name, v in metrics.items()}
                for section, metrics in self.sections.items()
            },
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"# format={REPORT_FORMAT_VERSION} config_hash={self.config_hash}"])
            writer.writerow(["section", "metric", "sample", "value"])
            for section, metrics in self.sections.items():
                for name, values in metrics.items():
                    for i, v in enumerate(values):
                        writer.writerow([section, name, i, repr(float(v))])
