"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. All numeric artifacts are JSON or CSV; CSV files start with a
comment line embedding the format version and config hash.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import ConfigError, RunConfig
from .data import ChannelMask, DataError, Dataset
from .forward import NumericalError
from .metrics import MetricReport, crps_parameters, relative_lp_error
from .model import FuseModel, train
from .spectral import ShapeError
from .synth import SynthProblem, generate_dataset
from .data import ParameterPrior

CSV_FORMAT_VERSION = "fusepde-csv-1"


def _problem_from_config(config: RunConfig) -> SynthProblem:
    p = config.problem
    prior = ParameterPrior(p.param_names, p.prior_lower, p.prior_upper)
    grid = np.arange(p.n_points) / p.n_points * p.t_end
    return SynthProblem(prior=prior, sensors=p.sensors, grid=grid)


def _load_config(path) -> RunConfig:
    return RunConfig() if path is None else RunConfig.load(path)


def _csv_header(config_hash: str) -> list[str]:
    return [f"# format={CSV_FORMAT_VERSION} config_hash={config_hash}"]


def cmd_generate_data(args) -> int:
    config = _load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    problem = _problem_from_config(config)
    start = time.time()
    dataset = generate_dataset(
        problem,
        args.n_train,
        args.n_val,
        args.n_test,
        seed,
        normalization_mode=config.training.normalization_mode,
    )
    dataset.save(args.out, config_hash=config.hash(), force=args.force)
    print(
        f"wrote {len(dataset)} samples ({args.n_train}/{args.n_val}/{args.n_test} "
        f"train/val/test) to {args.out} in {time.time() - start:.1f}s"
    )
    print(f"m={dataset.prior.dim} d_u={len(dataset.u_channel_names)} "
          f"N={len(dataset.grid)} seed={seed} config_hash={config.hash()}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    dataset = Dataset.load(args.data)
    if tuple(dataset.prior.names) != tuple(config.problem.param_names):
        raise ConfigError(
            f"config parameters {config.problem.param_names} do not match "
            f"dataset parameters {tuple(dataset.prior.names)}"
        )
    start = time.time()
    model, log = train(dataset, config, seed=seed)
    model.save(args.out, training_log=log)
    best = min(log, key=lambda e: e["val_score"])
    print(
        f"trained {len(log)} epochs in {time.time() - start:.1f}s; best epoch "
        f"{best['epoch']} (val L1 {best['val_l1']:.5f}, val flow {best['val_fmpe']:.4f})"
    )
    print(f"checkpoint written to {args.out} (config_hash={config.hash()})")
    return 0


def _parse_mask(mask_arg: str | None, channel_names) -> ChannelMask | None:
    if mask_arg is None:
        return None
    if mask_arg == "all":
        return ChannelMask((False,) * len(channel_names))
    names = [s for s in mask_arg.split(",") if s]
    return ChannelMask.from_names(channel_names, names)


def cmd_evaluate(args) -> int:
    model = FuseModel.load(args.model)
    dataset = Dataset.load(args.data)
    xi, u, s = dataset.split(args.split)
    if len(xi) == 0:
        raise DataError(f"split {args.split!r} is empty")
    mask = _parse_mask(args.mask, dataset.u_channel_names)

    report = MetricReport(config_hash=model.config.hash())
    fwd_l1, fwd_l2, inv_crps, uni_l1, uni_l2 = [], [], [], [], []
    for i in range(len(xi)):
        pred = model.predict(xi[i]).values
        fwd_l1.append(relative_lp_error(pred, s[i], 1))
        fwd_l2.append(relative_lp_error(pred, s[i], 2))
        if args.dirac_debug:
            params = np.repeat(xi[i][None, :], args.ensemble, axis=0)
            prediction = model.propagate_parameters(params)
        else:
            ensemble = model.sample_posterior(
                u[i], args.ensemble, args.steps, args.seed + i, mask=mask
            )
            params = ensemble.samples
            prediction = model.propagate_parameters(params)
        inv_crps.append(crps_parameters(params, xi[i], dataset.prior))
        uni_l1.append(relative_lp_error(prediction.mean, s[i], 1))
        uni_l2.append(relative_lp_error(prediction.mean, s[i], 2))
    report.add("forward", "rel_l1", fwd_l1)
    report.add("forward", "rel_l2", fwd_l2)
    report.add("inverse", "crps", inv_crps)
    report.add("unified", "rel_l1", uni_l1)
    report.add("unified", "rel_l2", uni_l2)

    for line in report.summary_lines():
        print(line)
    if args.report:
        report.to_json(args.report)
        print(f"report written to {args.report}")
    if args.csv:
        report.to_csv(args.csv)
    return 0


def cmd_infer(args) -> int:
    model = FuseModel.load(args.model)
    dataset = Dataset.load(args.input)
    _, u, _ = dataset.split(args.split) if args.split else (None, dataset.u, None)
    if args.index >= len(u):
        raise DataError(f"sample index {args.index} out of range ({len(u)} samples)")
    mask = _parse_mask(args.mask, dataset.u_channel_names)
    ensemble = model.sample_posterior(
        u[args.index], args.ensemble, args.steps, args.seed, mask=mask
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = model.prior.names
    with open(out / "posterior_samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(model.config.hash()))
        writer.writerow(names)
        for row in ensemble.samples:
            writer.writerow([repr(float(v)) for v in row])
    with open(out / "posterior_histograms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(model.config.hash()))
        writer.writerow(["parameter", "bin_left", "bin_right", "count"])
        for j, name in enumerate(names):
            counts, edges = np.histogram(ensemble.samples[:, j], bins=args.bins)
            for k in range(len(counts)):
                writer.writerow(
                    [name, repr(float(edges[k])), repr(float(edges[k + 1])), int(counts[k])]
                )
    print(f"wrote {ensemble.size} posterior samples to {out}")
    return 0


def _param_index(model: FuseModel, name: str) -> int:
    try:
        return model.prior.names.index(name)
    except ValueError:
        raise DataError(
            f"unknown parameter {name!r}; expected one of {model.prior.names}"
        ) from None


def cmd_fingerprint(args) -> int:
    model = FuseModel.load(args.model)
    if (args.param is None) == (args.pair is None):
        raise ConfigError("pass exactly one of --param or --pair")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.param is not None:
        idx = _param_index(model, args.param)
        values, outputs = model.fingerprint(
            idx, args.grid, allow_out_of_distribution=args.ood
        )
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_csv_header(model.config.hash()))
            writer.writerow([args.param] + [
                f"{ch}@t{i}" for ch in model.s_channel_names
                for i in range(len(model.grid))
            ])
            for v, sample in zip(values, outputs):
                writer.writerow([repr(float(v))] + [repr(x) for x in sample.values.ravel()])
    else:
        name_i, _, name_j = args.pair.partition(",")
        i, j = _param_index(model, name_i), _param_index(model, name_j.strip())
        values_i = np.linspace(model.prior.lower[i], model.prior.upper[i], args.grid)
        values_j = np.linspace(model.prior.lower[j], model.prior.upper[j], args.grid)
        stat = {"max": np.max, "min": np.min, "mean": np.mean}[args.stat]
        matrix = model.pairwise_fingerprint(
            i, j, values_i, values_j, statistic=stat,
            allow_out_of_distribution=args.ood,
        )
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_csv_header(model.config.hash()))
            writer.writerow([name_i, name_j.strip(), args.stat])
            for a, vi in enumerate(values_i):
                for b, vj in enumerate(values_j):
                    writer.writerow([repr(float(vi)), repr(float(vj)), repr(matrix[a, b])])
    print(f"fingerprint written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusepde")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None, help="torch thread cap")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset directory")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-val", type=int, required=True)
    p.add_argument("--n-test", type=int, required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="forward / inverse / unified metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--M", dest="ensemble", type=int, default=128)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask", default=None,
                   help="comma-separated channel names to zero, or 'all'")
    p.add_argument("--report", default=None, help="JSON report path")
    p.add_argument("--csv", default=None, help="per-sample CSV path")
    p.add_argument("--dirac-debug", action="store_true",
                   help="replace the posterior by the true parameters")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="posterior samples for one stored input")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="dataset directory")
    p.add_argument("--split", default=None, choices=["train", "val", "test"])
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--M", dest="ensemble", type=int, default=128)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask", default=None)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("fingerprint", help="one-parameter or pairwise sweeps")
    p.add_argument("--model", required=True)
    p.add_argument("--param", default=None)
    p.add_argument("--pair", default=None, help="two names, comma separated")
    p.add_argument("--grid", type=int, default=20)
    p.add_argument("--stat", default="max", choices=["max", "min", "mean"])
    p.add_argument("--ood", action="store_true",
                   help="allow sweeps outside the prior box")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fingerprint)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, ShapeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
