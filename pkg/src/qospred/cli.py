"""Command-line frontend.

Subcommands: ``inspect`` a dataset directory, ``predict`` one target cell
(optionally writing its trace), ``experiment`` / ``ablation`` / ``sweep``
writing report tables and figures, and ``synth`` generating a synthetic
dataset directory for trying the pipeline without the real logs.

Exit codes: 0 success, 1 pipeline error, 2 input or configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .benchmark import run_ablation_suite, run_experiment
from .config import PipelineConfig, derive_seed, load_config
from .data import load_dataset, make_split
from .errors import ConfigError, DatasetError, QospredError
from .hierarchy import predict_one
from .report import write_ablation_report, write_experiment_report, write_sweep_report
from .synth import make_dataset, write_dataset
from .variants import VARIANTS, variant_by_name

_LAYER_MENU = (256, 128, 64, 32, 16, 8)

SWEEPABLE = ("k", "t_d", "nrl1_epochs", "nrl2_epochs", "nrl1_hidden_layers", "lambda_size")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QospredError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qospred",
        description="QoS prediction with hybrid filtering and hierarchical regression",
    )
    sub = parser.add_subparsers(required=True)

    def add_dataset_args(p):
        p.add_argument("--root", required=True, help="dataset directory")
        p.add_argument("--dataset", choices=("ws1", "ws2"), default="ws1")
        p.add_argument("--qos", choices=("rt", "tp"), default="rt")

    def add_common_args(p):
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--config", help="YAML config file overriding the defaults")
        p.add_argument("--threads", type=int, help="worker cap for parallel stages")
        p.add_argument("--out", default="reports", help="output directory")

    p = sub.add_parser("inspect", help="print dataset dimensions and density")
    add_dataset_args(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("predict", help="predict one user/service cell")
    add_dataset_args(p)
    add_common_args(p)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--service", type=int, required=True)
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--slice", type=int, default=0, dest="time_slice")
    p.add_argument("--trace", action="store_true", help="write the prediction trace")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="run one variant over densities and episodes")
    add_dataset_args(p)
    add_common_args(p)
    p.add_argument("--variant", default="CAHPHF")
    p.add_argument("--density", default="0.1", help="comma-separated training densities")
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--test-k", type=int, default=200, dest="test_k")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("ablation", help="run all variants on identical splits")
    add_dataset_args(p)
    add_common_args(p)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--test-k", type=int, default=200, dest="test_k")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("sweep", help="vary one tunable, holding the rest at defaults")
    add_dataset_args(p)
    add_common_args(p)
    p.add_argument("--sweep", required=True, metavar="PARAM=V1,V2,...",
                   help=f"one of {', '.join(SWEEPABLE)}")
    p.add_argument("--variant", default="CAHPHF")
    p.add_argument("--density", default="0.3")
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--test-k", type=int, default=200, dest="test_k")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=60)
    p.add_argument("--services", type=int, default=100)
    p.add_argument("--qos", choices=("rt", "tp"), default="rt")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--slices", type=int, default=1)
    p.add_argument("--no-context", action="store_true",
                   help="omit coordinates (ws2-style directory)")
    p.set_defaults(func=cmd_synth)

    return parser


def _load_pipeline_config(args) -> PipelineConfig:
    config = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "threads", None):
        config = config.replace(threads=args.threads)
    return config


def cmd_inspect(args) -> int:
    ds = load_dataset(args.root, args.dataset, args.qos)
    values = ds.matrix(0).values
    observed = values[values > 0]
    print(f"dataset: {ds.name} ({ds.qos})")
    print(f"{ds.n_users} users, {ds.n_services} services, {ds.n_slices} time slice(s)")
    print(f"observed density: {ds.matrix(0).density():.4f}")
    if observed.size:
        print(f"value range: [{observed.min():.6g}, {observed.max():.6g}], "
              f"mean {observed.mean():.6g}")
    print(f"context: {'absent (context-aware filtering bypassed)' if ds.context_free else 'available'}")
    return 0


def cmd_predict(args) -> int:
    ds = load_dataset(args.root, args.dataset, args.qos)
    config = _load_pipeline_config(args)
    if not 0 <= args.time_slice < ds.n_slices:
        raise ConfigError(f"slice {args.time_slice} outside [0, {ds.n_slices})")
    matrix = ds.matrix(args.time_slice)
    if not (0 <= args.user < ds.n_users and 0 <= args.service < ds.n_services):
        raise ConfigError(
            f"target ({args.user}, {args.service}) outside the "
            f"{ds.n_users} x {ds.n_services} matrix"
        )
    split = make_split(matrix, args.density, derive_seed(args.seed, "split", args.density, 0, args.time_slice))
    if split.train_mask[args.user, args.service]:
        raise ConfigError(
            f"cell ({args.user}, {args.service}) is inside the training mask for "
            f"this seed/density; it is already observed, nothing to predict"
        )
    trace = predict_one(
        ds, split, (args.user, args.service), config,
        time_slice=args.time_slice, seed=args.seed,
    )
    print(f"predicted {ds.qos} for user {args.user}, service {args.service}: {trace.final:.6g}")
    actual = matrix.values[args.user, args.service]
    if actual > 0:
        print(f"held-out actual: {actual:.6g} (absolute error {abs(actual - trace.final):.6g})")
    print(f"branch: {trace.branch}; level-1 outputs: "
          + ", ".join(f"{p:.6g}" for p in trace.nrl1.as_array()))
    if args.trace:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"trace_u{args.user}_s{args.service}.jsonl"
        with open(path, "a") as fh:
            fh.write(trace.to_json() + "\n")
        print(f"trace appended to {path}")
    return 0


def _parse_densities(text: str) -> tuple:
    try:
        return tuple(float(tok) for tok in str(text).split(","))
    except ValueError:
        raise ConfigError(f"cannot parse density list {text!r}") from None


def cmd_experiment(args) -> int:
    ds = load_dataset(args.root, args.dataset, args.qos)
    config = _load_pipeline_config(args)
    variant = variant_by_name(args.variant)
    report = run_experiment(
        ds, args.qos, variant, _parse_densities(args.density),
        args.episodes, args.test_k, args.seed, config,
    )
    paths = write_experiment_report(report, args.out)
    for d in report.densities:
        print(f"{variant.name} density {d:g}: mean MAE {report.mean_mae(d):.6g}")
    print(f"reports written to {paths['summary'].parent}")
    return 0


def cmd_ablation(args) -> int:
    ds = load_dataset(args.root, args.dataset, args.qos)
    config = _load_pipeline_config(args)
    reports = run_ablation_suite(
        ds, args.qos, args.density, args.episodes, args.test_k, args.seed, config
    )
    paths = write_ablation_report(reports, args.out)
    for rep in sorted(reports, key=lambda r: r.mean_mae(args.density)):
        print(f"{rep.variant:<14s} mean MAE {rep.mean_mae(args.density):.6g}")
    print(f"reports written to {paths['summary'].parent}")
    return 0


def _apply_sweep_value(config: PipelineConfig, param: str, token: str) -> PipelineConfig:
    if param == "k":
        return config.replace(k=float(token))
    value = int(token)
    if param == "nrl1_hidden_layers":
        if not 1 <= value <= len(_LAYER_MENU):
            raise ConfigError(f"nrl1_hidden_layers must be in [1, {len(_LAYER_MENU)}]")
        return config.replace(nrl1_hidden_sizes=_LAYER_MENU[:value])
    return config.replace(**{param: value})


def cmd_sweep(args) -> int:
    if "=" not in args.sweep:
        raise ConfigError("--sweep expects PARAM=V1,V2,...")
    param, _, values_text = args.sweep.partition("=")
    param = param.strip()
    if param not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {param!r}; choose one of {', '.join(SWEEPABLE)}")
    tokens = [tok.strip() for tok in values_text.split(",") if tok.strip()]
    if not tokens:
        raise ConfigError("--sweep needs at least one value")

    ds = load_dataset(args.root, args.dataset, args.qos)
    base = _load_pipeline_config(args)
    variant = variant_by_name(args.variant)
    densities = _parse_densities(args.density)
    reports = []
    values = []
    for tok in tokens:
        config = _apply_sweep_value(base, param, tok)
        values.append(float(tok) if param == "k" else int(tok))
        reports.append(
            run_experiment(ds, args.qos, variant, densities,
                           args.episodes, args.test_k, args.seed, config)
        )
    paths = write_sweep_report(param, values, reports, args.out)
    for v, rep in zip(values, reports):
        line = ", ".join(f"{d:g}: {rep.mean_mae(d):.6g}" for d in densities)
        print(f"{param}={v:g} -> mean MAE {line}")
    print(f"reports written to {paths['summary'].parent}")
    return 0


def cmd_synth(args) -> int:
    ds = make_dataset(
        args.users, args.services, qos=args.qos, seed=args.seed,
        with_context=not args.no_context, n_slices=args.slices,
    )
    write_dataset(ds, args.out)
    kind = "ws2" if args.no_context else "ws1"
    print(f"wrote {args.users} x {args.services} {args.qos} dataset "
          f"({args.slices} slice(s), load as --dataset {kind}) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
