"""Command line entry points: ens2 search | predict | benchmark | serve.

Exit codes follow the worker convention: 0 success, 2 usage/input errors,
3 task failures (the search or prediction itself failed).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .benchmark import BenchmarkConfig, run_benchmark
from .orchestrator import (
    MetaSearchError,
    SearchPlan,
    load_outcome,
    run_predict,
    run_search,
    worker_roster,
)
from .searchers import SEARCHER_KINDS
from .tabular import ParseError, parse_csv
from .worker import CHAOS_CRASH, CHAOS_HANG

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TASK = 3

DEFAULT_WORKERS = "grid,random,halving"

# chaos kinds are accepted so fault paths can be exercised from the CLI
CLI_WORKER_KINDS = frozenset(SEARCHER_KINDS) | {CHAOS_CRASH, CHAOS_HANG}


def _load_toml(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _pick(flag, config: dict, key: str, default):
    """Flag beats config file beats default."""
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _parse_kinds(spec: str) -> list[str]:
    kinds = [k.strip() for k in spec.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in CLI_WORKER_KINDS]
    if unknown:
        raise ValueError(f"unknown worker kinds: {', '.join(unknown)}")
    if not kinds:
        raise ValueError("empty worker list")
    return kinds


def cmd_search(args) -> int:
    config = _load_toml(args.config).get("search", {})
    try:
        kinds = args.workers if args.workers is not None else config.get("workers")
        if isinstance(kinds, str):
            kinds = _parse_kinds(kinds)
        elif kinds is None:
            kinds = _parse_kinds(DEFAULT_WORKERS)
        else:
            kinds = _parse_kinds(",".join(kinds))
        train = parse_csv(Path(args.train).read_bytes(), args.target)
    except (OSError, ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if train.labels is None:
        print(f"error: target {args.target!r} produced no labels", file=sys.stderr)
        return EXIT_USAGE

    plan = SearchPlan(
        workers=worker_roster(kinds),
        time_budget_s=_pick(args.budget_s, config, "budget_s", 10.0),
        grace_period_s=_pick(args.grace_s, config, "grace_s", None),
        refit_fraction=_pick(args.refit_fraction, config, "refit_fraction", 0.25),
        seed=_pick(args.seed, config, "seed", 0),
        k_top=_pick(args.k, config, "k", 3),
        metric=_pick(args.metric, config, "metric", "accuracy"),
        retry_failed=bool(config.get("retry_failed", False)),
    )
    out_dir = Path(args.out)
    try:
        outcome = run_search(train, plan, out_dir)
    except MetaSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK

    print(f"run directory: {outcome.run_dir}")
    for sid, status in outcome.worker_status.items():
        entry = outcome.logs[sid]
        print(f"  worker {sid}: {status} ({entry.n_recovered} pipelines)")
    print(f"merged pipelines: {len(outcome.merged)}")
    for i, record in enumerate(outcome.merged[:5], start=1):
        print(
            f"  #{i} {record.id} score={record.validation_score:.4f} "
            f"searcher={record.searcher_id}"
        )
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        outcome = load_outcome(args.run)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        test = parse_csv(Path(args.test).read_bytes(), None)
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = run_predict(outcome, test, mode=args.mode, k=args.k)
    except MetaSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK

    out_path = Path(args.out) if args.out else result.final_path
    if out_path != result.final_path:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(result.final_path.read_bytes())
    print(f"predictions: {out_path} ({len(result.labels)} rows, mode={result.mode})")
    if result.dropped:
        print(f"  pipelines replaced or dropped: {', '.join(result.dropped)}")
    return EXIT_OK


def _benchmark_config(args) -> BenchmarkConfig:
    config = _load_toml(args.config).get("benchmark", {})
    datasets: list[tuple[str, str]] = []
    for entry in config.get("datasets", []):
        datasets.append((entry["path"], entry["target"]))
    for spec in args.datasets or []:
        path, _, target = spec.rpartition(":")
        if not path:
            raise ValueError(f"dataset spec {spec!r} is not path:target")
        datasets.append((path, target))
    seeds = args.seeds if args.seeds is not None else config.get("seeds")
    if isinstance(seeds, str):
        seeds = [int(s) for s in seeds.split(",")]
    if seeds is None:
        seeds = [0, 1, 2, 3, 4]
    kinds = config.get("workers", _parse_kinds(DEFAULT_WORKERS))
    return BenchmarkConfig(
        datasets=tuple(datasets),
        seeds=tuple(int(s) for s in seeds),
        budget_s=_pick(args.budget_s, config, "budget_s", 10.0),
        workers=worker_roster(list(kinds)),
        include_singles=_pick(args.singles, config, "singles", True),
        include_voting=_pick(args.voting, config, "voting", True),
        include_stacking=_pick(args.stacking, config, "stacking", False),
        equal_compute=bool(config.get("equal_compute", False)),
        k_top=_pick(args.k, config, "k", 3),
    )


def cmd_benchmark(args) -> int:
    try:
        config = _benchmark_config(args)
    except (KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = run_benchmark(config, args.out)
    print(f"score table: {result.table_path}")
    print(f"report: {result.report_path}")
    for s in result.summaries:
        print(
            f"  {s.system}: avg_accuracy={s.avg_accuracy:.4f} "
            f"avg_rank={s.avg_rank:.2f} first_place={s.first_place_count} "
            f"failures={s.n_failures}"
        )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _load_toml(args.config).get("serve", {})
    data_dir = _pick(args.data_dir, config, "data_dir", os.environ.get("ENS2_DATA_DIR"))
    app = create_app(
        data_dir=data_dir,
        base_seed=_pick(args.base_seed, config, "base_seed", 0),
        ui_dir=_pick(args.ui_dir, config, "ui_dir", None),
    )
    uvicorn.run(
        app,
        host=_pick(args.host, config, "host", "127.0.0.1"),
        port=_pick(args.port, config, "port", 8000),
        log_level="info",
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ens2",
        description="Meta search over pipeline searchers with ensemble prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run a meta-search on a training CSV")
    p.add_argument("--train", required=True, help="training CSV path")
    p.add_argument("--target", required=True, help="target column name")
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--budget-s", dest="budget_s", type=float, default=None)
    p.add_argument("--grace-s", dest="grace_s", type=float, default=None)
    p.add_argument("--refit-fraction", dest="refit_fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--metric", choices=("accuracy", "logloss"), default=None)
    p.add_argument(
        "--workers", default=None, help=f"comma list of kinds (default {DEFAULT_WORKERS})"
    )
    p.add_argument("--config", default=None, help="TOML config file")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("predict", help="predict a test CSV from a finished run")
    p.add_argument("--run", required=True, help="run directory from ens2 search")
    p.add_argument("--test", required=True, help="test CSV path")
    p.add_argument("--mode", choices=("voting", "stacking"), default="voting")
    p.add_argument("--k", type=int, default=None, help="committee size (voting)")
    p.add_argument("--out", default=None, help="where to copy the prediction CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="compare systems over datasets x seeds")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument(
        "--datasets",
        nargs="*",
        default=None,
        help="dataset specs path:target (adds to config file entries)",
    )
    p.add_argument("--seeds", default=None, help="comma list of seeds")
    p.add_argument("--budget-s", dest="budget_s", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--singles", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--voting", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--stacking", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--config", default=None, help="TOML config file")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("serve", help="start the HTTP gateway")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument(
        "--data-dir", dest="data_dir", default=None, help="defaults to $ENS2_DATA_DIR"
    )
    p.add_argument("--base-seed", dest="base_seed", type=int, default=None)
    p.add_argument("--ui-dir", dest="ui_dir", default=None)
    p.add_argument("--config", default=None, help="TOML config file")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
