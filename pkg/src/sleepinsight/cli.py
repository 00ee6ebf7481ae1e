"""``sleepinsight`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print one
line ``error: <Kind>: <detail>`` on stderr. Outputs are never overwritten
unless ``--force`` is given; inputs are never modified.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
import time
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional, Sequence

from .core import PipelineError, SchemaMismatch, dumps
from .evaluator import EmptyInput, parse_output
from .harness import (
    FAULT_CLASSES,
    OFFLINE_PRICES,
    BackendUnavailable,
    Condition,
    PriceTable,
    RunManifest,
    UnknownModel,
    aggregate_traces,
    emit_results,
    fault_sweep,
    pct,
    read_traces,
    run_condition,
    trace_filename,
    write_detailed_csv,
    write_frontier_csv,
    write_results_csv,
    write_sweep_csv,
    write_traces,
)
from .synth import CohortSpec, InvalidSpec, generate_cohort, generate_history, load_records, write_records
from .writers import WriterError

logger = logging.getLogger("sleepinsight")


class UsageError(Exception):
    pass


class IoFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D401 - argparse hook
        self.print_usage(sys.stderr)
        print(f"error: UsageError: {message}", file=sys.stderr)
        sys.exit(2)


def history_path_for(cohort: Path) -> Path:
    """``cohort.jsonl`` -> ``cohort.history.jsonl``."""
    return cohort.with_name(cohort.stem + ".history" + cohort.suffix)


def _fresh_file(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise IoFailure(f"{path} exists (use --force to overwrite)")
    path.parent.mkdir(parents=True, exist_ok=True)


def _fresh_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise IoFailure(f"{path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)


def _probabilities(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    bad = [v for v in values if not 0 <= v <= 1]
    if bad:
        raise argparse.ArgumentTypeError(f"probabilities must be in [0, 1]: {bad}")
    return values


def _probability(text: str) -> float:
    values = _probabilities(text)
    if len(values) != 1:
        raise argparse.ArgumentTypeError(f"expected one probability, got {text!r}")
    return values[0]


def _decimal(text: str) -> str:
    try:
        Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a decimal: {text!r}") from None
    return text


def _load_cohort(path: str, history: Optional[str]) -> tuple[list, list, Optional[Path]]:
    cohort_path = Path(path)
    if not cohort_path.is_file():
        raise IoFailure(f"cohort file not found: {cohort_path}")
    cohort = load_records(cohort_path)
    hist_path = Path(history) if history else history_path_for(cohort_path)
    if history and not hist_path.is_file():
        raise IoFailure(f"history file not found: {hist_path}")
    hist = load_records(hist_path) if hist_path.is_file() else []
    return cohort, hist, hist_path if hist_path.is_file() else None


def _trace_files(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(q for q in p.glob("*.jsonl")))
        elif p.is_file():
            files.append(p)
        else:
            raise IoFailure(f"no such trace file or directory: {p}")
    if not files:
        raise IoFailure("no trace files found")
    return files


def _load_all_traces(paths: Sequence[str]) -> list:
    traces = []
    for f in _trace_files(paths):
        try:
            traces.extend(read_traces(f))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaMismatch(f"{f}: unreadable trace: {exc}") from exc
    return traces


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args: argparse.Namespace) -> int:
    spec = CohortSpec(
        seed=args.seed,
        n_users=args.users,
        nights_per_user=args.nights,
        start_date=args.start_date,
        event_rate=args.event_rate,
        warmup_nights=args.warmup,
    )
    spec.validate()
    out = Path(args.out)
    hist = history_path_for(out)
    _fresh_file(out, args.force)
    if spec.warmup_nights:
        _fresh_file(hist, args.force)
    records = generate_cohort(spec)
    write_records(records, out)
    msg = f"gen-data: {len(records)} records -> {out}"
    if spec.warmup_nights:
        history = generate_history(spec)
        write_records(history, hist)
        msg += f"; {len(history)} warm-up records -> {hist}"
    print(msg)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cohort, history, hist_path = _load_cohort(args.cohort, args.history)
    manifest = RunManifest(
        cohort=str(args.cohort),
        condition=args.condition,
        backend=args.backend,
        model=args.model,
        history=None if hist_path is None else str(hist_path),
        seed=args.seed,
        out_dir=str(args.out),
        max_in_flight=args.max_in_flight,
        threshold=args.threshold,
        p_numeric=args.p_numeric,
        p_tag_add=args.p_tag,
        p_metric_swap=args.p_swap,
        p_schema=args.p_schema,
        artifact_corruption=args.artifact_corruption,
        remote_config=args.remote_config,
        prices=args.prices,
    )
    prices = PriceTable.from_file(args.prices) if args.prices else None
    backend = manifest.make_backend()
    if prices is None:
        if args.backend == "remote":
            raise UnknownModel(f"{backend.model} (remote runs need --prices)")
        free = PriceTable({backend.model: (Decimal(0), Decimal(0))})
        prices = OFFLINE_PRICES if backend.model in OFFLINE_PRICES else free
    out = Path(args.out)
    _fresh_dir(out, args.force)
    started = time.monotonic()
    result = run_condition(
        cohort, manifest.condition_id, backend, history, prices, manifest.rule, Decimal(args.threshold),
        args.max_in_flight,
    )
    if hasattr(backend, "close"):
        backend.close()
    trace_path = out / trace_filename(manifest.condition, backend.model)
    write_traces(result.traces, trace_path)
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    (out / "skipped.txt").write_text("".join(s + "\n" for s in result.skipped), encoding="utf-8")
    elapsed = time.monotonic() - started
    print(
        f"run: condition={manifest.condition} model={backend.model} nights={len(cohort)} "
        f"traced={len(result.traces)} skipped={len(result.skipped)} -> {trace_path} ({elapsed:.1f}s)"
    )
    return 0


def _aggregates(args: argparse.Namespace):
    traces = _load_all_traces(args.traces)
    prices = PriceTable.from_file(args.prices) if args.prices else None
    return aggregate_traces(traces, prices)


def cmd_score(args: argparse.Namespace) -> int:
    rows = _aggregates(args)
    out = Path(args.out)
    _fresh_dir(out, args.force)
    with open(out / "scores.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for cond, model, _, scores in rows:
            for s in scores:
                fh.write(dumps({"condition": cond, "model": model, **s.to_dict()}) + "\n")
    aggs = [(c, m, a) for c, m, a, _ in rows]
    write_results_csv(aggs, out / "results.csv")
    write_detailed_csv(aggs, out / "results_detailed.csv")
    for cond, model, a, _ in rows:
        print(
            f"score: condition={cond} model={model} n={a.n} "
            f"SchemaErr={_p(a.schema_err)} NumErr={_p(a.num_err)} SelErr={_p(a.sel_err)} AttrErr={_p(a.attr_err)}"
        )
    return 0


def _p(rate) -> str:
    return (pct(rate) or "n/a") + ("%" if rate is not None else "")


def cmd_aggregate(args: argparse.Namespace) -> int:
    rows = _aggregates(args)
    out = Path(args.out)
    _fresh_dir(out, args.force)
    paths = emit_results([(c, m, a) for c, m, a, _ in rows], out)
    print("aggregate: " + ", ".join(str(p) for p in paths))
    return 0


def cmd_frontier(args: argparse.Namespace) -> int:
    rows = _aggregates(args)
    out = Path(args.out)
    _fresh_file(out, args.force)
    write_frontier_csv([(c, m, a) for c, m, a, _ in rows], out)
    print(f"frontier: {len(rows)} rows -> {out}")
    return 0


def cmd_fault_sweep(args: argparse.Namespace) -> int:
    cohort, history, _ = _load_cohort(args.cohort, args.history)
    grid = {"numeric": args.p_numeric, "tag_add": args.p_tag, "metric_swap": args.p_swap, "schema": args.p_schema}
    if all(v is None for v in grid.values()):
        grid = {f: [0.05, 0.1, 0.3] for f in FAULT_CLASSES}
    grid = {k: v or [] for k, v in grid.items()}
    out = Path(args.out)
    _fresh_file(out, args.force)
    points = fault_sweep(cohort, grid, history, args.seed, args.max_in_flight)
    write_sweep_csv(points, out)
    for pt in points:
        print(f"fault-sweep: {pt.fault} p={pt.p} measured={float(pt.measured):.4f} within_3se={pt.within_3se}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise IoFailure(f"no such file: {path}")
    if args.kind == "records":
        n = len(load_records(path))
    elif args.kind == "traces":
        n = len(read_traces(path))
    else:
        result = parse_output(path.read_text(encoding="utf-8"))
        if hasattr(result, "kind"):
            raise SchemaMismatch(f"{result.kind}: {result.detail}")
        n = 1
    print(f"validate: ok {n} {args.kind} in {path}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sleepinsight",
        description="Generate cohorts, run writer conditions, score traces and export result tables.",
        epilog="Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print "
               "'error: <Kind>: <detail>' on stderr. Remote credentials are read from the environment "
               "variable named in the remote config (api_key_env).",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a seeded synthetic cohort (plus warm-up history)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--nights", type=int, default=14)
    p.add_argument("--warmup", type=int, default=14, help="history nights before the cohort window (0 = none)")
    p.add_argument("--start-date", type=dt.date.fromisoformat, default=dt.date(2026, 2, 10))
    p.add_argument("--event-rate", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run one condition over a cohort and save per-night traces")
    p.add_argument("--cohort", required=True)
    p.add_argument("--history", help="warm-up records (default: <cohort>.history.jsonl if present)")
    p.add_argument("--condition", required=True, choices=[c.value for c in Condition])
    p.add_argument("--backend", default="template", choices=["template", "faulty", "remote"])
    p.add_argument("--model", help="model name (default: backend name)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--seed", type=int, default=0, help="seed for the faulty backend")
    p.add_argument("--threshold", type=_decimal, default="0.5")
    p.add_argument("--p-numeric", type=_probability, default=0.0)
    p.add_argument("--p-tag", type=_probability, default=0.0)
    p.add_argument("--p-swap", type=_probability, default=0.0)
    p.add_argument("--p-schema", type=_probability, default=0.0)
    p.add_argument(
        "--artifact-corruption", type=_probability, default=0.3,
        help="rate of corrupted layer artifacts (faulty backend only)",
    )
    p.add_argument("--remote-config", help="JSON endpoint config for --backend remote")
    p.add_argument("--prices", help="JSON price table")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_run)

    for name, func, help_text in (
        ("score", cmd_score, "score traces per night and per condition"),
        ("aggregate", cmd_aggregate, "write results, frontier and detailed CSVs"),
        ("frontier", cmd_frontier, "write the cost/error frontier CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--traces", required=True, nargs="+", help="trace files or run directories")
        p.add_argument("--prices", help="JSON price table; re-costs every trace")
        p.add_argument("--out", required=True, help="output file" if name == "frontier" else "output directory")
        p.add_argument("--force", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("fault-sweep", help="measure evaluator incidence against injected fault rates")
    p.add_argument("--cohort", required=True)
    p.add_argument("--history")
    p.add_argument("--p-numeric", type=_probabilities)
    p.add_argument("--p-tag", type=_probabilities)
    p.add_argument("--p-swap", type=_probabilities)
    p.add_argument("--p-schema", type=_probabilities)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_fault_sweep)

    p = sub.add_parser("validate", help="strictly validate a records, traces or output file")
    p.add_argument("path")
    p.add_argument("--kind", choices=["records", "traces", "output"], default="records")
    p.set_defaults(func=cmd_validate)
    return parser


_EXPECTED = (
    InvalidSpec, IoFailure, OSError, ValueError, KeyError, PipelineError, UnknownModel, BackendUnavailable,
    WriterError, EmptyInput,
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _EXPECTED as exc:
        detail = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {type(exc).__name__}: {detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
