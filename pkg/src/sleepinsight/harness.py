"""Experiment harness: conditions, prompts, runs, costs and result tables."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .analysis import (
    BASELINE_WINDOW,
    OUTPUT_SCHEMA_ID,
    NightLayers,
    NothingEligible,
    SelectionRule,
    build_chart,
    build_packet,
    compute_baselines,
    compute_comparisons,
    format_reference_report,
    rank,
    render_packet,
    run_layers,
)
from .core import (
    METRIC_IDS,
    TAG_CANDIDATES,
    ArtifactRecord,
    CallRecord,
    PipelineError,
    StyleConstraints,
    TraceRecord,
    UserNightRecord,
    build_fact_bank,
    dumps,
    fmt_decimal,
    fmt_signed_pct,
    InsightOutput,
    get_metric,
    quantize,
)
from .evaluator import (
    ConditionAggregate,
    NightScore,
    SchemaError,
    aggregate,
    output_schema,
    parse_output,
    score_night,
)
from .writers import (
    Backend,
    FaultConfig,
    FaultyBackend,
    RemoteBackend,
    RemoteConfig,
    TemplateBackend,
    WriterError,
    WriterRequest,
    WriterResponse,
    artifact_to_dict,
    generate_artifact,
)

logger = logging.getLogger(__name__)


class Condition(enum.Enum):
    TFTS = "tfts"
    STRUCTURED_ZERO_SHOT = "structured-zero-shot"
    STRUCTURED_FEW_SHOT = "structured-few-shot"
    REPLACE_REFERENCE_REPORT = "replace-reference-report"
    REPLACE_COMPARISON = "replace-comparison"
    REPLACE_RANKER = "replace-ranker"
    REPLACE_ATTRIBUTION = "replace-attribution"
    REPLACE_HANDOFF = "replace-handoff"

    @property
    def layer(self) -> Optional[str]:
        return _REPLACED_LAYER.get(self)

    @property
    def calls_per_night(self) -> int:
        return 2 if self.layer else 1

    @property
    def label(self) -> str:
        return _LABELS[self]


_REPLACED_LAYER = {
    Condition.REPLACE_REFERENCE_REPORT: "reference_report",
    Condition.REPLACE_COMPARISON: "comparison",
    Condition.REPLACE_RANKER: "ranker",
    Condition.REPLACE_ATTRIBUTION: "attribution",
    Condition.REPLACE_HANDOFF: "handoff",
}
_LABELS = {
    Condition.TFTS: "TFTS",
    Condition.STRUCTURED_ZERO_SHOT: "Structured Zero-Shot",
    Condition.STRUCTURED_FEW_SHOT: "Structured Few-Shot",
    Condition.REPLACE_REFERENCE_REPORT: "Replace Reference Report",
    Condition.REPLACE_COMPARISON: "Replace Comparison",
    Condition.REPLACE_RANKER: "Replace Ranker",
    Condition.REPLACE_ATTRIBUTION: "Replace Attribution",
    Condition.REPLACE_HANDOFF: "Replace Handoff",
}
CONDITION_ORDER = {c.value: i for i, c in enumerate(Condition)}


class UnknownModel(KeyError):
    pass


class BackendUnavailable(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# prices and cost

@dataclass(frozen=True)
class PriceTable:
    """USD per input token and per output token, by model name."""

    prices: Mapping[str, tuple[Decimal, Decimal]]

    def __post_init__(self) -> None:
        for model, (pin, pout) in self.prices.items():
            if pin < 0 or pout < 0:
                raise ValueError(f"negative price for {model}")

    def __getitem__(self, model: str) -> tuple[Decimal, Decimal]:
        try:
            return self.prices[model]
        except KeyError:
            raise UnknownModel(model) from None

    def __contains__(self, model: str) -> bool:
        return model in self.prices

    @classmethod
    def from_dict(cls, d: Mapping[str, Mapping[str, Any]]) -> "PriceTable":
        return cls({m: (Decimal(str(p["input"])), Decimal(str(p["output"]))) for m, p in d.items()})

    @classmethod
    def from_file(cls, path: str | Path) -> "PriceTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {m: {"input": fmt_decimal(i), "output": fmt_decimal(o)} for m, (i, o) in sorted(self.prices.items())}


OFFLINE_PRICES = PriceTable({"template": (Decimal(0), Decimal(0)), "faulty": (Decimal(0), Decimal(0))})


def cost_of_calls(model: str, calls: Iterable[CallRecord], prices: PriceTable) -> Decimal:
    pin, pout = prices[model]
    return sum((c.input_tokens * pin + c.output_tokens * pout for c in calls), Decimal(0))


def cost_of(trace: TraceRecord, prices: PriceTable) -> Decimal:
    """Sum over every call of the night, artifact calls included."""
    return cost_of_calls(trace.model, trace.calls, prices)


# ---------------------------------------------------------------------------
# one-call baseline prompts

ATTRIBUTION_RULE = (
    "Attribution rule: a tag may be attributed only if it is one of the tag candidates and a logged event "
    "with that tag has strength >= {threshold} tonight. Never add other tags."
)


def _history_block(history: Sequence[UserNightRecord], window: int = BASELINE_WINDOW) -> list[str]:
    recent = list(history)[-window:]
    if not recent:
        return ["History: none available. BASELINE MISSING for every metric; do not invent one."]
    lines = [f"History ({len(recent)} most recent nights, oldest first):"]
    for r in recent:
        vals = ", ".join(f"{m}={fmt_decimal(r.values[m])}" for m in METRIC_IDS if m in r.values)
        lines.append(f"  {r.date.isoformat()}: {vals}")
    return lines


def build_zero_shot_prompt(
    record: UserNightRecord,
    history: Sequence[UserNightRecord],
    rule: SelectionRule = SelectionRule(),
    threshold: Decimal = Decimal("0.5"),
    schema_id: str = OUTPUT_SCHEMA_ID,
    candidates: Sequence[str] = TAG_CANDIDATES,
    constraints: StyleConstraints = StyleConstraints(),
) -> str:
    lines = [
        f"[structured zero-shot; output schema {schema_id}]",
        "You turn one night of wearable sleep data into a short insight for the user.",
        "Compare tonight to the user's baseline (mean of up to the last 14 nights), choose one metric to surface, "
        "attribute it only to supported factors, and write the insight.",
        "Tonight's record (JSON):",
        dumps(record),
        *_history_block(history),
        rule.describe(),
        ATTRIBUTION_RULE.format(threshold=fmt_decimal(Decimal(threshold))),
        f"Tag candidates: {', '.join(candidates)}",
        "Output JSON schema:",
        json.dumps(output_schema(constraints), sort_keys=True),
        "Return only the JSON object.",
    ]
    return "\n".join(lines)


def _metric_table(layers_or_none: Optional[tuple], record: UserNightRecord) -> list[str]:
    comparisons = {} if layers_or_none is None else {c.metric: c for c in layers_or_none}
    rows = ["metric | current | baseline | delta"]
    for m in METRIC_IDS:
        if m not in record.values:
            continue
        cur = fmt_decimal(quantize(record.values[m], get_metric(m).precision))
        c = comparisons.get(m)
        if c is None:
            rows.append(f"{m} | {cur} | n/a | n/a")
        else:
            rows.append(f"{m} | {cur} | {fmt_decimal(c.baseline_mean)} | {fmt_signed_pct(c.pct_delta)}%")
    return rows


@dataclass(frozen=True)
class Demonstration:
    record: UserNightRecord
    history: tuple[UserNightRecord, ...]
    output: dict


def load_demonstrations() -> tuple[Demonstration, ...]:
    """The two worked nights shipped with the package (never cohort nights)."""
    text = resources.files("sleepinsight").joinpath("data/demonstrations.json").read_text(encoding="utf-8")
    out = []
    for d in json.loads(text):
        out.append(Demonstration(
            UserNightRecord.from_dict(d["record"]),
            tuple(UserNightRecord.from_dict(h) for h in d["history"]),
            d["output"],
        ))
    return tuple(out)


def build_few_shot_prompt(
    record: UserNightRecord,
    history: Sequence[UserNightRecord],
    rule: SelectionRule = SelectionRule(),
    threshold: Decimal = Decimal("0.5"),
    schema_id: str = OUTPUT_SCHEMA_ID,
    examples: Optional[Sequence[Demonstration]] = None,
    candidates: Sequence[str] = TAG_CANDIDATES,
    constraints: StyleConstraints = StyleConstraints(),
) -> str:
    examples = load_demonstrations() if examples is None else tuple(examples)
    for ex in examples:
        if ex.record.key == record.key or ex.record.user_id == record.user_id:
            raise ValueError(f"demonstration night {ex.record.key} overlaps the evaluated night")
    history = sorted((h for h in history if h.user_id == record.user_id and h.date < record.date),
                     key=lambda r: r.date)
    comparisons = compute_comparisons(record, compute_baselines(history, record))
    lines = [
        build_zero_shot_prompt(record, history, rule, threshold, schema_id, candidates, constraints)
        .replace("[structured zero-shot;", "[structured few-shot;", 1),
        "Metric table for tonight:",
        *_metric_table(comparisons, record),
        "Numeric grounding: every number you write must come from the metric table above; do not recalculate "
        "or round differently, and do not introduce other numbers.",
    ]
    for i, ex in enumerate(examples, start=1):
        ex_hist = list(ex.history)
        ex_comps = compute_comparisons(ex.record, compute_baselines(ex_hist, ex.record))
        lines += [
            f"Example {i} record:",
            dumps(ex.record),
            f"Example {i} metric table:",
            *_metric_table(ex_comps, ex.record),
            f"Example {i} output:",
            json.dumps(ex.output, sort_keys=True, ensure_ascii=False),
        ]
    lines.append("Now write the output for tonight's record. Return only the JSON object.")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# runs

@dataclass(frozen=True)
class RunManifest:
    """Everything that determines a run, given fixed backend behavior.

    Stored as JSON next to the traces. ``cohort`` and ``history`` are
    JSON-lines record files; ``backend`` is ``template``, ``faulty`` or
    ``remote`` (the latter needs ``remote_config``, a JSON file of
    :class:`RemoteConfig` fields).
    """

    cohort: str
    condition: str = Condition.TFTS.value
    backend: str = "template"
    model: Optional[str] = None
    history: Optional[str] = None
    seed: int = 0
    out_dir: Optional[str] = None
    max_in_flight: int = 4
    threshold: str = "0.5"
    rule_version: str = SelectionRule().rule_version
    min_baseline_nights: int = SelectionRule().min_baseline_nights
    p_numeric: float = 0.0
    p_tag_add: float = 0.0
    p_metric_swap: float = 0.0
    p_schema: float = 0.0
    artifact_corruption: float = 0.3
    remote_config: Optional[str] = None
    prices: Optional[str] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunManifest":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown manifest keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @property
    def condition_id(self) -> Condition:
        return Condition(self.condition)

    @property
    def rule(self) -> SelectionRule:
        return SelectionRule(min_baseline_nights=self.min_baseline_nights, rule_version=self.rule_version)

    def make_backend(self) -> Backend:
        if self.backend == "template":
            return TemplateBackend(self.model or "template")
        if self.backend == "faulty":
            cfg = FaultConfig(self.seed, self.p_numeric, self.p_tag_add, self.p_metric_swap, self.p_schema)
            return FaultyBackend(cfg, self.artifact_corruption, self.model or "faulty")
        if self.backend == "remote":
            if not self.remote_config:
                raise BackendUnavailable("remote backend needs a remote_config file")
            try:
                cfg = RemoteConfig.from_file(self.remote_config)
            except (OSError, ValueError, TypeError) as exc:
                raise BackendUnavailable(f"cannot load remote config: {exc}") from exc
            if self.model:
                cfg = RemoteConfig.from_dict({**cfg.__dict__, "model": self.model})
            return RemoteBackend(cfg)
        raise BackendUnavailable(f"unknown backend {self.backend!r}")


@dataclass
class RunResult:
    traces: list[TraceRecord]
    skipped: list[str]
    fired: dict[str, tuple[str, ...]] = field(default_factory=dict)


def _upstream(layer: str, L: NightLayers, rule: SelectionRule) -> dict:
    night = {"user_id": L.record.user_id, "date": L.record.date.isoformat()}
    values = L.record.to_dict()["values"]
    if layer == "reference_report":
        return {"night": night, "values": values, "comparisons": [c.to_dict() for c in L.comparisons]}
    if layer == "comparison":
        return {"night": night, "values": values, "baselines": {m: b.to_dict() for m, b in L.baselines.items()}}
    if layer == "ranker":
        return {
            "comparisons": [c.to_dict() for c in L.comparisons],
            "baselines": {m: b.to_dict() for m, b in L.baselines.items()},
            "selection_rule": rule.describe(),
        }
    if layer == "attribution":
        return {
            "events": [e.to_dict() for e in L.record.events],
            "candidates": list(TAG_CANDIDATES),
            "threshold": fmt_decimal(L.attribution.threshold),
        }
    return {
        "fact_bank": L.bank.to_dict(),
        "report_line": L.packet.report_line,
        "attribution": L.attribution.to_dict(),
        "chart": [p.to_dict() for p in L.chart],
        "style_constraints": L.packet.style_constraints.to_dict(),
        "schema_id": L.packet.schema_id,
    }


def _reference_artifact(layer: str, L: NightLayers) -> Any:
    return {
        "reference_report": L.report,
        "comparison": L.comparisons,
        "ranker": L.ranking,
        "attribution": L.attribution,
        "handoff": L.packet,
    }[layer]


def downstream_packet(layer: str, artifact: Any, L: NightLayers, rule: SelectionRule):
    """Recompute every layer after ``layer`` from the replaced artifact."""
    if layer == "reference_report":
        return build_packet(L.bank, artifact, L.attribution, L.chart, L.packet.style_constraints)
    if layer == "comparison":
        ranking = rank(artifact, L.baselines, rule)
        report = format_reference_report(L.record, artifact)
        bank = build_fact_bank(L.record, artifact, ranking, L.attribution)
        chart = build_chart(L.history, L.record, ranking.selected)
        return build_packet(bank, report, L.attribution, chart, L.packet.style_constraints)
    if layer == "ranker":
        bank = build_fact_bank(L.record, L.comparisons, artifact, L.attribution)
        chart = build_chart(L.history, L.record, artifact.selected)
        return build_packet(bank, L.report, L.attribution, chart, L.packet.style_constraints)
    if layer == "attribution":
        bank = build_fact_bank(L.record, L.comparisons, L.ranking, artifact)
        return build_packet(bank, L.report, artifact, L.chart, L.packet.style_constraints)
    if layer == "handoff":
        return artifact
    raise ValueError(layer)


def _call(response: WriterResponse, kind: str) -> CallRecord:
    return CallRecord(kind, response.input_tokens, response.output_tokens, response.latency_ms, response.attempts,
                      response.request_body, response.response_body)


def run_night(
    record: UserNightRecord,
    history: Sequence[UserNightRecord],
    condition: Condition,
    backend: Backend,
    prices: PriceTable,
    rule: SelectionRule = SelectionRule(),
    threshold: Decimal = Decimal("0.5"),
) -> TraceRecord:
    """One night under one condition. Raises NothingEligible on cold start."""
    L = run_layers(record, history, rule, threshold)
    reference = {"bank": L.bank.to_dict(), "ranking": L.ranking.to_dict(), "attribution": L.attribution.to_dict()}
    key = f"{record.user_id}/{record.date.isoformat()}"
    calls: list[CallRecord] = []
    artifact_rec: Optional[ArtifactRecord] = None
    packet = L.packet

    if condition.layer:
        layer = condition.layer
        try:
            result = generate_artifact(
                layer, _upstream(layer, L, rule), backend, _reference_artifact(layer, L), key,
                sorted(L.bank.allowed_numbers),
            )
        except WriterError as exc:
            calls.append(CallRecord("artifact", 0, 0, 0, 0))
            artifact_rec = ArtifactRecord(layer, "", None, f"backend: {type(exc).__name__}: {exc}")
        else:
            calls.append(_call(result.response, "artifact"))
            error = result.error
            if result.artifact is not None:
                try:
                    packet = downstream_packet(layer, result.artifact, L, rule)
                except PipelineError as exc:
                    error = f"downstream: {type(exc).__name__}: {exc}"
            parsed = None if result.artifact is None else artifact_to_dict(layer, result.artifact)
            artifact_rec = ArtifactRecord(layer, result.raw_text, parsed, error)

    if condition is Condition.STRUCTURED_ZERO_SHOT:
        prompt = build_zero_shot_prompt(record, L.history, rule, threshold)
    elif condition is Condition.STRUCTURED_FEW_SHOT:
        prompt = build_few_shot_prompt(record, L.history, rule, threshold)
    else:
        prompt = render_packet(packet)
    request = WriterRequest(prompt, OUTPUT_SCHEMA_ID, payload=packet.to_dict(), stream_key=key)
    backend_error = None
    outcome: InsightOutput | SchemaError
    try:
        response = backend.write(request)
    except WriterError as exc:
        backend_error = f"{type(exc).__name__}: {exc}"
        calls.append(CallRecord("writer", 0, 0, 0, 0))
        raw = ""
        outcome = SchemaError("backend", backend_error)
    else:
        calls.append(_call(response, "writer"))
        raw = response.raw_text
        outcome = parse_output(raw, OUTPUT_SCHEMA_ID, packet.style_constraints)

    baseline_condition = condition in (Condition.STRUCTURED_ZERO_SHOT, Condition.STRUCTURED_FEW_SHOT)
    return TraceRecord(
        condition=condition.value,
        model=backend.model,
        user_id=record.user_id,
        date=record.date,
        packet=None if baseline_condition else packet.to_dict(),
        artifact=artifact_rec,
        raw_output=raw,
        parsed=outcome.to_dict() if isinstance(outcome, InsightOutput) else None,
        schema_error=outcome.to_dict() if isinstance(outcome, SchemaError) else None,
        calls=tuple(calls),
        latency_ms=sum(c.latency_ms for c in calls),
        cost_usd=cost_of_calls(backend.model, calls, prices),
        reference=reference,
        backend_error=backend_error,
    )


def group_history(records: Iterable[UserNightRecord]) -> dict[str, list[UserNightRecord]]:
    by_user: dict[str, list[UserNightRecord]] = defaultdict(list)
    for r in records:
        by_user[r.user_id].append(r)
    for lst in by_user.values():
        lst.sort(key=lambda r: r.date)
    return by_user


def run_condition(
    cohort: Sequence[UserNightRecord],
    condition: Condition,
    backend: Backend,
    history: Sequence[UserNightRecord] = (),
    prices: PriceTable = OFFLINE_PRICES,
    rule: SelectionRule = SelectionRule(),
    threshold: Decimal = Decimal("0.5"),
    max_in_flight: int = 4,
) -> RunResult:
    """Run one condition over every night in ``cohort``.

    Baselines for a night come from ``history`` plus earlier cohort nights of
    the same user. Cold-start nights are skipped and listed in ``skipped``.
    Traces come back in (user_id, date) order whatever the concurrency.
    """
    if backend.model not in prices:
        raise UnknownModel(backend.model)
    everything = group_history(list(history) + list(cohort))
    nights = sorted(cohort, key=lambda r: r.key)

    def job(rec: UserNightRecord) -> TraceRecord | str:
        past = [r for r in everything[rec.user_id] if r.date < rec.date]
        try:
            return run_night(rec, past, condition, backend, prices, rule, threshold)
        except NothingEligible as exc:
            return f"{rec.user_id} {rec.date.isoformat()} NothingEligible: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(job, nights))
    traces = [r for r in results if isinstance(r, TraceRecord)]
    skipped = [r for r in results if isinstance(r, str)]
    for line in skipped:
        logger.info("skipped %s", line)
    fired = dict(getattr(backend, "fired", {}))
    return RunResult(traces, skipped, fired)


def trace_filename(condition: str, model: str) -> str:
    return f"{condition}__{model}.jsonl"


def write_traces(traces: Iterable[TraceRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(dumps(t) + "\n")


def read_traces(path: str | Path) -> list[TraceRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(TraceRecord.from_dict(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# results

RESULTS_HEADER = ["Condition", "Model", "n", "SchemaErr", "NumErr", "SelErr", "AttrErr", "Cost/night", "Lat."]
FRONTIER_HEADER = ["condition", "model", "cost_per_night", "num_err", "compliance_err"]
DETAILED_HEADER = [
    "condition", "model", "n", "n_schema_ok", "schema_err", "num_err", "claims_total", "claims_unsupported",
    "num_night_err", "sel_err", "attr_err", "compliance_err", "sel_err_all", "attr_err_all",
    "compliance_err_all", "artifact_err", "cost_per_night", "latency_mean_ms", "latency_median_ms",
]


def pct(rate: Optional[Fraction], places: int = 1) -> str:
    """A rate as a percentage, rounded half away from zero; blank when undefined."""
    if rate is None:
        return ""
    value = Decimal(rate.numerator) * 100 / Decimal(rate.denominator)
    return fmt_decimal(quantize(value, places))


def _cost(value: Decimal) -> str:
    return fmt_decimal(value.normalize()) if value else "0"


def aggregate_traces(traces: Sequence[TraceRecord], prices: Optional[PriceTable] = None) -> list[tuple[str, str, ConditionAggregate, list[NightScore]]]:
    groups: dict[tuple[str, str], list[TraceRecord]] = defaultdict(list)
    for t in traces:
        groups[(t.condition, t.model)].append(t)
    rows = []
    for (cond, model) in sorted(groups, key=lambda k: (CONDITION_ORDER.get(k[0], 99), k[0], k[1])):
        group = sorted(groups[(cond, model)], key=lambda t: (t.user_id, t.date))
        scores = [score_night(t) for t in group]
        usage = [(cost_of(t, prices) if prices is not None else t.cost_usd, t.latency_ms) for t in group]
        rows.append((cond, model, aggregate(scores, usage), scores))
    return rows


def _label(condition: str) -> str:
    try:
        return Condition(condition).label
    except ValueError:
        return condition


def _open_csv(path: Path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_results_csv(aggregates: Sequence[tuple[str, str, ConditionAggregate]], path: str | Path) -> Path:
    """Headline table: error rates as percentages to one decimal, mean latency in seconds."""
    path = Path(path)
    fh, w = _open_csv(path)
    with fh:
        w.writerow(RESULTS_HEADER)
        for cond, model, a in aggregates:
            w.writerow([
                _label(cond), model, a.n, pct(a.schema_err), pct(a.num_err), pct(a.sel_err), pct(a.attr_err),
                _cost(a.cost_per_night), fmt_decimal(quantize(Decimal(a.latency_mean_ms) / 1000, 1)),
            ])
    return path


def write_frontier_csv(aggregates: Sequence[tuple[str, str, ConditionAggregate]], path: str | Path) -> Path:
    path = Path(path)
    fh, w = _open_csv(path)
    with fh:
        w.writerow(FRONTIER_HEADER)
        for cond, model, a in aggregates:
            w.writerow([cond, model, _cost(a.cost_per_night), pct(a.num_err, 2), pct(a.compliance_err, 2)])
    return path


def write_detailed_csv(aggregates: Sequence[tuple[str, str, ConditionAggregate]], path: str | Path) -> Path:
    path = Path(path)
    fh, w = _open_csv(path)
    with fh:
        w.writerow(DETAILED_HEADER)
        for cond, model, a in aggregates:
            w.writerow([
                cond, model, a.n, a.n_schema_ok, pct(a.schema_err, 2), pct(a.num_err, 2), a.claims_total,
                a.claims_unsupported, pct(a.num_night_err, 2), pct(a.sel_err, 2), pct(a.attr_err, 2),
                pct(a.compliance_err, 2), pct(a.sel_err_all, 2), pct(a.attr_err_all, 2),
                pct(a.compliance_err_all, 2), pct(a.artifact_err, 2), _cost(a.cost_per_night),
                a.latency_mean_ms, a.latency_median_ms,
            ])
    return path


def emit_results(
    aggregates: Sequence[tuple[str, str, ConditionAggregate]],
    out_dir: str | Path,
) -> tuple[Path, Path, Path]:
    """Write results.csv, frontier.csv and results_detailed.csv into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return (
        write_results_csv(aggregates, out / "results.csv"),
        write_frontier_csv(aggregates, out / "frontier.csv"),
        write_detailed_csv(aggregates, out / "results_detailed.csv"),
    )


# ---------------------------------------------------------------------------
# fault sweep

FAULT_CLASSES = ("numeric", "tag_add", "metric_swap", "schema")
SWEEP_HEADER = [
    "fault", "p_injected", "n", "n_fired", "measured", "stderr", "within_3se",
    "schema_err", "num_night_err", "sel_err", "attr_err",
]


@dataclass(frozen=True)
class SweepPoint:
    fault: str
    p: float
    aggregate: ConditionAggregate
    n_fired: int

    @property
    def measured(self) -> Fraction:
        """Per-night incidence of the metric this fault class targets."""
        a = self.aggregate
        value = {
            "numeric": a.num_night_err,
            "tag_add": a.attr_err,
            "metric_swap": a.sel_err,
            "schema": a.schema_err,
        }[self.fault]
        return value if value is not None else Fraction(0)

    @property
    def others(self) -> dict[str, Fraction]:
        a = self.aggregate
        rates = {
            "numeric": a.num_night_err, "tag_add": a.attr_err, "metric_swap": a.sel_err, "schema": a.schema_err,
        }
        return {k: (v if v is not None else Fraction(0)) for k, v in rates.items() if k != self.fault}

    @property
    def stderr(self) -> float:
        return (self.p * (1 - self.p) / self.aggregate.n) ** 0.5

    @property
    def within_3se(self) -> bool:
        return abs(float(self.measured) - self.p) <= 3 * self.stderr


def fault_sweep(
    cohort: Sequence[UserNightRecord],
    grid: Mapping[str, Sequence[float]],
    history: Sequence[UserNightRecord] = (),
    seed: int = 0,
    max_in_flight: int = 4,
) -> list[SweepPoint]:
    """One TFTS run per (fault class, probability), other faults off.

    Incidence is measured by the evaluator from the traces, not read from the
    backend's own record of which faults fired.
    """
    points = []
    for fault in FAULT_CLASSES:
        for p in grid.get(fault, ()):
            kwargs = {f"p_{name}": 0.0 for name in FAULT_CLASSES}
            kwargs[f"p_{fault}"] = float(p)
            backend = FaultyBackend(FaultConfig(seed, **kwargs), artifact_corruption=0.0)
            run = run_condition(cohort, Condition.TFTS, backend, history, max_in_flight=max_in_flight)
            scores = [score_night(t) for t in run.traces]
            agg = aggregate(scores, [(t.cost_usd, t.latency_ms) for t in run.traces])
            n_fired = sum(1 for f in run.fired.values() if fault in f)
            points.append(SweepPoint(fault, float(p), agg, n_fired))
    return points


def write_sweep_csv(points: Sequence[SweepPoint], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for pt in points:
            a = pt.aggregate
            w.writerow([
                pt.fault, repr(pt.p), a.n, pt.n_fired, f"{float(pt.measured):.4f}", f"{pt.stderr:.4f}",
                str(pt.within_3se).lower(), pct(a.schema_err, 2), pct(a.num_night_err, 2), pct(a.sel_err, 2),
                pct(a.attr_err, 2),
            ])
    return path
