"""Deterministic analytical layers.

The layers run in order for one night: baselines, comparisons, ranking,
evidence-gated attribution, reference report, fact bank and writer packet.
:func:`run_layers` chains them; the harness calls the individual functions
directly when one layer's output is replaced.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .core import (
    CATALOG,
    METRIC_IDS,
    TAG_CANDIDATES,
    AttributionSet,
    BaselineStats,
    ChartPoint,
    ComparisonFact,
    FactBank,
    LoggedEvent,
    UNIT_CLASSES,
    PipelineError,
    RankingDecision,
    SchemaMismatch,
    StyleConstraints,
    UserNightRecord,
    WriterPacket,
    build_fact_bank,
    fmt_decimal,
    fmt_hours_minutes,
    fmt_signed_pct,
    get_metric,
    quantize,
    round_half_away,
)
from .core import _date, _dec, _int, _keys, _list, _str

logger = logging.getLogger(__name__)

BASELINE_WINDOW = 14
PACKET_SCHEMA_ID = "insight-packet.v1"
OUTPUT_SCHEMA_ID = "insight-output.v1"
NO_TAGS_MARKER = "NO TAGS PERMITTED: do not attribute this night to any factor."


class ZeroBaseline(PipelineError):
    pass


class NothingEligible(PipelineError):
    pass


class IncompleteBank(PipelineError):
    pass


@dataclass(frozen=True)
class SelectionRule:
    min_baseline_nights: int = 5
    priority_weights: Mapping[str, Decimal] = field(
        default_factory=lambda: {m: Decimal("0.5") if m == "sleep_score" else Decimal("1.0") for m in METRIC_IDS}
    )
    rule_version: str = "weighted-abs-pct.v1"

    def __post_init__(self) -> None:
        if self.min_baseline_nights < 1:
            raise ValueError("min_baseline_nights must be >= 1")
        missing = set(METRIC_IDS) - set(self.priority_weights)
        if missing:
            raise ValueError(f"priority_weights missing {sorted(missing)}")
        if any(w <= 0 for w in self.priority_weights.values()):
            raise ValueError("priority weights must be positive")

    def describe(self) -> str:
        weights = ", ".join(f"{m}={fmt_decimal(self.priority_weights[m])}" for m in METRIC_IDS)
        return (
            f"Selection rule {self.rule_version}: a metric is eligible when its baseline has at least "
            f"{self.min_baseline_nights} nights and a non-zero mean. score = weight x |percent change vs baseline|. "
            f"Select the eligible metric with the highest score; ties go to the metric listed first. "
            f"Metric order and weights: {weights}."
        )


# ---------------------------------------------------------------------------
# baseline and comparison

def compute_baseline(history: Sequence[UserNightRecord], metric: str, window_nights: int = BASELINE_WINDOW) -> BaselineStats:
    """Trailing-window mean and population std of ``metric``.

    The mean is rounded half away from zero to the metric's display precision,
    which is the value every downstream layer shows and compares against.
    """
    m = get_metric(metric)
    values = [r.values[metric] for r in history if metric in r.values][-window_nights:] if window_nights > 0 else []
    if not values:
        return BaselineStats(metric, None, None, 0)
    n = len(values)
    exact_mean = sum((Fraction(v) for v in values), Fraction(0)) / n
    var = sum(((Fraction(v) - exact_mean) ** 2 for v in values), Fraction(0)) / n
    std = Decimal(math.sqrt(var))  # only informational; not used for any decision
    mean = Decimal(exact_mean.numerator) / Decimal(exact_mean.denominator)
    return BaselineStats(metric, quantize(mean, m.precision), quantize(std, 4), n)


def compare(current: Decimal, baseline: BaselineStats, metric: str) -> ComparisonFact:
    if baseline.count < 1 or baseline.mean is None:
        raise ValueError("compare needs a baseline with at least one night")
    if baseline.mean == 0:
        raise ZeroBaseline(f"{metric}: baseline mean is zero")
    m = get_metric(metric)
    cur = quantize(current, m.precision)
    pct = round_half_away(100 * (Fraction(cur) - Fraction(baseline.mean)) / Fraction(baseline.mean))
    return ComparisonFact(metric, cur, baseline.mean, pct, ComparisonFact.direction_for(pct))


def rank(
    comparisons: Sequence[ComparisonFact],
    baselines: Mapping[str, BaselineStats],
    rule: SelectionRule,
) -> RankingDecision:
    by_metric = {c.metric: c for c in comparisons}
    scores: dict[str, Decimal] = {}
    eligible = []
    for m in METRIC_IDS:
        c = by_metric.get(m)
        b = baselines.get(m)
        if c is None or b is None or b.count < rule.min_baseline_nights:
            continue
        eligible.append(m)
        scores[m] = Decimal(rule.priority_weights[m]) * abs(c.pct_delta)
    if not eligible:
        raise NothingEligible("no metric has enough baseline history")
    # catalog order breaks ties: first strictly-greater wins
    selected = eligible[0]
    for m in eligible[1:]:
        if scores[m] > scores[selected]:
            selected = m
    return RankingDecision(selected, scores, tuple(eligible), rule.rule_version)


def attribute(
    events: Iterable[LoggedEvent],
    candidates: Sequence[str] = TAG_CANDIDATES,
    threshold: Decimal = Decimal("0.5"),
) -> AttributionSet:
    threshold = Decimal(threshold)
    if not (0 < threshold <= 1):
        raise ValueError("threshold must be in (0, 1]")
    evidence = {c: Decimal(0) for c in candidates}
    for ev in events:
        if ev.tag in evidence:
            evidence[ev.tag] = max(evidence[ev.tag], ev.strength)
    allowed = [(t, e) for t, e in evidence.items() if e >= threshold]
    allowed.sort(key=lambda te: (-te[1], te[0]))
    return AttributionSet(tuple(allowed), threshold)


# ---------------------------------------------------------------------------
# reference report

@dataclass(frozen=True)
class ReportLine:
    metric: str
    value: Decimal
    baseline: Optional[Decimal]
    pct_delta: Optional[int]

    def render(self) -> str:
        m = get_metric(self.metric)

        def show(v: Decimal) -> str:
            if m.is_duration:
                return f"{fmt_decimal(v)} min"
            if m.unit == "%":
                return f"{fmt_decimal(v)}%"
            return f"{fmt_decimal(v)} {m.unit}" if m.unit else fmt_decimal(v)

        text = f"{m.short}: {show(self.value)}"
        if self.baseline is not None and self.pct_delta is not None:
            text += f" (baseline {show(self.baseline)}, {fmt_signed_pct(self.pct_delta)}%)"
        else:
            text += " (no baseline)"
        return text

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": fmt_decimal(self.value),
            "baseline": None if self.baseline is None else fmt_decimal(self.baseline),
            "pct_delta": self.pct_delta,
        }


@dataclass(frozen=True)
class ReferenceReport:
    user_id: str
    date: dt.date
    lines: tuple[ReportLine, ...]

    @property
    def header(self) -> str:
        return f"night {self.user_id} {self.date.isoformat()}"

    @property
    def text(self) -> str:
        return "\n".join([self.header, *(line.render() for line in self.lines)])

    def line_for(self, metric: str) -> Optional[ReportLine]:
        for line in self.lines:
            if line.metric == metric:
                return line
        return None

    def to_dict(self) -> dict:
        return {
            "night": {"user_id": self.user_id, "date": self.date.isoformat()},
            "lines": [line.to_dict() for line in self.lines],
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceReport":
        _keys(d, ("night", "lines"), ("text",), "report")
        night = _keys(d["night"], ("user_id", "date"), (), "report.night")
        lines = []
        for item in _list(d["lines"], "report.lines"):
            _keys(item, ("metric", "value", "baseline", "pct_delta"), (), "report.lines[]")
            lines.append(ReportLine(
                get_metric(_str(item["metric"], "metric")).id,
                _dec(item["value"], "value"),
                None if item["baseline"] is None else _dec(item["baseline"], "baseline"),
                None if item["pct_delta"] is None else _int(item["pct_delta"], "pct_delta"),
            ))
        report = cls(_str(night["user_id"], "user_id"), _date(night["date"], "date"), tuple(lines))
        if "text" in d and d["text"] != report.text:
            raise SchemaMismatch("report.text does not match its lines")
        return report


def format_reference_report(record: UserNightRecord, comparisons: Sequence[ComparisonFact]) -> ReferenceReport:
    by_metric = {c.metric: c for c in comparisons}
    lines = []
    for m in CATALOG:
        if m.id not in record.values:
            continue
        c = by_metric.get(m.id)
        lines.append(ReportLine(
            m.id,
            quantize(record.values[m.id], m.precision),
            None if c is None else c.baseline_mean,
            None if c is None else c.pct_delta,
        ))
    return ReferenceReport(record.user_id, record.date, tuple(lines))


# ---------------------------------------------------------------------------
# handoff

def build_chart(history: Sequence[UserNightRecord], record: UserNightRecord, metric: str,
                window_nights: int = BASELINE_WINDOW) -> tuple[ChartPoint, ...]:
    """Selected metric over the baseline window plus the current night."""
    prec = get_metric(metric).precision
    past = [r for r in history if metric in r.values][-window_nights:] if window_nights > 0 else []
    points = [ChartPoint(r.date, quantize(r.values[metric], prec)) for r in past]
    if metric in record.values:
        points.append(ChartPoint(record.date, quantize(record.values[metric], prec)))
    return tuple(points)


def build_packet(
    bank: FactBank,
    report: ReferenceReport,
    attribution: AttributionSet,
    chart: Sequence[ChartPoint],
    constraints: StyleConstraints = StyleConstraints(),
    schema_id: str = OUTPUT_SCHEMA_ID,
) -> WriterPacket:
    comparison = bank.comparisons.get(bank.selected)
    if comparison is None:
        raise IncompleteBank(f"fact bank has no comparison for selected metric {bank.selected}")
    line = report.line_for(bank.selected)
    return WriterPacket(
        user_id=bank.user_id,
        date=bank.date,
        selected=bank.selected,
        comparison=comparison,
        report_line=line.render() if line is not None else "",
        allowed_numbers=bank.allowed_numbers,
        allowed_tags=tuple(attribution.allowed),
        chart=tuple(chart),
        style_constraints=constraints,
        schema_id=schema_id,
    )


def render_packet(packet: WriterPacket) -> str:
    """Writer-facing prompt text for a packet. Deterministic."""
    m = get_metric(packet.selected)
    nums = sorted(packet.allowed_numbers, key=lambda n: (UNIT_CLASSES.index(n.unit_class), n.value))
    numbers = ", ".join(
        f"{fmt_hours_minutes(n.value)}" if n.unit_class == "hours_minutes" else f"{fmt_decimal(n.value)} {n.unit_class}"
        for n in nums
    )
    if packet.allowed_tags:
        tags = ", ".join(f"{t} (evidence {fmt_decimal(e)})" for t, e in packet.allowed_tags)
    else:
        tags = NO_TAGS_MARKER
    sc = packet.style_constraints
    chart = ", ".join(f"{p.date.isoformat()}={fmt_decimal(p.value)}" for p in packet.chart)
    return "\n".join([
        f"[packet schema {PACKET_SCHEMA_ID}; output schema {packet.schema_id}]",
        f"Write one sleep insight for the selected metric: {m.id} ({m.label}).",
        f"Fixed comparison: {packet.comparison_display}",
        f"Report line: {packet.report_line}",
        f"Allowed numbers (use no others, do not recalculate): {numbers}",
        f"Allowed tags (copy exactly, add none): {tags}",
        f"Chart data for analysis_card.chart: {chart}",
        f"Length limits: title <= {sc.title_max} chars, core_insight <= {sc.core_insight_max} chars, "
        f"how_to_improve <= {sc.how_to_improve_max} chars.",
        "Return only the JSON object.",
    ])


# ---------------------------------------------------------------------------
# full reference run for one night

@dataclass(frozen=True)
class NightLayers:
    record: UserNightRecord
    history: tuple[UserNightRecord, ...]
    baselines: dict[str, BaselineStats]
    comparisons: tuple[ComparisonFact, ...]
    ranking: RankingDecision
    attribution: AttributionSet
    report: ReferenceReport
    bank: FactBank
    chart: tuple[ChartPoint, ...]
    packet: WriterPacket


def compute_baselines(history: Sequence[UserNightRecord], record: UserNightRecord,
                      window_nights: int = BASELINE_WINDOW) -> dict[str, BaselineStats]:
    return {m: compute_baseline(history, m, window_nights) for m in METRIC_IDS if m in record.values}


def compute_comparisons(record: UserNightRecord, baselines: Mapping[str, BaselineStats]) -> tuple[ComparisonFact, ...]:
    out = []
    for m in METRIC_IDS:
        b = baselines.get(m)
        if m not in record.values or b is None or b.count == 0:
            continue
        try:
            out.append(compare(record.values[m], b, m))
        except ZeroBaseline:
            logger.debug("%s %s: zero baseline for %s", record.user_id, record.date, m)
    return tuple(out)


def run_layers(
    record: UserNightRecord,
    history: Sequence[UserNightRecord],
    rule: SelectionRule = SelectionRule(),
    threshold: Decimal = Decimal("0.5"),
    candidates: Sequence[str] = TAG_CANDIDATES,
    constraints: StyleConstraints = StyleConstraints(),
    window_nights: int = BASELINE_WINDOW,
) -> NightLayers:
    """All reference layers for one night. Raises NothingEligible on cold start."""
    history = tuple(sorted((r for r in history if r.user_id == record.user_id and r.date < record.date),
                           key=lambda r: r.date))
    baselines = compute_baselines(history, record, window_nights)
    comparisons = compute_comparisons(record, baselines)
    ranking = rank(comparisons, baselines, rule)
    attribution = attribute(record.events, candidates, threshold)
    report = format_reference_report(record, comparisons)
    bank = build_fact_bank(record, comparisons, ranking, attribution)
    chart = build_chart(history, record, ranking.selected, window_nights)
    packet = build_packet(bank, report, attribution, chart, constraints)
    return NightLayers(record, history, baselines, comparisons, ranking, attribution, report, bank, chart, packet)
