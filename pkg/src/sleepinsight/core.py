"""Shared domain types, the metric catalog and the per-night fact bank.

Every other module builds on these definitions. Values that carry a display
precision are held as :class:`decimal.Decimal` quantized to that precision, so
equality and rounding are exact. All types serialize to a canonical JSON
object (lower_snake_case keys, ISO dates, decimals as strings).
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from fractions import Fraction
from typing import Any, Iterable, Literal, Mapping, Optional, Sequence

__all__ = [
    "PipelineError",
    "MissingComparison",
    "InconsistentNight",
    "SchemaMismatch",
    "Metric",
    "CATALOG",
    "METRIC_IDS",
    "METRIC_ALIASES",
    "TAG_CANDIDATES",
    "DEFAULT_TAG_VOCABULARY",
    "UNIT_CLASSES",
    "get_metric",
    "canonical_metric_id",
    "to_decimal",
    "quantize",
    "round_half_away",
    "fmt_decimal",
    "fmt_hours_minutes",
    "fmt_signed_pct",
    "LoggedEvent",
    "UserNightRecord",
    "BaselineStats",
    "ComparisonFact",
    "RankingDecision",
    "AttributionSet",
    "AllowedNumber",
    "FactBank",
    "ChartPoint",
    "StyleConstraints",
    "WriterPacket",
    "Headline",
    "AnalysisCard",
    "InsightOutput",
    "CallRecord",
    "ArtifactRecord",
    "TraceRecord",
    "allowed_numbers_for",
    "build_fact_bank",
    "dumps",
]


class PipelineError(Exception):
    """Base class for errors raised by the deterministic layers."""


class MissingComparison(PipelineError):
    pass


class InconsistentNight(PipelineError):
    pass


class SchemaMismatch(PipelineError, ValueError):
    """A serialized object does not match the strict shape of its type."""


# ---------------------------------------------------------------------------
# Decimal helpers

def to_decimal(value: Any) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, bool):
        raise SchemaMismatch(f"expected decimal, got bool {value!r}")
    if isinstance(value, float):
        # repr() keeps the shortest round-tripping literal, e.g. 34.2 not 34.20000000000000284
        return Decimal(repr(value))
    if isinstance(value, (int, str)):
        try:
            return Decimal(value)
        except InvalidOperation as exc:
            raise SchemaMismatch(f"not a decimal: {value!r}") from exc
    raise SchemaMismatch(f"expected decimal, got {type(value).__name__}")


def quantize(value: Any, precision: int) -> Decimal:
    """Round half away from zero to ``precision`` decimal places."""
    exp = Decimal(1).scaleb(-precision)
    return to_decimal(value).quantize(exp, rounding=ROUND_HALF_UP)


def round_half_away(value: Fraction) -> int:
    """Exact rational to nearest integer, ties away from zero."""
    sign = -1 if value < 0 else 1
    mag = abs(value)
    floor = mag.numerator // mag.denominator
    if mag - floor >= Fraction(1, 2):
        floor += 1
    return sign * floor


def fmt_decimal(value: Decimal) -> str:
    """Fixed-point rendering that never uses exponent notation."""
    text = format(value, "f")
    if text.startswith("-") and Decimal(text) == 0:
        text = text[1:]
    return text


def fmt_hours_minutes(minutes: Decimal | int) -> str:
    total = int(minutes)
    hours, rest = divmod(total, 60)
    if hours == 0:
        return f"{rest}m"
    return f"{hours}h {rest}m"


def fmt_signed_pct(pct: int) -> str:
    if pct > 0:
        return f"+{pct}"
    return str(pct)


# ---------------------------------------------------------------------------
# Metric catalog

UnitClass = Literal["ms", "bpm", "brpm", "percent", "minutes", "hours_minutes", "hours", "unitless"]
UNIT_CLASSES: tuple[str, ...] = (
    "ms", "bpm", "brpm", "percent", "minutes", "hours_minutes", "hours", "unitless",
)


@dataclass(frozen=True)
class Metric:
    id: str
    short: str  # field name used in rendered records and report lines
    label: str  # reader-facing name used in prose
    unit: str  # display unit ("" for unitless)
    unit_class: str
    precision: int
    is_duration: bool = False


# Order matters: it is the ranking tie-break priority.
CATALOG: tuple[Metric, ...] = (
    Metric("sleep_score", "score", "sleep score", "", "unitless", 0),
    Metric("duration_min", "duration", "total sleep", "min", "minutes", 0, True),
    Metric("deep_min", "deep", "deep sleep", "min", "minutes", 0, True),
    Metric("rem_min", "rem", "REM sleep", "min", "minutes", 0, True),
    Metric("light_min", "light", "light sleep", "min", "minutes", 0, True),
    Metric("hrv_ms", "hrv", "HRV", "ms", "ms", 1),
    Metric("heart_rate_bpm", "heart_rate", "heart rate", "bpm", "bpm", 1),
    Metric("resp_rate_brpm", "resp_rate", "respiratory rate", "brpm", "brpm", 1),
    Metric("snore_pct", "snore_percent", "snoring", "%", "percent", 1),
)
METRIC_IDS: tuple[str, ...] = tuple(m.id for m in CATALOG)
_BY_ID = {m.id: m for m in CATALOG}
METRIC_ALIASES: dict[str, str] = {m.short: m.id for m in CATALOG}
CATALOG_ORDER = {m.id: i for i, m in enumerate(CATALOG)}

TAG_CANDIDATES: tuple[str, ...] = ("Alcohol", "Stress", "Sick", "Fever")
DEFAULT_TAG_VOCABULARY: tuple[str, ...] = TAG_CANDIDATES + ("Caffeine", "Exercise", "LateMeal")


def get_metric(metric_id: str) -> Metric:
    try:
        return _BY_ID[metric_id]
    except KeyError:
        raise SchemaMismatch(f"unknown metric {metric_id!r}") from None


def canonical_metric_id(name: str) -> str:
    """Accept a catalog id or its short record-field alias (e.g. ``hrv``)."""
    if name in _BY_ID:
        return name
    if name in METRIC_ALIASES:
        return METRIC_ALIASES[name]
    raise SchemaMismatch(f"unknown metric {name!r}")


# ---------------------------------------------------------------------------
# strict (de)serialization helpers

def _keys(d: Any, required: Iterable[str], optional: Iterable[str] = (), what: str = "object") -> dict:
    if not isinstance(d, dict):
        raise SchemaMismatch(f"{what}: expected object, got {type(d).__name__}")
    req, opt = set(required), set(optional)
    missing = req - d.keys()
    if missing:
        raise SchemaMismatch(f"{what}: missing field(s) {sorted(missing)}")
    unknown = d.keys() - req - opt
    if unknown:
        raise SchemaMismatch(f"{what}: unknown field(s) {sorted(unknown)}")
    return d


def _str(v: Any, what: str) -> str:
    if not isinstance(v, str):
        raise SchemaMismatch(f"{what}: expected string")
    return v


def _int(v: Any, what: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaMismatch(f"{what}: expected integer")
    return v


def _dec(v: Any, what: str) -> Decimal:
    if not isinstance(v, str):
        raise SchemaMismatch(f"{what}: decimals are serialized as strings")
    return to_decimal(v)


def _date(v: Any, what: str) -> dt.date:
    try:
        return dt.date.fromisoformat(_str(v, what))
    except ValueError as exc:
        raise SchemaMismatch(f"{what}: bad ISO date {v!r}") from exc


def _list(v: Any, what: str) -> list:
    if not isinstance(v, list):
        raise SchemaMismatch(f"{what}: expected list")
    return v


def dumps(obj: Any) -> str:
    """Canonical one-line JSON used for files, digests and artifact payloads."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# Records

@dataclass(frozen=True)
class LoggedEvent:
    tag: str
    strength: Decimal
    note: Optional[str] = None

    def validate(self, vocabulary: Sequence[str] = DEFAULT_TAG_VOCABULARY) -> None:
        if self.tag not in vocabulary:
            raise SchemaMismatch(f"event tag {self.tag!r} not in vocabulary")
        if not (0 <= self.strength <= 1):
            raise SchemaMismatch(f"event strength {self.strength} outside [0, 1]")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"tag": self.tag, "strength": fmt_decimal(self.strength)}
        if self.note is not None:
            d["note"] = self.note
        return d

    @classmethod
    def from_dict(cls, d: Any) -> "LoggedEvent":
        _keys(d, ("tag", "strength"), ("note",), "event")
        note = d.get("note")
        if note is not None:
            note = _str(note, "event.note")
        return cls(_str(d["tag"], "event.tag"), _dec(d["strength"], "event.strength"), note)


@dataclass(frozen=True)
class UserNightRecord:
    user_id: str
    date: dt.date
    values: dict[str, Decimal]
    events: tuple[LoggedEvent, ...] = ()

    @property
    def key(self) -> tuple[str, str]:
        return (self.user_id, self.date.isoformat())

    def violations(self, vocabulary: Sequence[str] = DEFAULT_TAG_VOCABULARY) -> list[tuple[str, str]]:
        """Return (field, reason) pairs for every broken invariant."""
        out: list[tuple[str, str]] = []
        for mid, v in self.values.items():
            if mid not in _BY_ID:
                out.append((mid, "unknown metric"))
            elif v < 0:
                out.append((mid, "negative value"))
        for mid in ("sleep_score", "snore_pct"):
            v = self.values.get(mid)
            if v is not None and v > 100:
                out.append((mid, "outside [0, 100]"))
        dur = self.values.get("duration_min")
        stages = [self.values.get(m) for m in ("deep_min", "rem_min", "light_min")]
        if dur is not None and all(s is not None for s in stages):
            if sum(stages) > dur:  # type: ignore[arg-type]
                out.append(("duration_min", "deep + rem + light exceeds duration"))
        for i, ev in enumerate(self.events):
            try:
                ev.validate(vocabulary)
            except SchemaMismatch as exc:
                out.append((f"events[{i}]", str(exc)))
        return out

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "date": self.date.isoformat(),
            "values": {m: fmt_decimal(self.values[m]) for m in METRIC_IDS if m in self.values},
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: Any) -> "UserNightRecord":
        _keys(d, ("user_id", "date", "values", "events"), (), "record")
        raw_values = d["values"]
        if not isinstance(raw_values, dict):
            raise SchemaMismatch("record.values: expected object")
        values = {}
        for k, v in raw_values.items():
            get_metric(k)
            values[k] = _dec(v, f"values.{k}")
        events = tuple(LoggedEvent.from_dict(e) for e in _list(d["events"], "record.events"))
        return cls(_str(d["user_id"], "record.user_id"), _date(d["date"], "record.date"), values, events)


# ---------------------------------------------------------------------------
# Layer outputs

@dataclass(frozen=True)
class BaselineStats:
    metric: str
    mean: Optional[Decimal]
    std: Optional[Decimal]
    count: int

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "mean": None if self.mean is None else fmt_decimal(self.mean),
            "std": None if self.std is None else fmt_decimal(self.std),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "BaselineStats":
        _keys(d, ("metric", "mean", "std", "count"), (), "baseline")
        mean = None if d["mean"] is None else _dec(d["mean"], "baseline.mean")
        std = None if d["std"] is None else _dec(d["std"], "baseline.std")
        return cls(get_metric(_str(d["metric"], "baseline.metric")).id, mean, std, _int(d["count"], "baseline.count"))


Direction = Literal["up", "down", "flat"]


@dataclass(frozen=True)
class ComparisonFact:
    metric: str
    current: Decimal
    baseline_mean: Decimal
    pct_delta: int
    direction: str

    @staticmethod
    def direction_for(pct: int) -> str:
        return "up" if pct > 0 else "down" if pct < 0 else "flat"

    @property
    def display(self) -> str:
        m = get_metric(self.metric)
        unit = f" {m.unit}" if m.unit else ""
        return (
            f"{fmt_decimal(self.current)} vs {fmt_decimal(self.baseline_mean)}{unit}"
            f" ({fmt_signed_pct(self.pct_delta)}%)"
        )

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "current": fmt_decimal(self.current),
            "baseline_mean": fmt_decimal(self.baseline_mean),
            "pct_delta": self.pct_delta,
            "direction": self.direction,
            "display": self.display,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "ComparisonFact":
        _keys(d, ("metric", "current", "baseline_mean", "pct_delta", "direction"), ("display",), "comparison")
        direction = _str(d["direction"], "comparison.direction")
        if direction not in ("up", "down", "flat"):
            raise SchemaMismatch(f"comparison.direction: {direction!r}")
        fact = cls(
            get_metric(_str(d["metric"], "comparison.metric")).id,
            _dec(d["current"], "comparison.current"),
            _dec(d["baseline_mean"], "comparison.baseline_mean"),
            _int(d["pct_delta"], "comparison.pct_delta"),
            direction,
        )
        if "display" in d and d["display"] != fact.display:
            raise SchemaMismatch("comparison.display does not match its fields")
        return fact


@dataclass(frozen=True)
class RankingDecision:
    """Output of the ranker.

    Semantic invariants (``selected`` is the arg-max) are checked by
    :meth:`is_consistent`, not at construction: replaced-layer artifacts are
    allowed to break them and must still load.
    """

    selected: str
    scores: dict[str, Decimal]
    eligible: tuple[str, ...]
    rule_version: str

    def is_consistent(self) -> bool:
        if self.selected not in self.eligible:
            return False
        best = max(self.scores[m] for m in self.eligible)
        winners = [m for m in METRIC_IDS if m in self.eligible and self.scores[m] == best]
        return winners[0] == self.selected

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "scores": {m: fmt_decimal(self.scores[m]) for m in METRIC_IDS if m in self.scores},
            "eligible": list(self.eligible),
            "rule_version": self.rule_version,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "RankingDecision":
        _keys(d, ("selected", "scores", "eligible", "rule_version"), (), "ranking")
        if not isinstance(d["scores"], dict):
            raise SchemaMismatch("ranking.scores: expected object")
        scores = {get_metric(k).id: _dec(v, f"scores.{k}") for k, v in d["scores"].items()}
        eligible = tuple(get_metric(_str(m, "ranking.eligible")).id for m in _list(d["eligible"], "ranking.eligible"))
        return cls(
            get_metric(_str(d["selected"], "ranking.selected")).id,
            scores,
            eligible,
            _str(d["rule_version"], "ranking.rule_version"),
        )


@dataclass(frozen=True)
class AttributionSet:
    allowed: tuple[tuple[str, Decimal], ...]
    threshold: Decimal

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.allowed)

    def to_dict(self) -> dict:
        return {
            "allowed": [{"tag": t, "evidence": fmt_decimal(e)} for t, e in self.allowed],
            "threshold": fmt_decimal(self.threshold),
        }

    @classmethod
    def from_dict(cls, d: Any) -> "AttributionSet":
        _keys(d, ("allowed", "threshold"), (), "attribution")
        allowed = []
        for item in _list(d["allowed"], "attribution.allowed"):
            _keys(item, ("tag", "evidence"), (), "attribution.allowed[]")
            allowed.append((_str(item["tag"], "tag"), _dec(item["evidence"], "evidence")))
        return cls(tuple(allowed), _dec(d["threshold"], "attribution.threshold"))


@dataclass(frozen=True, order=True)
class AllowedNumber:
    value: Decimal
    unit_class: str

    def to_dict(self) -> dict:
        return {"value": fmt_decimal(self.value), "unit_class": self.unit_class}

    @classmethod
    def from_dict(cls, d: Any) -> "AllowedNumber":
        _keys(d, ("value", "unit_class"), (), "allowed_number")
        uc = _str(d["unit_class"], "allowed_number.unit_class")
        if uc not in UNIT_CLASSES:
            raise SchemaMismatch(f"unknown unit class {uc!r}")
        return cls(_dec(d["value"], "allowed_number.value"), uc)


def _number_forms(metric: Metric, value: Decimal) -> list[AllowedNumber]:
    v = quantize(value, metric.precision)
    forms = [AllowedNumber(v, metric.unit_class)]
    if metric.is_duration:
        forms.append(AllowedNumber(v, "hours_minutes"))
    return forms


def allowed_numbers_for(record: UserNightRecord, comparisons: Iterable[ComparisonFact]) -> frozenset[AllowedNumber]:
    """Every literal a writer may state about this night."""
    nums: set[AllowedNumber] = set()
    for mid, v in record.values.items():
        nums.update(_number_forms(get_metric(mid), v))
    for c in comparisons:
        m = get_metric(c.metric)
        nums.update(_number_forms(m, c.current))
        nums.update(_number_forms(m, c.baseline_mean))
        nums.add(AllowedNumber(Decimal(abs(c.pct_delta)), "percent"))
    return frozenset(nums)


def _sorted_numbers(nums: Iterable[AllowedNumber]) -> list[AllowedNumber]:
    return sorted(nums, key=lambda n: (UNIT_CLASSES.index(n.unit_class), n.value))


@dataclass(frozen=True)
class FactBank:
    user_id: str
    date: dt.date
    values: dict[str, Decimal]
    comparisons: dict[str, ComparisonFact]
    allowed_numbers: frozenset[AllowedNumber]
    allowed_tags: frozenset[str]
    selected: str

    def to_dict(self) -> dict:
        return {
            "night": {"user_id": self.user_id, "date": self.date.isoformat()},
            "values": {
                m: {
                    "value": fmt_decimal(self.values[m]),
                    "unit": get_metric(m).unit,
                    "precision": get_metric(m).precision,
                }
                for m in METRIC_IDS
                if m in self.values
            },
            "comparisons": {m: self.comparisons[m].to_dict() for m in METRIC_IDS if m in self.comparisons},
            "allowed_numbers": [n.to_dict() for n in _sorted_numbers(self.allowed_numbers)],
            "allowed_tags": sorted(self.allowed_tags),
            "selected": self.selected,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "FactBank":
        _keys(d, ("night", "values", "comparisons", "allowed_numbers", "allowed_tags", "selected"), (), "fact_bank")
        night = _keys(d["night"], ("user_id", "date"), (), "fact_bank.night")
        values = {}
        for k, v in d["values"].items():
            _keys(v, ("value", "unit", "precision"), (), f"fact_bank.values.{k}")
            values[get_metric(k).id] = _dec(v["value"], k)
        comps = {get_metric(k).id: ComparisonFact.from_dict(v) for k, v in d["comparisons"].items()}
        return cls(
            _str(night["user_id"], "night.user_id"),
            _date(night["date"], "night.date"),
            values,
            comps,
            frozenset(AllowedNumber.from_dict(n) for n in _list(d["allowed_numbers"], "allowed_numbers")),
            frozenset(_str(t, "allowed_tags") for t in _list(d["allowed_tags"], "allowed_tags")),
            get_metric(_str(d["selected"], "selected")).id,
        )


def build_fact_bank(
    record: UserNightRecord,
    comparisons: Sequence[ComparisonFact],
    ranking: RankingDecision,
    attribution: AttributionSet,
) -> FactBank:
    by_metric = {c.metric: c for c in comparisons}
    for c in comparisons:
        if c.metric not in record.values:
            raise InconsistentNight(f"comparison for {c.metric} but the record has no such value")
    if ranking.selected not in by_metric:
        raise MissingComparison(f"selected metric {ranking.selected} has no comparison")
    return FactBank(
        user_id=record.user_id,
        date=record.date,
        values={m: quantize(v, get_metric(m).precision) for m, v in record.values.items()},
        comparisons=by_metric,
        allowed_numbers=allowed_numbers_for(record, comparisons),
        allowed_tags=frozenset(attribution.tags),
        selected=ranking.selected,
    )


# ---------------------------------------------------------------------------
# Writer interface

@dataclass(frozen=True)
class ChartPoint:
    date: dt.date
    value: Decimal

    def to_dict(self) -> dict:
        return {"date": self.date.isoformat(), "value": fmt_decimal(self.value)}

    @classmethod
    def from_dict(cls, d: Any) -> "ChartPoint":
        _keys(d, ("date", "value"), (), "chart point")
        return cls(_date(d["date"], "chart.date"), _dec(d["value"], "chart.value"))


@dataclass(frozen=True)
class StyleConstraints:
    title_max: int = 60
    core_insight_max: int = 280
    how_to_improve_max: int = 280

    def to_dict(self) -> dict:
        return {
            "title_max": self.title_max,
            "core_insight_max": self.core_insight_max,
            "how_to_improve_max": self.how_to_improve_max,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "StyleConstraints":
        _keys(d, ("title_max", "core_insight_max", "how_to_improve_max"), (), "style_constraints")
        return cls(*(_int(d[k], k) for k in ("title_max", "core_insight_max", "how_to_improve_max")))


@dataclass(frozen=True)
class WriterPacket:
    user_id: str
    date: dt.date
    selected: str
    comparison: ComparisonFact
    report_line: str
    allowed_numbers: frozenset[AllowedNumber]
    allowed_tags: tuple[tuple[str, Decimal], ...]
    chart: tuple[ChartPoint, ...]
    style_constraints: StyleConstraints
    schema_id: str

    @property
    def comparison_display(self) -> str:
        return self.comparison.display

    @property
    def tag_names(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.allowed_tags)

    def to_dict(self) -> dict:
        return {
            "night": {"user_id": self.user_id, "date": self.date.isoformat()},
            "selected": self.selected,
            "comparison": self.comparison.to_dict(),
            "comparison_display": self.comparison_display,
            "report_line": self.report_line,
            "allowed_numbers": [n.to_dict() for n in _sorted_numbers(self.allowed_numbers)],
            "allowed_tags": [{"tag": t, "evidence": fmt_decimal(e)} for t, e in self.allowed_tags],
            "chart": [p.to_dict() for p in self.chart],
            "style_constraints": self.style_constraints.to_dict(),
            "schema_id": self.schema_id,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "WriterPacket":
        _keys(
            d,
            ("night", "selected", "comparison", "report_line", "allowed_numbers", "allowed_tags", "chart",
             "style_constraints", "schema_id"),
            ("comparison_display",),
            "packet",
        )
        night = _keys(d["night"], ("user_id", "date"), (), "packet.night")
        comparison = ComparisonFact.from_dict(d["comparison"])
        if "comparison_display" in d and d["comparison_display"] != comparison.display:
            raise SchemaMismatch("packet.comparison_display does not match packet.comparison")
        tags = []
        for item in _list(d["allowed_tags"], "packet.allowed_tags"):
            _keys(item, ("tag", "evidence"), (), "packet.allowed_tags[]")
            tags.append((_str(item["tag"], "tag"), _dec(item["evidence"], "evidence")))
        return cls(
            user_id=_str(night["user_id"], "night.user_id"),
            date=_date(night["date"], "night.date"),
            selected=get_metric(_str(d["selected"], "packet.selected")).id,
            comparison=comparison,
            report_line=_str(d["report_line"], "packet.report_line"),
            allowed_numbers=frozenset(AllowedNumber.from_dict(n) for n in _list(d["allowed_numbers"], "numbers")),
            allowed_tags=tuple(tags),
            chart=tuple(ChartPoint.from_dict(p) for p in _list(d["chart"], "packet.chart")),
            style_constraints=StyleConstraints.from_dict(d["style_constraints"]),
            schema_id=_str(d["schema_id"], "packet.schema_id"),
        )


@dataclass(frozen=True)
class Headline:
    title: str
    core_insight: str
    how_to_improve: str


@dataclass(frozen=True)
class AnalysisCard:
    metric_id: str
    finding_statement: str
    tags: tuple[str, ...]
    chart: tuple[ChartPoint, ...]


@dataclass(frozen=True)
class InsightOutput:
    headline: Headline
    analysis_card: AnalysisCard

    TEXT_FIELDS = ("title", "core_insight", "how_to_improve", "finding_statement")

    def text_fields(self) -> dict[str, str]:
        return {
            "title": self.headline.title,
            "core_insight": self.headline.core_insight,
            "how_to_improve": self.headline.how_to_improve,
            "finding_statement": self.analysis_card.finding_statement,
        }

    def to_dict(self) -> dict:
        return {
            "headline": {
                "title": self.headline.title,
                "core_insight": self.headline.core_insight,
                "how_to_improve": self.headline.how_to_improve,
            },
            "analysis_card": {
                "metric_id": self.analysis_card.metric_id,
                "finding_statement": self.analysis_card.finding_statement,
                "tags": list(self.analysis_card.tags),
                "chart": [p.to_dict() for p in self.analysis_card.chart],
            },
        }

    @classmethod
    def from_dict(cls, d: Any) -> "InsightOutput":
        _keys(d, ("headline", "analysis_card"), (), "output")
        h = _keys(d["headline"], ("title", "core_insight", "how_to_improve"), (), "headline")
        c = _keys(d["analysis_card"], ("metric_id", "finding_statement", "tags", "chart"), (), "analysis_card")
        return cls(
            Headline(_str(h["title"], "title"), _str(h["core_insight"], "core_insight"),
                     _str(h["how_to_improve"], "how_to_improve")),
            AnalysisCard(
                canonical_metric_id(_str(c["metric_id"], "metric_id")),
                _str(c["finding_statement"], "finding_statement"),
                tuple(_str(t, "tags[]") for t in _list(c["tags"], "tags")),
                tuple(ChartPoint.from_dict(p) for p in _list(c["chart"], "chart")),
            ),
        )


# ---------------------------------------------------------------------------
# Traces

@dataclass(frozen=True)
class CallRecord:
    kind: str  # "artifact" or "writer"
    input_tokens: int
    output_tokens: int
    latency_ms: int
    attempts: int = 1
    request_body: Optional[str] = None
    response_body: Optional[str] = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "kind": self.kind,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "latency_ms": self.latency_ms,
            "attempts": self.attempts,
        }
        if self.request_body is not None:
            d["request_body"] = self.request_body
        if self.response_body is not None:
            d["response_body"] = self.response_body
        return d

    @classmethod
    def from_dict(cls, d: Any) -> "CallRecord":
        _keys(d, ("kind", "input_tokens", "output_tokens", "latency_ms", "attempts"),
              ("request_body", "response_body"), "call")
        return cls(
            _str(d["kind"], "call.kind"),
            _int(d["input_tokens"], "call.input_tokens"),
            _int(d["output_tokens"], "call.output_tokens"),
            _int(d["latency_ms"], "call.latency_ms"),
            _int(d["attempts"], "call.attempts"),
            d.get("request_body"),
            d.get("response_body"),
        )


@dataclass(frozen=True)
class ArtifactRecord:
    layer: str
    raw_text: str
    parsed: Optional[dict]
    error: Optional[str]

    def to_dict(self) -> dict:
        return {"layer": self.layer, "raw_text": self.raw_text, "parsed": self.parsed, "error": self.error}

    @classmethod
    def from_dict(cls, d: Any) -> "ArtifactRecord":
        _keys(d, ("layer", "raw_text", "parsed", "error"), (), "artifact")
        return cls(d["layer"], d["raw_text"], d["parsed"], d["error"])


@dataclass(frozen=True)
class TraceRecord:
    condition: str
    model: str
    user_id: str
    date: dt.date
    packet: Optional[dict]
    artifact: Optional[ArtifactRecord]
    raw_output: str
    parsed: Optional[dict]
    schema_error: Optional[dict]
    calls: tuple[CallRecord, ...]
    latency_ms: int
    cost_usd: Decimal
    reference: dict  # {"bank", "ranking", "attribution"} from the deterministic layers
    backend_error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "model": self.model,
            "night": {"user_id": self.user_id, "date": self.date.isoformat()},
            "packet": self.packet,
            "artifact": None if self.artifact is None else self.artifact.to_dict(),
            "raw_output": self.raw_output,
            "parsed": self.parsed,
            "schema_error": self.schema_error,
            "usage": {
                "calls": len(self.calls),
                "input_tokens": [c.input_tokens for c in self.calls],
                "output_tokens": [c.output_tokens for c in self.calls],
            },
            "call_log": [c.to_dict() for c in self.calls],
            "latency_ms": self.latency_ms,
            "cost_usd": fmt_decimal(self.cost_usd),
            "reference": self.reference,
            "backend_error": self.backend_error,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "TraceRecord":
        _keys(
            d,
            ("condition", "model", "night", "packet", "artifact", "raw_output", "parsed", "schema_error",
             "usage", "call_log", "latency_ms", "cost_usd", "reference", "backend_error"),
            (),
            "trace",
        )
        night = _keys(d["night"], ("user_id", "date"), (), "trace.night")
        calls = tuple(CallRecord.from_dict(c) for c in _list(d["call_log"], "trace.call_log"))
        if d["usage"]["calls"] != len(calls):
            raise SchemaMismatch("trace.usage.calls disagrees with call_log")
        return cls(
            condition=_str(d["condition"], "trace.condition"),
            model=_str(d["model"], "trace.model"),
            user_id=_str(night["user_id"], "night.user_id"),
            date=_date(night["date"], "night.date"),
            packet=d["packet"],
            artifact=None if d["artifact"] is None else ArtifactRecord.from_dict(d["artifact"]),
            raw_output=_str(d["raw_output"], "trace.raw_output"),
            parsed=d["parsed"],
            schema_error=d["schema_error"],
            calls=calls,
            latency_ms=_int(d["latency_ms"], "trace.latency_ms"),
            cost_usd=_dec(d["cost_usd"], "trace.cost_usd"),
            reference=d["reference"],
            backend_error=d["backend_error"],
        )

    @property
    def reference_bank(self) -> FactBank:
        return FactBank.from_dict(self.reference["bank"])

    @property
    def reference_ranking(self) -> RankingDecision:
        return RankingDecision.from_dict(self.reference["ranking"])

    @property
    def reference_attribution(self) -> AttributionSet:
        return AttributionSet.from_dict(self.reference["attribution"])
