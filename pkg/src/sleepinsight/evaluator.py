"""Deterministic scoring of writer outputs and saved traces.

Four error families are measured per night:

* schema: the raw text must parse as JSON and satisfy the output schema;
* numeric: every numeric literal in the prose must round-match a fact;
* selection: the output metric must equal the reference ranker's choice;
* attribution: output tags must be a duplicate-free subset of the gated tags.

Claim grammar (version ``claims.v1``): decimal literals, optionally signed,
optionally followed by a unit token (``ms``, ``bpm``, ``brpm``, ``%``,
``percent``, ``h``/``hr``/``hours``, ``m``/``min``/``minutes``; a hyphen may
separate number and unit), plus ``<H>h <M>m`` compound durations. ISO dates and
date ranges are skipped. Numbers glued to letters (``u001``) are ignored.
"""

from __future__ import annotations

import functools
import json
import re
import statistics
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Any, Iterable, Optional, Sequence, Union

import jsonschema

from .analysis import OUTPUT_SCHEMA_ID
from .core import (
    METRIC_ALIASES,
    METRIC_IDS,
    AllowedNumber,
    AttributionSet,
    FactBank,
    InsightOutput,
    RankingDecision,
    SchemaMismatch,
    StyleConstraints,
    TraceRecord,
    fmt_decimal,
    quantize,
    round_half_away,
)

CLAIM_GRAMMAR_VERSION = "claims.v1"
SCHEMA_ERROR_KINDS = ("parse", "missing_field", "wrong_type", "bound_violation", "unknown_field", "backend")


class EmptyInput(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema

def output_schema(constraints: StyleConstraints = StyleConstraints()) -> dict:
    """JSON Schema of the writer output; also pasted into prompts."""

    def text(max_len: int) -> dict:
        return {"type": "string", "minLength": 1, "maxLength": max_len}

    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$id": OUTPUT_SCHEMA_ID,
        "type": "object",
        "additionalProperties": False,
        "required": ["headline", "analysis_card"],
        "properties": {
            "headline": {
                "type": "object",
                "additionalProperties": False,
                "required": ["title", "core_insight", "how_to_improve"],
                "properties": {
                    "title": text(constraints.title_max),
                    "core_insight": text(constraints.core_insight_max),
                    "how_to_improve": text(constraints.how_to_improve_max),
                },
            },
            "analysis_card": {
                "type": "object",
                "additionalProperties": False,
                "required": ["metric_id", "finding_statement", "tags", "chart"],
                "properties": {
                    "metric_id": {"type": "string", "enum": list(METRIC_IDS) + list(METRIC_ALIASES)},
                    "finding_statement": text(constraints.core_insight_max),
                    "tags": {"type": "array", "items": {"type": "string", "pattern": "^[A-Za-z][A-Za-z0-9_]*$"}},
                    "chart": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["date", "value"],
                            "properties": {
                                "date": {"type": "string", "pattern": r"^\d{4}-\d{2}-\d{2}$"},
                                "value": {"type": "string", "pattern": r"^-?\d+(\.\d+)?$"},
                            },
                        },
                    },
                },
            },
        },
    }


_KIND_BY_VALIDATOR = {
    "required": "missing_field",
    "additionalProperties": "unknown_field",
    "type": "wrong_type",
    "enum": "bound_violation",
    "pattern": "wrong_type",
    "minLength": "bound_violation",
    "maxLength": "bound_violation",
    "minItems": "bound_violation",
}


@dataclass(frozen=True)
class SchemaError:
    kind: str
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail}


@functools.lru_cache(maxsize=32)
def _validator(constraints: StyleConstraints) -> Any:
    schema = output_schema(constraints)
    return jsonschema.validators.validator_for(schema)(schema)


def parse_output(
    raw: str,
    schema_id: str = OUTPUT_SCHEMA_ID,
    constraints: StyleConstraints = StyleConstraints(),
) -> Union[InsightOutput, SchemaError]:
    """Strict parse. Returns a :class:`SchemaError` describing the first violation."""
    if schema_id != OUTPUT_SCHEMA_ID:
        return SchemaError("parse", f"unknown schema id {schema_id!r}")
    try:
        obj = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        return SchemaError("parse", f"invalid JSON: {exc}")
    errors = sorted(
        _validator(constraints).iter_errors(obj),
        key=lambda e: (len(e.absolute_path), [str(p) for p in e.absolute_path], e.validator),
    )
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        return SchemaError(_KIND_BY_VALIDATOR.get(err.validator, "wrong_type"), f"{where}: {err.message}")
    try:
        return InsightOutput.from_dict(obj)
    except SchemaMismatch as exc:  # e.g. impossible calendar date
        return SchemaError("wrong_type", str(exc))


# ---------------------------------------------------------------------------
# claims

@dataclass(frozen=True)
class NumericClaim:
    value: Decimal
    precision: int
    unit_class: str
    span: tuple[int, int]
    field: str
    text: str
    signed: bool = False  # an explicit +/- was written

    def to_dict(self) -> dict:
        return {
            "value": fmt_decimal(self.value),
            "precision": self.precision,
            "unit_class": self.unit_class,
            "span": list(self.span),
            "field": self.field,
            "text": self.text,
        }


_UNIT_CLASS = {
    "ms": "ms", "bpm": "bpm", "brpm": "brpm", "%": "percent", "percent": "percent",
    "h": "hours", "hr": "hours", "hrs": "hours", "hour": "hours", "hours": "hours",
    "m": "minutes", "min": "minutes", "mins": "minutes", "minute": "minutes", "minutes": "minutes",
}
_DATE = r"\d{4}-\d{2}-\d{2}(?:\s*(?:\.\.|to|-|–)\s*\d{4}-\d{2}-\d{2})?"
_HM = (r"(?P<h>\d+)\s*(?:hours|hour|hrs|hr|h)\s*(?P<m>\d+)\s*(?:minutes|minute|mins|min|m)(?![A-Za-z])")
_PLAIN = (
    r"(?P<sign>[-+−])?(?P<num>\d+(?:\.\d+)?)"
    r"(?:\s*-?\s*(?P<unit>brpm|bpm|ms|percent|%|hours|hour|hrs|hr|h|minutes|minute|mins|min|m)(?![A-Za-z]))?"
)
CLAIM_RE = re.compile(rf"(?<![\w.])(?:(?P<date>{_DATE})|(?P<hm>{_HM})|{_PLAIN})")


def _claims_in(text: str, field_name: str) -> list[NumericClaim]:
    out = []
    for m in CLAIM_RE.finditer(text):
        if m.group("date"):
            continue
        if m.group("hm"):
            minutes = int(m.group("h")) * 60 + int(m.group("m"))
            out.append(NumericClaim(Decimal(minutes), 0, "hours_minutes", m.span(), field_name, m.group(0)))
            continue
        num = m.group("num")
        value = Decimal(num)
        sign = m.group("sign")
        if sign in ("-", "−"):
            value = -value
        precision = len(num.split(".")[1]) if "." in num else 0
        unit = m.group("unit")
        unit_class = _UNIT_CLASS[unit] if unit else "unitless"
        out.append(NumericClaim(value, precision, unit_class, m.span(), field_name, m.group(0), sign is not None))
    return out


def extract_claims(output: InsightOutput) -> list[NumericClaim]:
    """Numeric claims in the prose fields, left to right, field by field."""
    claims: list[NumericClaim] = []
    for name, text in output.text_fields().items():
        claims.extend(_claims_in(text, name))
    return claims


def reparse_claim(text: str) -> tuple[Decimal, str]:
    """Value and unit class of a single claim's source text."""
    found = _claims_in(text, "")
    if len(found) != 1 or found[0].span != (0, len(text)):
        raise ValueError(f"not a single claim: {text!r}")
    return found[0].value, found[0].unit_class


_MINUTE_CLASSES = ("minutes", "hours_minutes")


def _candidate_values(
    claim: NumericClaim, allowed: Iterable[AllowedNumber], signed_pcts: Iterable[int]
) -> Iterable[Decimal]:
    uc = claim.unit_class
    if uc == "percent" and claim.signed:
        yield from (Decimal(p) for p in signed_pcts)
        return
    for n in allowed:
        if uc == "unitless":
            yield n.value
        elif uc == "hours":
            if n.unit_class in _MINUTE_CLASSES:
                yield n.value / 60
        elif uc in _MINUTE_CLASSES:
            if n.unit_class in _MINUTE_CLASSES:
                yield n.value
        elif n.unit_class == uc:
            yield n.value


def is_supported(claim: NumericClaim, allowed: Iterable[AllowedNumber], signed_pcts: Iterable[int] = ()) -> bool:
    return any(quantize(v, claim.precision) == claim.value for v in _candidate_values(claim, allowed, signed_pcts))


def check_claim(claim: NumericClaim, bank: FactBank) -> bool:
    """Supported iff a compatible fact rounds (half away from zero) to the claim.

    Unitless claims may match a fact of any unit; hour claims match minute
    facts divided by 60. Explicitly signed percentages must match a signed
    percent change, unsigned ones its magnitude.
    """
    return is_supported(claim, bank.allowed_numbers, (c.pct_delta for c in bank.comparisons.values()))


# ---------------------------------------------------------------------------
# per-night scores

@dataclass(frozen=True)
class NightScore:
    user_id: str
    date: str
    schema_ok: bool
    claims_total: int = 0
    claims_unsupported: int = 0
    sel_ok: Optional[bool] = None
    attr_ok: Optional[bool] = None
    schema_error: Optional[dict] = None
    unsupported: tuple[str, ...] = ()
    artifact_ok: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            "night": {"user_id": self.user_id, "date": self.date},
            "schema_ok": self.schema_ok,
            "claims_total": self.claims_total,
            "claims_unsupported": self.claims_unsupported,
            "sel_ok": self.sel_ok,
            "attr_ok": self.attr_ok,
            "schema_error": self.schema_error,
            "unsupported": list(self.unsupported),
            "artifact_ok": self.artifact_ok,
        }


def score_output(
    parsed: Union[InsightOutput, SchemaError],
    bank: FactBank,
    ranking: RankingDecision,
    attribution: AttributionSet,
    artifact_ok: Optional[bool] = None,
) -> NightScore:
    night = (bank.user_id, bank.date.isoformat())
    if isinstance(parsed, SchemaError):
        return NightScore(*night, schema_ok=False, schema_error=parsed.to_dict(), artifact_ok=artifact_ok)
    claims = extract_claims(parsed)
    bad = [c for c in claims if not check_claim(c, bank)]
    tags = parsed.analysis_card.tags
    allowed = set(attribution.tags)
    attr_ok = len(tags) == len(set(tags)) and set(tags) <= allowed
    return NightScore(
        *night,
        schema_ok=True,
        claims_total=len(claims),
        claims_unsupported=len(bad),
        sel_ok=parsed.analysis_card.metric_id == ranking.selected,
        attr_ok=attr_ok,
        unsupported=tuple(f"{c.field}:{c.text}" for c in bad),
        artifact_ok=artifact_ok,
    )


def score_night(
    trace: TraceRecord,
    reference: Optional[tuple[FactBank, RankingDecision, AttributionSet]] = None,
) -> NightScore:
    """Score one saved trace against the deterministic reference of its night."""
    if reference is None:
        reference = (trace.reference_bank, trace.reference_ranking, trace.reference_attribution)
    bank, ranking, attribution = reference
    constraints = StyleConstraints()
    if trace.packet is not None:
        constraints = StyleConstraints.from_dict(trace.packet["style_constraints"])
    if trace.backend_error is not None:
        parsed: Union[InsightOutput, SchemaError] = SchemaError("backend", trace.backend_error)
    else:
        parsed = parse_output(trace.raw_output, OUTPUT_SCHEMA_ID, constraints)
    artifact_ok = None if trace.artifact is None else trace.artifact.error is None
    return score_output(parsed, bank, ranking, attribution, artifact_ok)


# ---------------------------------------------------------------------------
# aggregation

def _rate(num: int, den: int) -> Optional[Fraction]:
    return Fraction(num, den) if den else None


@dataclass(frozen=True)
class ConditionAggregate:
    n: int
    schema_err: Fraction
    num_err: Optional[Fraction]
    sel_err: Optional[Fraction]
    attr_err: Optional[Fraction]
    compliance_err: Optional[Fraction]
    cost_per_night: Decimal
    latency_mean_ms: int
    # detailed-report extras
    latency_median_ms: int = 0
    n_schema_ok: int = 0
    claims_total: int = 0
    claims_unsupported: int = 0
    num_night_err: Optional[Fraction] = None  # nights with >= 1 unsupported claim / nights with claims
    sel_err_all: Optional[Fraction] = None  # denominators = all nights
    attr_err_all: Optional[Fraction] = None
    compliance_err_all: Optional[Fraction] = None
    artifact_err: Optional[Fraction] = None

    def to_dict(self) -> dict:
        def r(x: Optional[Fraction]) -> Optional[str]:
            return None if x is None else f"{x.numerator}/{x.denominator}"

        return {
            "n": self.n,
            "schema_err": r(self.schema_err),
            "num_err": r(self.num_err),
            "sel_err": r(self.sel_err),
            "attr_err": r(self.attr_err),
            "compliance_err": r(self.compliance_err),
            "cost_per_night": fmt_decimal(self.cost_per_night),
            "latency_mean_ms": self.latency_mean_ms,
            "latency_median_ms": self.latency_median_ms,
            "n_schema_ok": self.n_schema_ok,
            "claims_total": self.claims_total,
            "claims_unsupported": self.claims_unsupported,
            "num_night_err": r(self.num_night_err),
            "sel_err_all": r(self.sel_err_all),
            "attr_err_all": r(self.attr_err_all),
            "compliance_err_all": r(self.compliance_err_all),
            "artifact_err": r(self.artifact_err),
        }


def aggregate(scores: Sequence[NightScore], usage: Sequence[tuple[Decimal, int]]) -> ConditionAggregate:
    if not scores:
        raise EmptyInput("no nights to aggregate")
    if len(usage) != len(scores):
        raise ValueError("scores and usage must be aligned by night")
    n = len(scores)
    ok = [s for s in scores if s.schema_ok]
    claim_nights = [s for s in ok if s.claims_total >= 1]
    total = sum(s.claims_total for s in claim_nights)
    bad = sum(s.claims_unsupported for s in claim_nights)
    sel_fail = sum(1 for s in ok if s.sel_ok is False)
    attr_fail = sum(1 for s in ok if s.attr_ok is False)
    either = sum(1 for s in ok if s.sel_ok is False or s.attr_ok is False)
    with_artifact = [s for s in scores if s.artifact_ok is not None]
    costs = [Decimal(c) for c, _ in usage]
    lats = [int(l) for _, l in usage]
    return ConditionAggregate(
        n=n,
        schema_err=Fraction(n - len(ok), n),
        num_err=_rate(bad, total),
        sel_err=_rate(sel_fail, len(ok)),
        attr_err=_rate(attr_fail, len(ok)),
        compliance_err=_rate(either, len(ok)),
        cost_per_night=sum(costs, Decimal(0)) / n,
        latency_mean_ms=round_half_away(Fraction(sum(lats), n)),
        latency_median_ms=round_half_away(Fraction(statistics.median(lats))),
        n_schema_ok=len(ok),
        claims_total=total,
        claims_unsupported=bad,
        num_night_err=_rate(sum(1 for s in claim_nights if s.claims_unsupported), len(claim_nights)),
        sel_err_all=Fraction(sel_fail, n),
        attr_err_all=Fraction(attr_fail, n),
        compliance_err_all=Fraction(either, n),
        artifact_err=_rate(sum(1 for s in with_artifact if not s.artifact_ok), len(with_artifact)),
    )


def score_traces(traces: Sequence[TraceRecord]) -> tuple[list[NightScore], ConditionAggregate]:
    scores = [score_night(t) for t in traces]
    return scores, aggregate(scores, [(t.cost_usd, t.latency_ms) for t in traces])
