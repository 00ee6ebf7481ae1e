import copy
import json
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from conftest import WORKED_OUTPUT
from sleepinsight.analysis import run_layers
from sleepinsight.core import AllowedNumber, InsightOutput, quantize
from sleepinsight.evaluator import (
    EmptyInput,
    NightScore,
    NumericClaim,
    SchemaError,
    _claims_in,
    aggregate,
    check_claim,
    extract_claims,
    is_supported,
    parse_output,
    reparse_claim,
    score_output,
)
from sleepinsight.writers import template_output, template_write


def _raw(obj):
    return json.dumps(obj)


def test_parse_worked_output():
    out = parse_output(_raw(WORKED_OUTPUT))
    assert isinstance(out, InsightOutput)
    assert out.analysis_card.metric_id == "hrv_ms"


@pytest.mark.parametrize("mutate,kind", [
    (lambda o: "", "parse"),
    (lambda o: "{not json", "parse"),
    (lambda o: (o["headline"].pop("how_to_improve"), o)[1], "missing_field"),
    (lambda o: (o["analysis_card"].__setitem__("tags", "Alcohol"), o)[1], "wrong_type"),
    (lambda o: (o["headline"].__setitem__("title", "x" * 61), o)[1], "bound_violation"),
    (lambda o: (o["analysis_card"].__setitem__("chart", []), o)[1], "bound_violation"),
    (lambda o: (o.__setitem__("extra", 1), o)[1], "unknown_field"),
    (lambda o: (o["analysis_card"].__setitem__("metric_id", "steps"), o)[1], "bound_violation"),
])
def test_schema_error_kinds(mutate, kind):
    o = copy.deepcopy(WORKED_OUTPUT)
    res = mutate(o)
    raw = res if isinstance(res, str) else _raw(res)
    err = parse_output(raw)
    assert isinstance(err, SchemaError)
    assert err.kind == kind, err.detail


def test_parse_rejects_impossible_date():
    o = copy.deepcopy(WORKED_OUTPUT)
    o["analysis_card"]["chart"][0]["date"] = "2026-02-30"
    assert isinstance(parse_output(_raw(o)), SchemaError)


def _claims(text):
    return [(c.value, c.unit_class) for c in _claims_in(text, "core_insight")]


def test_extract_worked_sentence():
    assert _claims("Your HRV dropped to 34 ms, down 17% from your baseline.") == [
        (Decimal(34), "ms"), (Decimal(17), "percent")]


def test_extract_forms():
    assert _claims("No numbers here.") == []
    assert _claims("You slept 7h 50m last night") == [(Decimal(470), "hours_minutes")]
    assert _claims("about 7.5 hours") == [(Decimal("7.5"), "hours")]
    assert _claims("heart rate 59.2 bpm, breathing 15.8 brpm") == [
        (Decimal("59.2"), "bpm"), (Decimal("15.8"), "brpm")]
    assert _claims("a score of 84") == [(Decimal(84), "unitless")]
    assert _claims("from 2026-02-09..2026-02-23 you logged") == []
    assert _claims("on 2026-02-23, deep sleep was 86 min") == [(Decimal(86), "minutes")]
    signed = _claims_in("change of -17%", "x")[0]
    assert signed.value == -17 and signed.signed


def test_extract_spans_reparse():
    text = "Your HRV was 34.2 ms, down 17% from 41.3 ms; you slept 7h 50m."
    for c in _claims_in(text, "core_insight"):
        assert reparse_claim(text[c.span[0]:c.span[1]]) == (c.value, c.unit_class)


def test_check_claim_rounding(worked):
    rec, hist = worked
    bank = run_layers(rec, hist).bank

    def claim(v, prec, uc, signed=False):
        return NumericClaim(Decimal(v), prec, uc, (0, 1), "core_insight", v, signed)

    assert check_claim(claim("34", 0, "ms"), bank)
    assert not check_claim(claim("35", 0, "ms"), bank)
    assert check_claim(claim("17", 0, "percent"), bank)
    assert check_claim(claim("-17", 0, "percent", True), bank)
    assert not check_claim(claim("17", 0, "percent", True), bank)
    assert check_claim(claim("470", 0, "hours_minutes"), bank)
    assert check_claim(claim("7.8", 1, "hours"), bank)  # 470 / 60 = 7.83
    assert not check_claim(claim("34.2", 1, "bpm"), bank)
    assert check_claim(claim("84", 0, "unitless"), bank)


@given(st.integers(min_value=1, max_value=99999), st.integers(min_value=0, max_value=2))
def test_support_is_rounding_based(n, prec):
    fact = Decimal(n).scaleb(-2)
    allowed = [AllowedNumber(fact, "ms")]
    q = quantize(fact, prec)
    assert is_supported(NumericClaim(q, prec, "ms", (0, 1), "f", ""), allowed)
    off = q + Decimal(1).scaleb(-prec)
    assert not is_supported(NumericClaim(off, prec, "ms", (0, 1), "f", ""), allowed)


def test_score_worked_output(worked):
    rec, hist = worked
    L = run_layers(rec, hist)
    s = score_output(parse_output(_raw(WORKED_OUTPUT)), L.bank, L.ranking, L.attribution)
    assert (s.schema_ok, s.sel_ok, s.attr_ok, s.claims_unsupported) == (True, True, True, 0)
    assert s.claims_total == 3  # 34 ms, 17% in core insight, 17% in finding


def test_score_template_output(worked):
    rec, hist = worked
    L = run_layers(rec, hist)
    s = score_output(parse_output(template_write(L.packet)), L.bank, L.ranking, L.attribution)
    assert (s.schema_ok, s.sel_ok, s.attr_ok, s.claims_unsupported) == (True, True, True, 0)


def test_score_detects_violations(worked):
    rec, hist = worked
    L = run_layers(rec, hist)
    o = copy.deepcopy(WORKED_OUTPUT)
    o["analysis_card"]["metric_id"] = "heart_rate"
    assert score_output(parse_output(_raw(o)), L.bank, L.ranking, L.attribution).sel_ok is False
    o = copy.deepcopy(WORKED_OUTPUT)
    o["analysis_card"]["tags"] = ["Alcohol", "Caffeine"]
    assert score_output(parse_output(_raw(o)), L.bank, L.ranking, L.attribution).attr_ok is False
    o["analysis_card"]["tags"] = ["Alcohol", "Alcohol"]
    assert score_output(parse_output(_raw(o)), L.bank, L.ranking, L.attribution).attr_ok is False
    o = copy.deepcopy(WORKED_OUTPUT)
    o["headline"]["how_to_improve"] = "Do a 10-minute progressive muscle relaxation tonight."
    s = score_output(parse_output(_raw(o)), L.bank, L.ranking, L.attribution)
    assert s.claims_unsupported == 1


def _night(total=0, bad=0, sel=True, attr=True, schema=True):
    if not schema:
        return NightScore("u", "d", schema_ok=False)
    return NightScore("u", "d", schema_ok=True, claims_total=total, claims_unsupported=bad, sel_ok=sel, attr_ok=attr)


def _usage(n):
    return [(Decimal(0), 100)] * n


def test_num_err_three_night_fixture():
    scores = [_night(3, 1), _night(0, 0), _night(4, 0)]
    assert aggregate(scores, _usage(3)).num_err == Fraction(1, 7)


def test_compliance_union():
    scores = [_night(1, sel=False), _night(1, sel=False), _night(1, attr=False)] + [_night(1)] * 7
    a = aggregate(scores, _usage(10))
    assert (a.sel_err, a.attr_err, a.compliance_err) == (Fraction(2, 10), Fraction(1, 10), Fraction(3, 10))


def test_schema_failures_only_count_once():
    a = aggregate([_night(schema=False), _night(2, 1, sel=False)], _usage(2))
    assert a.schema_err == Fraction(1, 2)
    assert a.sel_err == Fraction(1, 1) and a.sel_err_all == Fraction(1, 2)
    assert a.num_err == Fraction(1, 2)


def test_aggregate_edge_cases():
    with pytest.raises(EmptyInput):
        aggregate([], [])
    a = aggregate([_night(0)], _usage(1))
    assert a.num_err is None
    a = aggregate([_night(schema=False)], _usage(1))
    assert a.sel_err is None and a.schema_err == 1


@settings(max_examples=60)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=1, max_size=30))
def test_union_bounds(flags):
    scores = [_night(1, sel=s, attr=a, schema=ok) for s, a, ok in flags]
    a = aggregate(scores, _usage(len(scores)))
    if a.compliance_err is not None:
        assert max(a.sel_err, a.attr_err) <= a.compliance_err <= a.sel_err + a.attr_err


def test_latency_mean_and_median():
    a = aggregate([_night(1)] * 4, [(Decimal(0), 100), (Decimal(0), 101), (Decimal(0), 300), (Decimal(0), 1000)])
    assert a.latency_mean_ms == 375
    assert a.latency_median_ms == 201  # 200.5 rounds half away from zero
