import datetime as dt
import json
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from sleepinsight.analysis import run_layers
from sleepinsight.core import (
    CATALOG,
    METRIC_IDS,
    AllowedNumber,
    AttributionSet,
    ComparisonFact,
    FactBank,
    InconsistentNight,
    LoggedEvent,
    MissingComparison,
    RankingDecision,
    SchemaMismatch,
    UserNightRecord,
    WriterPacket,
    allowed_numbers_for,
    build_fact_bank,
    canonical_metric_id,
    dumps,
    fmt_decimal,
    fmt_hours_minutes,
    fmt_signed_pct,
    get_metric,
    quantize,
    round_half_away,
)


def test_round_half_away_from_zero():
    assert round_half_away(Fraction(5, 2)) == 3
    assert round_half_away(Fraction(-5, 2)) == -3
    assert round_half_away(Fraction(-1719, 100)) == -17
    assert quantize(Decimal("34.25"), 1) == Decimal("34.3")
    assert quantize(Decimal("-0.05"), 1) == Decimal("-0.1")


def test_formatting():
    assert fmt_hours_minutes(470) == "7h 50m"
    assert fmt_hours_minutes(45) == "45m"
    assert fmt_signed_pct(25) == "+25"
    assert fmt_signed_pct(-17) == "-17"
    assert fmt_signed_pct(0) == "0"
    assert fmt_decimal(Decimal("1E+2")) == "100"


def test_catalog_precisions_and_order():
    prec = {m.id: m.precision for m in CATALOG}
    assert prec == {
        "sleep_score": 0, "duration_min": 0, "deep_min": 0, "rem_min": 0, "light_min": 0,
        "hrv_ms": 1, "heart_rate_bpm": 1, "resp_rate_brpm": 1, "snore_pct": 1,
    }
    assert METRIC_IDS[0] == "sleep_score" and METRIC_IDS[-1] == "snore_pct"
    assert canonical_metric_id("hrv") == "hrv_ms"
    assert canonical_metric_id("snore_percent") == "snore_pct"
    with pytest.raises(SchemaMismatch):
        get_metric("steps")


def test_display_matches_worked_example():
    c = ComparisonFact("hrv_ms", Decimal("34.2"), Decimal("41.3"), -17, "down")
    assert c.display == "34.2 vs 41.3 ms (-17%)"
    again = ComparisonFact.from_dict(json.loads(dumps(c)))
    assert again == c and again.display == c.display


def test_comparison_rejects_stale_display():
    d = ComparisonFact("hrv_ms", Decimal("34.2"), Decimal("41.3"), -17, "down").to_dict()
    d["display"] = "34.2 vs 41.3 ms (-18%)"
    with pytest.raises(SchemaMismatch):
        ComparisonFact.from_dict(d)


def test_record_serialization_is_strict(worked):
    rec, _ = worked
    d = json.loads(dumps(rec))
    assert UserNightRecord.from_dict(d) == rec
    d["values"]["hrv_ms"] = 34.2  # floats are not accepted
    with pytest.raises(SchemaMismatch):
        UserNightRecord.from_dict(d)
    d = json.loads(dumps(rec))
    d["extra"] = 1
    with pytest.raises(SchemaMismatch):
        UserNightRecord.from_dict(d)


def test_record_invariants(worked):
    rec, _ = worked
    assert rec.violations() == []
    bad = UserNightRecord(rec.user_id, rec.date, {**rec.values, "light_min": Decimal(300)}, ())
    assert any(f == "light_min" or "duration" in f for f, _ in bad.violations())
    unknown = UserNightRecord(rec.user_id, rec.date, rec.values, (LoggedEvent("Jetlag", Decimal("0.5")),))
    assert unknown.violations()


def test_fact_bank_contains_worked_numbers(worked):
    rec, hist = worked
    bank = run_layers(rec, hist).bank
    nums = bank.allowed_numbers
    assert AllowedNumber(Decimal("34.2"), "ms") in nums
    assert AllowedNumber(Decimal("41.3"), "ms") in nums
    assert AllowedNumber(Decimal("17"), "percent") in nums
    assert AllowedNumber(Decimal("470"), "minutes") in nums
    assert AllowedNumber(Decimal("470"), "hours_minutes") in nums
    assert bank.allowed_tags == frozenset({"Alcohol", "Stress", "Sick", "Fever"})
    assert FactBank.from_dict(json.loads(dumps(bank))) == bank


def test_fact_bank_empty_attribution(worked):
    rec, hist = worked
    rec = UserNightRecord(rec.user_id, rec.date, rec.values, ())
    assert run_layers(rec, hist).bank.allowed_tags == frozenset()


def test_fact_bank_errors(worked):
    rec, hist = worked
    L = run_layers(rec, hist)
    no_hrv = tuple(c for c in L.comparisons if c.metric != "hrv_ms")
    with pytest.raises(MissingComparison):
        build_fact_bank(rec, no_hrv, L.ranking, L.attribution)
    partial = UserNightRecord(rec.user_id, rec.date, {"hrv_ms": Decimal("34.2")}, ())
    with pytest.raises(InconsistentNight):
        build_fact_bank(partial, L.comparisons, L.ranking, L.attribution)


def test_allowed_numbers_are_reachable(small_cohort):
    cohort, history = small_cohort
    for rec in cohort:
        L = run_layers(rec, history + cohort)
        reachable = set(allowed_numbers_for(rec, L.comparisons))
        assert L.packet.allowed_numbers == frozenset(reachable)
        values = {v for v in rec.values.values()}
        for c in L.comparisons:
            values |= {c.current, c.baseline_mean, Decimal(abs(c.pct_delta))}
        assert {n.value for n in L.packet.allowed_numbers} <= values


def test_packet_round_trip(worked):
    rec, hist = worked
    p = run_layers(rec, hist).packet
    assert WriterPacket.from_dict(json.loads(dumps(p))) == p
    assert p.comparison_display == "34.2 vs 41.3 ms (-17%)"
    assert len(p.allowed_tags) == 4


def test_ranking_and_attribution_round_trip():
    r = RankingDecision("hrv_ms", {"hrv_ms": Decimal("17"), "heart_rate_bpm": Decimal("2")},
                        ("heart_rate_bpm", "hrv_ms"), "weighted-abs-pct.v1")
    assert RankingDecision.from_dict(json.loads(dumps(r))) == r
    a = AttributionSet((("Alcohol", Decimal("0.9")),), Decimal("0.5"))
    assert AttributionSet.from_dict(json.loads(dumps(a))) == a


@given(st.integers(min_value=1, max_value=10**6), st.integers(min_value=0, max_value=2))
def test_quantize_idempotent(n, places):
    v = Decimal(n).scaleb(-3)
    once = quantize(v, places)
    assert quantize(once, places) == once
    assert abs(once - v) <= Decimal(1).scaleb(-places) / 2
