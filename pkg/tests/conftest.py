import datetime as dt
import sys
from decimal import Decimal

import pytest

from sleepinsight.core import LoggedEvent, UserNightRecord
from sleepinsight.synth import CohortSpec, generate_cohort, generate_history

WORKED_DATE = dt.date(2026, 2, 23)

WORKED_VALUES = {
    "sleep_score": "84",
    "duration_min": "470",  # 7h 50m
    "deep_min": "86",  # 1h 26m
    "rem_min": "100",  # 1h 40m
    "light_min": "284",  # 4h 44m
    "hrv_ms": "34.2",
    "heart_rate_bpm": "59.2",
    "resp_rate_brpm": "15.8",
    "snore_pct": "6.0",
}

# the figure's output record, with its elided parts filled in
WORKED_OUTPUT = {
    "headline": {
        "title": "Your recovery looks different",
        "core_insight": "Your HRV dropped to 34 ms, down 17% from your baseline.",
        "how_to_improve": "Do a short progressive muscle relaxation session tonight before bed.",
    },
    "analysis_card": {
        "metric_id": "hrv",
        "finding_statement": "HRV down 17%",
        "tags": ["Alcohol", "Stress", "Sick", "Fever"],
        "chart": [{"date": "2026-02-23", "value": "34.2"}],
    },
}


def _values(**overrides):
    vals = {k: Decimal(v) for k, v in WORKED_VALUES.items()}
    vals.update({k: Decimal(v) for k, v in overrides.items()})
    return vals


def worked_record() -> UserNightRecord:
    events = tuple(LoggedEvent(tag, Decimal(s)) for tag, s in
                   (("Alcohol", "0.9"), ("Stress", "0.6"), ("Sick", "0.6"), ("Fever", "0.9")))
    return UserNightRecord("worked", WORKED_DATE, _values(), events)


def worked_history() -> list[UserNightRecord]:
    """14 nights 2026-02-09..2026-02-22: hrv averages 41.3 ms, heart rate 58.0 bpm."""
    out = []
    for i in range(14):
        date = WORKED_DATE - dt.timedelta(days=14 - i)
        hrv = "40.3" if i % 2 == 0 else "42.3"
        out.append(UserNightRecord("worked", date, _values(hrv_ms=hrv, heart_rate_bpm="58.0")))
    return out


@pytest.fixture
def worked():
    return worked_record(), worked_history()


@pytest.fixture(scope="session")
def small_cohort():
    spec = CohortSpec(seed=11, n_users=4, nights_per_user=6, warmup_nights=14)
    return generate_cohort(spec), generate_history(spec)


@pytest.fixture(scope="session")
def oracle_cohort():
    spec = CohortSpec(seed=7, n_users=20, nights_per_user=14)
    return generate_cohort(spec), generate_history(spec)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
