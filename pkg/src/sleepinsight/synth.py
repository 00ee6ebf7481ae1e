"""Seeded synthetic cohorts and JSON-lines record files.

Randomness comes from SplitMix64 so cohorts can be regenerated bit-for-bit in
any language. Each (user) and (user, night) pair gets its own stream whose
64-bit state is the first 8 bytes (big-endian) of
``sha256("<seed>/<key>/<key>...")``. A uniform double is ``(x >> 11) * 2**-53``.

Per user, a fixed baseline is drawn once; every night perturbs each metric by
an independent factor uniform in [0.9, 1.1]. An event night applies its tag's
multiplicative effect profile on top. Values are then rounded half away from
zero to catalog precision and clamped to the record invariants.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .core import (
    DEFAULT_TAG_VOCABULARY,
    TAG_CANDIDATES,
    LoggedEvent,
    SchemaMismatch,
    UserNightRecord,
    dumps,
    get_metric,
    quantize,
)

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
EVENT_STRENGTHS = (Decimal("0.3"), Decimal("0.6"), Decimal("0.9"))

DEFAULT_EFFECTS: dict[str, dict[str, float]] = {
    "Alcohol": {"hrv_ms": 0.80, "heart_rate_bpm": 1.08, "sleep_score": 0.92, "deep_min": 0.85, "rem_min": 0.85},
    "Stress": {"hrv_ms": 0.88, "heart_rate_bpm": 1.04, "sleep_score": 0.95, "duration_min": 0.94},
    "Sick": {"hrv_ms": 0.85, "heart_rate_bpm": 1.06, "resp_rate_brpm": 1.08, "sleep_score": 0.90, "snore_pct": 1.3},
    "Fever": {"hrv_ms": 0.82, "heart_rate_bpm": 1.10, "resp_rate_brpm": 1.10, "sleep_score": 0.88},
}

# (low, high) for the per-user baseline draw, in draw order
_USER_RANGES: tuple[tuple[str, float, float], ...] = (
    ("sleep_score", 70.0, 90.0),
    ("duration_min", 390.0, 510.0),
    ("deep_frac", 0.13, 0.20),
    ("rem_frac", 0.18, 0.24),
    ("hrv_ms", 30.0, 70.0),
    ("heart_rate_bpm", 50.0, 68.0),
    ("resp_rate_brpm", 12.0, 18.0),
    ("snore_pct", 1.0, 12.0),
)
_AWAKE_FRAC = 0.06
_NOISE = 0.10


class InvalidSpec(ValueError):
    pass


class ParseFailure(ValueError):
    def __init__(self, line: int, detail: str):
        super().__init__(f"line {line}: {detail}")
        self.line = line
        self.detail = detail


class InvariantViolation(ValueError):
    def __init__(self, line: int, field: str, detail: str):
        super().__init__(f"line {line}: {field}: {detail}")
        self.line = line
        self.field = field
        self.detail = detail


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014)."""

    def __init__(self, state: int):
        self.state = state & MASK64

    @classmethod
    def for_stream(cls, seed: int, *keys: object) -> "SplitMix64":
        label = "/".join(str(k) for k in (seed, *keys))
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        return cls(int.from_bytes(digest[:8], "big"))

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randrange(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)


@dataclass(frozen=True)
class CohortSpec:
    seed: int = 7
    n_users: int = 20
    nights_per_user: int = 14
    start_date: dt.date = dt.date(2026, 2, 10)
    event_rate: float = 0.3
    effect_profiles: Mapping[str, Mapping[str, float]] = field(default_factory=lambda: DEFAULT_EFFECTS)
    warmup_nights: int = 14

    def validate(self) -> None:
        if not 0 <= self.seed <= MASK64:
            raise InvalidSpec("seed must be an unsigned 64-bit integer")
        if self.n_users < 1:
            raise InvalidSpec("n_users must be >= 1")
        if self.nights_per_user < 1:
            raise InvalidSpec("nights_per_user must be >= 1")
        if self.warmup_nights < 0:
            raise InvalidSpec("warmup_nights must be >= 0")
        if not 0 <= self.event_rate <= 1:
            raise InvalidSpec("event_rate must be in [0, 1]")
        for tag, profile in self.effect_profiles.items():
            if tag not in DEFAULT_TAG_VOCABULARY:
                raise InvalidSpec(f"effect profile for unknown tag {tag!r}")
            for metric, factor in profile.items():
                try:
                    get_metric(metric)
                except SchemaMismatch as exc:
                    raise InvalidSpec(str(exc)) from None
                if factor <= 0:
                    raise InvalidSpec(f"effect factor for {tag}/{metric} must be positive")


def user_id_for(index: int) -> str:
    return f"u{index + 1:03d}"


def _user_baseline(seed: int, user: int) -> dict[str, float]:
    rng = SplitMix64.for_stream(seed, "user", user)
    return {name: rng.uniform(lo, hi) for name, lo, hi in _USER_RANGES}


def _night(spec: CohortSpec, user: int, base: dict[str, float], night: int) -> UserNightRecord:
    rng = SplitMix64.for_stream(spec.seed, "night", user, night)

    def noise() -> float:
        return 1.0 + rng.uniform(-_NOISE, _NOISE)

    raw = {
        "sleep_score": base["sleep_score"] * noise(),
        "duration_min": base["duration_min"] * noise(),
    }
    raw["deep_min"] = raw["duration_min"] * base["deep_frac"] * noise()
    raw["rem_min"] = raw["duration_min"] * base["rem_frac"] * noise()
    light_frac = 1.0 - base["deep_frac"] - base["rem_frac"] - _AWAKE_FRAC
    raw["light_min"] = raw["duration_min"] * light_frac * noise()
    for metric in ("hrv_ms", "heart_rate_bpm", "resp_rate_brpm", "snore_pct"):
        raw[metric] = base[metric] * noise()

    events: tuple[LoggedEvent, ...] = ()
    if rng.random() < spec.event_rate:
        tag = TAG_CANDIDATES[rng.randrange(len(TAG_CANDIDATES))]
        strength = EVENT_STRENGTHS[rng.randrange(len(EVENT_STRENGTHS))]
        events = (LoggedEvent(tag, strength),)
        for metric, factor in spec.effect_profiles.get(tag, {}).items():
            raw[metric] *= factor

    values = {m: quantize(v, get_metric(m).precision) for m, v in raw.items()}
    values["sleep_score"] = min(values["sleep_score"], Decimal(100))
    values["snore_pct"] = min(values["snore_pct"], Decimal("100.0"))
    room = values["duration_min"] - values["deep_min"] - values["rem_min"]
    values["light_min"] = max(Decimal(0), min(values["light_min"], room))
    date = spec.start_date + dt.timedelta(days=night)
    return UserNightRecord(user_id_for(user), date, values, events)


def _generate(spec: CohortSpec, nights: Iterable[int]) -> list[UserNightRecord]:
    spec.validate()
    nights = list(nights)
    out = []
    for user in range(spec.n_users):
        base = _user_baseline(spec.seed, user)
        out.extend(_night(spec, user, base, n) for n in nights)
    return out


def generate_cohort(spec: CohortSpec) -> list[UserNightRecord]:
    """Exactly ``n_users * nights_per_user`` evaluation nights, sorted by (user, date)."""
    return _generate(spec, range(spec.nights_per_user))


def generate_history(spec: CohortSpec) -> list[UserNightRecord]:
    """The ``warmup_nights`` nights preceding ``start_date`` for each user.

    These only feed baselines; they are never evaluated.
    """
    return _generate(spec, range(-spec.warmup_nights, 0))


def write_records(records: Iterable[UserNightRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


class _DuplicateKey(ValueError):
    pass


def _no_duplicate_keys(pairs: list[tuple[str, object]]) -> dict:
    out: dict = {}
    for k, v in pairs:
        if k in out:
            raise _DuplicateKey(k)
        out[k] = v
    return out


def load_records(path: str | Path, vocabulary: Optional[Iterable[str]] = None) -> list[UserNightRecord]:
    vocab = tuple(vocabulary) if vocabulary is not None else DEFAULT_TAG_VOCABULARY
    records = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line, object_pairs_hook=_no_duplicate_keys)
            except _DuplicateKey as exc:
                raise InvariantViolation(lineno, str(exc), "appears more than once") from exc
            except json.JSONDecodeError as exc:
                raise ParseFailure(lineno, f"invalid JSON: {exc.msg}") from exc
            try:
                rec = UserNightRecord.from_dict(obj)
            except SchemaMismatch as exc:
                raise ParseFailure(lineno, str(exc)) from exc
            problems = rec.violations(vocab)
            if problems:
                field_name, reason = problems[0]
                raise InvariantViolation(lineno, field_name, reason)
            if rec.key in seen:
                raise InvariantViolation(lineno, "date", "duplicate (user_id, date)")
            seen.add(rec.key)
            records.append(rec)
    logger.debug("loaded %d records from %s", len(records), path)
    return records
