"""Writer backends and replaced-layer artifact calls.

Three backends share one ``write(request) -> WriterResponse`` contract:

``TemplateBackend``
    Deterministic oracle. Final-writer calls render the packet with
    :func:`template_write`; artifact calls replay the reference artifact.
``FaultyBackend``
    Template output with seeded, independently fired faults
    (:func:`faulty_write`), and artifact calls corrupted at a fixed rate.
``RemoteBackend``
    One chat-completion style HTTP POST per call (:func:`remote_write`).

Offline backends count tokens as whitespace-separated words and report a
simulated latency of ``20 + in_tokens // 50 + 2 * out_tokens`` ms, so their
traces are free, deterministic and still exercise cost plumbing.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Any, Callable, Optional, Protocol, Sequence, Union

import httpx

from .analysis import OUTPUT_SCHEMA_ID, ReferenceReport, render_packet
from .core import (
    DEFAULT_TAG_VOCABULARY,
    METRIC_IDS,
    TAG_CANDIDATES,
    AllowedNumber,
    AttributionSet,
    ComparisonFact,
    InsightOutput,
    RankingDecision,
    SchemaMismatch,
    WriterPacket,
    dumps,
    fmt_decimal,
    fmt_hours_minutes,
    get_metric,
    quantize,
)
from .evaluator import NumericClaim, extract_claims, is_supported
from .synth import SplitMix64

logger = logging.getLogger(__name__)

LAYERS = ("reference_report", "comparison", "ranker", "attribution", "handoff")
ARTIFACT_SCHEMA_IDS = {layer: f"artifact-{layer}.v1" for layer in LAYERS}


class WriterError(Exception):
    """A backend call failed; recorded in the trace and scored as a schema error."""


class Timeout(WriterError):
    pass


class TransportFailure(WriterError):
    pass


class BackendRefusal(WriterError):
    pass


class AuthFailure(WriterError):
    pass


class ProviderError(WriterError):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"provider returned HTTP {status}: {detail}".rstrip(": "))
        self.status = status


class ArtifactParseFailure(ValueError):
    pass


@dataclass(frozen=True)
class WriterRequest:
    prompt_text: str
    schema_id: str = OUTPUT_SCHEMA_ID
    max_output_tokens: int = 800
    deterministic: bool = True
    kind: str = "writer"  # or "artifact"
    payload: Optional[dict] = None  # structured input for offline backends; never sent remotely
    stream_key: str = ""

    def __post_init__(self) -> None:
        if not self.prompt_text:
            raise ValueError("prompt_text must be non-empty")


@dataclass(frozen=True)
class WriterResponse:
    raw_text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int
    attempts: int = 1
    request_body: Optional[str] = None
    response_body: Optional[str] = None


class Backend(Protocol):
    name: str
    model: str

    def write(self, request: WriterRequest) -> WriterResponse: ...


def approx_tokens(text: str) -> int:
    return len(text.split())


def simulated_latency_ms(input_tokens: int, output_tokens: int) -> int:
    return 20 + input_tokens // 50 + 2 * output_tokens


def _offline_response(request: WriterRequest, text: str) -> WriterResponse:
    tin, tout = approx_tokens(request.prompt_text), approx_tokens(text)
    return WriterResponse(text, tin, tout, simulated_latency_ms(tin, tout))


# ---------------------------------------------------------------------------
# template writer

_ADVICE = {
    "sleep_score": "Keep a steady wind-down routine and a consistent bedtime tonight.",
    "duration_min": "Protect your sleep window by starting your wind-down a little earlier tonight.",
    "deep_min": "Keep the bedroom cool and dark and avoid heavy meals late in the evening.",
    "rem_min": "Aim for a consistent wake time and limit alcohol close to bedtime.",
    "light_min": "Limit screens before bed so you settle into deeper sleep sooner.",
    "hrv_ms": "Try a short progressive muscle relaxation session before bed and keep the evening calm.",
    "heart_rate_bpm": "Hydrate well, skip late caffeine and allow time to unwind before bed.",
    "resp_rate_brpm": "Slow, relaxed breathing before bed can help; check in with how you feel today.",
    "snore_pct": "Sleeping on your side and keeping nasal passages clear may help.",
}


def _show(metric: str, value: Decimal) -> str:
    m = get_metric(metric)
    if m.is_duration:
        return fmt_hours_minutes(value)
    if m.unit_class == "percent":
        return f"{fmt_decimal(value)}%"
    if not m.unit:
        return fmt_decimal(value)
    return f"{fmt_decimal(value)} {m.unit}"


def _cap(text: str) -> str:
    return text[:1].upper() + text[1:]


def template_output(packet: WriterPacket) -> dict:
    c = packet.comparison
    m = get_metric(packet.selected)
    label = m.label
    cur, base, pct = _show(c.metric, c.current), _show(c.metric, c.baseline_mean), abs(c.pct_delta)
    if c.direction == "down":
        title = f"Your {label} came in lower than usual"
        core = f"Your {label} was {cur}, down {pct}% from your baseline of {base}."
        finding = f"{_cap(label)} down {pct}% vs baseline"
    elif c.direction == "up":
        title = f"Your {label} came in higher than usual"
        core = f"Your {label} was {cur}, up {pct}% from your baseline of {base}."
        finding = f"{_cap(label)} up {pct}% vs baseline"
    else:
        title = f"Your {label} held steady"
        core = f"Your {label} was {cur}, in line with your baseline of {base}."
        finding = f"{_cap(label)} in line with baseline"
    advice = _ADVICE[packet.selected]
    if packet.tag_names:
        advice += f" Logged factors that may be related: {', '.join(packet.tag_names)}."
    sc = packet.style_constraints
    return {
        "headline": {
            "title": title[: sc.title_max],
            "core_insight": core[: sc.core_insight_max],
            "how_to_improve": advice[: sc.how_to_improve_max],
        },
        "analysis_card": {
            "metric_id": packet.selected,
            "finding_statement": finding[: sc.core_insight_max],
            "tags": list(packet.tag_names),
            "chart": [p.to_dict() for p in packet.chart],
        },
    }


def template_write(packet: WriterPacket) -> str:
    """Schema-valid output that copies packet facts verbatim. Deterministic."""
    return dumps(template_output(packet))


# ---------------------------------------------------------------------------
# fault injection

@dataclass(frozen=True)
class FaultConfig:
    seed: int = 0
    p_numeric: float = 0.0
    p_tag_add: float = 0.0
    p_metric_swap: float = 0.0
    p_schema: float = 0.0

    def __post_init__(self) -> None:
        for name in ("p_numeric", "p_tag_add", "p_metric_swap", "p_schema"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


@dataclass(frozen=True)
class FaultResult:
    text: str
    fired: tuple[str, ...] = ()
    not_applicable: tuple[str, ...] = ()


def _replace_claim(text: str, claim: NumericClaim, new_value: Decimal) -> str:
    start, end = claim.span
    if claim.unit_class == "hours_minutes":
        literal = fmt_hours_minutes(new_value)
    else:
        # keep any sign and unit text, swap only the digits
        old = claim.text
        digits_at = next(i for i, ch in enumerate(old) if ch.isdigit())
        num_len = len(fmt_decimal(abs(claim.value)))
        literal = old[:digits_at] + fmt_decimal(abs(new_value)) + old[digits_at + num_len:]
    return text[:start] + literal + text[end:]


def _perturbed_value(claim: NumericClaim, allowed: frozenset[AllowedNumber], rng: SplitMix64) -> Decimal:
    step = Decimal(1).scaleb(-claim.precision)
    if claim.unit_class == "hours_minutes":
        step = Decimal(1)
    magnitude = abs(claim.value)
    for attempt in range(200):
        k = 1 + rng.randrange(9) + 10 * attempt
        delta = step * k
        candidate = magnitude + delta if (rng.random() < 0.5 or magnitude - delta <= 0) else magnitude - delta
        candidate = quantize(candidate, claim.precision)
        probe = replace(claim, value=candidate if claim.value >= 0 else -candidate)
        if not is_supported(probe, allowed, ()):
            return candidate
    raise RuntimeError(f"could not find an unsupported perturbation for {claim.text!r}")


def faulty_write(
    packet: WriterPacket,
    config: FaultConfig,
    stream_key: str = "",
    vocabulary: Sequence[str] = DEFAULT_TAG_VOCABULARY,
) -> FaultResult:
    """Template output with each fault fired independently per its probability.

    The four coin flips come from one stream and are always drawn, so which
    faults fire on a night does not depend on the other probabilities. Each
    fault's own choices use a separate sub-stream.
    """
    coins = SplitMix64.for_stream(config.seed, "faults", stream_key)
    flips = {name: coins.random() for name in ("numeric", "tag_add", "metric_swap", "schema")}
    fire = {
        "numeric": flips["numeric"] < config.p_numeric,
        "tag_add": flips["tag_add"] < config.p_tag_add,
        "metric_swap": flips["metric_swap"] < config.p_metric_swap,
        "schema": flips["schema"] < config.p_schema,
    }
    base_text = template_write(packet)
    if not any(fire.values()):
        return FaultResult(base_text)

    out = template_output(packet)
    fired, skipped = [], []
    if fire["numeric"]:
        rng = SplitMix64.for_stream(config.seed, "numeric", stream_key)
        parsed = InsightOutput.from_dict(out)
        claims = extract_claims(parsed)
        if claims:
            claim = claims[rng.randrange(len(claims))]
            new_value = _perturbed_value(claim, packet.allowed_numbers, rng)
            section = "analysis_card" if claim.field == "finding_statement" else "headline"
            out[section][claim.field] = _replace_claim(out[section][claim.field], claim, new_value)
            fired.append("numeric")
        else:
            skipped.append("numeric")
    if fire["tag_add"]:
        rng = SplitMix64.for_stream(config.seed, "tag_add", stream_key)
        extra = [t for t in vocabulary if t not in packet.tag_names]
        if extra:
            out["analysis_card"]["tags"].append(extra[rng.randrange(len(extra))])
            fired.append("tag_add")
        else:
            skipped.append("tag_add")
    if fire["metric_swap"]:
        rng = SplitMix64.for_stream(config.seed, "metric_swap", stream_key)
        others = [m for m in METRIC_IDS if m != packet.selected]
        out["analysis_card"]["metric_id"] = others[rng.randrange(len(others))]
        fired.append("metric_swap")
    text = dumps(out)
    if fire["schema"]:
        text = text[: len(text) // 2]
        fired.append("schema")
    return FaultResult(text, tuple(fired), tuple(skipped))


# ---------------------------------------------------------------------------
# replaced-layer artifacts

def artifact_to_dict(layer: str, artifact: Any) -> dict:
    if layer == "comparison":
        return {"comparisons": [c.to_dict() for c in artifact]}
    return artifact.to_dict()


def parse_artifact(layer: str, raw: str) -> Any:
    """Strictly parse a layer artifact; raises :class:`ArtifactParseFailure`."""
    try:
        obj = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ArtifactParseFailure(f"{layer}: invalid JSON: {exc}") from exc
    try:
        if layer == "reference_report":
            return ReferenceReport.from_dict(obj)
        if layer == "comparison":
            if not isinstance(obj, dict) or set(obj) != {"comparisons"} or not isinstance(obj["comparisons"], list):
                raise SchemaMismatch("expected {\"comparisons\": [...]}")
            return tuple(ComparisonFact.from_dict(c) for c in obj["comparisons"])
        if layer == "ranker":
            return RankingDecision.from_dict(obj)
        if layer == "attribution":
            return AttributionSet.from_dict(obj)
        if layer == "handoff":
            return WriterPacket.from_dict(obj)
    except (SchemaMismatch, KeyError, TypeError, AttributeError) as exc:
        raise ArtifactParseFailure(f"{layer}: {exc}") from exc
    raise ValueError(f"unknown layer {layer!r}")


_LAYER_TASK = {
    "reference_report": "Format the night's metrics as report lines: value, baseline and signed percent change per metric, in the order given.",
    "comparison": "For every metric with a baseline, compare tonight's value to the baseline mean. pct_delta is 100*(current-mean)/mean rounded half away from zero to an integer; direction is up, down or flat (flat iff pct_delta is 0).",
    "ranker": "Apply the selection rule to the comparisons and pick exactly one metric to surface.",
    "attribution": "Admit each candidate tag whose strongest logged event this night has strength >= threshold. Order by evidence descending, then tag name.",
    "handoff": "Compact the verified facts into the writer packet. Copy numbers and tags exactly; do not add tags or recalculate numbers.",
}


def build_artifact_prompt(layer: str, upstream: dict) -> str:
    return "\n".join([
        f"[artifact {ARTIFACT_SCHEMA_IDS[layer]}]",
        f"Task: {_LAYER_TASK[layer]}",
        "Input (JSON):",
        json.dumps(upstream, sort_keys=True, indent=1, ensure_ascii=False),
        "Return only one JSON object in the artifact format; decimals as strings.",
    ])


@dataclass(frozen=True)
class ArtifactResult:
    layer: str
    artifact: Any  # parsed artifact, or None on parse failure
    raw_text: str
    error: Optional[str]
    response: WriterResponse


def generate_artifact(
    layer: str,
    upstream: dict,
    backend: "Backend",
    reference: Any,
    stream_key: str = "",
    reference_numbers: Sequence[AllowedNumber] = (),
    candidates: Sequence[str] = TAG_CANDIDATES,
) -> ArtifactResult:
    """One artifact call for ``layer``; the parsed artifact replaces the reference output.

    ``reference`` is the deterministic layer's own output. It is handed to
    offline backends (which replay or corrupt it) and never sent to a remote
    model.
    """
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}")
    payload = {
        "layer": layer,
        "reference": artifact_to_dict(layer, reference),
        "reference_numbers": [n.to_dict() for n in sorted(reference_numbers)],
        "candidates": list(candidates),
    }
    request = WriterRequest(
        build_artifact_prompt(layer, upstream),
        schema_id=ARTIFACT_SCHEMA_IDS[layer],
        kind="artifact",
        payload=payload,
        stream_key=stream_key,
    )
    response = backend.write(request)
    try:
        artifact, error = parse_artifact(layer, response.raw_text), None
    except ArtifactParseFailure as exc:
        artifact, error = None, str(exc)
    return ArtifactResult(layer, artifact, response.raw_text, error, response)


def _shift_away(value: Decimal, precision: int, forbidden: set[Decimal], rng: SplitMix64) -> Decimal:
    """A value 6-20% away from ``value`` that equals none of ``forbidden``."""
    for _ in range(200):
        frac = Decimal(str(round(0.06 + 0.14 * rng.random(), 4)))
        sign = 1 if rng.random() < 0.5 else -1
        cand = quantize(value * (1 + sign * frac), precision)
        if cand > 0 and cand not in forbidden:
            return cand
    raise RuntimeError("no admissible corrupted value")


def corrupt_artifact(payload: dict, rng: SplitMix64, vocabulary: Sequence[str] = DEFAULT_TAG_VOCABULARY) -> dict:
    """Corrupt a reference artifact the way each layer tends to fail.

    comparison: baseline means shifted, percent changes kept (arithmetic slip);
    ranker: a different eligible metric selected; attribution: one ungated tag
    admitted; handoff: the selected comparison's current value shifted and one
    ungated tag added; reference_report: one line's value shifted.
    """
    layer = payload["layer"]
    ref = copy.deepcopy(payload["reference"])
    forbidden = {Decimal(n["value"]) for n in payload.get("reference_numbers", [])}

    def extra_tag(present: Sequence[str]) -> Optional[str]:
        pool = [t for t in payload.get("candidates", TAG_CANDIDATES) if t not in present]
        pool = pool or [t for t in vocabulary if t not in present]
        return pool[rng.randrange(len(pool))] if pool else None

    if layer == "comparison":
        for c in ref["comparisons"]:
            prec = get_metric(c["metric"]).precision
            c["baseline_mean"] = fmt_decimal(_shift_away(Decimal(c["baseline_mean"]), prec, forbidden, rng))
            c.pop("display", None)
    elif layer == "ranker":
        others = [m for m in ref["eligible"] if m != ref["selected"]]
        if others:
            ref["selected"] = others[rng.randrange(len(others))]
    elif layer == "attribution":
        tag = extra_tag([a["tag"] for a in ref["allowed"]])
        if tag is not None:
            ref["allowed"].append({"tag": tag, "evidence": "0.9"})
    elif layer == "handoff":
        comp = ref["comparison"]
        metric = get_metric(comp["metric"])
        new = _shift_away(Decimal(comp["current"]), metric.precision, forbidden, rng)
        comp["current"] = fmt_decimal(new)
        comp.pop("display", None)
        ref.pop("comparison_display", None)
        ref["allowed_numbers"].append(AllowedNumber(new, metric.unit_class).to_dict())
        if metric.is_duration:
            ref["allowed_numbers"].append(AllowedNumber(new, "hours_minutes").to_dict())
        tag = extra_tag([a["tag"] for a in ref["allowed_tags"]])
        if tag is not None:
            ref["allowed_tags"].append({"tag": tag, "evidence": "0.9"})
    elif layer == "reference_report":
        if ref["lines"]:
            line = ref["lines"][rng.randrange(len(ref["lines"]))]
            prec = get_metric(line["metric"]).precision
            line["value"] = fmt_decimal(_shift_away(Decimal(line["value"]), prec, forbidden, rng))
            ref.pop("text", None)
    return ref


# ---------------------------------------------------------------------------
# backends

class TemplateBackend:
    """Oracle backend: faithful writer and faithful artifact replay."""

    name = "template"

    def __init__(self, model: str = "template"):
        self.model = model

    def write(self, request: WriterRequest) -> WriterResponse:
        if request.payload is None:
            raise BackendRefusal("template backend needs a structured payload")
        if request.kind == "artifact":
            text = dumps(request.payload["reference"])
        else:
            text = template_write(WriterPacket.from_dict(request.payload))
        return _offline_response(request, text)


class FaultyBackend:
    """Template writer with injected faults; artifacts corrupted at ``artifact_corruption``."""

    name = "faulty"

    def __init__(
        self,
        config: FaultConfig = FaultConfig(),
        artifact_corruption: float = 0.3,
        model: str = "faulty",
        vocabulary: Sequence[str] = DEFAULT_TAG_VOCABULARY,
    ):
        if not 0 <= artifact_corruption <= 1:
            raise ValueError("artifact_corruption must be in [0, 1]")
        self.config = config
        self.artifact_corruption = artifact_corruption
        self.model = model
        self.vocabulary = tuple(vocabulary)
        self.fired: dict[str, tuple[str, ...]] = {}  # side channel: stream_key -> fired faults
        self._lock = threading.Lock()

    def write(self, request: WriterRequest) -> WriterResponse:
        if request.payload is None:
            raise BackendRefusal("faulty backend needs a structured payload")
        if request.kind == "artifact":
            rng = SplitMix64.for_stream(self.config.seed, "artifact", request.stream_key)
            if rng.random() < self.artifact_corruption:
                text = dumps(corrupt_artifact(request.payload, rng, self.vocabulary))
                fired: tuple[str, ...] = ("artifact",)
            else:
                text = dumps(request.payload["reference"])
                fired = ()
            key = f"{request.stream_key}#artifact"
        else:
            result = faulty_write(WriterPacket.from_dict(request.payload), self.config, request.stream_key,
                                  self.vocabulary)
            text, fired, key = result.text, result.fired, request.stream_key
        with self._lock:
            self.fired[key] = fired
        return _offline_response(request, text)


@dataclass(frozen=True)
class RemoteConfig:
    base_url: str
    model: str
    api_key_env: str = "LLM_API_KEY"
    timeout_ms: int = 60_000
    max_retries: int = 2
    max_in_flight: int = 4
    path: str = "/chat/completions"
    backoff_ms: int = 500
    auth_header: str = "Authorization"
    auth_prefix: str = "Bearer "
    text_path: str = "choices.0.message.content"
    input_tokens_path: str = "usage.prompt_tokens"
    output_tokens_path: str = "usage.completion_tokens"
    max_tokens_field: str = "max_tokens"
    system_prompt: str = "You write short, factual sleep insights as strict JSON."
    extra_headers: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RemoteConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown remote config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str) -> "RemoteConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _dig(obj: Any, path: str) -> Any:
    for part in path.split("."):
        if isinstance(obj, list):
            obj = obj[int(part)]
        else:
            obj = obj[part]
    return obj


def remote_write(request: WriterRequest, endpoint: RemoteConfig, client: Optional[httpx.Client] = None) -> WriterResponse:
    """POST one chat completion, retrying transient failures.

    HTTP 429/5xx, timeouts and connection errors are retried up to
    ``max_retries`` times; latency is summed over attempts.
    """
    key = os.environ.get(endpoint.api_key_env)
    if not key:
        raise AuthFailure(f"environment variable {endpoint.api_key_env} is not set")
    body: dict[str, Any] = {
        "model": endpoint.model,
        "messages": [
            {"role": "system", "content": endpoint.system_prompt},
            {"role": "user", "content": request.prompt_text},
        ],
        endpoint.max_tokens_field: request.max_output_tokens,
    }
    if request.deterministic:
        body["temperature"] = 0
    body_text = json.dumps(body, ensure_ascii=False)
    headers = {"Content-Type": "application/json", endpoint.auth_header: endpoint.auth_prefix + key,
               **endpoint.extra_headers}
    url = endpoint.base_url.rstrip("/") + endpoint.path
    timeout = endpoint.timeout_ms / 1000

    own_client = client is None
    client = client or httpx.Client(timeout=timeout)
    elapsed = 0.0
    last: WriterError = TransportFailure("no attempt made")
    try:
        for attempt in range(1, endpoint.max_retries + 2):
            if attempt > 1 and endpoint.backoff_ms:
                time.sleep(endpoint.backoff_ms * 2 ** (attempt - 2) / 1000)
            t0 = time.perf_counter()
            try:
                resp = client.post(url, content=body_text.encode("utf-8"), headers=headers, timeout=timeout)
            except httpx.TimeoutException as exc:
                elapsed += time.perf_counter() - t0
                last = Timeout(f"no response within {endpoint.timeout_ms} ms")
                logger.warning("attempt %d timed out: %s", attempt, exc)
                continue
            except httpx.TransportError as exc:
                elapsed += time.perf_counter() - t0
                last = TransportFailure(str(exc) or type(exc).__name__)
                logger.warning("attempt %d transport failure: %s", attempt, exc)
                continue
            elapsed += time.perf_counter() - t0
            if resp.status_code in (401, 403):
                raise AuthFailure(f"HTTP {resp.status_code}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = ProviderError(resp.status_code, resp.text[:200])
                logger.warning("attempt %d got HTTP %d", attempt, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise ProviderError(resp.status_code, resp.text[:200])
            try:
                data = resp.json()
                text = _dig(data, endpoint.text_path)
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(resp.status_code, f"unexpected response shape: {exc}") from exc
            if text is None:
                raise BackendRefusal("provider returned no content")
            try:
                tin = int(_dig(data, endpoint.input_tokens_path))
                tout = int(_dig(data, endpoint.output_tokens_path))
            except (KeyError, IndexError, TypeError, ValueError):
                tin, tout = approx_tokens(request.prompt_text), approx_tokens(text)
            return WriterResponse(
                raw_text=text,
                input_tokens=tin,
                output_tokens=tout,
                latency_ms=round(elapsed * 1000),
                attempts=attempt,
                request_body=body_text,
                response_body=resp.text,
            )
        raise last
    finally:
        if own_client:
            client.close()


class RemoteBackend:
    name = "remote"

    def __init__(self, config: RemoteConfig):
        self.config = config
        self.model = config.model
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))
        self._client = httpx.Client(timeout=config.timeout_ms / 1000)

    def write(self, request: WriterRequest) -> WriterResponse:
        with self._slots:
            return remote_write(request, self.config, self._client)

    def close(self) -> None:
        self._client.close()
