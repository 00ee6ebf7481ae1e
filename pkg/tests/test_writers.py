import json
import socket
import threading
import time
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import pytest

from sleepinsight.analysis import run_layers
from sleepinsight.core import UserNightRecord, dumps
from sleepinsight.evaluator import SchemaError, extract_claims, parse_output, score_output
from sleepinsight.synth import SplitMix64
from sleepinsight.writers import (
    ArtifactParseFailure,
    AuthFailure,
    FaultConfig,
    FaultyBackend,
    ProviderError,
    RemoteBackend,
    RemoteConfig,
    TemplateBackend,
    Timeout,
    TransportFailure,
    WriterRequest,
    WriterResponse,
    approx_tokens,
    artifact_to_dict,
    corrupt_artifact,
    faulty_write,
    generate_artifact,
    parse_artifact,
    remote_write,
    simulated_latency_ms,
    template_write,
)


@pytest.fixture
def layers(worked):
    rec, hist = worked
    return run_layers(rec, hist)


def _score(L, raw):
    return score_output(parse_output(raw), L.bank, L.ranking, L.attribution)


def test_template_output_worked_night(layers):
    raw = template_write(layers.packet)
    out = parse_output(raw)
    assert "34.2" in out.headline.core_insight and "17%" in out.headline.core_insight
    assert set(out.analysis_card.tags) == {"Alcohol", "Stress", "Sick", "Fever"}
    assert template_write(layers.packet) == raw
    s = _score(layers, raw)
    assert s.claims_unsupported == 0 and s.sel_ok and s.attr_ok


def test_template_without_tags(worked):
    rec, hist = worked
    L = run_layers(UserNightRecord(rec.user_id, rec.date, rec.values, ()), hist)
    assert parse_output(template_write(L.packet)).analysis_card.tags == ()


def test_template_sound_over_cohort(small_cohort):
    cohort, history = small_cohort
    for rec in cohort:
        L = run_layers(rec, history + cohort)
        s = _score(L, template_write(L.packet))
        assert (s.schema_ok, s.claims_unsupported, s.sel_ok, s.attr_ok) == (True, 0, True, True)


def test_zero_probabilities_is_identity(layers):
    assert faulty_write(layers.packet, FaultConfig(seed=1), "k").text == template_write(layers.packet)


def test_forced_numeric_fault_changes_one_literal(layers):
    res = faulty_write(layers.packet, FaultConfig(seed=1, p_numeric=1), "k")
    base = [c.text for c in extract_claims(parse_output(template_write(layers.packet)))]
    bad = [c.text for c in extract_claims(parse_output(res.text))]
    assert len(base) == len(bad)
    assert sum(a != b for a, b in zip(base, bad)) == 1
    assert res.fired == ("numeric",)


def test_forced_schema_fault(layers):
    res = faulty_write(layers.packet, FaultConfig(seed=1, p_schema=1), "k")
    assert isinstance(parse_output(res.text), SchemaError)


def test_tag_add_with_all_candidates_uses_vocabulary(layers):
    res = faulty_write(layers.packet, FaultConfig(seed=2, p_tag_add=1), "k")
    tags = parse_output(res.text).analysis_card.tags
    assert len(tags) == 5 and tags[-1] in {"Caffeine", "Exercise", "LateMeal"}
    full = faulty_write(layers.packet, FaultConfig(seed=2, p_tag_add=1), "k",
                        vocabulary=("Alcohol", "Stress", "Sick", "Fever"))
    assert full.not_applicable == ("tag_add",) and full.fired == ()


def test_fault_observability(small_cohort):
    """Each fired fault is caught by exactly its own metric on that night."""
    cohort, history = small_cohort
    cfg = FaultConfig(seed=5, p_numeric=0.4, p_tag_add=0.4, p_metric_swap=0.4, p_schema=0.2)
    seen = set()
    for rec in cohort:
        L = run_layers(rec, history + cohort)
        res = faulty_write(L.packet, cfg, f"{rec.user_id}/{rec.date}")
        s = _score(L, res.text)
        if "schema" in res.fired:
            assert not s.schema_ok
            seen.add("schema")
            continue
        assert s.schema_ok
        assert (s.claims_unsupported > 0) == ("numeric" in res.fired)
        assert (not s.attr_ok) == ("tag_add" in res.fired)
        assert (not s.sel_ok) == ("metric_swap" in res.fired)
        seen.update(res.fired)
    assert seen == {"numeric", "tag_add", "metric_swap", "schema"}


def test_fault_config_validation():
    with pytest.raises(ValueError):
        FaultConfig(p_numeric=1.2)


def test_offline_usage_accounting(layers):
    req = WriterRequest("one two three", payload=layers.packet.to_dict())
    resp = TemplateBackend().write(req)
    assert resp.input_tokens == 3
    assert resp.output_tokens == approx_tokens(resp.raw_text)
    assert resp.latency_ms == simulated_latency_ms(3, resp.output_tokens) == 20 + 2 * resp.output_tokens


@pytest.mark.parametrize("layer", ["reference_report", "comparison", "ranker", "attribution", "handoff"])
def test_faithful_artifacts_round_trip(layers, layer):
    ref = {"reference_report": layers.report, "comparison": layers.comparisons, "ranker": layers.ranking,
           "attribution": layers.attribution, "handoff": layers.packet}[layer]
    res = generate_artifact(layer, {"x": 1}, TemplateBackend(), ref, "k")
    assert res.error is None
    assert artifact_to_dict(layer, res.artifact) == artifact_to_dict(layer, ref)
    assert res.response.input_tokens > 0


def test_parse_artifact_failures():
    with pytest.raises(ArtifactParseFailure):
        parse_artifact("ranker", "not json")
    with pytest.raises(ArtifactParseFailure):
        parse_artifact("comparison", '{"comparisons": [{"metric": "hrv_ms"}]}')
    with pytest.raises(ArtifactParseFailure):
        parse_artifact("attribution", "[]")


def _payload(layer, ref, L):
    return {"layer": layer, "reference": artifact_to_dict(layer, ref),
            "reference_numbers": [n.to_dict() for n in sorted(L.bank.allowed_numbers)],
            "candidates": ["Alcohol", "Stress", "Sick", "Fever"]}


def test_corrupt_ranker_and_attribution(worked):
    rec, hist = worked
    L = run_layers(UserNightRecord(rec.user_id, rec.date, rec.values, rec.events[:1]), hist)
    rng = SplitMix64(3)
    bad_rank = parse_artifact("ranker", dumps(corrupt_artifact(_payload("ranker", L.ranking, L), rng)))
    assert bad_rank.selected != L.ranking.selected and bad_rank.selected in L.ranking.eligible
    bad_attr = parse_artifact("attribution", dumps(corrupt_artifact(_payload("attribution", L.attribution, L), rng)))
    assert len(bad_attr.tags) == len(L.attribution.tags) + 1


def test_corrupt_comparison_keeps_percentages(layers):
    payload = _payload("comparison", layers.comparisons, layers)
    bad = parse_artifact("comparison", dumps(corrupt_artifact(payload, SplitMix64(9))))
    ref_nums = {n.value for n in layers.bank.allowed_numbers}
    for new, old in zip(bad, layers.comparisons):
        assert new.pct_delta == old.pct_delta and new.current == old.current
        assert new.baseline_mean not in ref_nums


# ---------------------------------------------------------------------------
# remote client

def _config(**kw):
    base = dict(base_url="http://stub.test/v1", model="m1", api_key_env="TEST_LLM_KEY", timeout_ms=500,
                max_retries=2, backoff_ms=0)
    base.update(kw)
    return RemoteConfig(**base)


def _ok(text="hello", tin=10, tout=20):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}],
                                     "usage": {"prompt_tokens": tin, "completion_tokens": tout}})


@pytest.fixture
def key(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "sk-test")


def test_remote_usage_and_wire_format(key):
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers["authorization"]
        seen["url"] = str(request.url)
        return _ok()

    client = httpx.Client(transport=httpx.MockTransport(handler))
    resp = remote_write(WriterRequest("prompt text", payload={"secret": 1}), _config(), client)
    assert (resp.raw_text, resp.input_tokens, resp.output_tokens, resp.attempts) == ("hello", 10, 20, 1)
    assert seen["url"] == "http://stub.test/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["model"] == "m1" and seen["body"]["max_tokens"] == 800
    assert seen["body"]["messages"][-1] == {"role": "user", "content": "prompt text"}
    assert "secret" not in json.dumps(seen["body"])
    assert "sk-test" not in resp.request_body


def test_remote_retries_server_errors(key):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500, text="boom") if len(calls) <= 2 else _ok()

    client = httpx.Client(transport=httpx.MockTransport(handler))
    resp = remote_write(WriterRequest("p"), _config(max_retries=2), client)
    assert resp.attempts == 3 and len(calls) == 3
    calls.clear()
    with pytest.raises(ProviderError) as exc:
        remote_write(WriterRequest("p"), _config(max_retries=1), client)
    assert exc.value.status == 500


def test_remote_auth_and_client_errors(key, monkeypatch):
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(401)))
    with pytest.raises(AuthFailure):
        remote_write(WriterRequest("p"), _config(), client)
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(400, text="bad")))
    with pytest.raises(ProviderError):
        remote_write(WriterRequest("p"), _config(), client)
    monkeypatch.delenv("TEST_LLM_KEY")
    with pytest.raises(AuthFailure):
        remote_write(WriterRequest("p"), _config(), client)


def test_remote_unreachable_host(key):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    t0 = time.monotonic()
    with pytest.raises(TransportFailure):
        remote_write(WriterRequest("p"), _config(base_url=f"http://127.0.0.1:{port}", max_retries=0))
    assert time.monotonic() - t0 < 2


class _Slow(BaseHTTPRequestHandler):
    def do_POST(self):
        time.sleep(1.0)
        try:
            self.send_response(200)
            self.end_headers()
        except OSError:
            pass

    def log_message(self, *args):
        pass


def test_remote_timeout(key):
    server = HTTPServer(("127.0.0.1", 0), _Slow)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        cfg = _config(base_url=f"http://127.0.0.1:{server.server_port}", timeout_ms=200, max_retries=0)
        t0 = time.monotonic()
        with pytest.raises(Timeout):
            remote_write(WriterRequest("p"), cfg)
        assert time.monotonic() - t0 < 0.9
    finally:
        server.shutdown()
        server.server_close()


def test_remote_backend_bounds_in_flight(key, monkeypatch):
    active, peak, lock = [0], [0], threading.Lock()

    def fake(request, endpoint, client=None):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1
        return WriterResponse("x", 1, 1, 1)

    monkeypatch.setattr("sleepinsight.writers.remote_write", fake)
    backend = RemoteBackend(_config(max_in_flight=2))
    threads = [threading.Thread(target=backend.write, args=(WriterRequest("p"),)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    backend.close()
    assert peak[0] == 2


def test_remote_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        RemoteConfig.from_dict({"base_url": "x", "model": "m", "api_key": "inline"})
