# One night end to end: reference layers, the writer packet, a template
# insight and its score. The night mirrors the HRV example used in the tests.
import datetime as dt
import json
from decimal import Decimal

from sleepinsight.analysis import render_packet, run_layers
from sleepinsight.core import LoggedEvent, UserNightRecord
from sleepinsight.evaluator import extract_claims, check_claim, parse_output, score_output
from sleepinsight.writers import template_write

night = dt.date(2026, 2, 23)
values = {"sleep_score": "84", "duration_min": "470", "deep_min": "86", "rem_min": "100", "light_min": "284",
          "hrv_ms": "34.2", "heart_rate_bpm": "59.2", "resp_rate_brpm": "15.8", "snore_pct": "6.0"}


def record(day, **overrides):
    vals = {k: Decimal(v) for k, v in {**values, **overrides}.items()}
    return UserNightRecord("demo", day, vals, ())


# two weeks of history, HRV alternating around 41.3 ms
history = [record(night - dt.timedelta(days=14 - i), hrv_ms="40.3" if i % 2 == 0 else "42.3",
                  heart_rate_bpm="58.0") for i in range(14)]
tonight = UserNightRecord("demo", night, record(night).values,
                          (LoggedEvent("Alcohol", Decimal("0.9")), LoggedEvent("Stress", Decimal("0.3"))))

layers = run_layers(tonight, history)
print(layers.report.text)
print()
print("selected:", layers.ranking.selected, "| scores:",
      {m: str(s) for m, s in layers.ranking.scores.items() if s})
print("allowed tags:", layers.attribution.tags, "(Stress at 0.3 is below the 0.5 gate)")
print()
print(render_packet(layers.packet))
print()

raw = template_write(layers.packet)
out = parse_output(raw)
print(json.dumps(json.loads(raw)["headline"], indent=2))

# every number the writer used is checked against the fact bank
for claim in extract_claims(out):
    print(f"{claim.field:>18}  {claim.text:<10} supported={check_claim(claim, layers.bank)}")

# a writer that rounds differently or invents a tag gets caught
bad = json.loads(raw)
bad["headline"]["core_insight"] = "Your HRV fell to 33 ms, down 19% from usual."
bad["analysis_card"]["tags"].append("Caffeine")
score = score_output(parse_output(json.dumps(bad)), layers.bank, layers.ranking, layers.attribution)
print("\ntampered output:", score.unsupported, "attr_ok =", score.attr_ok)
