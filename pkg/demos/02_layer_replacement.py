# Swap one deterministic layer at a time for a generated artifact and see
# which error metric moves. The faulty backend corrupts 30% of artifacts.
import tempfile
from pathlib import Path

from sleepinsight.harness import Condition, aggregate_traces, emit_results, run_condition
from sleepinsight.synth import CohortSpec, generate_cohort, generate_history
from sleepinsight.writers import FaultConfig, FaultyBackend, TemplateBackend

spec = CohortSpec(seed=7, n_users=20, nights_per_user=14)
cohort, history = generate_cohort(spec), generate_history(spec)

traces = run_condition(cohort, Condition.TFTS, TemplateBackend(), history).traces
for cond in Condition:
    if cond.layer:
        backend = FaultyBackend(FaultConfig(seed=7), artifact_corruption=0.3)
        traces += run_condition(cohort, cond, backend, history).traces

rows = aggregate_traces(traces)
out = Path(tempfile.mkdtemp())
results, frontier, detailed = emit_results([(c, m, a) for c, m, a, _ in rows], out)
print(results.read_text())

# Replace Reference Report stays clean here: the template writer reads the
# comparison, not the report line, so a corrupted line never reaches the text.
for cond, model, agg, _ in rows:
    print(f"{cond:<26} artifact_err={agg.artifact_err}  calls/night={Condition(cond).calls_per_night}")
