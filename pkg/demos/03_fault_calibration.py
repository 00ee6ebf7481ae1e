# Does the evaluator see injected faults at the rate they were injected?
from sleepinsight.harness import fault_sweep
from sleepinsight.synth import CohortSpec, generate_cohort, generate_history

spec = CohortSpec(seed=7, n_users=20, nights_per_user=14)
cohort, history = generate_cohort(spec), generate_history(spec)

points = fault_sweep(cohort, {"numeric": [0.1, 0.3], "metric_swap": [0.1]}, history, seed=1)
print(f"{'fault':<12} {'p':>5} {'fired':>6} {'measured':>9} {'3se band':>17}  others")
for pt in points:
    lo, hi = pt.p - 3 * pt.stderr, pt.p + 3 * pt.stderr
    others = {k: float(v) for k, v in pt.others.items()}
    print(f"{pt.fault:<12} {pt.p:>5} {pt.n_fired:>6} {float(pt.measured):>9.3f} [{lo:.3f}, {hi:.3f}]  {others}")
