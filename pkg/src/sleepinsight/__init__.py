"""Turn nightly wearable sleep records into short, grounded insights.

Deterministic layers compute baselines, comparisons, the surfaced metric and
evidence-gated attributions; a writer backend only phrases the result. The
evaluator re-checks every written number and tag against the deterministic
fact bank, and the harness runs and costs whole experimental conditions.
"""

from .analysis import SelectionRule, run_layers
from .core import (
    CATALOG,
    ComparisonFact,
    FactBank,
    InsightOutput,
    UserNightRecord,
    WriterPacket,
)
from .evaluator import aggregate, parse_output, score_night
from .harness import Condition, PriceTable, aggregate_traces, run_condition
from .synth import CohortSpec, generate_cohort, generate_history, load_records
from .writers import FaultConfig, FaultyBackend, RemoteBackend, RemoteConfig, TemplateBackend

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "CohortSpec",
    "ComparisonFact",
    "Condition",
    "FactBank",
    "FaultConfig",
    "FaultyBackend",
    "InsightOutput",
    "PriceTable",
    "RemoteBackend",
    "RemoteConfig",
    "SelectionRule",
    "TemplateBackend",
    "UserNightRecord",
    "WriterPacket",
    "aggregate",
    "aggregate_traces",
    "generate_cohort",
    "generate_history",
    "load_records",
    "parse_output",
    "run_condition",
    "run_layers",
    "score_night",
]
