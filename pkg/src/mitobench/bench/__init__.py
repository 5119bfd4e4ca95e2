from mitobench.bench.experiments import (
    SweepFailure,
    SweepResult,
    run_cross_domain_experiment,
    run_scaling_experiment,
)
from mitobench.bench.report import (
    aggregate,
    cross_domain_matrix,
    cross_domain_table,
    emit_report,
    records_dataframe,
    scaling_table,
)
from mitobench.bench.store import ResultsStore, RunRecord, StoreIssue

__all__ = [
    "ResultsStore",
    "RunRecord",
    "StoreIssue",
    "SweepFailure",
    "SweepResult",
    "aggregate",
    "cross_domain_matrix",
    "cross_domain_table",
    "emit_report",
    "records_dataframe",
    "run_cross_domain_experiment",
    "run_scaling_experiment",
    "scaling_table",
]
