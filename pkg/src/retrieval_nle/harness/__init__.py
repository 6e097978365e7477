from retrieval_nle.harness.data import DatasetSplits, Sample, load_dataset, write_dataset
from retrieval_nle.harness.evaluation import (
    EvaluationReport,
    build_memory_for_phase,
    evaluate,
    format_table,
    oracle_test,
)
from retrieval_nle.harness.synthetic import SyntheticTaskConfig, gen_synthetic

__all__ = [
    "DatasetSplits",
    "EvaluationReport",
    "Sample",
    "SyntheticTaskConfig",
    "build_memory_for_phase",
    "evaluate",
    "format_table",
    "gen_synthetic",
    "load_dataset",
    "oracle_test",
    "write_dataset",
]
