"""Simulated asynchronous vertical federated learning with stochastic
damped quasi-Newton updates and masked tree aggregation."""

from .aggregation import (
    AggregationTranscript,
    AuditReport,
    TreeTopology,
    build_tree,
    distinct_tree,
    leakage_audit,
    masked_aggregate,
)
from .algorithms import AlgoConfig, DivergenceError, PartyWorker, reference_solve
from .curvature import (
    CurvatureMemory,
    DampingReport,
    explicit_hessian_oracle,
    two_loop_direction,
    update_memory,
)
from .data import (
    Dataset,
    PartyShard,
    one_hot_encode,
    parse_csv,
    parse_libsvm,
    serialize_libsvm,
    synthetic_classification,
    synthetic_sparse_binary,
    vertical_split,
    zscore_normalize,
)
from .estimator import AsySQNClassifier
from .metrics import crui, cti, lossless_compare, speedup_curve, suboptimality_series
from .objective import block_gradient, full_objective
from .runtime import SchedulerConfig, Simulator, TrainRun, run

__version__ = "0.1.0"

__all__ = [
    "AggregationTranscript",
    "AlgoConfig",
    "AsySQNClassifier",
    "AuditReport",
    "CurvatureMemory",
    "DampingReport",
    "Dataset",
    "DivergenceError",
    "PartyShard",
    "PartyWorker",
    "SchedulerConfig",
    "Simulator",
    "TrainRun",
    "TreeTopology",
    "block_gradient",
    "build_tree",
    "crui",
    "cti",
    "distinct_tree",
    "explicit_hessian_oracle",
    "full_objective",
    "leakage_audit",
    "lossless_compare",
    "masked_aggregate",
    "one_hot_encode",
    "parse_csv",
    "parse_libsvm",
    "reference_solve",
    "run",
    "serialize_libsvm",
    "speedup_curve",
    "suboptimality_series",
    "synthetic_classification",
    "synthetic_sparse_binary",
    "two_loop_direction",
    "update_memory",
    "vertical_split",
    "zscore_normalize",
]
