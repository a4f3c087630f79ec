"""Continuous tracking of Bayesian network parameters over distributed streams."""

from .counters import ExactCounter, MessageLedger, SampledCounter, product_probe
from .errors import (
    CapacityError,
    ConsistencyError,
    DistBNError,
    NetworkFormatError,
    NetworkValidationError,
    StructureError,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    emit_report,
    generate_stream,
    generate_test_queries,
    make_new_alarm,
    resolve_network,
    run_experiment,
)
from .inference import brute_force_joint, classify, conditional_estimate, conditional_prob
from .network import (
    BayesNet,
    build_network,
    forward_sample,
    joint_prob_true,
    load_network,
    mle_from_counts,
    parent_config_index,
    read_network,
    topological_order,
)
from .tracker import Tracker, TrackerConfig, allocate_budget, comm_bound, init_tracker, replication_count

__all__ = [name for name in dir() if not name.startswith("_")]
