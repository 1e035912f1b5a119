"""Latency-constrained search over per-layer pruning schemes and rates.

A Gaussian process with a Weisfeiler-Lehman graph kernel scores candidate
pruning proposals by expected improvement; gradients of its predictive mean
decide which layers the controller mutates next.
"""

from .controller import ControllerConfig, generate_pool, mutate, replacement_probabilities
from .evaluators import (
    CalibrationError,
    EvaluationError,
    EvaluationResult,
    LatencyModel,
    LookupEvaluator,
    Measurement,
    RewardConfig,
    SimulatedEvaluator,
    SyntheticBenchmark,
    calibrate_latency_model,
    evaluate_batch,
    reward,
    simulate_latency,
    simulated_accuracy,
)
from .external import ExternalEvaluator
from .gp import (
    ModelFitError,
    Observation,
    SurrogateModel,
    expected_improvement,
    fit,
    mean_gradient,
    predict,
)
from .network import (
    ConfigurationError,
    EncodingError,
    LayerAssignment,
    LayerSpec,
    NetworkSpec,
    ProposalGraph,
    PruningProposal,
    encode_graph,
    proposal_stats,
    random_proposal,
    validate,
)
from .search import EvaluatorSpec, SearchConfig, SearchState, StateError, resume, run, select_batch
from .wl import KernelConfig, WlFeatureMap, gram_matrix, kernel, wl_features

__version__ = "0.1.0"
