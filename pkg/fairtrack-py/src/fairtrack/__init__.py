"""Global group fairness for federated learning by function tracking.

The server cannot evaluate the MMD between the score distributions of two
protected groups as a sum of per-client terms. Instead it broadcasts sampled
score sets each round and every client descends an auxiliary function ``C``
of them; at the start of a round the resulting gradient is unbiased for the
global regularizer.

Wire messages live in :mod:`fairtrack.types`; the round loop in
:mod:`fairtrack.federation`; baselines in :mod:`fairtrack.baselines`; the
experiment harness in :mod:`fairtrack.experiments`.
"""

from __future__ import annotations

from fairtrack.baselines import CentralizedConfig, CentralizedResult, train_centralized, train_local_fair
from fairtrack.config import RunConfigFile, Trainer, load_config, parse_config
from fairtrack.data import (
    ClientShard,
    Federation,
    SyntheticSpec,
    TabularDataset,
    generate_synthetic,
    load_csv,
    partition_by_column,
    train_test_split,
)
from fairtrack.dp import DPMechanism, MechanismKind, dp_expected_c, protect
from fairtrack.errors import (
    CheckpointError,
    ConfigurationError,
    DataValidationError,
    DegenerateGroupError,
    DimensionMismatchError,
    EmptyFederationError,
    FairtrackError,
    RoundFailedError,
    UnsupportedKernelError,
)
from fairtrack.fairness import (
    AlphaWeights,
    Criterion,
    FairnessSpec,
    PredictionSets,
    audit_epsilon_fairness,
    c_function,
    decomposition_counterexample_check,
    fk_value,
    grad_fk,
    mmd_squared,
    mmd_squared_gradient,
    mmd_unfairness,
    sp_unfairness,
)
from fairtrack.federation import (
    FedRunConfig,
    RoundRecord,
    RunResult,
    aggregate,
    build_prediction_sets,
    compute_alpha,
    evaluate,
    run,
    run_algorithm1,
    run_algorithm2,
)
from fairtrack.kernels import (
    DistanceKernel,
    DPKernel,
    GaussianKernel,
    Kernel,
    KernelKind,
    LaplacianKernel,
    NoiseKind,
    NoiseSpec,
    dp_convolve,
    make_kernel,
)
from fairtrack.models import (
    Architecture,
    Model,
    accuracy,
    grad_prediction,
    grad_task_loss,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
    task_loss,
)

__all__ = [
    "AlphaWeights",
    "Architecture",
    "CentralizedConfig",
    "CentralizedResult",
    "CheckpointError",
    "ClientShard",
    "ConfigurationError",
    "Criterion",
    "DPKernel",
    "DPMechanism",
    "DataValidationError",
    "DegenerateGroupError",
    "DimensionMismatchError",
    "DistanceKernel",
    "EmptyFederationError",
    "FairnessSpec",
    "FairtrackError",
    "FedRunConfig",
    "Federation",
    "GaussianKernel",
    "Kernel",
    "KernelKind",
    "LaplacianKernel",
    "MechanismKind",
    "Model",
    "NoiseKind",
    "NoiseSpec",
    "PredictionSets",
    "RoundFailedError",
    "RoundRecord",
    "RunConfigFile",
    "RunResult",
    "SyntheticSpec",
    "TabularDataset",
    "Trainer",
    "UnsupportedKernelError",
    "accuracy",
    "aggregate",
    "audit_epsilon_fairness",
    "build_prediction_sets",
    "c_function",
    "compute_alpha",
    "decomposition_counterexample_check",
    "dp_convolve",
    "dp_expected_c",
    "evaluate",
    "fk_value",
    "generate_synthetic",
    "grad_fk",
    "grad_prediction",
    "grad_task_loss",
    "init_model",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "make_kernel",
    "mmd_squared",
    "mmd_squared_gradient",
    "mmd_unfairness",
    "parse_config",
    "partition_by_column",
    "predict",
    "protect",
    "run",
    "run_algorithm1",
    "run_algorithm2",
    "save_checkpoint",
    "sp_unfairness",
    "task_loss",
    "train_centralized",
    "train_local_fair",
    "train_test_split",
]
