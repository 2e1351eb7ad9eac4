"""Reference trainers.

* :func:`train_centralized`: full-gradient descent on the pooled training data
  with the exact ``MMD²`` regularizer, as if every client shipped its data to
  the server.
* :func:`train_local_fair`: FedAvg where each client regularizes the ``MMD²``
  between its own groups only. No prediction sets are broadcast and no ``α``
  weights are used.

Both share models, kernels, seeds and data splits with
:func:`fairtrack.federation.run`, so comparisons isolate the regularizer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Federation, TabularDataset
from .errors import ConfigurationError, DegenerateGroupError
from .fairness import (
    FairnessDiagnostics,
    FairnessSpec,
    PredictionSets,
    mmd_by_set,
    mmd_squared_gradient,
    regularizer_value,
)
from .federation import FedRunConfig, RunResult, descent_step, run
from .kernels import Kernel
from .models import Model, task_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CentralizedConfig:
    epochs: int = 1000
    step: float = 0.05
    record_every: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1", field="epochs")
        if not self.step > 0:
            raise ConfigurationError("step must be positive", field="step")
        if self.record_every < 0:
            raise ConfigurationError("record_every must be non-negative", field="record_every")


@dataclass(frozen=True)
class CentralizedPoint:
    epoch: int
    loss: float
    mmd2: float
    objective: float


@dataclass(frozen=True)
class CentralizedResult:
    model: Model
    history: list[CentralizedPoint] = field(default_factory=list)


def _objective_point(
    epoch: int, model: Model, pooled: TabularDataset, lam: float, kernel: Kernel, spec: FairnessSpec
) -> CentralizedPoint:
    loss = task_loss(model, pooled)
    mmd2 = regularizer_value(mmd_by_set(model, pooled, spec, kernel))
    return CentralizedPoint(epoch=epoch, loss=loss, mmd2=mmd2, objective=loss + lam * mmd2)


def train_centralized(
    pooled: TabularDataset,
    model: Model,
    lam: float,
    kernel: Kernel,
    spec: FairnessSpec,
    config: CentralizedConfig | None = None,
) -> CentralizedResult:
    """Full-batch gradient descent from ``model``.

    With ``record_every > 0`` the objective is recorded every that many epochs
    and after the last one.
    """
    config = config if config is not None else CentralizedConfig()
    if lam < 0:
        raise ConfigurationError("lam must be non-negative", field="lam")
    if lam > 0:
        empty = [
            cset.name
            for cset, (rows0, rows1) in zip(spec.conditioning_sets, spec.group_masks(pooled))
            if not rows0.any() or not rows1.any()
        ]
        if empty:
            raise DegenerateGroupError(f"sets=<{empty}> | a group is empty on the pooled data")

    def exact_mmd_gradient(current: Model, batch: TabularDataset) -> np.ndarray:
        return mmd_squared_gradient(current, batch, spec, kernel)

    params = model.params
    history: list[CentralizedPoint] = []
    for epoch in range(1, config.epochs + 1):
        params = descent_step(params, model, pooled, config.step, lam, exact_mmd_gradient)
        if config.record_every and (epoch % config.record_every == 0 or epoch == config.epochs):
            history.append(_objective_point(epoch, model.with_params(params), pooled, lam, kernel, spec))
    logger.debug("epochs=<%d>, lam=<%s> | centralized training complete", config.epochs, lam)
    return CentralizedResult(model=model.with_params(params), history=history)


@dataclass(frozen=True)
class LocalFairness:
    """Exact minibatch gradient of the client's own ``Σ_j MMD²_j``."""

    spec: FairnessSpec
    kernel: Kernel
    broadcasts_sets: bool = False

    def gradient(
        self,
        model: Model,
        batch: TabularDataset,
        alpha: np.ndarray,
        sets: PredictionSets | None,
        diagnostics: FairnessDiagnostics,
    ) -> np.ndarray:
        return mmd_squared_gradient(model, batch, self.spec, self.kernel, diagnostics)


def train_local_fair(
    federation: Federation,
    config: FedRunConfig,
    *,
    workers: int = 1,
    initial: Model | None = None,
) -> RunResult:
    """FedAvg with a local group fairness regularizer on every client."""
    return run(
        federation,
        config,
        workers=workers,
        strategy=LocalFairness(config.fairness, config.kernel),
        initial=initial,
    )
