"""Run configuration file.

A run is described by one JSON document::

    {
      "trainer": "algorithm1",
      "seed": 0,
      "data": {"source": "synthetic", "n_clients": 10, "samples_per_client": 200, "dim": 10},
      "federation": {"rounds": 100, "local_epochs": 50, "local_step": 0.05},
      "fairness": {"criterion": "statistical_parity", "lam": 1.0},
      "kernel": {"kind": "gaussian", "bandwidth": 1.0},
      "dp": {"kind": "none"}
    }

Every section is optional and every omitted field takes its default;
unknown keys are rejected. :func:`load_config` turns syntax errors into a
``line:column`` diagnostic and validation errors into the dotted path of the
offending field, both as :class:`~fairtrack.errors.ConfigurationError`.

The validated file model converts into the library's domain objects
(:class:`~fairtrack.federation.FedRunConfig` and friends), which users may
also build directly.
"""

from __future__ import annotations

import hashlib
import json
import logging
from enum import Enum
from os import PathLike
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_core import ErrorDetails

from .baselines import CentralizedConfig
from .data import SyntheticSpec
from .dp import DPMechanism
from .errors import ConfigurationError
from .fairness import Criterion, FairnessSpec
from .federation import FedRunConfig
from .kernels import Kernel, KernelKind, make_kernel
from .models import DEFAULT_HIDDEN_UNITS, Architecture

logger = logging.getLogger(__name__)


class Trainer(str, Enum):
    ALGORITHM1 = "algorithm1"
    ALGORITHM2 = "algorithm2"
    CENTRALIZED = "centralized"
    LOCAL_FAIR = "local_fair"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CsvSection(_Section):
    path: str
    feature_columns: list[str] = Field(min_length=1)
    label_column: str
    protected_column: str
    group_column: str
    protected_threshold: float | None = None
    label_threshold: float | None = None
    min_shard_size: int = Field(default=1, ge=1)


class DataSection(_Section):
    source: Literal["synthetic", "csv"] = "synthetic"
    n_clients: int = Field(default=10, ge=1)
    samples_per_client: int | list[int] = 200
    dim: int = Field(default=10, ge=1)
    heterogeneity: float = Field(default=1.0, ge=0.5, le=1.0)
    weights: list[float] | None = None
    data_seed: int | None = Field(default=None, ge=0)
    test_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)
    standardize: bool = False
    csv: CsvSection | None = None

    @model_validator(mode="after")
    def _check_source(self) -> DataSection:
        if self.source == "csv" and self.csv is None:
            raise ValueError("source 'csv' needs a csv section")
        if isinstance(self.samples_per_client, list) and len(self.samples_per_client) != self.n_clients:
            raise ValueError("samples_per_client must list one size per client")
        return self


class ModelSection(_Section):
    architecture: Architecture = Architecture.LOGISTIC
    hidden_units: int = Field(default=DEFAULT_HIDDEN_UNITS, ge=1)


class FederationSection(_Section):
    rounds: int = Field(default=100, ge=1)
    local_epochs: int = Field(default=50, ge=1)
    local_step: float = Field(default=0.05, gt=0.0)
    step_decay: float = Field(default=0.99, gt=0.0, le=1.0)
    global_step: float = Field(default=1.0, ge=1.0)
    clients_per_round: int | None = Field(default=None, ge=1)
    batch_size: int = Field(default=100, ge=1)
    set_size: int = Field(default=100, ge=1)
    weighted_aggregation: bool = False


class FairnessSection(_Section):
    criterion: Criterion = Criterion.STATISTICAL_PARITY
    lam: float = Field(default=0.0, ge=0.0)
    feature_index: int | None = Field(default=None, ge=0)
    threshold: float | None = None
    epsilon: float | None = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def _check_subset(self) -> FairnessSection:
        needs_subset = self.criterion is Criterion.CONDITIONAL_STATISTICAL_PARITY
        if needs_subset and (self.feature_index is None or self.threshold is None):
            raise ValueError("conditional_statistical_parity needs feature_index and threshold")
        return self


class KernelSection(_Section):
    kind: KernelKind = KernelKind.GAUSSIAN
    bandwidth: float = Field(default=1.0, gt=0.0)
    scale: float = Field(default=1.0, gt=0.0)


class DPSection(_Section):
    kind: Literal["none", "gaussian", "laplacian"] = "none"
    scale: float = Field(default=0.0, ge=0.0)
    clip: tuple[float, float] = (0.0, 1.0)

    @model_validator(mode="after")
    def _check_scale(self) -> DPSection:
        if self.kind != "none" and self.scale <= 0:
            raise ValueError(f"{self.kind} mechanism needs a positive scale")
        if not self.clip[0] < self.clip[1]:
            raise ValueError("clip must satisfy lo < hi")
        return self


class CentralizedSection(_Section):
    epochs: int = Field(default=1000, ge=1)
    step: float = Field(default=0.05, gt=0.0)
    record_every: int = Field(default=10, ge=0)


class RunConfigFile(_Section):
    trainer: Trainer = Trainer.ALGORITHM1
    seed: int = Field(default=0, ge=0)
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    federation: FederationSection = Field(default_factory=FederationSection)
    fairness: FairnessSection = Field(default_factory=FairnessSection)
    kernel: KernelSection = Field(default_factory=KernelSection)
    dp: DPSection = Field(default_factory=DPSection)
    centralized: CentralizedSection = Field(default_factory=CentralizedSection)

    # --- domain objects ---------------------------------------------------

    def fairness_spec(self) -> FairnessSpec:
        return FairnessSpec(
            criterion=self.fairness.criterion,
            feature_index=self.fairness.feature_index,
            threshold=self.fairness.threshold,
        )

    def build_kernel(self) -> Kernel:
        return make_kernel(self.kernel.kind, bandwidth=self.kernel.bandwidth, scale=self.kernel.scale)

    def dp_mechanism(self) -> DPMechanism:
        return DPMechanism(kind=self.dp.kind, scale=self.dp.scale, clip_range=self.dp.clip, seed=self.seed)

    def synthetic_spec(self) -> SyntheticSpec:
        sizes = self.data.samples_per_client
        return SyntheticSpec(
            n_clients=self.data.n_clients,
            samples_per_client=tuple(sizes) if isinstance(sizes, list) else sizes,
            dim=self.data.dim,
            heterogeneity=self.data.heterogeneity,
            rng_seed=self.data.data_seed if self.data.data_seed is not None else self.seed,
            weights=tuple(self.data.weights) if self.data.weights is not None else None,
        )

    def fed_run_config(self) -> FedRunConfig:
        fed = self.federation
        return FedRunConfig(
            rounds=fed.rounds,
            local_epochs=fed.local_epochs,
            local_step=fed.local_step,
            global_step=fed.global_step,
            clients_per_round=fed.clients_per_round,
            lam=self.fairness.lam,
            set_size=fed.set_size,
            batch_size=fed.batch_size,
            step_decay=fed.step_decay,
            seed=self.seed,
            fairness=self.fairness_spec(),
            kernel=self.build_kernel(),
            dp=self.dp_mechanism(),
            architecture=self.model.architecture,
            hidden_units=self.model.hidden_units,
            weighted_aggregation=fed.weighted_aggregation,
        )

    def centralized_config(self) -> CentralizedConfig:
        return CentralizedConfig(
            epochs=self.centralized.epochs, step=self.centralized.step, record_every=self.centralized.record_every
        )

    # --- variants ---------------------------------------------------------

    def with_seed(self, seed: int) -> RunConfigFile:
        return self.model_copy(update={"seed": seed})

    def with_lambda(self, lam: float) -> RunConfigFile:
        return self.model_copy(update={"fairness": self.fairness.model_copy(update={"lam": float(lam)})})

    def with_trainer(self, trainer: Trainer | str) -> RunConfigFile:
        return self.model_copy(update={"trainer": Trainer(trainer)})

    def with_set_size(self, set_size: int) -> RunConfigFile:
        return self.model_copy(update={"federation": self.federation.model_copy(update={"set_size": set_size})})

    def with_heterogeneity(self, alpha: float) -> RunConfigFile:
        return self.model_copy(update={"data": self.data.model_copy(update={"heterogeneity": float(alpha)})})

    # --- serialization ----------------------------------------------------

    def resolved_json(self) -> str:
        """Every field, defaults included; a valid config file in its own right."""
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"

    def config_hash(self) -> str:
        """Hash of the resolved config with the seed left out, so seeds of one setting share a prefix."""
        payload = self.model_dump(mode="json")
        payload.pop("seed")
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _field_path(error: ErrorDetails) -> str:
    return ".".join(str(part) for part in error["loc"])


def parse_config(text: str, source: str = "<config>") -> RunConfigFile:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    try:
        return RunConfigFile.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = _field_path(first) or "<root>"
        raise ConfigurationError(f"{source}: {path}: {first['msg']}", field=path) from exc


def load_config(path: str | PathLike[str]) -> RunConfigFile:
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {config_path}: {exc.strerror}", field="config") from exc
    config = parse_config(text, source=str(config_path))
    logger.debug("path=<%s>, hash=<%s> | loaded config", config_path, config.config_hash())
    return config
