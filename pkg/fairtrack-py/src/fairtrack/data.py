"""Datasets, synthetic generators, CSV ingestion and client partitioning.

A :class:`TabularDataset` is the unit of data: features, binary labels and a
binary protected attribute. A :class:`ClientShard` is a dataset owned by one
client together with its mixture weight ``weight`` (ν_k). A
:class:`Federation` pairs the training and test shards of every client.

All values are immutable after construction; arrays are flagged read-only.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from os import PathLike
from pathlib import Path

import numpy as np
import pandas as pd

from ._runtime import Stream, rng_for
from .errors import ConfigurationError, DataValidationError, EmptyFederationError

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _is_binary(values: np.ndarray) -> bool:
    return bool(np.all((values == 0) | (values == 1)))


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Feature matrix with binary labels and a binary protected attribute."""

    features: np.ndarray
    labels: np.ndarray
    protected: np.ndarray

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64, copy=True)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2:
            raise DataValidationError(f"features must be a matrix; got shape {features.shape}")
        labels = np.asarray(self.labels)
        protected = np.asarray(self.protected)
        n = features.shape[0]
        if n < 1:
            raise DataValidationError("dataset must contain at least one sample")
        if labels.shape != (n,) or protected.shape != (n,):
            raise DataValidationError(
                f"features, labels and protected must have equal length; got {n}, {labels.shape}, {protected.shape}"
            )
        if not _is_binary(labels):
            raise DataValidationError("labels must contain only 0 or 1")
        if not _is_binary(protected):
            raise DataValidationError("protected attribute must contain only 0 or 1")
        if not np.all(np.isfinite(features)):
            raise DataValidationError("features must be finite")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))
        object.__setattr__(self, "protected", _frozen(protected.astype(np.int64)))

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, index: np.ndarray) -> TabularDataset:
        return TabularDataset(
            features=self.features[index],
            labels=self.labels[index],
            protected=self.protected[index],
        )

    def group_counts(self) -> tuple[int, int]:
        ones = int(self.protected.sum())
        return self.n_samples - ones, ones

    @classmethod
    def concatenate(cls, parts: Sequence[TabularDataset]) -> TabularDataset:
        if not parts:
            raise DataValidationError("cannot concatenate zero datasets")
        return cls(
            features=np.vstack([p.features for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            protected=np.concatenate([p.protected for p in parts]),
        )


@dataclass(frozen=True, eq=False)
class ClientShard:
    """A client's dataset and its mixture weight ν_k."""

    dataset: TabularDataset
    weight: float
    client_id: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.weight <= 1.0:
            raise DataValidationError(
                f"client_id=<{self.client_id}>, weight=<{self.weight}> | weight must be in [0, 1]"
            )


def _check_weights(shards: Sequence[ClientShard]) -> None:
    total = float(np.sum([s.weight for s in shards]))
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        raise DataValidationError(f"client weights must sum to 1; got {total!r}")


def _size_weights(sizes: Sequence[int]) -> np.ndarray:
    sizes_arr = np.asarray(sizes, dtype=np.float64)
    return sizes_arr / sizes_arr.sum()


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the Gaussian-mixture synthetic federation.

    ``samples_per_client`` is either one count shared by all clients or one
    count per client. ``weights`` overrides the default size-proportional ν_k.
    """

    n_clients: int = 10
    samples_per_client: int | tuple[int, ...] = 200
    dim: int = 10
    heterogeneity: float = 1.0
    rng_seed: int = 0
    weights: tuple[float, ...] | None = None

    def client_sizes(self) -> tuple[int, ...]:
        if isinstance(self.samples_per_client, int):
            return (self.samples_per_client,) * self.n_clients
        return tuple(self.samples_per_client)


def _validate_synthetic(spec: SyntheticSpec) -> None:
    if spec.n_clients < 1:
        raise ConfigurationError("n_clients must be at least 1", field="n_clients")
    if spec.dim < 1:
        raise ConfigurationError("dim must be at least 1", field="dim")
    sizes = spec.client_sizes()
    if len(sizes) != spec.n_clients:
        raise ConfigurationError(
            f"samples_per_client lists {len(sizes)} sizes for {spec.n_clients} clients", field="samples_per_client"
        )
    if any(s < 1 for s in sizes):
        raise ConfigurationError("samples_per_client must be at least 1", field="samples_per_client")
    if not 0.5 <= spec.heterogeneity <= 1.0:
        raise ConfigurationError(
            f"heterogeneity must be in [0.5, 1]; got {spec.heterogeneity}", field="heterogeneity"
        )
    if spec.weights is not None and len(spec.weights) != spec.n_clients:
        raise ConfigurationError("weights must list one value per client", field="weights")


def group_mean_sign(client_id: int, group: int) -> int:
    """Sign of every entry of µ(k, a): +1 when ``k + a`` is even, -1 otherwise."""
    return 1 if (client_id + group) % 2 == 0 else -1


def generate_synthetic(spec: SyntheticSpec) -> list[ClientShard]:
    """Sample the synthetic federation.

    Per client ``k``: ``A ~ Bernoulli(1/2)``, ``X ~ α N(µ(k,A), I) + (1-α) N(µ(k,1-A), I)``
    and ``Y = 1[1ᵀX > 0]``. At ``α = 1`` each group has its own client-specific
    mean; at ``α = 0.5`` both groups share one distribution.
    """
    _validate_synthetic(spec)
    sizes = spec.client_sizes()
    weights = np.asarray(spec.weights, dtype=np.float64) if spec.weights is not None else _size_weights(sizes)

    shards: list[ClientShard] = []
    for k, n in enumerate(sizes):
        rng = rng_for(spec.rng_seed, Stream.SYNTHETIC, k)
        protected = rng.integers(0, 2, size=n)
        own_component = rng.random(n) < spec.heterogeneity
        component = np.where(own_component, protected, 1 - protected)
        signs = np.where((k + component) % 2 == 0, 1.0, -1.0)
        features = signs[:, None] + rng.standard_normal((n, spec.dim))
        labels = (features.sum(axis=1) > 0).astype(np.int64)
        dataset = TabularDataset(features=features, labels=labels, protected=protected)
        shards.append(ClientShard(dataset=dataset, weight=float(weights[k]), client_id=k))
    _check_weights(shards)
    return shards


def _read_frame(path: str | PathLike[str], columns: Sequence[str]) -> pd.DataFrame:
    csv_path = Path(path)
    if not csv_path.exists():
        raise ConfigurationError(f"csv file not found: {csv_path}", field="path")
    try:
        frame = pd.read_csv(csv_path, encoding="utf-8", na_values=["?"])
    except (UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataValidationError(f"path=<{csv_path}> | cannot parse csv: {exc}") from exc
    for col in columns:
        if col not in frame.columns:
            raise ConfigurationError(f"column {col!r} not found in {csv_path.name}", field=col)
    selected = frame[list(dict.fromkeys(columns))]
    complete = selected.dropna()
    dropped = len(selected) - len(complete)
    if dropped:
        logger.warning("path=<%s>, dropped_rows=<%d> | dropped rows with missing values", csv_path, dropped)
    if complete.empty:
        raise DataValidationError(f"no complete rows left in {csv_path.name}")
    return complete.reset_index(drop=True)


def _binary_column(values: pd.Series, name: str, threshold: float | None) -> np.ndarray:
    numeric = pd.to_numeric(values, errors="coerce")
    if numeric.isna().any():
        raise DataValidationError(f"column {name!r} must be numeric")
    arr = numeric.to_numpy(dtype=np.float64)
    if threshold is not None:
        return (arr > threshold).astype(np.int64)
    if not _is_binary(arr):
        raise DataValidationError(f"column {name!r} is not binary; pass a threshold")
    return arr.astype(np.int64)


def _dataset_from_frame(
    frame: pd.DataFrame,
    feature_cols: Sequence[str],
    label_col: str,
    protected_col: str,
    protected_threshold: float | None,
    label_threshold: float | None,
) -> TabularDataset:
    try:
        features = frame[list(feature_cols)].apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise DataValidationError(f"feature columns must be numeric: {exc}") from exc
    return TabularDataset(
        features=features,
        labels=_binary_column(frame[label_col], label_col, label_threshold),
        protected=_binary_column(frame[protected_col], protected_col, protected_threshold),
    )


def load_csv(
    path: str | PathLike[str],
    feature_cols: Sequence[str],
    label_col: str,
    protected_col: str,
    protected_threshold: float | None = None,
    *,
    label_threshold: float | None = None,
) -> TabularDataset:
    """Read a headered, comma-separated UTF-8 file into a dataset.

    ``protected`` becomes ``1[column > protected_threshold]`` when a threshold
    is given, otherwise the column must already be binary. Rows with a missing
    value in any used column are dropped and the count is logged.
    """
    frame = _read_frame(path, [*feature_cols, label_col, protected_col])
    return _dataset_from_frame(frame, feature_cols, label_col, protected_col, protected_threshold, label_threshold)


def load_csv_with_groups(
    path: str | PathLike[str],
    feature_cols: Sequence[str],
    label_col: str,
    protected_col: str,
    group_col: str,
    protected_threshold: float | None = None,
    *,
    label_threshold: float | None = None,
) -> tuple[TabularDataset, np.ndarray]:
    """Like :func:`load_csv`, also returning the ``group_col`` values aligned with the kept rows."""
    frame = _read_frame(path, [*feature_cols, label_col, protected_col, group_col])
    dataset = _dataset_from_frame(frame, feature_cols, label_col, protected_col, protected_threshold, label_threshold)
    return dataset, frame[group_col].to_numpy()


def partition_by_column(
    dataset: TabularDataset,
    group_col_values: Sequence[object] | np.ndarray,
    min_shard_size: int = 1,
) -> list[ClientShard]:
    """Split ``dataset`` into one shard per distinct group value.

    Groups with fewer than ``min_shard_size`` rows are dropped; ν_k is
    proportional to shard size over the kept shards.
    """
    groups = np.asarray(group_col_values)
    if groups.shape != (dataset.n_samples,):
        raise DataValidationError(f"group values must align with {dataset.n_samples} rows; got shape {groups.shape}")
    values, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    kept = [i for i, c in enumerate(counts) if c >= min_shard_size]
    dropped = len(values) - len(kept)
    if dropped:
        logger.warning(
            "dropped_shards=<%d>, min_shard_size=<%d> | dropped groups below the minimum size", dropped, min_shard_size
        )
    if not kept:
        raise EmptyFederationError(f"every group has fewer than {min_shard_size} rows")
    weights = _size_weights([int(counts[i]) for i in kept])
    shards = [
        ClientShard(dataset=dataset.subset(np.flatnonzero(inverse == g)), weight=float(weights[k]), client_id=k)
        for k, g in enumerate(kept)
    ]
    _check_weights(shards)
    return shards


def train_test_split(shard: ClientShard, test_fraction: float = 0.25, seed: int = 0) -> tuple[ClientShard, ClientShard]:
    """Split one shard into train and test parts; both keep the shard's weight."""
    n = shard.dataset.n_samples
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must be in (0, 1)", field="test_fraction")
    if n < 2:
        raise DataValidationError(f"client_id=<{shard.client_id}> | need at least 2 samples to split")
    n_test = min(n - 1, max(1, int(round(n * test_fraction))))
    order = rng_for(seed, Stream.SPLIT, shard.client_id).permutation(n)
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    return (
        replace(shard, dataset=shard.dataset.subset(train_idx)),
        replace(shard, dataset=shard.dataset.subset(test_idx)),
    )


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-feature z-scoring; constant features are left centred but unscaled."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> Standardizer:
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        return cls(mean=_frozen(mean), scale=_frozen(np.where(std > 0, std, 1.0)))

    def transform(self, dataset: TabularDataset) -> TabularDataset:
        return replace(dataset, features=(dataset.features - self.mean) / self.scale)


@dataclass(frozen=True, eq=False)
class Federation:
    """Training and test shards of every client, aligned by position."""

    train: tuple[ClientShard, ...]
    test: tuple[ClientShard, ...]
    standardizer: Standardizer | None = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        if not self.train:
            raise EmptyFederationError("federation has no clients")
        if len(self.train) != len(self.test):
            raise DataValidationError("train and test shard lists must have equal length")
        for tr, te in zip(self.train, self.test):
            if tr.client_id != te.client_id or tr.weight != te.weight:
                raise DataValidationError(f"client_id=<{tr.client_id}> | train and test shards are misaligned")
        dims = {s.dataset.dim for s in (*self.train, *self.test)}
        if len(dims) != 1:
            raise DataValidationError(f"all shards must share one feature dimension; got {sorted(dims)}")
        _check_weights(self.train)

    @classmethod
    def from_shards(
        cls,
        shards: Sequence[ClientShard],
        *,
        test_fraction: float = 0.25,
        seed: int = 0,
        standardize: bool = False,
    ) -> Federation:
        pairs = [train_test_split(s, test_fraction, seed) for s in shards]
        federation = cls(train=tuple(p[0] for p in pairs), test=tuple(p[1] for p in pairs))
        return federation.standardized() if standardize else federation

    def standardized(self) -> Federation:
        """Z-score every shard with statistics of the pooled training features."""
        scaler = Standardizer.fit(np.vstack([s.dataset.features for s in self.train]))

        def apply(shards: tuple[ClientShard, ...]) -> tuple[ClientShard, ...]:
            return tuple(replace(s, dataset=scaler.transform(s.dataset)) for s in shards)

        return Federation(train=apply(self.train), test=apply(self.test), standardizer=scaler)

    @property
    def n_clients(self) -> int:
        return len(self.train)

    @property
    def dim(self) -> int:
        return self.train[0].dataset.dim

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.train], dtype=np.float64)

    def shards(self, split: str) -> tuple[ClientShard, ...]:
        if split == "train":
            return self.train
        if split == "test":
            return self.test
        raise ValueError(f"split=<{split}> | expected 'train' or 'test'")

    def pooled(self, split: str = "train") -> tuple[TabularDataset, np.ndarray]:
        """Concatenate a split and return per-sample weights ν_k / n_k.

        Weighted averages over the pooled rows then equal the ν-mixture of the
        client distributions, whatever the client sizes.
        """
        shards = self.shards(split)
        pooled = TabularDataset.concatenate([s.dataset for s in shards])
        weights = np.concatenate([np.full(s.dataset.n_samples, s.weight / s.dataset.n_samples) for s in shards])
        return pooled, weights
