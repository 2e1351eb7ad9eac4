"""MMD-based group fairness.

The regularizer is the squared MMD between the score distributions of the two
protected groups, evaluated per conditioning set ``𝒞_j`` of the chosen
criterion. Because MMD² is not a weighted sum of per-client terms, the server
broadcasts sampled score sets ``𝒴_{a,j}``; each client then works with the
auxiliary function

    C(z; 𝒴₀, 𝒴₁) = mean_{y∈𝒴₀} κ(z, y) - mean_{y∈𝒴₁} κ(z, y)

whose derivative ``C'`` yields the client gradient in :func:`grad_fk`.

Empirical MMD² is the V-statistic (diagonal terms included). Samples are
sorted before any kernel sum and the outer reduction uses :func:`math.fsum`,
so results do not depend on the order of samples within a group.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import TabularDataset
from .errors import ConfigurationError, DegenerateGroupError
from .kernels import Kernel
from .models import Model, loss_derivative, per_sample_loss

logger = logging.getLogger(__name__)

GROUPS = (0, 1)


class Criterion(str, Enum):
    STATISTICAL_PARITY = "statistical_parity"
    EQUAL_OPPORTUNITY = "equal_opportunity"
    EQUALIZED_ODDS = "equalized_odds"
    RISK_PARITY = "risk_parity"
    CONDITIONAL_STATISTICAL_PARITY = "conditional_statistical_parity"
    PREDICTIVE_EQUALITY = "predictive_equality"


@dataclass(frozen=True)
class ConditioningSet:
    """``𝒞_j``: an optional label restriction and an optional feature half-space ``x[i] > t``."""

    name: str
    label: int | None = None
    feature_index: int | None = None
    threshold: float | None = None

    def mask(self, dataset: TabularDataset) -> np.ndarray:
        rows = np.ones(dataset.n_samples, dtype=bool)
        if self.label is not None:
            rows &= dataset.labels == self.label
        if self.feature_index is not None and self.threshold is not None:
            rows &= dataset.features[:, self.feature_index] > self.threshold
        return rows


@dataclass(frozen=True)
class FairnessSpec:
    """Fairness criterion with its score function and conditioning sets.

    ``feature_index`` and ``threshold`` define ``𝒳_s`` for conditional
    statistical parity and are ignored otherwise.
    """

    criterion: Criterion = Criterion.STATISTICAL_PARITY
    feature_index: int | None = None
    threshold: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        if self.criterion is Criterion.CONDITIONAL_STATISTICAL_PARITY and (
            self.feature_index is None or self.threshold is None
        ):
            raise ConfigurationError(
                "conditional_statistical_parity needs feature_index and threshold", field="feature_index"
            )

    @property
    def uses_loss_score(self) -> bool:
        return self.criterion is Criterion.RISK_PARITY

    @property
    def conditioning_sets(self) -> tuple[ConditioningSet, ...]:
        match self.criterion:
            case Criterion.STATISTICAL_PARITY | Criterion.RISK_PARITY:
                return (ConditioningSet("all"),)
            case Criterion.EQUAL_OPPORTUNITY:
                return (ConditioningSet("y=1", label=1),)
            case Criterion.PREDICTIVE_EQUALITY:
                return (ConditioningSet("y=0", label=0),)
            case Criterion.EQUALIZED_ODDS:
                return (ConditioningSet("y=0", label=0), ConditioningSet("y=1", label=1))
            case Criterion.CONDITIONAL_STATISTICAL_PARITY:
                return (ConditioningSet("x_s", feature_index=self.feature_index, threshold=self.threshold),)

    @property
    def n_sets(self) -> int:
        return len(self.conditioning_sets)

    def scores(self, predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """``S(ŷ, y)``: the prediction itself, or the clamped loss for risk parity."""
        if self.uses_loss_score:
            return per_sample_loss(predictions, labels)
        return predictions

    def group_masks(self, dataset: TabularDataset) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per set ``j``: row masks of ``{A=0, 𝒞_j}`` and ``{A=1, 𝒞_j}``."""
        masks = []
        for cset in self.conditioning_sets:
            in_set = cset.mask(dataset)
            masks.append((in_set & (dataset.protected == 0), in_set & (dataset.protected == 1)))
        return masks


def _frozen_sorted(values: np.ndarray | Sequence[float]) -> np.ndarray:
    arr = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PredictionSets:
    """Score sets ``𝒴_{a,j}`` broadcast in round ``round``.

    Sets are kept sorted; only their multiset matters. ``excluded`` lists the
    conditioning sets left out because some group is globally empty there.
    """

    sets: Mapping[tuple[int, int], np.ndarray]
    n_sets: int
    round: int = 0
    excluded: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sets", {key: _frozen_sorted(v) for key, v in self.sets.items()})
        object.__setattr__(self, "excluded", frozenset(self.excluded))

    @classmethod
    def from_scores(
        cls,
        scores: Mapping[tuple[int, int], np.ndarray | Sequence[float]],
        n_sets: int,
        round: int = 0,
    ) -> PredictionSets:
        """Build sets, excluding every ``j`` where either group has no score."""
        excluded = frozenset(
            j for j in range(n_sets) if any(len(scores.get((a, j), ())) == 0 for a in GROUPS)
        )
        kept = {key: np.asarray(v) for key, v in scores.items() if key[1] not in excluded}
        return cls(sets=kept, n_sets=n_sets, round=round, excluded=excluded)

    @property
    def active_sets(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.n_sets) if j not in self.excluded)

    def get(self, group: int, j: int) -> np.ndarray:
        values = self.sets.get((group, j))
        if values is None or values.size == 0:
            raise DegenerateGroupError(f"group=<{group}>, set=<{j}> | prediction set is empty")
        return values

    def pair(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        return self.get(0, j), self.get(1, j)

    def sizes(self) -> dict[tuple[int, int], int]:
        return {key: int(v.size) for key, v in self.sets.items()}


@dataclass(frozen=True, eq=False)
class AlphaWeights:
    """``α_{k,j}^a`` as an array of shape ``(K, 2, J)``.

    ``active[a, j]`` is False where the global count of ``{A=a, 𝒞_j}`` is zero.
    """

    values: np.ndarray
    active: np.ndarray

    def for_client(self, index: int) -> np.ndarray:
        return self.values[index]

    @property
    def n_clients(self) -> int:
        return int(self.values.shape[0])


def alpha_from_counts(counts: np.ndarray, sizes: np.ndarray, weights: np.ndarray) -> AlphaWeights:
    """``α_{k,j}^a = (n_{k,a,j}/n_k) / Σ_k' ν_k' n_{k',a,j}/n_k'`` from group counts of shape ``(K, 2, J)``."""
    local = counts / sizes[:, None, None].astype(np.float64)
    global_rate = np.tensordot(weights, local, axes=1)
    active = global_rate > 0
    safe = np.where(active, global_rate, 1.0)
    values = np.where(active[None, :, :], local / safe[None, :, :], 0.0)
    values.setflags(write=False)
    active.setflags(write=False)
    return AlphaWeights(values=values, active=active)


def unit_alpha(n_sets: int) -> np.ndarray:
    return np.ones((2, n_sets), dtype=np.float64)


@dataclass
class FairnessDiagnostics:
    """Counters collected while computing client gradients."""

    empty_group_batches: int = 0

    def merge(self, other: FairnessDiagnostics) -> None:
        self.empty_group_batches += other.empty_group_batches


# --- MMD ------------------------------------------------------------------


def _sorted_with_weights(values: np.ndarray, weights: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
    if weights is None:
        return np.sort(values), None
    order = np.lexsort((weights, values))
    return values[order], weights[order]


def _mean_kernel(kernel: Kernel, x: np.ndarray, wx: np.ndarray | None, y: np.ndarray, wy: np.ndarray | None) -> float:
    gram = kernel.gram(x, y)
    if wx is None or wy is None:
        return math.fsum(gram.sum(axis=1)) / (x.size * y.size)
    rows = (gram * wy[None, :]).sum(axis=1)
    return math.fsum(wx * rows) / (wx.sum() * wy.sum())


def mmd_squared(
    sample0: np.ndarray | Sequence[float],
    sample1: np.ndarray | Sequence[float],
    kernel: Kernel,
    weights0: np.ndarray | None = None,
    weights1: np.ndarray | None = None,
) -> float:
    """V-statistic ``MMD²`` between two scalar samples.

    Optional non-negative weights turn each sample into a weighted empirical
    measure; both weight vectors must be given together.
    """
    x = np.asarray(sample0, dtype=np.float64).reshape(-1)
    y = np.asarray(sample1, dtype=np.float64).reshape(-1)
    if x.size == 0 or y.size == 0:
        raise DegenerateGroupError("mmd needs two non-empty samples")
    if (weights0 is None) != (weights1 is None):
        raise ValueError("pass both weight vectors or neither")
    x, wx = _sorted_with_weights(x, None if weights0 is None else np.asarray(weights0, dtype=np.float64))
    y, wy = _sorted_with_weights(y, None if weights1 is None else np.asarray(weights1, dtype=np.float64))
    within = _mean_kernel(kernel, x, wx, x, wx) + _mean_kernel(kernel, y, wy, y, wy)
    return within - 2.0 * _mean_kernel(kernel, x, wx, y, wy)


def c_function(
    z: float,
    set0: np.ndarray | Sequence[float],
    set1: np.ndarray | Sequence[float],
    kernel: Kernel,
) -> float:
    """``C(z; 𝒴₀, 𝒴₁)``, averaged with compensated summation."""
    y0 = np.sort(np.asarray(set0, dtype=np.float64).reshape(-1))
    y1 = np.sort(np.asarray(set1, dtype=np.float64).reshape(-1))
    if y0.size == 0 or y1.size == 0:
        raise DegenerateGroupError("c_function needs two non-empty prediction sets")
    return math.fsum(kernel.gram(z, y0)[0]) / y0.size - math.fsum(kernel.gram(z, y1)[0]) / y1.size


def c_values(z: np.ndarray, set0: np.ndarray, set1: np.ndarray, kernel: Kernel) -> np.ndarray:
    """Vectorized ``C`` at every entry of ``z`` for already sorted sets."""
    return kernel.gram(z, set0).sum(axis=1) / set0.size - kernel.gram(z, set1).sum(axis=1) / set1.size


def c_derivative(z: np.ndarray, set0: np.ndarray, set1: np.ndarray, kernel: Kernel) -> np.ndarray:
    """``C'(z) = mean_{𝒴₀} κ⁽¹⁾(z, y) - mean_{𝒴₁} κ⁽¹⁾(z, y)`` at every entry of ``z``."""
    return (
        kernel.grad1_matrix(z, set0).sum(axis=1) / set0.size - kernel.grad1_matrix(z, set1).sum(axis=1) / set1.size
    )


# --- Client functions -----------------------------------------------------


def grad_fk(
    model: Model,
    batch: TabularDataset,
    alpha: np.ndarray,
    sets: PredictionSets,
    spec: FairnessSpec,
    kernel: Kernel,
    diagnostics: FairnessDiagnostics | None = None,
) -> np.ndarray:
    """Gradient of the client function ``Σ_j f_k^j(θ; 𝒴_{0,j}, 𝒴_{1,j})`` on ``batch``.

    ``alpha`` is the client's ``(2, J)`` slice of :class:`AlphaWeights`. The
    prediction sets are treated as constants. Rows of a group absent from the
    batch contribute nothing and are counted in ``diagnostics``.
    """
    predictions = model.predict_batch(batch.features)
    scores = spec.scores(predictions, batch.labels)
    cotangent = np.zeros(batch.n_samples)
    masks = spec.group_masks(batch)
    for j in sets.active_sets:
        set0, set1 = sets.pair(j)
        for a, rows in zip(GROUPS, masks[j]):
            count = int(rows.sum())
            if count == 0:
                if diagnostics is not None:
                    diagnostics.empty_group_batches += 1
                logger.debug("group=<%d>, set=<%d> | batch has no rows for group", a, j)
                continue
            weight = 2.0 * alpha[a, j] / count
            if a == 1:
                weight = -weight
            cotangent[rows] += weight * c_derivative(scores[rows], set0, set1, kernel)
    if spec.uses_loss_score:
        cotangent *= loss_derivative(predictions, batch.labels)
    return model.backward(batch.features, cotangent)


def fk_value(
    model: Model,
    batch: TabularDataset,
    alpha: np.ndarray,
    sets: PredictionSets,
    spec: FairnessSpec,
    kernel: Kernel,
) -> float:
    """The scalar whose θ-gradient :func:`grad_fk` returns (sets held fixed)."""
    scores = spec.scores(model.predict_batch(batch.features), batch.labels)
    masks = spec.group_masks(batch)
    total = 0.0
    for j in sets.active_sets:
        set0, set1 = sets.pair(j)
        for a, rows in zip(GROUPS, masks[j]):
            if not rows.any():
                continue
            sign = 1.0 if a == 0 else -1.0
            total += sign * 2.0 * alpha[a, j] * float(c_values(scores[rows], set0, set1, kernel).mean())
    return total


def shard_scores(model: Model, dataset: TabularDataset, spec: FairnessSpec) -> np.ndarray:
    """Score of every row of ``dataset``. Row subsets index into this array rather than re-predicting."""
    return spec.scores(model.predict_batch(dataset.features), dataset.labels)


def own_prediction_sets(model: Model, dataset: TabularDataset, spec: FairnessSpec, round: int = 0) -> PredictionSets:
    """Every score of ``dataset`` as its own prediction set."""
    scores = shard_scores(model, dataset, spec)
    collected = {}
    for j, (rows0, rows1) in enumerate(spec.group_masks(dataset)):
        collected[(0, j)] = scores[rows0]
        collected[(1, j)] = scores[rows1]
    return PredictionSets.from_scores(collected, spec.n_sets, round=round)


def mmd_squared_gradient(
    model: Model,
    dataset: TabularDataset,
    spec: FairnessSpec,
    kernel: Kernel,
    diagnostics: FairnessDiagnostics | None = None,
) -> np.ndarray:
    """Exact gradient of ``Σ_j MMD²_j`` between the groups of ``dataset``.

    Sets where a group is missing are skipped and counted in ``diagnostics``.
    """
    sets = own_prediction_sets(model, dataset, spec)
    if diagnostics is not None:
        diagnostics.empty_group_batches += len(sets.excluded)
    return grad_fk(model, dataset, unit_alpha(spec.n_sets), sets, spec, kernel)


# --- Metrics --------------------------------------------------------------


def sp_unfairness(model: Model, dataset: TabularDataset, sample_weights: np.ndarray | None = None) -> float:
    """``|P(ŷ=1 | A=0) - P(ŷ=1 | A=1)|`` with ``ŷ = 1[hθ(x) ≥ 0.5]``."""
    positive = (model.predict_batch(dataset.features) >= 0.5).astype(np.float64)
    w = np.ones(dataset.n_samples) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    rates = []
    for a in GROUPS:
        rows = dataset.protected == a
        if not rows.any():
            raise DegenerateGroupError(f"group=<{a}> | sp unfairness needs both groups")
        rates.append(float(np.dot(w[rows], positive[rows]) / w[rows].sum()))
    return abs(rates[0] - rates[1])


def mmd_by_set(
    model: Model,
    dataset: TabularDataset,
    spec: FairnessSpec,
    kernel: Kernel,
    sample_weights: np.ndarray | None = None,
) -> list[float | None]:
    """``MMD²`` per conditioning set; ``None`` where a group is empty."""
    scores = spec.scores(model.predict_batch(dataset.features), dataset.labels)
    values: list[float | None] = []
    for rows0, rows1 in spec.group_masks(dataset):
        if not rows0.any() or not rows1.any():
            values.append(None)
            continue
        if sample_weights is None:
            values.append(mmd_squared(scores[rows0], scores[rows1], kernel))
        else:
            values.append(
                mmd_squared(scores[rows0], scores[rows1], kernel, sample_weights[rows0], sample_weights[rows1])
            )
    return values


def regularizer_value(per_set: Sequence[float | None]) -> float:
    """Training regularizer: the sum of ``MMD²`` over the populated sets."""
    return math.fsum(v for v in per_set if v is not None)


def mmd_unfairness(
    model: Model,
    dataset: TabularDataset,
    spec: FairnessSpec,
    kernel: Kernel,
    sample_weights: np.ndarray | None = None,
) -> float:
    """Reported unfairness: ``max_j sqrt(MMD²_j)``."""
    values = [v for v in mmd_by_set(model, dataset, spec, kernel, sample_weights) if v is not None]
    if not values:
        raise DegenerateGroupError("no conditioning set has both groups populated")
    return max(math.sqrt(max(v, 0.0)) for v in values)


def audit_epsilon_fairness(
    model: Model,
    dataset: TabularDataset,
    spec: FairnessSpec,
    kernel: Kernel,
    epsilon: float,
) -> dict[str, tuple[float, bool]]:
    """Per conditioning set: ``(sqrt(MMD²), sqrt(MMD²) ≤ ε)``; unpopulated sets are omitted."""
    report = {}
    for cset, value in zip(spec.conditioning_sets, mmd_by_set(model, dataset, spec, kernel)):
        if value is None:
            continue
        distance = math.sqrt(max(value, 0.0))
        report[cset.name] = (distance, distance <= epsilon)
    return report


def decomposition_counterexample_check(kernel: Kernel) -> tuple[float, float]:
    """Two clients whose local group distributions are swapped.

    Client 1 scores group 0 at 0 and group 1 at 1; client 2 the reverse, and
    ``ν = (½, ½)``. The global group mixtures coincide, so the global MMD² is
    zero, while the ν-weighted sum of local MMD² is positive. Returns
    ``(global, Σ_k ν_k local_k)``.
    """
    nu = np.array([0.5, 0.5])
    client_groups = [(np.array([0.0]), np.array([1.0])), (np.array([1.0]), np.array([0.0]))]
    mixture0 = np.concatenate([g0 for g0, _ in client_groups])
    mixture1 = np.concatenate([g1 for _, g1 in client_groups])
    lhs = mmd_squared(mixture0, mixture1, kernel, weights0=nu.copy(), weights1=nu.copy())
    rhs = math.fsum(nu[k] * mmd_squared(g0, g1, kernel) for k, (g0, g1) in enumerate(client_groups))
    return lhs, rhs
