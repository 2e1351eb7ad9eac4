"""MMD-fair federated averaging.

One communication round:

1. the server builds the prediction sets ``𝒴_{a,j}`` from ``θᵗ`` by asking
   clients for scores (:func:`build_prediction_sets`) and protects them if a
   noise mechanism is configured
2. it samples ``S`` clients uniformly without replacement and broadcasts
   ``θᵗ`` with the sets (:class:`~fairtrack.types.RoundBroadcast`)
3. each sampled client runs ``E`` local SGD steps on
   ``L + λ Σ_j f_k^j`` (:meth:`Client.local_update`)
4. the server averages the returned parameters (:func:`aggregate`)

The group weights ``α`` are computed once, before round 1, from group counts
only. Everything crossing the client/server boundary is one of the message
types in :mod:`fairtrack.types`.

A run is a pure function of the federation and the config: every random draw
comes from a stream keyed by ``(seed, purpose, round, ...)``, and client
updates are reduced in client-id order whatever the worker count.
"""

from __future__ import annotations

import hashlib
import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Protocol

import numpy as np

from ._runtime import ClientPool, Stream, rng_for
from .data import ClientShard, Federation, TabularDataset
from .dp import NO_PRIVACY, DPMechanism, protect
from .errors import ConfigurationError, DimensionMismatchError, FairtrackError, RoundFailedError
from .fairness import (
    GROUPS,
    AlphaWeights,
    Criterion,
    FairnessDiagnostics,
    FairnessSpec,
    PredictionSets,
    alpha_from_counts,
    grad_fk,
    mmd_by_set,
    regularizer_value,
    shard_scores,
    sp_unfairness,
)
from .kernels import GaussianKernel, Kernel
from .models import DEFAULT_HIDDEN_UNITS, Architecture, Model, accuracy, grad_task_loss, init_model, task_loss
from .types import GroupCountsReport, ModelUpdate, RoundBroadcast, ScoreReport, ScoreRequest, ScoreSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FedRunConfig:
    """Hyperparameters of one federated run.

    ``local_epochs`` is the number ``E`` of local SGD steps per round.
    ``clients_per_round=None`` samples every client. In round ``t`` the local
    step is ``local_step * step_decay ** (t - 1)``.
    """

    rounds: int = 100
    local_epochs: int = 50
    local_step: float = 0.05
    global_step: float = 1.0
    clients_per_round: int | None = None
    lam: float = 0.0
    set_size: int = 100
    batch_size: int = 100
    step_decay: float = 0.99
    seed: int = 0
    fairness: FairnessSpec = field(default_factory=FairnessSpec)
    kernel: Kernel = field(default_factory=GaussianKernel)
    dp: DPMechanism = NO_PRIVACY
    architecture: Architecture = Architecture.LOGISTIC
    hidden_units: int = DEFAULT_HIDDEN_UNITS
    weighted_aggregation: bool = False
    exhaustive_sets: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        checks = [
            ("rounds", self.rounds >= 1, "must be at least 1"),
            ("local_epochs", self.local_epochs >= 1, "must be at least 1"),
            ("local_step", self.local_step > 0, "must be positive"),
            ("global_step", self.global_step >= 1, "must be at least 1"),
            ("clients_per_round", self.clients_per_round is None or self.clients_per_round >= 1, "must be at least 1"),
            ("lam", self.lam >= 0, "must be non-negative"),
            ("set_size", self.set_size >= 1, "must be at least 1"),
            ("batch_size", self.batch_size >= 1, "must be at least 1"),
            ("step_decay", 0 < self.step_decay <= 1, "must be in (0, 1]"),
            ("seed", self.seed >= 0, "must be non-negative"),
            ("hidden_units", self.hidden_units >= 1, "must be at least 1"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ConfigurationError(f"{name}={getattr(self, name)!r} {message}", field=name)

    @property
    def pseudo_stepsize(self) -> float:
        """``η̃ = E · η_l · η_g``."""
        return self.local_epochs * self.local_step * self.global_step

    def local_step_at(self, round: int) -> float:
        return self.local_step * self.step_decay ** (round - 1)

    def sampled_per_round(self, n_clients: int) -> int:
        if self.clients_per_round is None:
            return n_clients
        if self.clients_per_round > n_clients:
            raise ConfigurationError(
                f"clients_per_round={self.clients_per_round} exceeds the {n_clients} clients", field="clients_per_round"
            )
        return self.clients_per_round


@dataclass(frozen=True)
class SplitMetrics:
    loss: float
    mmd2: float
    mmd2_by_set: tuple[float | None, ...]
    objective: float
    mmd: float | None
    accuracy: float
    sp_unfairness: float | None


@dataclass(frozen=True)
class RoundRecord:
    """Metrics of the global model after aggregation in round ``round``.

    ``objective`` is ``loss + λ · mmd2`` on the same split, where ``mmd2``
    sums ``MMD²`` over the conditioning sets; ``mmd`` is the reported
    unfairness ``max_j sqrt(MMD²_j)``.
    """

    round: int
    snapshot: str
    local_step: float
    sampled_clients: tuple[int, ...]
    train: SplitMetrics
    test: SplitMetrics
    empty_group_batches: int = 0

    def to_dict(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "round": self.round,
            "snapshot": self.snapshot,
            "local_step": self.local_step,
            "sampled_clients": list(self.sampled_clients),
        }
        for prefix, metrics in (("train", self.train), ("test", self.test)):
            row[f"{prefix}_loss"] = metrics.loss
            row[f"{prefix}_mmd2"] = metrics.mmd2
            row[f"{prefix}_mmd2_by_set"] = list(metrics.mmd2_by_set)
            row[f"{prefix}_objective"] = metrics.objective
            row[f"{prefix}_mmd"] = metrics.mmd
            row[f"{prefix}_accuracy"] = metrics.accuracy
            row[f"{prefix}_sp_unfairness"] = metrics.sp_unfairness
        row["empty_group_batches"] = self.empty_group_batches
        return row


@dataclass(frozen=True)
class RunResult:
    records: list[RoundRecord]
    model: Model
    alpha: AlphaWeights | None
    round_seconds: list[float]
    pseudo_stepsize: float


class FairnessGradient(Protocol):
    """Per-minibatch fairness gradient used inside local updates."""

    broadcasts_sets: bool

    def gradient(
        self,
        model: Model,
        batch: TabularDataset,
        alpha: np.ndarray,
        sets: PredictionSets | None,
        diagnostics: FairnessDiagnostics,
    ) -> np.ndarray: ...


@dataclass(frozen=True)
class TrackedFairness:
    """Gradient of the tracked client function ``Σ_j f_k^j`` against the broadcast sets."""

    spec: FairnessSpec
    kernel: Kernel
    broadcasts_sets: bool = True

    def gradient(
        self,
        model: Model,
        batch: TabularDataset,
        alpha: np.ndarray,
        sets: PredictionSets | None,
        diagnostics: FairnessDiagnostics,
    ) -> np.ndarray:
        if sets is None:
            raise ConfigurationError("tracked fairness needs broadcast prediction sets")
        return grad_fk(model, batch, alpha, sets, self.spec, self.kernel, diagnostics)


def descent_step(
    params: np.ndarray,
    template: Model,
    batch: TabularDataset,
    step: float,
    lam: float,
    fairness_gradient: Callable[[Model, TabularDataset], np.ndarray],
) -> np.ndarray:
    """One step ``θ - η (∇L(θ; batch) + λ ∇R(θ; batch))``; ``R`` is not evaluated at ``λ = 0``.

    Every trainer, federated or centralized, steps through here.
    """
    model = template.with_params(params)
    grad = grad_task_loss(model, batch)
    if lam > 0:
        grad = grad + lam * fairness_gradient(model, batch)
    return params - step * grad


def snapshot_id(params: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()[:16]


# --- Client side ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Client:
    """A client holding its training shard; it only ever answers with messages."""

    shard: ClientShard

    @property
    def client_id(self) -> int:
        return self.shard.client_id

    def report_counts(self, spec: FairnessSpec) -> GroupCountsReport:
        masks = spec.group_masks(self.shard.dataset)
        counts = tuple(tuple(int(masks[j][a].sum()) for j in range(spec.n_sets)) for a in GROUPS)
        return GroupCountsReport(client_id=self.client_id, n_samples=self.shard.dataset.n_samples, counts=counts)

    def report_scores(self, request: ScoreRequest, model: Model, spec: FairnessSpec, seed: int) -> ScoreReport:
        dataset = self.shard.dataset
        rows = np.flatnonzero(spec.group_masks(dataset)[request.set_index][request.group])
        if request.exhaustive:
            chosen = rows
        elif rows.size == 0:
            chosen = rows[:0]
        else:
            rng = rng_for(seed, Stream.PREDICTION_SETS, request.round, request.group, request.set_index, self.client_id)
            chosen = rows[rng.integers(0, rows.size, request.n_draws)]
        scores = shard_scores(model, dataset, spec)[chosen]
        return ScoreReport(
            round=request.round,
            client_id=self.client_id,
            group=request.group,
            set_index=request.set_index,
            scores=tuple(scores.tolist()),
        )

    def local_update(
        self,
        broadcast: RoundBroadcast,
        template: Model,
        alpha: np.ndarray,
        config: FedRunConfig,
        strategy: FairnessGradient,
    ) -> ModelUpdate:
        """Run ``E`` SGD steps from the broadcast parameters.

        Minibatches walk through a per-epoch permutation of the shard and the
        incomplete tail of each permutation is skipped. A batch size at least
        the shard size uses the whole shard, unshuffled, at every step.
        """
        dataset = self.shard.dataset
        sets = sets_from_broadcast(broadcast)
        step = config.local_step_at(broadcast.round)
        diagnostics = FairnessDiagnostics()
        rng = rng_for(config.seed, Stream.LOCAL_SGD, broadcast.round, self.client_id)
        n = dataset.n_samples
        full_batch = config.batch_size >= n
        order = np.arange(n) if full_batch else rng.permutation(n)
        cursor = 0

        fairness_gradient = partial(strategy.gradient, alpha=alpha, sets=sets, diagnostics=diagnostics)
        params = np.array(broadcast.params, dtype=np.float64)
        for _ in range(config.local_epochs):
            if full_batch:
                batch = dataset
            else:
                if cursor + config.batch_size > n:
                    order = rng.permutation(n)
                    cursor = 0
                batch = dataset.subset(order[cursor : cursor + config.batch_size])
                cursor += config.batch_size
            params = descent_step(params, template, batch, step, config.lam, fairness_gradient)

        return ModelUpdate(
            round=broadcast.round,
            client_id=self.client_id,
            params=tuple(params.tolist()),
            empty_group_batches=diagnostics.empty_group_batches,
        )


def sets_from_broadcast(broadcast: RoundBroadcast) -> PredictionSets | None:
    if not broadcast.sets and not broadcast.excluded:
        return None
    return PredictionSets(
        sets={(s.group, s.set_index): np.asarray(s.scores, dtype=np.float64) for s in broadcast.sets},
        n_sets=broadcast.n_sets,
        round=broadcast.round,
        excluded=frozenset(broadcast.excluded),
    )


def make_broadcast(round: int, model: Model, sets: PredictionSets | None, n_sets: int) -> RoundBroadcast:
    score_sets: tuple[ScoreSet, ...] = ()
    excluded: tuple[int, ...] = ()
    if sets is not None:
        score_sets = tuple(
            ScoreSet(group=a, set_index=j, scores=tuple(sets.sets[(a, j)].tolist())) for (a, j) in sorted(sets.sets)
        )
        excluded = tuple(sorted(sets.excluded))
    return RoundBroadcast(
        round=round, params=tuple(model.params.tolist()), n_sets=n_sets, sets=score_sets, excluded=excluded
    )


# --- Server side ----------------------------------------------------------


def _count_tensor(reports: Sequence[GroupCountsReport]) -> tuple[np.ndarray, np.ndarray]:
    counts = np.array([r.counts for r in reports], dtype=np.float64)
    sizes = np.array([r.n_samples for r in reports], dtype=np.float64)
    return counts, sizes


def compute_alpha(federation: Federation, spec: FairnessSpec) -> AlphaWeights:
    """``α_{k,j}^a`` from the group counts reported by every client.

    A globally empty ``(a, j)`` gets ``α = 0`` for every client and a warning;
    that set is left out of the regularizer.
    """
    reports = [Client(shard).report_counts(spec) for shard in federation.train]
    counts, sizes = _count_tensor(reports)
    alpha = alpha_from_counts(counts, sizes, federation.weights)
    for a, j in zip(*np.nonzero(~alpha.active)):
        logger.warning(
            "group=<%d>, set=<%s> | no client holds samples of this group, excluding it from the regularizer",
            a,
            spec.conditioning_sets[j].name,
        )
    return alpha


def allocate_draws(rates: np.ndarray, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Number of draws per client when each draw picks client ``k`` with probability ∝ ``rates[k]``."""
    total = float(rates.sum())
    if total <= 0:
        raise ValueError("at least one client must hold matching samples")
    return rng.multinomial(n_draws, rates / total)


def build_prediction_sets(
    federation: Federation,
    model: Model,
    spec: FairnessSpec,
    config: FedRunConfig,
    round: int = 0,
) -> PredictionSets:
    """Sample ``set_size`` scores of ``θᵗ`` per ``(a, j)`` across all clients.

    Two-stage sampling: a draw picks client ``k`` with probability
    ``∝ ν_k n_{k,a,j} / n_k``, then a uniform matching row of that client,
    with replacement. ``config.exhaustive_sets`` collects every matching
    score of every client instead. Sets come from training shards only.
    """
    clients = [Client(shard) for shard in federation.train]
    counts, sizes = _count_tensor([c.report_counts(spec) for c in clients])
    rates = federation.weights[:, None, None] * counts / sizes[:, None, None]

    collected: dict[tuple[int, int], np.ndarray] = {}
    for j in range(spec.n_sets):
        for a in GROUPS:
            if rates[:, a, j].sum() <= 0:
                logger.warning(
                    "round=<%d>, group=<%d>, set=<%s> | group is empty across the federation, excluding set",
                    round,
                    a,
                    spec.conditioning_sets[j].name,
                )
                continue
            if config.exhaustive_sets:
                draws = np.zeros(len(clients), dtype=np.int64)
            else:
                draws = allocate_draws(
                    rates[:, a, j], config.set_size, rng_for(config.seed, Stream.PREDICTION_SETS, round, a, j)
                )
            reports = []
            for client, n_draws in zip(clients, draws):
                if not config.exhaustive_sets and n_draws == 0:
                    continue
                request = ScoreRequest(
                    round=round,
                    client_id=client.client_id,
                    group=a,
                    set_index=j,
                    n_draws=int(n_draws),
                    exhaustive=config.exhaustive_sets,
                )
                reports.append(client.report_scores(request, model, spec, config.seed))
            collected[(a, j)] = np.concatenate([np.asarray(r.scores, dtype=np.float64) for r in reports])

    sets = PredictionSets.from_scores(collected, spec.n_sets, round=round)
    logger.debug("round=<%d>, sizes=<%s> | built prediction sets", round, sets.sizes())
    return protect(sets, config.dp)


def sample_clients(n_clients: int, per_round: int, seed: int, round: int) -> tuple[int, ...]:
    """Uniform sample without replacement, in increasing client-id order."""
    if per_round >= n_clients:
        return tuple(range(n_clients))
    chosen = rng_for(seed, Stream.CLIENT_SAMPLING, round).choice(n_clients, size=per_round, replace=False)
    return tuple(sorted(int(k) for k in chosen))


def aggregate(
    theta: np.ndarray,
    updates: Sequence[np.ndarray],
    config: FedRunConfig,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """``θ + η_g · mean_k(θ_k - θ)``.

    The mean is unweighted unless ``config.weighted_aggregation`` is set, in
    which case ``weights`` (the ν_k of the sampled clients) are renormalized
    over the sample. With ``η_g = 1`` the result is the plain average of the
    client parameters.
    """
    if not updates:
        raise DimensionMismatchError("aggregate needs at least one client update")
    if config.clients_per_round is not None and len(updates) != config.clients_per_round:
        raise DimensionMismatchError(
            f"got {len(updates)} client updates; clients_per_round is {config.clients_per_round}"
        )
    stacked = np.stack([np.asarray(u, dtype=np.float64) for u in updates])
    if stacked.shape[1:] != np.shape(theta):
        raise DimensionMismatchError(f"updates have shape {stacked.shape[1:]}; global parameters {np.shape(theta)}")
    if config.weighted_aggregation:
        if weights is None or len(weights) != len(updates):
            raise DimensionMismatchError("weighted aggregation needs one weight per update")
        w = np.asarray(weights, dtype=np.float64)
        average = (w / w.sum()) @ stacked
    else:
        average = stacked.mean(axis=0)
    if config.global_step == 1.0:
        return average
    return theta + config.global_step * (average - theta)


def evaluate_split(
    model: Model,
    federation: Federation,
    split: str,
    spec: FairnessSpec,
    kernel: Kernel,
    lam: float,
) -> SplitMetrics:
    """Metrics on the ν-weighted pooled split."""
    pooled, weights = federation.pooled(split)
    loss = task_loss(model, pooled, weights)
    per_set = tuple(mmd_by_set(model, pooled, spec, kernel, weights))
    mmd2 = regularizer_value(per_set)
    populated = [v for v in per_set if v is not None]
    try:
        sp = sp_unfairness(model, pooled, weights)
    except FairtrackError:
        sp = None
    return SplitMetrics(
        loss=loss,
        mmd2=mmd2,
        mmd2_by_set=per_set,
        objective=loss + lam * mmd2,
        mmd=max(float(np.sqrt(max(v, 0.0))) for v in populated) if populated else None,
        accuracy=accuracy(model, pooled, weights),
        sp_unfairness=sp,
    )


def evaluate(model: Model, federation: Federation, config: FedRunConfig) -> tuple[SplitMetrics, SplitMetrics]:
    """``(train, test)`` metrics of ``model``."""
    train = evaluate_split(model, federation, "train", config.fairness, config.kernel, config.lam)
    test = evaluate_split(model, federation, "test", config.fairness, config.kernel, config.lam)
    return train, test


def run(
    federation: Federation,
    config: FedRunConfig,
    *,
    workers: int = 1,
    strategy: FairnessGradient | None = None,
    initial: Model | None = None,
) -> RunResult:
    """Train for ``config.rounds`` rounds and record metrics after each aggregation.

    ``strategy`` defaults to the tracked client function against broadcast
    prediction sets; baselines pass their own. A failure inside a round raises
    :class:`~fairtrack.errors.RoundFailedError` carrying the records of the
    rounds that completed.
    """
    strategy = strategy if strategy is not None else TrackedFairness(config.fairness, config.kernel)
    model = initial if initial is not None else init_model(
        config.architecture, federation.dim, config.hidden_units, seed=config.seed
    )
    if model.input_dim != federation.dim:
        raise DimensionMismatchError(f"model expects {model.input_dim} features; federation has {federation.dim}")
    clients = [Client(shard) for shard in federation.train]
    per_round = config.sampled_per_round(len(clients))
    n_sets = config.fairness.n_sets
    tracking = strategy.broadcasts_sets and config.lam > 0
    alpha = compute_alpha(federation, config.fairness) if tracking else None
    no_alpha = np.zeros((2, n_sets))

    records: list[RoundRecord] = []
    round_seconds: list[float] = []
    logger.info(
        "clients=<%d>, per_round=<%d>, rounds=<%d>, lam=<%s>, criterion=<%s> | starting run",
        len(clients),
        per_round,
        config.rounds,
        config.lam,
        config.fairness.criterion.value,
    )
    with ClientPool(workers) as pool:
        for t in range(1, config.rounds + 1):
            started = time.perf_counter()
            try:
                sets = build_prediction_sets(federation, model, config.fairness, config, round=t) if tracking else None
                broadcast = make_broadcast(t, model, sets, n_sets)
                sampled = sample_clients(len(clients), per_round, config.seed, t)
                logger.debug("round=<%d>, clients=<%s> | sampled clients", t, list(sampled))
                template = model

                def update(k: int, broadcast: RoundBroadcast = broadcast, template: Model = template) -> ModelUpdate:
                    client_alpha = alpha.for_client(k) if alpha is not None else no_alpha
                    return clients[k].local_update(broadcast, template, client_alpha, config, strategy)

                updates = pool.map_ordered(update, sampled)
                new_params = aggregate(
                    model.params,
                    [np.asarray(u.params, dtype=np.float64) for u in updates],
                    config,
                    weights=federation.weights[list(sampled)],
                )
                model = model.with_params(new_params)
                train_metrics, test_metrics = evaluate(model, federation, config)
            except Exception as exc:
                raise RoundFailedError(f"round=<{t}> | round failed: {exc}", partial_records=records) from exc

            records.append(
                RoundRecord(
                    round=t,
                    snapshot=snapshot_id(model.params),
                    local_step=config.local_step_at(t),
                    sampled_clients=sampled,
                    train=train_metrics,
                    test=test_metrics,
                    empty_group_batches=sum(u.empty_group_batches for u in updates),
                )
            )
            round_seconds.append(time.perf_counter() - started)
            logger.debug(
                "round=<%d>, train_objective=<%.6f>, seconds=<%.3f> | round complete",
                t,
                train_metrics.objective,
                round_seconds[-1],
            )

    return RunResult(
        records=records,
        model=model,
        alpha=alpha,
        round_seconds=round_seconds,
        pseudo_stepsize=config.pseudo_stepsize,
    )


def run_algorithm1(federation: Federation, config: FedRunConfig, *, workers: int = 1) -> RunResult:
    """MMD-fair FedAvg for statistical parity."""
    if config.fairness.criterion is not Criterion.STATISTICAL_PARITY:
        raise ConfigurationError(
            f"algorithm1 supports statistical_parity only; got {config.fairness.criterion.value}", field="criterion"
        )
    return run(federation, config, workers=workers)


def run_algorithm2(federation: Federation, config: FedRunConfig, *, workers: int = 1) -> RunResult:
    """MMD-fair FedAvg for any criterion, summing the per-set client functions."""
    return run(federation, config, workers=workers)
