from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import ORACLE_KERNELS, fd_gradient, gaussian, naive_c, naive_fk, naive_mmd_squared

from fairtrack.data import TabularDataset
from fairtrack.errors import ConfigurationError, DegenerateGroupError
from fairtrack.fairness import (
    AlphaWeights,
    Criterion,
    FairnessDiagnostics,
    FairnessSpec,
    PredictionSets,
    alpha_from_counts,
    audit_epsilon_fairness,
    c_function,
    decomposition_counterexample_check,
    fk_value,
    grad_fk,
    mmd_by_set,
    mmd_squared,
    mmd_squared_gradient,
    mmd_unfairness,
    own_prediction_sets,
    regularizer_value,
    sp_unfairness,
    unit_alpha,
)
from fairtrack.kernels import DistanceKernel, GaussianKernel, LaplacianKernel
from fairtrack.models import Architecture, Model, init_model

KERNELS = {
    "gaussian": GaussianKernel(1.0),
    "laplacian": LaplacianKernel(1.0),
    "distance_induced": DistanceKernel(),
}

scores = st.lists(st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=1, max_size=12)


def _random_batch(rng: np.random.Generator, n: int, d: int) -> TabularDataset:
    return TabularDataset(
        features=rng.normal(size=(n, d)),
        labels=rng.integers(0, 2, n),
        protected=np.r_[[0, 1], rng.integers(0, 2, n - 2)],
    )


def _logistic(params) -> Model:
    params = np.asarray(params, dtype=np.float64)
    return Model(architecture=Architecture.LOGISTIC, input_dim=params.size - 1, params=params)


def test_mmd_two_point_masses_gaussian():
    assert mmd_squared([0.0], [1.0], GaussianKernel(1.0)) == pytest.approx(0.786939, abs=1e-6)


def test_mmd_energy_distance_of_point_masses():
    assert mmd_squared([0.0], [1.0], DistanceKernel()) == pytest.approx(2.0)


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_mmd_matches_naive_double_loop(name):
    rng = np.random.default_rng(0)
    for _ in range(20):
        s0 = rng.uniform(size=rng.integers(1, 15))
        s1 = rng.uniform(size=rng.integers(1, 15))
        expected = naive_mmd_squared(s0, s1, ORACLE_KERNELS[name])
        assert mmd_squared(s0, s1, KERNELS[name]) == pytest.approx(expected, abs=1e-10)


def test_mmd_rejects_empty_sample():
    with pytest.raises(DegenerateGroupError):
        mmd_squared([], [0.5], GaussianKernel())


def test_mmd_weights_must_come_in_pairs():
    with pytest.raises(ValueError):
        mmd_squared([0.1], [0.2], GaussianKernel(), weights0=np.ones(1))


def test_weighted_mmd_with_repeated_points_equals_unweighted():
    kernel = GaussianKernel(0.5)
    weighted = mmd_squared([0.1, 0.4], [0.3], kernel, weights0=np.array([2.0, 1.0]), weights1=np.ones(1))
    assert weighted == pytest.approx(mmd_squared([0.1, 0.1, 0.4], [0.3], kernel), abs=1e-14)


@given(scores, scores)
def test_mmd_is_symmetric(s0, s1):
    kernel = GaussianKernel(1.0)
    assert mmd_squared(s0, s1, kernel) == pytest.approx(mmd_squared(s1, s0, kernel), abs=1e-12)


@given(scores, scores, st.randoms(use_true_random=False))
def test_mmd_ignores_sample_order(s0, s1, random):
    kernel = LaplacianKernel(0.5)
    shuffled = list(s0)
    random.shuffle(shuffled)
    assert mmd_squared(shuffled, s1, kernel) == mmd_squared(s0, s1, kernel)


@given(scores, scores)
def test_mmd_is_non_negative_for_psd_kernel(s0, s1):
    assert mmd_squared(s0, s1, GaussianKernel(0.3)) >= -1e-12


def test_c_function_example():
    assert c_function(0.0, [0.0], [1.0], GaussianKernel(1.0)) == pytest.approx(0.393469, abs=1e-6)


def test_c_function_is_invariant_to_duplicating_a_set():
    kernel = GaussianKernel(1.0)
    set0, set1 = [0.1, 0.5, 0.7], [0.2, 0.9]
    doubled = [v for v in set0 for _ in range(2)]
    assert c_function(0.3, doubled, set1, kernel) == pytest.approx(c_function(0.3, set0, set1, kernel), abs=1e-15)


def test_c_function_matches_naive():
    kernel = GaussianKernel(0.4)
    assert c_function(0.6, [0.1, 0.8], [0.5], kernel) == pytest.approx(naive_c(0.6, [0.1, 0.8], [0.5], gaussian(0.4)))


def test_conditional_parity_needs_region():
    with pytest.raises(ConfigurationError):
        FairnessSpec(Criterion.CONDITIONAL_STATISTICAL_PARITY)


@pytest.mark.parametrize(
    ("criterion", "names"),
    [
        (Criterion.STATISTICAL_PARITY, ["all"]),
        (Criterion.RISK_PARITY, ["all"]),
        (Criterion.EQUAL_OPPORTUNITY, ["y=1"]),
        (Criterion.PREDICTIVE_EQUALITY, ["y=0"]),
        (Criterion.EQUALIZED_ODDS, ["y=0", "y=1"]),
    ],
)
def test_conditioning_sets_per_criterion(criterion, names):
    assert [c.name for c in FairnessSpec(criterion).conditioning_sets] == names


def test_group_masks_respect_label_and_region(toy_dataset):
    spec = FairnessSpec(Criterion.CONDITIONAL_STATISTICAL_PARITY, feature_index=0, threshold=0.0)
    ((rows0, rows1),) = spec.group_masks(toy_dataset)
    assert not (rows0 & rows1).any()
    np.testing.assert_array_equal(rows0 | rows1, toy_dataset.features[:, 0] > 0.0)


def test_prediction_sets_exclude_empty_groups():
    sets = PredictionSets.from_scores({(0, 0): [0.3, 0.1], (1, 0): [], (0, 1): [0.2], (1, 1): [0.4]}, n_sets=2)
    assert sets.excluded == frozenset({0})
    assert sets.active_sets == (1,)
    with pytest.raises(DegenerateGroupError):
        sets.get(0, 0)


def test_prediction_sets_are_sorted_and_read_only():
    sets = PredictionSets.from_scores({(0, 0): [0.3, 0.1, 0.2], (1, 0): [0.9]}, n_sets=1)
    np.testing.assert_array_equal(sets.get(0, 0), [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        sets.get(0, 0)[0] = 1.0


def test_alpha_for_fully_separated_clients():
    counts = np.array([[[10], [0]], [[0], [10]]], dtype=np.float64)
    alpha = alpha_from_counts(counts, np.array([10.0, 10.0]), np.array([0.5, 0.5]))
    np.testing.assert_array_equal(alpha.values[:, :, 0], [[2.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(np.tensordot([0.5, 0.5], alpha.values, axes=1), 1.0)


def test_alpha_identical_proportions_is_one():
    counts = np.array([[[3], [7]], [[6], [14]], [[30], [70]]], dtype=np.float64)
    alpha = alpha_from_counts(counts, np.array([10.0, 20.0, 100.0]), np.array([0.2, 0.3, 0.5]))
    np.testing.assert_allclose(alpha.values, 1.0, rtol=1e-12)


def test_alpha_marks_globally_empty_group_inactive():
    counts = np.array([[[5, 0], [5, 0]], [[2, 0], [8, 3]]], dtype=np.float64)
    alpha = alpha_from_counts(counts, np.array([10.0, 13.0]), np.array([0.5, 0.5]))
    assert isinstance(alpha, AlphaWeights)
    assert not alpha.active[0, 1] and alpha.active[1, 1]
    np.testing.assert_array_equal(alpha.values[:, 0, 1], 0.0)


def test_single_client_alpha_is_exactly_one():
    counts = np.array([[[7, 2], [5, 4]]], dtype=np.float64)
    alpha = alpha_from_counts(counts, np.array([12.0]), np.array([1.0]))
    np.testing.assert_array_equal(alpha.values, 1.0)


def test_grad_fk_is_zero_when_sets_coincide():
    rng = np.random.default_rng(1)
    batch = _random_batch(rng, 10, 2)
    sets = PredictionSets.from_scores({(0, 0): [0.2, 0.6], (1, 0): [0.6, 0.2]}, n_sets=1)
    model = _logistic(rng.normal(size=3))
    grad = grad_fk(model, batch, unit_alpha(1), sets, FairnessSpec(), GaussianKernel())
    np.testing.assert_array_equal(grad, 0.0)


def test_fk_value_matches_naive_formula():
    rng = np.random.default_rng(2)
    kernel = GaussianKernel(0.5)
    batch = _random_batch(rng, 12, 3)
    model = _logistic(rng.normal(size=4))
    set0, set1 = rng.uniform(size=5), rng.uniform(size=4)
    sets = PredictionSets.from_scores({(0, 0): set0, (1, 0): set1}, n_sets=1)
    alpha = np.array([[1.3], [0.6]])
    p = model.predict_batch(batch.features)
    expected = naive_fk(
        p[batch.protected == 0], p[batch.protected == 1], np.sort(set0), np.sort(set1), 1.3, 0.6, gaussian(0.5)
    )
    assert fk_value(model, batch, alpha, sets, FairnessSpec(), kernel) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("criterion", [Criterion.STATISTICAL_PARITY, Criterion.EQUALIZED_ODDS, Criterion.RISK_PARITY])
def test_grad_fk_matches_finite_differences(criterion):
    rng = np.random.default_rng(3)
    spec = FairnessSpec(criterion)
    kernel = GaussianKernel(0.5)
    for _ in range(20):
        batch = _random_batch(rng, 16, 3)
        params = rng.normal(size=4)
        raw = {(a, j): rng.uniform(size=6) for a in (0, 1) for j in range(spec.n_sets)}
        sets = PredictionSets.from_scores(raw, spec.n_sets)
        alpha = rng.uniform(0.5, 1.5, size=(2, spec.n_sets))
        analytic = grad_fk(_logistic(params), batch, alpha, sets, spec, kernel)
        def value(th, b=batch, s=sets, al=alpha):
            return fk_value(_logistic(th), b, al, s, spec, kernel)

        numeric = fd_gradient(value, params)
        if np.linalg.norm(analytic) > 1e-6:
            assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(analytic)


def test_grad_fk_counts_missing_groups():
    batch = TabularDataset(features=np.zeros((3, 1)), labels=[0, 1, 0], protected=[0, 0, 0])
    sets = PredictionSets.from_scores({(0, 0): [0.1], (1, 0): [0.9]}, n_sets=1)
    diagnostics = FairnessDiagnostics()
    grad_fk(_logistic([0.5, 0.0]), batch, unit_alpha(1), sets, FairnessSpec(), GaussianKernel(), diagnostics)
    assert diagnostics.empty_group_batches == 1


def _spread_dataset() -> TabularDataset:
    # Scores stay at least 0.007 apart; finite differences never cross the Laplacian kink.
    k = np.arange(24)
    features = np.column_stack([np.linspace(-2.0, 2.0, 24), 0.1 * np.cos(k), np.zeros(24)])
    return TabularDataset(features=features, labels=k % 2, protected=np.repeat([0, 1, 0, 1], 6))


@pytest.mark.parametrize("name", ["gaussian", "laplacian"])
def test_own_set_gradient_is_exact_mmd_gradient(name):
    kernel = KERNELS[name]
    spec = FairnessSpec()
    params = np.array([0.8, -0.4, 0.3, 0.1])
    dataset = _spread_dataset()
    p = _logistic(params).predict_batch(dataset.features)
    assert np.min(np.diff(np.sort(p))) > 1e-3

    def mmd_of(theta):
        p = _logistic(theta).predict_batch(dataset.features)
        return mmd_squared(p[dataset.protected == 0], p[dataset.protected == 1], kernel)

    analytic = mmd_squared_gradient(_logistic(params), dataset, spec, kernel)
    numeric = fd_gradient(mmd_of, params)
    assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(analytic)


def test_own_prediction_sets_hold_every_score(toy_dataset):
    model = init_model(Architecture.LOGISTIC, 3, seed=1)
    sets = own_prediction_sets(model, toy_dataset, FairnessSpec())
    assert sets.sizes() == {(0, 0): 12, (1, 0): 12}


def test_sp_unfairness_counting_example():
    features = np.array([[1.0], [1.0], [-1.0], [-1.0], [1.0], [1.0], [1.0], [1.0]])
    ds = TabularDataset(features=features, labels=[1, 1, 0, 0, 1, 1, 1, 1], protected=[0, 0, 0, 0, 1, 1, 1, 1])
    assert sp_unfairness(_logistic([50.0, 0.0]), ds) == 0.5


def test_sp_unfairness_needs_both_groups():
    ds = TabularDataset(features=np.zeros((2, 1)), labels=[0, 1], protected=[1, 1])
    with pytest.raises(DegenerateGroupError):
        sp_unfairness(_logistic([1.0, 0.0]), ds)


def test_constant_model_is_perfectly_fair(toy_dataset):
    model = _logistic(np.zeros(4))
    assert mmd_unfairness(model, toy_dataset, FairnessSpec(), GaussianKernel()) == 0.0
    audit = audit_epsilon_fairness(model, toy_dataset, FairnessSpec(), GaussianKernel(), epsilon=0.01)
    assert audit == {"all": (0.0, True)}


def test_mmd_unfairness_is_root_of_parity_mmd(toy_dataset):
    model = init_model(Architecture.LOGISTIC, 3, seed=4)
    kernel = GaussianKernel()
    p = model.predict_batch(toy_dataset.features)
    expected = math.sqrt(mmd_squared(p[toy_dataset.protected == 0], p[toy_dataset.protected == 1], kernel))
    assert mmd_unfairness(model, toy_dataset, FairnessSpec(), kernel) == pytest.approx(expected, rel=1e-12)


def test_equalized_odds_reports_worst_set(toy_dataset):
    model = init_model(Architecture.LOGISTIC, 3, seed=6)
    spec = FairnessSpec(Criterion.EQUALIZED_ODDS)
    kernel = GaussianKernel()
    per_set = mmd_by_set(model, toy_dataset, spec, kernel)
    assert len(per_set) == 2 and None not in per_set
    assert mmd_unfairness(model, toy_dataset, spec, kernel) == pytest.approx(math.sqrt(max(per_set)))
    assert regularizer_value(per_set) == pytest.approx(sum(per_set))


def test_mmd_by_set_marks_unpopulated_sets():
    ds = TabularDataset(features=np.array([[0.1], [0.2], [0.3]]), labels=[0, 0, 1], protected=[0, 1, 0])
    per_set = mmd_by_set(_logistic([1.0, 0.0]), ds, FairnessSpec(Criterion.EQUALIZED_ODDS), GaussianKernel())
    assert per_set[0] is not None and per_set[1] is None
    assert regularizer_value(per_set) == per_set[0]


def test_local_mmd_does_not_decompose_over_clients():
    lhs, rhs = decomposition_counterexample_check(GaussianKernel(1.0))
    assert lhs < 1e-12
    assert rhs == pytest.approx(2 * (1 - math.exp(-0.5)), abs=1e-12)
    assert rhs >= 0.78
