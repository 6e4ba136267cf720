import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from conftest import direct_probabilities, synthetic_cell
from huffval.errors import DegenerateCorrelationError, InsufficientSampleError
from huffval.huff import (CellModelInputs, HuffParams, _score_objective, cell_score, choice_probabilities,
                          expected_visit_distribution, fit_cell, fit_loglinear, fit_loglinear_shares, pearson,
                          probability_matrix, utility)
from huffval.pso import SwarmConfig


def test_utility_examples():
    assert utility(1.0, 1.0, HuffParams(37.0, 12.5)) == 1.0
    assert utility(123.0, 0.05, HuffParams(0.0, 0.0)) == 1.0
    assert utility(4.0, 2.0, HuffParams(1.0, 2.0)) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        utility(0.0, 1.0, HuffParams(1, 1))
    with pytest.raises(ValueError):
        HuffParams(-1.0, 0.0)


def test_choice_probability_examples():
    one = CellModelInputs(np.array([5.0]), np.array([[2.0]]), np.array([[3]]))
    assert choice_probabilities(one, HuffParams(2, 3), 0).tolist() == [1.0]
    two = CellModelInputs(np.array([5.0, 5.0]), np.array([[2.0, 2.0]]), np.array([[3, 1]]))
    assert choice_probabilities(two, HuffParams(2, 3), 0) == pytest.approx([0.5, 0.5], abs=1e-15)
    rng = np.random.default_rng(0)
    k = 7
    cell = CellModelInputs(rng.uniform(1, 9, k), rng.uniform(0.1, 9, (3, k)), np.ones((3, k), int))
    assert choice_probabilities(cell, HuffParams(0, 0), 1) == pytest.approx(np.full(k, 1 / k), abs=1e-15)


def test_expected_visits_examples():
    cell = CellModelInputs(np.array([2.0, 2.0]), np.array([[1.0, 1.0]]), np.array([[5, 1]]))
    assert expected_visit_distribution(cell, HuffParams(1, 1)) == pytest.approx([3.0, 3.0], abs=1e-12)
    rng = np.random.default_rng(1)
    counts = rng.integers(0, 9, (6, 4))
    counts[:, 0] += 1
    cell = CellModelInputs(rng.uniform(1, 9, 4), rng.uniform(0.1, 9, (6, 4)), counts)
    e = expected_visit_distribution(cell, HuffParams(0, 0))
    assert e == pytest.approx(np.full(4, counts.sum() / 4), rel=1e-12)


def test_expected_visits_nested_loop_oracle():
    rng = np.random.default_rng(2)
    n, m = 9, 5
    a, d = rng.uniform(1, 50, m), rng.uniform(0.1, 10, (n, m))
    counts = rng.integers(1, 7, (n, m))
    alpha, beta = 1.3, 0.7
    oracle = [0.0] * m
    for i in range(n):
        h = [a[j] ** alpha / d[i, j] ** beta for j in range(m)]
        total = sum(h)
        n_i = int(counts[i].sum())
        for j in range(m):
            oracle[j] += n_i * h[j] / total
    got = expected_visit_distribution(CellModelInputs(a, d, counts), HuffParams(alpha, beta))
    np.testing.assert_allclose(got, oracle, rtol=1e-12, atol=0)


def test_probabilities_match_direct_formula():
    inputs, p = synthetic_cell(3, 50, 8, (1.5, 2.5))
    np.testing.assert_allclose(probability_matrix(inputs, HuffParams(1.5, 2.5)), p, rtol=1e-10, atol=1e-15)


def test_extreme_exponents_stay_finite():
    inputs, _ = synthetic_cell(4, 30, 6)
    p = probability_matrix(inputs, HuffParams(100.0, 100.0))
    assert np.isfinite(p).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_pearson_examples():
    x = np.arange(5.0)
    assert pearson(x, 2 * x + 1)[0] == 1.0
    assert pearson(x, -x)[0] == -1.0
    r, p = pearson([1, 2, 3, 4, 5], [2, 1, 4, 3, 6])
    ref = stats.pearsonr([1, 2, 3, 4, 5], [2, 1, 4, 3, 6])
    assert r == pytest.approx(ref.statistic, abs=1e-9)
    assert p == pytest.approx(ref.pvalue, abs=1e-9)
    with pytest.raises(InsufficientSampleError):
        pearson([1, 2], [3, 4])
    with pytest.raises(DegenerateCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])


def test_pearson_random_vs_reference():
    rng = np.random.default_rng(5)
    for n in (3, 4, 10, 50):
        x = rng.normal(size=n)
        y = 0.5 * x + rng.normal(size=n)
        r, p = pearson(x, y)
        ref = stats.pearsonr(x, y)
        assert r == pytest.approx(ref.statistic, abs=1e-12)
        assert p == pytest.approx(ref.pvalue, abs=1e-10)


def test_cell_score_proportional_is_one():
    a = np.array([1.0, 2.0, 4.0])
    d = np.ones((2, 3))
    counts = np.array([[1, 2, 4], [2, 4, 8]])
    assert cell_score(CellModelInputs(a, d, counts), HuffParams(1, 0)) == pytest.approx(1.0, abs=1e-12)


def test_fast_objective_equals_cell_score():
    inputs, _ = synthetic_cell(6, 120, 12)
    f = _score_objective(inputs)
    rng = np.random.default_rng(0)
    for alpha, beta in rng.uniform(0, 100, (30, 2)).tolist() + [[0.3, 0.0], [1, 2]]:
        try:
            ref = cell_score(inputs, HuffParams(alpha, beta))
        except DegenerateCorrelationError:
            continue
        assert f((alpha, beta)) == pytest.approx(ref, abs=1e-12)
    assert f((0.0, 0.0)) == -math.inf


def test_score_invariant_under_attractiveness_rescaling():
    inputs, _ = synthetic_cell(7, 80, 10)
    scaled = CellModelInputs(inputs.attractiveness * 37.5, inputs.distances, inputs.counts)
    for params in (HuffParams(1, 2), HuffParams(0.4, 0.1), HuffParams(3, 0)):
        assert cell_score(scaled, params) == pytest.approx(cell_score(inputs, params), abs=1e-12)


cells = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(lambda s: st.tuples(
    arrays(float, s[1], elements=st.floats(0.01, 1e6)),
    arrays(float, s, elements=st.floats(0.05, 500.0)),
    st.floats(0, 100), st.floats(0, 100)))


@settings(max_examples=200, deadline=None)
@given(cells, st.floats(1e-3, 1e3))
def test_rows_sum_to_one_and_scale_invariance(cell, k):
    a, d, alpha, beta = cell
    inputs = CellModelInputs(a, d, np.ones(d.shape, int))
    params = HuffParams(alpha, beta)
    p = probability_matrix(inputs, params)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    pa = probability_matrix(CellModelInputs(a * k, d, inputs.counts), params)
    pd_ = probability_matrix(CellModelInputs(a, d * k, inputs.counts), params)
    np.testing.assert_allclose(pa, p, atol=1e-12, rtol=0)
    np.testing.assert_allclose(pd_, p, atol=1e-12, rtol=0)


@settings(max_examples=100, deadline=None)
@given(cells, st.integers(0, 2**32 - 1))
def test_conservation(cell, seed):
    a, d, alpha, beta = cell
    counts = np.random.default_rng(seed).integers(1, 50, d.shape)
    e = expected_visit_distribution(CellModelInputs(a, d, counts), HuffParams(alpha, beta))
    assert e.sum() == pytest.approx(counts.sum(), rel=1e-9)


def test_monotonicity_randomized():
    rng = np.random.default_rng(11)
    violations = 0
    for _ in range(1000):
        n, m = rng.integers(1, 5), rng.integers(2, 6)
        a = rng.uniform(1, 100, m)
        d = rng.uniform(0.1, 20, (n, m))
        alpha, beta = rng.uniform(0.05, 5, 2)
        params = HuffParams(alpha, beta)
        base = probability_matrix(CellModelInputs(a, d, np.ones((n, m), int)), params)
        i, j = rng.integers(n), rng.integers(m)
        d2 = d.copy()
        d2[i, j] *= rng.uniform(1.01, 3)
        farther = probability_matrix(CellModelInputs(a, d2, np.ones((n, m), int)), params)
        a2 = a.copy()
        a2[j] *= rng.uniform(1.01, 3)
        richer = probability_matrix(CellModelInputs(a2, d, np.ones((n, m), int)), params)
        violations += not farther[i, j] < base[i, j]
        violations += not np.all(richer[:, j] > base[:, j])
    assert violations == 0


def test_loglinear_recovers_noiseless_parameters():
    for params in ((1.0, 2.0), (0.5, 1.0), (2.0, 0.5), (3.7, 0.2)):
        inputs, p = synthetic_cell(8, 60, 9, params)
        res = fit_loglinear_shares(inputs, p)
        assert res.params.alpha == pytest.approx(params[0], abs=1e-6)
        assert res.params.beta == pytest.approx(params[1], abs=1e-6)


def test_loglinear_uniform_generator_gives_zero():
    inputs, p = synthetic_cell(9, 40, 6, (0.0, 0.0))
    res = fit_loglinear_shares(inputs, p)
    assert res.params.alpha == pytest.approx(0.0, abs=1e-6)
    assert res.params.beta == pytest.approx(0.0, abs=1e-6)
    assert res.degenerate and math.isnan(res.score)


def test_loglinear_clamps_into_box():
    inputs, p = synthetic_cell(10, 40, 6, (1.0, 2.0))
    res = fit_loglinear_shares(inputs, p, box=((0.0, 100.0), (0.0, 1.5)))
    assert res.params.beta == 1.5 and res.hit_bounds == (False, True)


def test_fit_cell_recovers_generator():
    inputs, p = synthetic_cell(12, 500, 20, (1.0, 2.0))
    res = fit_cell(inputs, seed=3)
    assert res.score >= 0.95
    assert np.abs(probability_matrix(inputs, res.params) - p).mean() <= 0.02
    assert res.estimator == "pso" and not res.degenerate
    assert 0.0 <= res.p_value <= 1.0


def test_fit_cell_deterministic():
    inputs, _ = synthetic_cell(13, 200, 10)
    cfg = SwarmConfig(max_iterations=60)
    a, b = fit_cell(inputs, cfg, seed=5), fit_cell(inputs, cfg, seed=5)
    assert (a.params, a.score, a.trace) == (b.params, b.score, b.trace)


def test_fit_cell_rejects_tiny_cells():
    one = CellModelInputs(np.array([5.0]), np.array([[2.0]]), np.array([[3]]))
    with pytest.raises(InsufficientSampleError):
        fit_cell(one)
    flat = CellModelInputs(np.array([5.0, 6.0, 7.0]), np.ones((2, 3)), np.ones((2, 3), int))
    with pytest.raises(DegenerateCorrelationError):
        fit_cell(flat)


def test_loglinear_not_better_than_pso_on_noisy_cells():
    worse = []
    for seed in range(20):
        inputs, _ = synthetic_cell(100 + seed, 300, 15, (1.0, 2.0), visits=30)
        ll = fit_loglinear(inputs)
        ps = fit_cell(inputs, seed=seed)
        worse.append(ll.score - ps.score)
    assert max(worse) <= 0.02


def test_direct_probabilities_helper_sanity():
    p = direct_probabilities(np.array([1.0, 1.0]), np.array([[1.0, 2.0]]), 0.0, 1.0)
    assert p.tolist() == [[2 / 3, 1 / 3]]
