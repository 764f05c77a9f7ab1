"""Tests for the p-value combination baselines."""
from __future__ import annotations

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest
from scipy.stats import chi2, combine_pvalues, kstest, norm

from metapat import baselines
from metapat.exceptions import MetaPatDomainError, MetaPatUnsupportedError


@pytest.fixture
def p_matrix() -> np.ndarray:
    """A 50 x 4 matrix of moderate p-values."""
    return np.random.default_rng(8).uniform(0.01, 0.99, size=(50, 4))


def test_fisher_formula(p_matrix):
    expected = chi2.sf(-2.0 * np.log(p_matrix).sum(axis=1), 2 * p_matrix.shape[1])
    assert_allclose(baselines.fisher(p_matrix), expected, rtol=1e-10)


def test_stouffer_formula(p_matrix):
    expected = norm.sf(norm.isf(p_matrix).sum(axis=1) / np.sqrt(p_matrix.shape[1]))
    assert_allclose(baselines.stouffer(p_matrix), expected, rtol=1e-8)


def test_single_row_returns_scalar():
    assert baselines.maxp(np.array([0.5, 0.5])) == pytest.approx(0.25)
    fisher = baselines.fisher(np.array([0.2, 0.3]))
    assert isinstance(fisher, float)
    assert fisher == pytest.approx(combine_pvalues([0.2, 0.3], method="fisher").pvalue)


def test_rop_limits(p_matrix):
    n_studies = p_matrix.shape[1]
    assert_allclose(baselines.rop(p_matrix, n_studies), baselines.maxp(p_matrix), rtol=1e-10)
    assert_allclose(
        baselines.rop(p_matrix, 1),
        1.0 - (1.0 - p_matrix.min(axis=1)) ** n_studies,
        rtol=1e-10,
    )


@pytest.mark.parametrize("r", [0, 5])
def test_rop_rejects_r_out_of_range(p_matrix, r):
    with pytest.raises(MetaPatDomainError):
        baselines.rop(p_matrix, r)


@pytest.mark.parametrize("p", [[0.0, 0.5], [0.5, 1.5], [-0.1, 0.2]])
def test_pvalues_outside_domain(p):
    with pytest.raises(MetaPatDomainError):
        baselines.fisher(np.array([p]))


def test_weight_vector_order():
    assert_array_equal(baselines.weight_vectors(2), [[0, 1], [1, 0], [1, 1]])
    weights = baselines.weight_vectors(4)
    assert len(weights) == 15
    assert (np.diff(weights.sum(axis=1)) >= 0).all()


def test_aw_fisher_picks_informative_studies():
    result = baselines.aw_fisher(np.array([[0.001, 0.9], [0.001, 0.001]]))
    assert_array_equal(result.weights, [[1, 0], [1, 1]])
    assert result.minp[0] == pytest.approx(0.001)
    assert result.stat[1] == pytest.approx(-4.0 * np.log(0.001))


def test_aw_minimum_never_exceeds_fisher(p_matrix):
    result = baselines.aw_fisher(p_matrix)
    assert (result.minp <= baselines.fisher(p_matrix) + 1e-15).all()
    assert (result.weights.sum(axis=1) >= 1).all()


def test_aw_fisher_size_limit():
    with pytest.raises(MetaPatUnsupportedError):
        baselines.aw_fisher(np.full((1, 21), 0.5))


@pytest.mark.parametrize("method", ["fisher", "stouffer", "maxp", "rop", "aw"])
def test_combined_pvalue_is_monotone(method, p_matrix):
    base, _ = baselines.combine(p_matrix, method)
    raised = p_matrix.copy()
    raised[:, 0] = np.minimum(raised[:, 0] + 0.005, 0.999)
    higher, _ = baselines.combine(raised, method)
    assert (higher >= base - 1e-12).all()


def test_combine_default_r(p_matrix):
    combined, details = baselines.combine(p_matrix, "rop")
    assert details is None
    assert_allclose(combined, baselines.rop(p_matrix, 3))


def test_unknown_method(p_matrix):
    with pytest.raises(MetaPatDomainError):
        baselines.combine(p_matrix, "tippett")


def _bh_brute_force(p, level):
    m = len(p)
    ordered = np.sort(p)
    passing = [i for i in range(m) if ordered[i] <= (i + 1) * level / m]
    if not passing:
        return np.zeros(m, dtype=bool)
    return p <= ordered[max(passing)]


def test_bh_matches_step_up_rule():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = np.concatenate([rng.uniform(0, 0.01, 5), rng.uniform(size=20)])
        assert_array_equal(baselines.bh_fdr(p, 0.1), _bh_brute_force(p, 0.1))


def test_bh_edge_cases():
    assert_array_equal(baselines.bh_fdr(np.array([0.04]), 0.05), [True])
    assert not baselines.bh_fdr(np.ones(10), 0.05).any()
    assert len(baselines.bh_fdr(np.array([]), 0.05)) == 0
    with pytest.raises(MetaPatDomainError):
        baselines.bh_fdr(np.array([0.1]), 1.0)


@pytest.mark.slow
@pytest.mark.parametrize("method", ["fisher", "stouffer", "maxp", "rop"])
def test_null_combination_is_uniform(method):
    p = np.random.default_rng(12).uniform(size=(20_000, 4))
    combined, _ = baselines.combine(p, method)
    assert kstest(combined, "uniform").pvalue > 1e-3


def test_reference_values():
    assert baselines.stouffer(np.array([0.05, 0.05])) == pytest.approx(0.01, abs=1e-4)
    assert baselines.stouffer(np.array([0.5, 0.5, 0.5])) == pytest.approx(0.5)
    assert baselines.stouffer(np.array([0.3])) == pytest.approx(0.3)
    assert baselines.rop(np.array([0.2, 0.9]), 1) == pytest.approx(0.36)
