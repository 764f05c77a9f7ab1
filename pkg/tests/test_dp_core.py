"""Tests for the per-study Dirichlet-process tables."""
from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from metapat import dp_core
from metapat.dp_core import NEW, DpSide, Side
from metapat.exceptions import MetaPatDomainError


def _quadrature_predictive(z, count, sum_z, sigma0_sq, side):
    """Integrate N(z; mu, 1) against the truncated posterior of mu numerically."""

    def weight(mu):
        return norm.pdf(mu, 0.0, math.sqrt(sigma0_sq)) * math.exp(sum_z * mu - count * mu**2 / 2)

    lower, upper = (0.0, np.inf) if side is Side.POSITIVE else (-np.inf, 0.0)
    numerator = integrate.quad(lambda mu: norm.pdf(z, mu, 1.0) * weight(mu), lower, upper)[0]
    denominator = integrate.quad(weight, lower, upper)[0]
    return numerator / denominator


@pytest.mark.parametrize("side", [Side.POSITIVE, Side.NEGATIVE])
@pytest.mark.parametrize("z", [-2.5, 0.0, 1.5, 4.0])
def test_predictive_new_matches_quadrature(side, z):
    dp_side = DpSide(side, 1.0, 10.0)
    expected = _quadrature_predictive(z, 0, 0.0, 10.0, side)
    assert dp_core.predictive_new(dp_side, z) == pytest.approx(expected, rel=1e-6)


@pytest.mark.parametrize(
    "side,count,sum_z,z",
    [
        (Side.POSITIVE, 3, 4.2, 1.0),
        (Side.POSITIVE, 1, -0.5, 2.0),
        (Side.NEGATIVE, 2, -3.0, -1.2),
        (Side.NEGATIVE, 5, -12.5, 0.3),
    ],
)
def test_predictive_existing_matches_quadrature(side, count, sum_z, z):
    dp_side = DpSide(side, 1.0, 4.0, [count], [sum_z])
    expected = _quadrature_predictive(z, count, sum_z, 4.0, side)
    assert dp_core.predictive_existing(dp_side, 0, z) == pytest.approx(expected, rel=1e-6)


@pytest.mark.parametrize("side", [Side.POSITIVE, Side.NEGATIVE])
def test_predictive_new_is_a_density(side):
    dp_side = DpSide(side, 1.0, 10.0)
    total = integrate.quad(lambda z: dp_core.predictive_new(dp_side, z), -np.inf, np.inf)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("side,sum_z", [(Side.POSITIVE, 4.5), (Side.NEGATIVE, -1.0)])
def test_predictive_existing_is_a_density(side, sum_z):
    dp_side = DpSide(side, 1.0, 10.0, [3], [sum_z])
    total = integrate.quad(
        lambda z: dp_core.predictive_existing(dp_side, 0, z), -np.inf, np.inf
    )[0]
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("state", range(20))
def test_likelihood_ratio_is_monotone(state):
    rng = np.random.default_rng(state)
    counts = rng.integers(1, 8, size=rng.integers(1, 5))
    sums = counts * rng.uniform(0.05, 4.0, size=len(counts))
    dp_side = DpSide(Side.POSITIVE, rng.uniform(0.2, 3.0), 10.0, counts, sums)
    grid = np.arange(0.0, 6.0 + 1e-9, 0.01)
    log_ratio = np.array(
        [math.log(dp_core.mixture_density(dp_side, z)) - norm.logpdf(z) for z in grid]
    )
    assert (np.diff(log_ratio) >= -1e-9).all()


def _log_joint(order, zs, blocks, alpha=1.5):
    """Sequential CRP seating probability of a fixed partition."""
    dp_side = DpSide(Side.POSITIVE, alpha, 10.0)
    tables: dict[int, int] = {}
    total = 0.0
    for i in order:
        log_seat = dp_side.log_seating(zs[i])
        if blocks[i] in tables:
            total += log_seat[tables[blocks[i]]]
            dp_core.assign(dp_side, tables[blocks[i]], zs[i])
        else:
            total += log_seat[-1]
            tables[blocks[i]] = dp_core.assign(dp_side, NEW, zs[i])
    return total


@pytest.mark.parametrize("blocks", [(0, 0, 1, 2), (0, 1, 0, 1), (0, 0, 0, 0), (0, 1, 2, 3)])
def test_seating_is_exchangeable(blocks):
    zs = (0.4, 2.1, 1.3, 3.7)
    reference = _log_joint(range(4), zs, blocks)
    for order in itertools.permutations(range(4)):
        assert _log_joint(order, zs, blocks) == pytest.approx(reference, abs=1e-10)


def test_positive_side_favours_positive_values():
    dp_side = DpSide(Side.POSITIVE)
    assert dp_core.predictive_new(dp_side, 3.0) > dp_core.predictive_new(dp_side, -3.0)


def test_assign_and_remove_keep_tables_compact():
    dp_side = DpSide(Side.POSITIVE)
    assert dp_core.assign(dp_side, NEW, 1.0) == 0
    assert dp_core.assign(dp_side, NEW, 2.0) == 1
    assert dp_core.assign(dp_side, NEW, 3.0) == 2
    assert dp_core.assign(dp_side, 1, 2.5) == 1
    assert dp_side.counts.tolist() == [1, 2, 1]
    assert dp_side.total == 4

    assert dp_core.remove(dp_side, 0, 1.0) is True
    assert dp_side.counts.tolist() == [2, 1]
    assert dp_side.sums.tolist() == pytest.approx([4.5, 3.0])
    assert dp_core.remove(dp_side, 0, 2.0) is False
    assert dp_side.components == [dp_core.Component(1, 2.5), dp_core.Component(1, 3.0)]


def test_bad_component_index():
    dp_side = DpSide(Side.NEGATIVE, counts=[1], sums=[-2.0])
    with pytest.raises(MetaPatDomainError):
        dp_core.assign(dp_side, 3, -1.0)
    with pytest.raises(MetaPatDomainError):
        dp_core.remove(dp_side, 1, -1.0)


@pytest.mark.parametrize("alpha,sigma0_sq", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
def test_invalid_hyperparameters(alpha, sigma0_sq):
    with pytest.raises(MetaPatDomainError):
        DpSide(Side.POSITIVE, alpha, sigma0_sq)


def test_seating_weights_sum_to_mixture_density():
    dp_side = DpSide(Side.POSITIVE, 0.7, 10.0, [3, 1], [6.0, 0.5])
    seating = dp_side.log_seating(1.3)
    assert len(seating) == 3
    expected = (
        3 / 4.7 * dp_core.predictive_existing(dp_side, 0, 1.3)
        + 1 / 4.7 * dp_core.predictive_existing(dp_side, 1, 1.3)
        + 0.7 / 4.7 * dp_core.predictive_new(dp_side, 1.3)
    )
    assert dp_core.mixture_density(dp_side, 1.3) == pytest.approx(expected, rel=1e-12)


def test_empty_side_mixture_is_prior_predictive():
    dp_side = DpSide(Side.NEGATIVE, 2.0)
    assert dp_core.mixture_density(dp_side, -0.4) == pytest.approx(
        dp_core.predictive_new(dp_side, -0.4), rel=1e-12
    )


@pytest.mark.parametrize("z", [-1.5, 0.2, 3.0])
def test_sides_mirror_each_other(z):
    positive = DpSide(Side.POSITIVE, 1.0, 10.0, [2], [3.0])
    negative = DpSide(Side.NEGATIVE, 1.0, 10.0, [2], [-3.0])
    assert dp_core.predictive_new(positive, z) == pytest.approx(
        dp_core.predictive_new(negative, -z), rel=1e-12
    )
    assert dp_core.predictive_existing(positive, 0, z) == pytest.approx(
        dp_core.predictive_existing(negative, 0, -z), rel=1e-12
    )
