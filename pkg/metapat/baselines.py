"""Classical p-value combination baselines and Benjamini-Hochberg control.

All combiners take a G x S matrix (or a single length-S vector) of two-sided
p-values and return one combined value per gene.
"""
from __future__ import annotations

from dataclasses import dataclass
import itertools
import logging

import numpy as np
from scipy.stats import beta, chi2, combine_pvalues
from statsmodels.stats.multitest import multipletests

from .const import AW_MAX_STUDIES, P_EPSILON
from .exceptions import MetaPatDomainError, MetaPatUnsupportedError

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class AWResult:
    """Adaptively weighted Fisher search result."""

    weights: np.ndarray
    stat: np.ndarray
    minp: np.ndarray


def _as_matrix(p: np.ndarray) -> tuple[np.ndarray, bool]:
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.ndim != 2 or p.shape[1] < 1:
        raise MetaPatDomainError(f"Expected genes x studies p-values, got shape {p.shape}")
    if ((p <= 0.0) | (p > 1.0)).any():
        raise MetaPatDomainError("p-values must lie in (0, 1]")
    return np.clip(p, P_EPSILON, 1.0 - P_EPSILON), single


def _unwrap(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


def fisher(p: np.ndarray):
    """Upper chi-square(2S) tail of -2 sum log p."""
    p, single = _as_matrix(p)
    return _unwrap(combine_pvalues(p, method="fisher", axis=1).pvalue, single)


def stouffer(p: np.ndarray):
    """Normal upper tail of sum Phi^-1(1 - p) / sqrt(S)."""
    p, single = _as_matrix(p)
    return _unwrap(combine_pvalues(p, method="stouffer", axis=1).pvalue, single)


def rop(p: np.ndarray, r: int):
    """r-th smallest p-value calibrated against Beta(r, S - r + 1)."""
    p, single = _as_matrix(p)
    n_studies = p.shape[1]
    if not 1 <= r <= n_studies:
        raise MetaPatDomainError(f"r={r} must lie in [1, S={n_studies}]")
    order_stat = np.sort(p, axis=1)[:, r - 1]
    return _unwrap(beta.cdf(order_stat, r, n_studies - r + 1), single)


def maxp(p: np.ndarray):
    """Largest p-value calibrated against Beta(S, 1)."""
    p, single = _as_matrix(p)
    return _unwrap(p.max(axis=1) ** p.shape[1], single)


def weight_vectors(n_studies: int) -> np.ndarray:
    """All nonzero binary weight vectors, fewest nonzero first, then lexicographic."""
    vectors = [v for v in itertools.product((0, 1), repeat=n_studies) if any(v)]
    vectors.sort(key=lambda v: (sum(v), v))
    return np.array(vectors, dtype=np.int8)


def aw_fisher(p: np.ndarray) -> AWResult:
    """Search the binary study weights minimizing the weighted Fisher tail probability."""
    p, _ = _as_matrix(p)
    n_studies = p.shape[1]
    if n_studies > AW_MAX_STUDIES:
        raise MetaPatUnsupportedError(
            f"AW-Fisher enumerates 2^S - 1 weights; S={n_studies} exceeds {AW_MAX_STUDIES}"
        )
    weights = weight_vectors(n_studies)
    stats = -2.0 * np.log(p) @ weights.T
    tails = chi2.sf(stats, 2 * weights.sum(axis=1))
    best = np.argmin(tails, axis=1)
    rows = np.arange(len(p))
    return AWResult(weights[best], stats[rows, best], tails[rows, best])


def bh_fdr(p: np.ndarray, level: float) -> np.ndarray:
    """Benjamini-Hochberg step-up declarations."""
    p = np.asarray(p, dtype=float)
    if not 0.0 < level < 1.0:
        raise MetaPatDomainError(f"FDR level must lie in (0, 1), got {level}")
    if not len(p):
        return np.zeros(0, dtype=bool)
    reject, *_ = multipletests(p, alpha=level, method="fdr_bh")
    return reject


def combine(
    p2: np.ndarray, method: str, r: int | None = None
) -> tuple[np.ndarray, AWResult | None]:
    """Dispatch to a combiner by name; returns per-gene p-values and AW details."""
    if method == "fisher":
        return fisher(np.atleast_2d(p2)), None
    if method == "stouffer":
        return stouffer(np.atleast_2d(p2)), None
    if method == "maxp":
        return maxp(np.atleast_2d(p2)), None
    if method == "rop":
        n_studies = np.atleast_2d(p2).shape[1]
        return rop(np.atleast_2d(p2), n_studies // 2 + 1 if r is None else r), None
    if method == "aw":
        result = aw_fisher(p2)
        # Plug-in: the uncalibrated minimum p goes straight into BH.
        return result.minp, result
    raise MetaPatDomainError(f"Unknown combination method {method!r}")
