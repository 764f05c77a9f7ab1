"""Per-study Dirichlet-process mixtures for the up- and down-regulated components.

Each side keeps Chinese-restaurant tables as sufficient statistics only: the
member count and the sum of member Z-values. Components have unit likelihood
variance and a N(0, sigma0_sq) base truncated to the side's half line, so all
posterior-predictive densities have closed forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
import math

import numpy as np
from scipy.special import log_ndtr

from .exceptions import MetaPatDomainError

NEW = -1

_LOG_2PI = math.log(2.0 * math.pi)


class Side(IntEnum):
    """Sign of an alternative component."""

    POSITIVE = 1
    NEGATIVE = -1


@dataclass(frozen=True)
class Component:
    """Read-only view of one table."""

    count: int
    sum_z: float


@dataclass
class DpSide:
    """Dirichlet-process mixture of one sign in one study."""

    side: Side
    alpha: float = 1.0
    sigma0_sq: float = 10.0
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sums: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=float))

    def __post_init__(self) -> None:
        """Validate hyperparameters."""
        self.side = Side(self.side)
        if not self.alpha > 0:
            raise MetaPatDomainError(f"alpha must be positive, got {self.alpha}")
        if not self.sigma0_sq > 0:
            raise MetaPatDomainError(f"sigma0_sq must be positive, got {self.sigma0_sq}")
        self.counts = np.asarray(self.counts, dtype=np.int64).copy()
        self.sums = np.asarray(self.sums, dtype=float).copy()

    def __len__(self) -> int:
        """Return the number of occupied components."""
        return len(self.counts)

    @property
    def components(self) -> list[Component]:
        """Return the current tables."""
        return [Component(int(n), float(s)) for n, s in zip(self.counts, self.sums)]

    @property
    def total(self) -> int:
        """Return the number of members over all components."""
        return int(self.counts.sum())

    def check_index(self, k: int) -> None:
        """Raise unless component k exists."""
        if not 0 <= k < len(self.counts):
            raise MetaPatDomainError(
                f"Component index {k} out of range for {len(self.counts)} components"
            )

    def log_predictive(self, z: float) -> tuple[np.ndarray, float]:
        """Return log predictive densities of all existing components and a new one."""
        sign = float(self.side)
        existing = _log_predictive(self.counts, self.sums, z, self.sigma0_sq, sign)
        new = float(_log_predictive(0, 0.0, z, self.sigma0_sq, sign))
        return existing, new

    def log_seating(self, z: float) -> np.ndarray:
        """Return log CRP-weighted predictives, existing components first, new last."""
        existing, new = self.log_predictive(z)
        log_norm = math.log(self.total + self.alpha)
        out = np.empty(len(existing) + 1)
        with np.errstate(divide="ignore"):
            out[:-1] = np.log(self.counts) - log_norm + existing
        out[-1] = math.log(self.alpha) - log_norm + new
        return out


def _log_predictive(counts, sums, z: float, sigma0_sq: float, sign: float):
    """Log of the integral of N(z; mu, 1) over the truncated-normal posterior of mu."""
    counts = np.asarray(counts, dtype=float)
    sums = np.asarray(sums, dtype=float)

    precision = counts * sigma0_sq + 1.0
    mean = sums * sigma0_sq / precision
    var = sigma0_sq / precision

    precision_z = (counts + 1.0) * sigma0_sq + 1.0
    mean_z = (sums + z) * sigma0_sq / precision_z
    var_z = sigma0_sq / precision_z

    pred_var = 1.0 + var
    log_normal = -0.5 * (_LOG_2PI + np.log(pred_var)) - (z - mean) ** 2 / (2.0 * pred_var)
    log_ratio = log_ndtr(sign * mean_z / np.sqrt(var_z)) - log_ndtr(
        sign * mean / np.sqrt(var)
    )
    return log_normal + log_ratio


def predictive_existing(side: DpSide, k: int, z: float) -> float:
    """Posterior-predictive density of z under component k."""
    side.check_index(k)
    return math.exp(
        _log_predictive(side.counts[k], side.sums[k], z, side.sigma0_sq, float(side.side))
    )


def predictive_new(side: DpSide, z: float) -> float:
    """Prior-predictive density of z under the truncated base distribution."""
    return math.exp(_log_predictive(0, 0.0, z, side.sigma0_sq, float(side.side)))


def assign(side: DpSide, k: int, z: float) -> int:
    """Seat z at component k, or at a fresh component when k is NEW."""
    if k == NEW:
        side.counts = np.append(side.counts, 1)
        side.sums = np.append(side.sums, z)
        return len(side.counts) - 1
    side.check_index(k)
    side.counts[k] += 1
    side.sums[k] += z
    return k


def remove(side: DpSide, k: int, z: float) -> bool:
    """Unseat z from component k.

    Returns True when the component emptied and was deleted; components above k
    then shift down by one index.
    """
    side.check_index(k)
    if side.counts[k] < 1:
        raise MetaPatDomainError(f"Component {k} is empty")
    side.counts[k] -= 1
    side.sums[k] -= z
    if side.counts[k] == 0:
        side.counts = np.delete(side.counts, k)
        side.sums = np.delete(side.sums, k)
        return True
    return False


def mixture_density(side: DpSide, z: float) -> float:
    """CRP-weighted predictive mixture of all components and a new one."""
    return float(np.exp(side.log_seating(z)).sum())
