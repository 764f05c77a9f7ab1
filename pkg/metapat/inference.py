"""Decision-space local FDRs, Bayesian FDR declaration and confidence scores."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import logging

import numpy as np

from .exceptions import MetaPatDomainError
from .mcmc import PosteriorAccumulator

_LOGGER = logging.getLogger(__name__)


class SpaceKind(str, Enum):
    """How many studies must carry an effect for a gene to be alternative."""

    B = "B"  # at least one
    ABAR = "Abar"  # all
    RBAR = "rbar"  # at least r


def default_r(n_studies: int) -> int:
    """Return floor(S / 2) + 1."""
    return n_studies // 2 + 1


@dataclass(frozen=True)
class DecisionSpace:
    """A partition of the effect-size space by the number of DE studies."""

    kind: SpaceKind
    r: int | None = None

    def __post_init__(self) -> None:
        """Normalize the kind and check that r is given only for rbar."""
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if self.kind is SpaceKind.RBAR:
            if self.r is None or self.r < 1:
                raise MetaPatDomainError(f"rbar space needs r >= 1, got {self.r}")
        elif self.r is not None:
            raise MetaPatDomainError(f"r is only used by the rbar space, got {self.r}")

    @classmethod
    def parse(cls, kind: str, n_studies: int, r: int | None = None) -> DecisionSpace:
        """Build a space from its CLI name, defaulting r for rbar."""
        kind = SpaceKind(kind)
        if kind is SpaceKind.RBAR:
            return cls(kind, default_r(n_studies) if r is None else r)
        return cls(kind)

    def min_studies(self, n_studies: int) -> int:
        """Return the smallest number of DE studies in the alternative region."""
        if self.kind is SpaceKind.B:
            return 1
        if self.kind is SpaceKind.ABAR:
            return n_studies
        if self.r > n_studies:
            raise MetaPatDomainError(f"r={self.r} exceeds S={n_studies}")
        return self.r

    def label(self) -> str:
        """Return a short name such as 'rbar2'."""
        return f"{self.kind.value}{self.r}" if self.r is not None else self.kind.value


@dataclass(frozen=True)
class GeneDecision:
    """Declared genes under the Bayesian FDR rule."""

    xi: np.ndarray
    declared: np.ndarray
    kappa: float
    achieved_fdr: float

    @property
    def n_declared(self) -> int:
        """Return the number of declared genes."""
        return int(self.declared.sum())


def compute_xi(acc: PosteriorAccumulator, space: DecisionSpace) -> np.ndarray:
    """Return the per-gene posterior probability of the null region.

    The alternative event is evaluated per retained sample from the joint
    count of DE studies, not from products of per-study marginals.
    """
    if acc.n_samples < 1:
        raise MetaPatDomainError("compute_xi needs at least one retained sample")
    r = space.min_studies(acc.n_studies)
    alternative = acc.k_hist[:, r:].sum(axis=1)
    return 1.0 - alternative / acc.n_samples


def bayes_fdr_declare(xi: np.ndarray, level: float) -> GeneDecision:
    """Declare the largest set of smallest-xi genes whose mean xi stays <= level.

    Genes with equal xi are declared or rejected together.
    """
    xi = np.asarray(xi, dtype=float)
    if not 0.0 < level < 1.0:
        raise MetaPatDomainError(f"FDR level must lie in (0, 1), got {level}")
    if ((xi < 0.0) | (xi > 1.0)).any():
        raise MetaPatDomainError("xi entries must lie in [0, 1]")

    declared = np.zeros(len(xi), dtype=bool)
    if not len(xi):
        return GeneDecision(xi, declared, 0.0, 0.0)

    order = np.argsort(xi, kind="stable")
    ordered = xi[order]
    running_mean = np.cumsum(ordered) / np.arange(1, len(ordered) + 1)
    # A prefix may only end where the next value differs.
    group_end = np.append(ordered[1:] != ordered[:-1], True)
    admissible = np.flatnonzero(group_end & (running_mean <= level))

    if not len(admissible):
        return GeneDecision(xi, declared, 0.0, 0.0)

    last = admissible[-1]
    declared[order[: last + 1]] = True
    return GeneDecision(xi, declared, float(ordered[last]), float(running_mean[last]))


def confidence_scores(acc: PosteriorAccumulator) -> np.ndarray:
    """Return V = Pr(Y=+1) - Pr(Y=-1) per gene and study."""
    if acc.n_samples < 1:
        raise MetaPatDomainError("confidence_scores needs at least one retained sample")
    return (acc.count_pos - acc.count_neg) / acc.n_samples


def posterior_vectors(acc: PosteriorAccumulator) -> np.ndarray:
    """Return U with shape (G, S, 3) ordered as (up, down, null)."""
    return acc.probabilities()
