"""Meta-pattern modules: cosine dissimilarity of posterior vectors and tight clustering.

Tight clustering repeatedly K-medoids-clusters random subsamples, measures how
often each pair of genes lands in the same cluster, and peels off the largest
group whose pairwise co-membership is high and stable between two consecutive
K. Genes never peeled off keep the scattered label 0.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform
from sklearn_extra.cluster import KMedoids

from .const import MIN_MODULE_SIZE
from .exceptions import MetaPatConfigError, MetaPatDomainError
from .streams import stream

_LOGGER = logging.getLogger(__name__)

SCATTERED = 0
MIN_SCAN_K = 2


@dataclass(frozen=True)
class TightClustConfig:
    """Tight clustering settings."""

    k_target: int = 6
    k_start: int | None = None
    n_resample: int = 50
    subsample_frac: float = 0.7
    tightness_alpha: float = 0.8
    stability_top: int = 3
    stability_beta: float = 0.8
    min_size: int = MIN_MODULE_SIZE
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the settings and default k_start to k_target + 5."""
        if self.k_target < 1:
            raise MetaPatConfigError(f"k_target must be positive, got {self.k_target}")
        if self.k_start is None:
            object.__setattr__(self, "k_start", self.k_target + 5)
        if self.k_start < 1 or self.n_resample < 1 or self.stability_top < 1:
            raise MetaPatConfigError("k_start, n_resample and stability_top must be positive")
        if not 0.0 < self.subsample_frac <= 1.0:
            raise MetaPatConfigError(
                f"subsample_frac must lie in (0, 1], got {self.subsample_frac}"
            )
        if not 0.5 < self.tightness_alpha <= 1.0:
            raise MetaPatConfigError(
                f"tightness_alpha must lie in (0.5, 1], got {self.tightness_alpha}"
            )
        if not 0.0 < self.stability_beta <= 1.0:
            raise MetaPatConfigError(
                f"stability_beta must lie in (0, 1], got {self.stability_beta}"
            )


@dataclass(frozen=True)
class ModuleAssignment:
    """Module labels; 0 marks scattered genes."""

    labels: np.ndarray

    @property
    def k_found(self) -> int:
        """Return the number of extracted modules."""
        return int(self.labels.max(initial=0))

    def members(self, module: int) -> np.ndarray:
        """Return the indices of the genes in ``module``."""
        return np.flatnonzero(self.labels == module)


def _check_triplets(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 3:
        raise MetaPatDomainError(f"Expected probability triplets, got shape {u.shape}")
    if (u < 0).any() or not np.allclose(u.sum(axis=-1), 1.0, atol=1e-9):
        raise MetaPatDomainError("Posterior triplets must be nonnegative and sum to 1")
    return u


def cosine_dissim(u_i: np.ndarray, u_j: np.ndarray) -> float:
    """Average over studies of one minus the cosine of the two triplets."""
    u_i = _check_triplets(u_i).reshape(-1, 3)
    u_j = _check_triplets(u_j).reshape(-1, 3)
    norms = np.linalg.norm(u_i, axis=1) * np.linalg.norm(u_j, axis=1)
    if (norms == 0).any():
        raise MetaPatDomainError("Zero-norm posterior triplet")
    cosine = (u_i * u_j).sum(axis=1) / norms
    return float(np.clip(np.mean(1.0 - cosine), 0.0, 1.0))


def dissimilarity_matrix(u: np.ndarray) -> np.ndarray:
    """Pairwise cosine dissimilarities of U with shape (n, S, 3)."""
    u = _check_triplets(u)
    unit = u / np.linalg.norm(u, axis=-1, keepdims=True)
    cosine = np.einsum("isk,jsk->ijs", unit, unit)
    d = np.clip(1.0 - cosine.mean(axis=-1), 0.0, 1.0)
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return d


def z_dissimilarity(z: np.ndarray) -> np.ndarray:
    """Euclidean distances between Z-statistic rows, scaled to [0, 1]."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or not np.isfinite(z).all():
        raise MetaPatDomainError("Z-statistics must form a finite two-dimensional matrix")
    d = squareform(pdist(z, metric="euclidean"))
    top = d.max(initial=0.0)
    return d / top if top > 0 else d


def _check_dissimilarity(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise MetaPatDomainError(f"Dissimilarity must be square, got shape {d.shape}")
    return d


def k_medoids(d: np.ndarray, k: int) -> np.ndarray:
    """Partition around medoids; returns labels in 0..k-1."""
    d = _check_dissimilarity(d)
    if not 1 <= k <= len(d):
        raise MetaPatDomainError(f"k={k} must lie in [1, n={len(d)}]")
    model = KMedoids(n_clusters=k, metric="precomputed", method="pam", init="build").fit(d)
    labels = np.asarray(model.labels_, dtype=np.int64)
    # Tied medoids (zero distance) must still label themselves.
    labels[model.medoid_indices_] = np.arange(k)
    return labels


def comembership(d: np.ndarray, k: int, cfg: TightClustConfig) -> np.ndarray:
    """Fraction of co-sampled resamples in which each pair shares a cluster.

    Subsamples keep their random order so that ties between equally good
    medoids break differently from one resample to the next.
    """
    n = len(d)
    if k <= 1:
        return np.ones((n, n))
    size = max(min(n, int(round(cfg.subsample_frac * n))), min(k, n))
    together = np.zeros((n, n))
    present = np.zeros((n, n))
    for b in range(cfg.n_resample):
        rng = stream(cfg.seed, "tight-resample", k, b)
        picked = rng.permutation(n)[:size]
        labels = k_medoids(d[np.ix_(picked, picked)], min(k, size))
        same = labels[:, None] == labels[None, :]
        present[np.ix_(picked, picked)] += 1.0
        together[np.ix_(picked, picked)] += same
    with np.errstate(invalid="ignore", divide="ignore"):
        m = np.where(present > 0, together / present, 0.0)
    np.fill_diagonal(m, 1.0)
    return m


def tight_sets(m: np.ndarray, alpha: float) -> list[np.ndarray]:
    """Maximal groups whose pairwise co-membership is at least alpha.

    Every gene not yet covered seeds one group that greedily absorbs the gene
    with the highest total co-membership to the group among those compatible
    with every member.
    """
    n = len(m)
    adjacent = m >= alpha
    covered = np.zeros(n, dtype=bool)
    found: dict[tuple[int, ...], np.ndarray] = {}
    for seed in range(n):
        if covered[seed]:
            continue
        group = [seed]
        score = m[:, seed].copy()
        compatible = adjacent[seed].copy()
        compatible[seed] = False
        while compatible.any():
            candidates = np.flatnonzero(compatible)
            pick = int(candidates[np.argmax(score[candidates])])
            group.append(pick)
            score += m[:, pick]
            compatible &= adjacent[pick]
            compatible[pick] = False
        key = tuple(sorted(group))
        covered[list(key)] = True
        found.setdefault(key, np.array(key))
    return list(found.values())


def _mean_comembership(m: np.ndarray, group: np.ndarray) -> float:
    if len(group) < 2:
        return 1.0
    block = m[np.ix_(group, group)]
    return float((block.sum() - len(group)) / (len(group) * (len(group) - 1)))


def _top_candidates(m: np.ndarray, cfg: TightClustConfig) -> list[np.ndarray]:
    groups = tight_sets(m, cfg.tightness_alpha)
    groups.sort(key=lambda g: (-len(g), -_mean_comembership(m, g), int(g[0])))
    return groups[: cfg.stability_top]


def _jaccard(a: np.ndarray, b: np.ndarray) -> float:
    return len(np.intersect1d(a, b)) / len(np.union1d(a, b))


def _stable_candidate(
    m_now: np.ndarray, m_next: np.ndarray, cfg: TightClustConfig
) -> tuple[np.ndarray, float] | None:
    """Return the best top candidate at K that reappears at K + 1."""
    best: tuple[tuple[int, float], np.ndarray] | None = None
    next_top = _top_candidates(m_next, cfg)
    for a in _top_candidates(m_now, cfg):
        if len(a) < cfg.min_size:
            continue
        if not any(_jaccard(a, b) >= cfg.stability_beta for b in next_top):
            continue
        key = (len(a), _mean_comembership(m_now, a))
        if best is None or key > best[0]:
            best = (key, a)
    return None if best is None else (best[1], best[0][1])


def tight_cluster(d: np.ndarray, cfg: TightClustConfig) -> ModuleAssignment:
    """Extract up to k_target tight modules from a dissimilarity matrix.

    Each round scans K downward from its starting value and peels off the
    first candidate that is stable between K and K + 1. Co-membership is
    always measured on all genes, so peeled modules keep shaping the
    partitions of the genes that remain. The starting K drops by one after
    every extracted module and the round that finds nothing ends the search.
    """
    d = _check_dissimilarity(d)
    n = len(d)
    if n < cfg.k_start:
        raise MetaPatDomainError(f"Need at least k_start={cfg.k_start} genes, got {n}")

    cache: dict[int, np.ndarray] = {}

    def at(k: int) -> np.ndarray:
        k = min(k, n)
        if k not in cache:
            cache[k] = comembership(d, k, cfg)
        return cache[k]

    labels = np.zeros(n, dtype=np.int64)
    remaining = np.arange(n)
    k = cfg.k_start
    module = 0

    while module < cfg.k_target and len(remaining) >= cfg.min_size:
        found, k_now = None, k
        window = np.ix_(remaining, remaining)
        # K = 1 puts every gene together and carries no stability signal.
        for k_now in range(max(k, MIN_SCAN_K), MIN_SCAN_K - 1, -1):
            found = _stable_candidate(at(k_now)[window], at(k_now + 1)[window], cfg)
            if found is not None:
                break
        if found is None:
            _LOGGER.debug(
                "No stable tight set of size >= %d below K=%d", cfg.min_size, k
            )
            break

        module += 1
        chosen = remaining[found[0]]
        labels[chosen] = module
        _LOGGER.debug(
            "Module %d: %d genes at K=%d (mean co-membership %.3f)",
            module,
            len(chosen),
            k_now,
            found[1],
        )
        remaining = np.setdiff1d(remaining, chosen)
        k = max(k - 1, MIN_SCAN_K)

    _LOGGER.info(
        "Tight clustering found %d modules, %d of %d genes scattered",
        module,
        int((labels == SCATTERED).sum()),
        n,
    )
    return ModuleAssignment(labels)


def contingency(labels: np.ndarray, truth: np.ndarray) -> pd.DataFrame:
    """Cross-tabulate module labels against true pattern labels."""
    return pd.crosstab(
        pd.Series(labels, name="module"), pd.Series(truth, name="truth")
    )


def module_purity(labels: np.ndarray, truth: np.ndarray) -> dict[int, tuple[str, float]]:
    """Return the majority truth label and its share for every nonzero module."""
    table = contingency(labels, truth)
    purity = {}
    for module, row in table.iterrows():
        if module == SCATTERED or row.sum() == 0:
            continue
        purity[int(module)] = (str(row.idxmax()), float(row.max() / row.sum()))
    return purity
