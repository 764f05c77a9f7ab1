"""Synthetic multi-study expression data with known differential expression.

Genes are partly grouped into correlated clusters whose per-study covariance
is a standardized inverse-Wishart draw; effects are added to case samples of
the studies in which a gene is DE.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import invwishart, truncnorm, ttest_ind

from .const import METAPATTERN_LABELS, METAPATTERN_STUDIES, UNBALANCED_DESIGNS
from .exceptions import MetaPatConfigError, MetaPatDomainError, MetaPatFormatError
from .io_transform import write_table
from .streams import stream

_LOGGER = logging.getLogger(__name__)

GENE_EFFECT_FLOOR = 0.5
GENE_EFFECT_MEAN = 1.0
GENE_EFFECT_SD = 1.0
STUDY_EFFECT_SD = 0.2
METAPATTERN_SHARE = 0.04
COV_JITTER = 1e-10

NON_DE = "nonDE"


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; n_cases and n_controls hold one entry per study."""

    G: int = 10_000  # pylint: disable=invalid-name
    S: int = 3  # pylint: disable=invalid-name
    n_cases: tuple[int, ...] = (20, 20, 20)
    n_controls: tuple[int, ...] = (20, 20, 20)
    sigma: float = 1.0
    n_clusters: int = 200
    cluster_size: int = 20
    wishart_df: int = 60
    de_fraction: float = 0.30
    scenario: str = "general"
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate sizes and broadcast scalar sample sizes over studies."""
        for name in ("n_cases", "n_controls"):
            value = getattr(self, name)
            if np.isscalar(value):
                value = (int(value),) * self.S
            object.__setattr__(self, name, tuple(int(v) for v in value))
        if self.G < 1 or self.S < 1:
            raise MetaPatConfigError("G and S must be positive")
        if len(self.n_cases) != self.S or len(self.n_controls) != self.S:
            raise MetaPatConfigError("n_cases and n_controls need one entry per study")
        if min(self.n_cases + self.n_controls) < 2:
            raise MetaPatConfigError("Every group needs at least 2 samples")
        if self.n_clusters * self.cluster_size > self.G:
            raise MetaPatConfigError(
                f"{self.n_clusters} clusters of {self.cluster_size} exceed G={self.G}"
            )
        if self.n_clusters and self.wishart_df <= self.cluster_size + 1:
            raise MetaPatConfigError(
                f"wishart_df={self.wishart_df} must exceed cluster_size + 1"
            )
        if not 0.0 <= self.de_fraction < 1.0:
            raise MetaPatConfigError(f"de_fraction must lie in [0, 1), got {self.de_fraction}")
        if not self.sigma > 0:
            raise MetaPatConfigError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def for_scenario(cls, scenario: str, **overrides) -> SimConfig:
        """Return the settings of a named scenario, with overrides applied."""
        if scenario in UNBALANCED_DESIGNS:
            design = UNBALANCED_DESIGNS[scenario]
            overrides.update(
                S=len(design),
                n_cases=tuple(c for c, _ in design),
                n_controls=tuple(n for _, n in design),
            )
        elif scenario == "metapattern":
            overrides.update(S=METAPATTERN_STUDIES, sigma=1.0)
        elif scenario != "general":
            raise MetaPatConfigError(f"Unknown scenario {scenario!r}")
        n_studies = overrides.get("S", cls.S)
        overrides.setdefault("n_cases", (20,) * n_studies)
        overrides.setdefault("n_controls", (20,) * n_studies)
        return cls(scenario=scenario, **overrides)

    @property
    def study_ids(self) -> tuple[str, ...]:
        """Return s1..sS."""
        return tuple(f"s{s + 1}" for s in range(self.S))

    @property
    def gene_ids(self) -> tuple[str, ...]:
        """Return zero-padded gene IDs."""
        width = len(str(self.G))
        return tuple(f"g{g + 1:0{width}d}" for g in range(self.G))


@dataclass(frozen=True)
class SimTruth:
    """Ground truth of one simulated data set.

    direction holds d_g: DE effects are (-1)**d_g * theta_gs, so 0 is up.
    """

    gene_ids: tuple[str, ...]
    study_ids: tuple[str, ...]
    de_studies: np.ndarray
    theta_g: np.ndarray
    theta_gs: np.ndarray
    direction: np.ndarray
    cluster: np.ndarray
    pattern: tuple[str, ...] = field(default=())

    @property
    def is_de(self) -> np.ndarray:
        """Return whether each gene is DE in at least one study."""
        return self.de_studies.any(axis=1)

    @property
    def n_de_studies(self) -> np.ndarray:
        """Return |v_g|, the number of studies in which each gene is DE."""
        return self.de_studies.sum(axis=1)

    def effects(self) -> np.ndarray:
        """Return the signed G x S effect sizes."""
        return np.where(self.de_studies, (-1.0) ** self.direction[:, None] * self.theta_gs, 0.0)


@dataclass(frozen=True)
class StudyExpression:
    """Samples x genes expression of one study; controls come first."""

    values: np.ndarray
    is_case: np.ndarray


@dataclass(frozen=True)
class ExpressionSet:
    """Expression of all studies."""

    gene_ids: tuple[str, ...]
    study_ids: tuple[str, ...]
    studies: tuple[StudyExpression, ...]


def _psi(dim: int) -> np.ndarray:
    return 0.5 * np.eye(dim) + 0.5 * np.ones((dim, dim))


def cluster_covariance(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """One standardized inverse-Wishart covariance scaled by sigma^2."""
    dim = cfg.cluster_size
    if cfg.wishart_df <= dim + 1:
        raise MetaPatDomainError(f"wishart_df={cfg.wishart_df} must exceed {dim + 1}")
    draw = np.atleast_2d(invwishart.rvs(df=cfg.wishart_df, scale=_psi(dim), random_state=rng))
    scale = np.sqrt(np.diag(draw))
    corr = draw / np.outer(scale, scale)
    corr = (corr + corr.T) / 2.0
    np.fill_diagonal(corr, 1.0)
    cov = cfg.sigma**2 * corr
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        _LOGGER.warning("Covariance draw not positive definite; adding diagonal jitter")
        cov = cov + COV_JITTER * np.eye(dim)
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise MetaPatDomainError("Covariance draw is not positive definite") from exc
    return cov


def sample_cov(cfg: SimConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Covariances with shape (n_clusters, S, size, size).

    Without ``rng`` every (cluster, study) block uses its own stream.
    """
    dim = cfg.cluster_size
    out = np.empty((cfg.n_clusters, cfg.S, dim, dim))
    for c in range(cfg.n_clusters):
        for s in range(cfg.S):
            block_rng = rng if rng is not None else stream(cfg.seed, "sim-cov", c, s)
            out[c, s] = cluster_covariance(cfg, block_rng)
    return out


def _cluster_membership(cfg: SimConfig) -> np.ndarray:
    """Cluster index per gene, 0 for uncorrelated genes."""
    rng = stream(cfg.seed, "sim-clusters")
    membership = np.zeros(cfg.G, dtype=np.int64)
    clustered = rng.permutation(cfg.G)[: cfg.n_clusters * cfg.cluster_size]
    membership[clustered] = np.repeat(np.arange(1, cfg.n_clusters + 1), cfg.cluster_size)
    return membership


def _background(cfg: SimConfig, membership: np.ndarray) -> list[np.ndarray]:
    """Effect-free expression X' per study."""
    covs = sample_cov(cfg)
    members = [np.flatnonzero(membership == c + 1) for c in range(cfg.n_clusters)]
    free = np.flatnonzero(membership == 0)
    studies = []
    for s in range(cfg.S):
        n_samples = cfg.n_controls[s] + cfg.n_cases[s]
        values = np.empty((n_samples, cfg.G))
        rng = stream(cfg.seed, "sim-expr", s, cfg.n_clusters)
        values[:, free] = rng.normal(0.0, cfg.sigma, size=(n_samples, len(free)))
        for c, genes in enumerate(members):
            rng = stream(cfg.seed, "sim-expr", s, c)
            chol = np.linalg.cholesky(covs[c, s])
            values[:, genes] = rng.standard_normal((n_samples, len(genes))) @ chol.T
        studies.append(values)
    return studies


def _effect_sizes(
    de_studies: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Gene-level N_{0.5+}(1, 1) and study-level N_{0+}(theta_g, 0.2^2) effects."""
    n_genes = len(de_studies)
    theta_g = np.zeros(n_genes)
    theta_gs = np.zeros(de_studies.shape)
    de_genes = np.flatnonzero(de_studies.any(axis=1))
    if not len(de_genes):
        return theta_g, theta_gs
    lower = (GENE_EFFECT_FLOOR - GENE_EFFECT_MEAN) / GENE_EFFECT_SD
    theta_g[de_genes] = truncnorm.rvs(
        lower,
        np.inf,
        loc=GENE_EFFECT_MEAN,
        scale=GENE_EFFECT_SD,
        size=len(de_genes),
        random_state=rng,
    )
    for g in de_genes:
        studies = np.flatnonzero(de_studies[g])
        theta_gs[g, studies] = truncnorm.rvs(
            -theta_g[g] / STUDY_EFFECT_SD,
            np.inf,
            loc=theta_g[g],
            scale=STUDY_EFFECT_SD,
            size=len(studies),
            random_state=rng,
        )
    return theta_g, theta_gs


def _assemble(
    cfg: SimConfig,
    de_studies: np.ndarray,
    direction: np.ndarray,
    pattern: tuple[str, ...] = (),
) -> tuple[ExpressionSet, SimTruth]:
    membership = _cluster_membership(cfg)
    theta_g, theta_gs = _effect_sizes(de_studies, stream(cfg.seed, "sim-effects"))
    truth = SimTruth(
        cfg.gene_ids,
        cfg.study_ids,
        de_studies,
        theta_g,
        theta_gs,
        direction,
        membership,
        pattern,
    )

    effects = truth.effects()
    studies = []
    for s, values in enumerate(_background(cfg, membership)):
        is_case = np.arange(len(values)) >= cfg.n_controls[s]
        values[is_case] += effects[:, s]
        studies.append(StudyExpression(values, is_case))

    _LOGGER.info(
        "Simulated %s scenario: %d genes, %d studies, %d DE genes",
        cfg.scenario,
        cfg.G,
        cfg.S,
        int(truth.is_de.sum()),
    )
    return ExpressionSet(cfg.gene_ids, cfg.study_ids, tuple(studies)), truth


def generate(cfg: SimConfig) -> tuple[ExpressionSet, SimTruth]:
    """Simulate the general scenario: the first de_fraction * G genes are DE.

    Each DE gene is DE in a uniformly sized random subset of studies with one
    random direction.
    """
    rng = stream(cfg.seed, "sim-de")
    n_de = int(round(cfg.de_fraction * cfg.G))
    de_studies = np.zeros((cfg.G, cfg.S), dtype=bool)
    direction = np.zeros(cfg.G, dtype=np.int64)
    for g in range(n_de):
        size = rng.integers(1, cfg.S + 1)
        de_studies[g, rng.choice(cfg.S, size=size, replace=False)] = True
        direction[g] = rng.integers(0, 2)
    return _assemble(cfg, de_studies, direction)


def metapattern_groups(n_genes: int) -> list[tuple[str, int]]:
    """Sizes of the planted pattern groups, in gene order."""
    half = int(round(METAPATTERN_SHARE * n_genes)) // 2
    quarter = int(round(METAPATTERN_SHARE * n_genes)) // 4
    groups = [("homo-", half), ("homo+", half)]
    groups += [(label, quarter) for label in METAPATTERN_LABELS[2:6]]
    used = sum(size for _, size in groups)
    return groups + [(NON_DE, n_genes - used)]


def generate_metapattern(cfg: SimConfig) -> tuple[ExpressionSet, SimTruth]:
    """Simulate concordant and study-specific DE patterns over four studies."""
    if cfg.S != METAPATTERN_STUDIES:
        cfg = replace(
            cfg,
            S=METAPATTERN_STUDIES,
            n_cases=(cfg.n_cases[0],) * METAPATTERN_STUDIES,
            n_controls=(cfg.n_controls[0],) * METAPATTERN_STUDIES,
        )
    de_studies = np.zeros((cfg.G, cfg.S), dtype=bool)
    direction = np.zeros(cfg.G, dtype=np.int64)
    pattern: list[str] = []
    start = 0
    for label, size in metapattern_groups(cfg.G):
        genes = slice(start, start + size)
        if label.startswith("homo"):
            de_studies[genes, :] = True
        elif label.startswith("ssp1"):
            de_studies[genes, 0] = True
        elif label.startswith("ssp2"):
            de_studies[genes, 1] = True
        if label.endswith("-"):
            direction[genes] = 1
        pattern += [label] * size
        start += size
    return _assemble(cfg, de_studies, direction, tuple(pattern))


def simulate(cfg: SimConfig) -> tuple[ExpressionSet, SimTruth]:
    """Dispatch on the configured scenario."""
    if cfg.scenario == "metapattern":
        return generate_metapattern(cfg)
    return generate(cfg)


def t_test_pvalues(es: ExpressionSet) -> tuple[np.ndarray, np.ndarray]:
    """Welch two-sample t-tests of cases against controls per gene and study.

    Returns two-sided p-values and the sign of the case-minus-control mean.
    """
    p2 = np.empty((len(es.gene_ids), len(es.studies)))
    sign = np.empty(p2.shape, dtype=np.int64)
    for s, study in enumerate(es.studies):
        cases = study.values[study.is_case]
        controls = study.values[~study.is_case]
        result = ttest_ind(cases, controls, axis=0, equal_var=False)
        p2[:, s] = result.pvalue
        sign[:, s] = np.where(cases.mean(axis=0) >= controls.mean(axis=0), 1, -1)
    return p2, sign


def truth_frame(truth: SimTruth) -> pd.DataFrame:
    """Return the truth table written to truth.tsv."""
    frame = pd.DataFrame(
        {
            "gene_id": list(truth.gene_ids),
            "pattern": list(truth.pattern) if truth.pattern else [""] * len(truth.gene_ids),
            "cluster": truth.cluster,
            "direction": truth.direction,
            "theta_g": truth.theta_g,
        }
    )
    for s, study in enumerate(truth.study_ids):
        frame[f"de_{study}"] = truth.de_studies[:, s].astype(int)
    for s, study in enumerate(truth.study_ids):
        frame[f"theta_{study}"] = truth.theta_gs[:, s]
    return frame


def write_truth(path: str | Path, truth: SimTruth, header: str | None = None) -> None:
    """Write the truth table with round-trip float precision."""
    write_table(path, truth_frame(truth), header, float_format="%.17g")


def read_truth(path: str | Path) -> SimTruth:
    """Read a truth table written by ``write_truth``."""
    try:
        frame = pd.read_csv(
            path,
            sep="\t",
            comment="#",
            keep_default_na=False,
            float_precision="round_trip",
            dtype={"gene_id": str, "pattern": str},
        )
    except (OSError, pd.errors.ParserError) as exc:
        raise MetaPatFormatError(f"Cannot read truth file {path}: {exc}") from exc

    de_columns = [c for c in frame.columns if c.startswith("de_")]
    if not de_columns or "gene_id" not in frame:
        raise MetaPatFormatError(f"{path} is not a truth table")
    study_ids = tuple(c[3:] for c in de_columns)
    pattern = tuple(frame["pattern"])
    return SimTruth(
        tuple(frame["gene_id"]),
        study_ids,
        frame[de_columns].to_numpy(dtype=bool),
        frame["theta_g"].to_numpy(dtype=float),
        frame[[f"theta_{s}" for s in study_ids]].to_numpy(dtype=float),
        frame["direction"].to_numpy(dtype=np.int64),
        frame["cluster"].to_numpy(dtype=np.int64),
        pattern if any(pattern) else (),
    )


def sample_labels(study: StudyExpression) -> list[str]:
    """Column names of a study's expression file."""
    n_controls = int((~study.is_case).sum())
    return [f"ctrl_{i + 1}" for i in range(n_controls)] + [
        f"case_{i + 1}" for i in range(int(study.is_case.sum()))
    ]
