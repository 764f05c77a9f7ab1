"""Realized FDR, FNR and AUC of declared gene sets against simulated truth."""
from __future__ import annotations

from dataclasses import asdict, dataclass
import logging
from typing import Any

import numpy as np
from scipy.stats import rankdata

from .exceptions import MetaPatDomainError
from .inference import DecisionSpace
from .simgen import SimTruth

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalReport:
    """Evaluation of one declared set."""

    space: DecisionSpace
    fdr: float
    fnr: float
    auc: float
    n_declared: int
    n_true_alt: int

    def as_dict(self) -> dict[str, Any]:
        """Return a JSON-ready mapping."""
        data = asdict(self)
        data["space"] = self.space.label()
        return data


def truth_label(truth: SimTruth, space: DecisionSpace) -> np.ndarray:
    """Return whether each gene lies in the alternative region of ``space``."""
    n_studies = len(truth.study_ids)
    return truth.n_de_studies >= space.min_studies(n_studies)


def auc(score: np.ndarray, truth_alt: np.ndarray) -> float:
    """Rank-sum AUC with midranks for ties; 0.5 when one class is empty."""
    score = np.asarray(score, dtype=float)
    truth_alt = np.asarray(truth_alt, dtype=bool)
    n_alt = int(truth_alt.sum())
    n_null = len(truth_alt) - n_alt
    if not n_alt or not n_null:
        return 0.5
    ranks = rankdata(score)
    rank_sum = ranks[truth_alt].sum()
    return float((rank_sum - n_alt * (n_alt + 1) / 2.0) / (n_alt * n_null))


def evaluate(
    declared: np.ndarray,
    score: np.ndarray,
    truth_alt: np.ndarray,
    space: DecisionSpace | None = None,
) -> EvalReport:
    """Compare a declared set and a ranking score with the true alternatives.

    FDR is FP / max(1, declared) and FNR is FN / G.
    """
    declared = np.asarray(declared, dtype=bool)
    truth_alt = np.asarray(truth_alt, dtype=bool)
    score = np.asarray(score, dtype=float)
    if not declared.shape == truth_alt.shape == score.shape or declared.ndim != 1:
        raise MetaPatDomainError(
            f"Shapes differ: declared {declared.shape}, score {score.shape}, "
            f"truth {truth_alt.shape}"
        )
    if not len(declared):
        raise MetaPatDomainError("Cannot evaluate an empty gene set")

    n_declared = int(declared.sum())
    false_pos = int((declared & ~truth_alt).sum())
    false_neg = int((~declared & truth_alt).sum())
    report = EvalReport(
        space if space is not None else DecisionSpace("B"),
        false_pos / max(1, n_declared),
        false_neg / len(declared),
        auc(score, truth_alt),
        n_declared,
        int(truth_alt.sum()),
    )
    _LOGGER.debug(
        "%s: declared %d, FDR %.4f, FNR %.4f, AUC %.4f",
        report.space.label(),
        n_declared,
        report.fdr,
        report.fnr,
        report.auc,
    )
    return report
