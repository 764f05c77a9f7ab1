"""Namespace wrapper turning validated config data into pipeline stages."""
from __future__ import annotations

from collections.abc import Mapping
import logging
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import mcmc
from .baselines import bh_fdr, combine
from .const import (
    CONF_ALPHA_NEG,
    CONF_ALPHA_POS,
    CONF_BETA,
    CONF_BURN_IN,
    CONF_CHECKPOINT_EVERY,
    CONF_CLUSTER_SIZE,
    CONF_DE_FRACTION,
    CONF_FDR,
    CONF_G,
    CONF_GAMMA_PROPOSAL_SD,
    CONF_K_START,
    CONF_K_TARGET,
    CONF_METHOD,
    CONF_N_CASES,
    CONF_N_CLUSTERS,
    CONF_N_CONTROLS,
    CONF_N_ITER,
    CONF_N_RESAMPLE,
    CONF_R,
    CONF_S,
    CONF_SCENARIO,
    CONF_SEED,
    CONF_SIGMA,
    CONF_SIGMA0_SQ,
    CONF_SPACE,
    CONF_STABILITY_BETA,
    CONF_STABILITY_TOP,
    CONF_SUBSAMPLE_FRAC,
    CONF_THIN,
    CONF_THREADS,
    CONF_TIGHTNESS_ALPHA,
    CONF_WISHART_DF,
    DEFAULTS,
)
from .coordinator import BenchCoordinator
from .exceptions import MetaPatFormatError, MetaPatInputError
from .inference import (
    DecisionSpace,
    GeneDecision,
    bayes_fdr_declare,
    compute_xi,
    confidence_scores,
    posterior_vectors,
)
from .io_transform import (
    KIND_PVALUE,
    KIND_ZSTAT,
    ZMatrix,
    one_sided_to_two_sided,
    p_to_z,
    parse_matrix,
    provenance,
    read_table,
    two_sided_to_one_sided,
    write_json,
    write_matrix,
    write_table,
)
from .metapattern import (
    ModuleAssignment,
    TightClustConfig,
    dissimilarity_matrix,
    tight_cluster,
    z_dissimilarity,
)
from .metrics import EvalReport, evaluate as evaluate_declared, truth_label
from .simgen import (
    ExpressionSet,
    SimConfig,
    SimTruth,
    read_truth,
    sample_labels,
    simulate as simulate_data,
    t_test_pvalues,
    write_truth,
)

_LOGGER = logging.getLogger(__name__)

FILE_TRUTH = "truth.tsv"
FILE_P2 = "p2.tsv"
FILE_SIGN = "sign.tsv"
FILE_Z = "z.tsv"
EXPRESSION_PATTERN = "expr_{}.tsv"


def _get(data: Mapping[str, Any], key: str) -> Any:
    return data.get(key, DEFAULTS[key])


def create_mcmc_config(data: Mapping[str, Any]) -> mcmc.McmcConfig:
    """Construct sampler settings from config data."""
    return mcmc.McmcConfig(
        n_iter=_get(data, CONF_N_ITER),
        burn_in=_get(data, CONF_BURN_IN),
        thin=_get(data, CONF_THIN),
        seed=_get(data, CONF_SEED),
        beta=_get(data, CONF_BETA),
        sigma0_sq=_get(data, CONF_SIGMA0_SQ),
        alpha_pos=_get(data, CONF_ALPHA_POS),
        alpha_neg=_get(data, CONF_ALPHA_NEG),
        gamma_proposal_sd=_get(data, CONF_GAMMA_PROPOSAL_SD),
        checkpoint_every=_get(data, CONF_CHECKPOINT_EVERY),
        threads=_get(data, CONF_THREADS),
    )


def create_tight_config(data: Mapping[str, Any]) -> TightClustConfig:
    """Construct tight clustering settings from config data."""
    return TightClustConfig(
        k_target=_get(data, CONF_K_TARGET),
        k_start=_get(data, CONF_K_START),
        n_resample=_get(data, CONF_N_RESAMPLE),
        subsample_frac=_get(data, CONF_SUBSAMPLE_FRAC),
        tightness_alpha=_get(data, CONF_TIGHTNESS_ALPHA),
        stability_top=_get(data, CONF_STABILITY_TOP),
        stability_beta=_get(data, CONF_STABILITY_BETA),
        seed=_get(data, CONF_SEED),
    )


def create_sim_config(data: Mapping[str, Any]) -> SimConfig:
    """Construct simulation settings from config data.

    Named scenarios may override S and the per-study sample sizes.
    """
    overrides = {
        "G": _get(data, CONF_G),
        "S": _get(data, CONF_S),
        "sigma": _get(data, CONF_SIGMA),
        "n_clusters": _get(data, CONF_N_CLUSTERS),
        "cluster_size": _get(data, CONF_CLUSTER_SIZE),
        "wishart_df": _get(data, CONF_WISHART_DF),
        "de_fraction": _get(data, CONF_DE_FRACTION),
        "seed": _get(data, CONF_SEED),
    }
    for key in (CONF_N_CASES, CONF_N_CONTROLS):
        value = _get(data, key)
        overrides[key] = tuple(value) if isinstance(value, (list, tuple)) else value
    return SimConfig.for_scenario(_get(data, CONF_SCENARIO), **overrides)


def load_z(input_path: str | Path, kind: str = KIND_ZSTAT) -> ZMatrix:
    """Read Z-statistics, or one-sided p-values converted to Z."""
    matrix = parse_matrix(input_path, kind)
    return p_to_z(matrix) if kind == KIND_PVALUE else matrix


def fit(
    input_path: str | Path,
    data: Mapping[str, Any],
    out_dir: str | Path,
    kind: str = KIND_ZSTAT,
    resume: str | Path | None = None,
) -> mcmc.PosteriorAccumulator:
    """Sample the posterior and write its summaries to ``out_dir``."""
    z = load_z(input_path, kind)
    cfg = create_mcmc_config(data)
    acc = mcmc.run(z, cfg, checkpoint_dir=out_dir, resume_from=resume)
    mcmc.write_posterior(out_dir, acc, z, cfg, dict(data))
    return acc


def infer(
    posterior_dir: str | Path, data: Mapping[str, Any], out_path: str | Path
) -> GeneDecision:
    """Declare genes of one decision space and write decisions.tsv."""
    acc, gene_ids, study_ids = mcmc.load_posterior(posterior_dir)
    space = DecisionSpace.parse(_get(data, CONF_SPACE), acc.n_studies, _get(data, CONF_R))
    xi = compute_xi(acc, space)
    decision = bayes_fdr_declare(xi, _get(data, CONF_FDR))

    frame = pd.DataFrame(
        {"gene_id": list(gene_ids), "xi": xi, "declared": decision.declared.astype(int)}
    )
    scores = confidence_scores(acc)
    for s, study in enumerate(study_ids):
        frame[f"V_{study}"] = scores[:, s]

    header = "\n".join(
        (
            provenance(data.get(CONF_SEED), data),
            f"# space={space.label()} fdr={_get(data, CONF_FDR)} "
            f"kappa={decision.kappa:.10g} achieved_fdr={decision.achieved_fdr:.10g} "
            f"n_declared={decision.n_declared}",
        )
    )
    write_table(out_path, frame, header)
    _LOGGER.info(
        "Declared %d of %d genes in space %s (kappa %.4g)",
        decision.n_declared,
        len(xi),
        space.label(),
        decision.kappa,
    )
    return decision


def read_gene_list(path: str | Path) -> list[str]:
    """Read the gene IDs of a gene list or of the declared rows of decisions.tsv."""
    frame = read_table(path)
    if "gene_id" not in frame:
        raise MetaPatFormatError(f"{path} has no gene_id column")
    if "declared" in frame:
        frame = frame[frame["declared"].astype(int) == 1]
    return frame["gene_id"].astype(str).tolist()


def cluster(
    posterior_dir: str | Path,
    genes_path: str | Path,
    data: Mapping[str, Any],
    out_path: str | Path,
    z_path: str | Path | None = None,
) -> ModuleAssignment:
    """Tight-cluster the listed genes and write modules.tsv.

    Genes are compared by their posterior vectors, or by their raw
    Z-statistics when ``z_path`` names a Z matrix.
    """
    acc, gene_ids, study_ids = mcmc.load_posterior(posterior_dir)
    genes = read_gene_list(genes_path)
    index = {g: i for i, g in enumerate(gene_ids)}
    missing = [g for g in genes if g not in index]
    if missing:
        raise MetaPatInputError("Gene not in posterior", gene=missing[0])
    rows = np.array([index[g] for g in genes], dtype=np.int64)

    if z_path is not None:
        d = z_dissimilarity(parse_matrix(z_path, KIND_ZSTAT).subset(genes).values)
    else:
        d = dissimilarity_matrix(posterior_vectors(acc)[rows])
    modules = tight_cluster(d, create_tight_config(data))

    frame = pd.DataFrame({"gene_id": genes, "module_label": modules.labels})
    scores = confidence_scores(acc)[rows]
    for s, study in enumerate(study_ids):
        frame[f"V_{study}"] = scores[:, s]
    write_table(out_path, frame, provenance(data.get(CONF_SEED), data))
    return modules


def baselines(
    input_path: str | Path,
    data: Mapping[str, Any],
    out_path: str | Path,
    one_sided: bool = False,
) -> np.ndarray:
    """Combine two-sided p-values, declare by BH and write the result table.

    With ``one_sided`` the input holds one-sided p-values, which are folded
    back to two-sided ones first.
    """
    p2 = parse_matrix(input_path, KIND_PVALUE)
    values = one_sided_to_two_sided(p2.values) if one_sided else p2.values
    method = _get(data, CONF_METHOD)
    pvalues, aw_result = combine(values, method, _get(data, CONF_R))
    declared = bh_fdr(pvalues, _get(data, CONF_FDR))

    frame = pd.DataFrame(
        {"gene_id": list(p2.gene_ids), "pvalue": pvalues, "declared": declared.astype(int)}
    )
    if aw_result is not None:
        for s, study in enumerate(p2.study_ids):
            frame[f"w_{study}"] = aw_result.weights[:, s].astype(int)
    write_table(out_path, frame, provenance(data.get(CONF_SEED), data))
    _LOGGER.info("%s declared %d of %d genes", method, int(declared.sum()), len(declared))
    return declared


def write_expression(out_dir: str | Path, es: ExpressionSet, header: str) -> None:
    """Write one genes x samples TSV per study."""
    for study_id, study in zip(es.study_ids, es.studies):
        frame = pd.DataFrame(study.values.T, columns=sample_labels(study))
        frame.insert(0, "gene_id", list(es.gene_ids))
        write_table(Path(out_dir) / EXPRESSION_PATTERN.format(study_id), frame, header)


def simulate(
    data: Mapping[str, Any], out_dir: str | Path
) -> tuple[ExpressionSet, SimTruth]:
    """Simulate a scenario and write expression, truth and derived statistics."""
    out_dir = Path(out_dir)
    cfg = create_sim_config(data)
    es, truth = simulate_data(cfg)
    header = provenance(cfg.seed, data)

    write_expression(out_dir, es, header)
    write_truth(out_dir / FILE_TRUTH, truth, header)

    p2, sign = t_test_pvalues(es)
    write_matrix(out_dir / FILE_P2, p2, es.gene_ids, es.study_ids, header, "%.17g")
    write_matrix(out_dir / FILE_SIGN, sign, es.gene_ids, es.study_ids, header)
    z = p_to_z(two_sided_to_one_sided(p2, sign, es.gene_ids, es.study_ids))
    write_matrix(out_dir / FILE_Z, z.values, es.gene_ids, es.study_ids, header, "%.17g")
    return es, truth


def evaluate(
    decisions_path: str | Path,
    truth_path: str | Path,
    data: Mapping[str, Any],
    out_path: str | Path,
) -> EvalReport:
    """Score a decisions or baseline table against the truth; write report.json.

    The ranking score is 1 - xi for posterior decisions and 1 - p otherwise.
    """
    frame = read_table(decisions_path)
    for column in ("gene_id", "declared"):
        if column not in frame:
            raise MetaPatFormatError(f"{decisions_path} has no {column} column")
    if "xi" in frame:
        score_column = "xi"
    elif "pvalue" in frame:
        score_column = "pvalue"
    else:
        raise MetaPatFormatError(f"{decisions_path} has neither xi nor pvalue")

    truth = read_truth(truth_path)
    space = DecisionSpace.parse(_get(data, CONF_SPACE), len(truth.study_ids), _get(data, CONF_R))
    index = {g: i for i, g in enumerate(truth.gene_ids)}
    gene_ids = frame["gene_id"].astype(str).tolist()
    missing = [g for g in gene_ids if g not in index]
    if missing:
        raise MetaPatInputError("Gene not in truth table", gene=missing[0])
    if len(gene_ids) != len(index):
        raise MetaPatFormatError(
            f"{decisions_path} lists {len(gene_ids)} genes, truth has {len(index)}"
        )
    rows = np.array([index[g] for g in gene_ids], dtype=np.int64)

    report = evaluate_declared(
        frame["declared"].to_numpy(dtype=int) == 1,
        1.0 - frame[score_column].to_numpy(dtype=float),
        truth_label(truth, space)[rows],
        space,
    )
    write_json(
        out_path,
        {
            **report.as_dict(),
            "provenance": provenance(data.get(CONF_SEED), data).lstrip("# "),
            "config": dict(data),
            "decisions": str(decisions_path),
            "truth": str(truth_path),
        },
    )
    return report


def create_coordinator(data: Mapping[str, Any], out_dir: str | Path) -> BenchCoordinator:
    """Construct the bench coordinator from config data."""
    return BenchCoordinator(dict(data), out_dir)


def bench(data: Mapping[str, Any], out_dir: str | Path) -> BenchCoordinator:
    """Run a simulation grid and write its summary under ``out_dir``."""
    coordinator = create_coordinator(data, out_dir)
    coordinator.update()
    return coordinator
