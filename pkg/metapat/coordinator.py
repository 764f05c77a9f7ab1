"""Bench coordinator: simulation grids evaluated end to end."""
from __future__ import annotations

from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
import itertools
import logging
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import api, mcmc
from .baselines import bh_fdr, combine
from .const import (
    CONF_FDR,
    CONF_GRID_N_CLUSTERS,
    CONF_GRID_S,
    CONF_GRID_SIGMA,
    CONF_N_CLUSTERS,
    CONF_N_SEEDS,
    CONF_R,
    CONF_S,
    CONF_SCENARIO,
    CONF_SEED,
    CONF_SIGMA,
    CONF_THREADS,
    METAPATTERN_STUDIES,
    NAME,
    SPACES,
    UNBALANCED_DESIGNS,
)
from .exceptions import MetaPatError
from .inference import DecisionSpace, bayes_fdr_declare, compute_xi, posterior_vectors
from .io_transform import (
    clamp_pvalues,
    p_to_z,
    provenance,
    two_sided_to_one_sided,
    write_json,
    write_table,
)
from .metapattern import contingency, dissimilarity_matrix, module_purity, tight_cluster
from .metrics import evaluate, truth_label
from .simgen import simulate, t_test_pvalues
from .streams import stream

_LOGGER = logging.getLogger(__name__)

BAYESMP = "bayesmp"

# Baselines compared in each decision space
SPACE_BASELINES = {
    "B": ("fisher", "aw"),
    "Abar": ("maxp",),
    "rbar": ("rop",),
}

SUMMARY_KEYS = ["scenario", "S", "sigma", "n_clusters", "space", "method"]
FILE_SUMMARY = "summary.tsv"
CELL_DIR = "cells"


class CellFailed(MetaPatError):
    """A bench cell could not be completed."""


@dataclass(frozen=True)
class BenchTask:
    """One replicate of one grid cell."""

    scenario: str
    n_studies: int
    sigma: float
    n_clusters: int
    replicate: int
    data: dict[str, Any]

    @property
    def label(self) -> str:
        """Return a file-name friendly cell label."""
        return (
            f"{self.scenario}_S{self.n_studies}_sigma{self.sigma:g}"
            f"_C{self.n_clusters}_rep{self.replicate}"
        )

    @property
    def seed(self) -> int:
        """Return the seed of this replicate, derived from the bench seed."""
        rng = stream(
            self.data[CONF_SEED],
            "bench",
            self.n_studies,
            int(round(self.sigma * 1000)),
            self.n_clusters,
            self.replicate,
        )
        return int(rng.integers(2**32))


def grid_cells(data: dict[str, Any]) -> list[tuple[str, int, float, int]]:
    """Return the (scenario, S, sigma, n_clusters) cells of the configured grid.

    Without a grid_n_clusters list every cell uses the single n_clusters value.
    """
    scenario = data[CONF_SCENARIO]
    sigmas = data[CONF_GRID_SIGMA]
    if scenario in UNBALANCED_DESIGNS:
        study_counts = [len(UNBALANCED_DESIGNS[scenario])]
    elif scenario == "metapattern":
        # the planted patterns are simulated at unit noise
        study_counts, sigmas = [METAPATTERN_STUDIES], [1.0]
    else:
        study_counts = list(data[CONF_GRID_S])
    cluster_counts = data.get(CONF_GRID_N_CLUSTERS) or [data[CONF_N_CLUSTERS]]
    return [
        (scenario, int(n_studies), float(sigma), int(n_clusters))
        for n_studies, sigma, n_clusters in itertools.product(
            study_counts, sigmas, cluster_counts
        )
    ]


def _report_row(task: BenchTask, method: str, report) -> dict[str, Any]:
    row = {
        "scenario": task.scenario,
        "S": task.n_studies,
        "sigma": task.sigma,
        "n_clusters": task.n_clusters,
        "replicate": task.replicate,
        "seed": task.seed,
        "method": method,
    }
    row.update(report.as_dict())
    return row


def run_cell(task: BenchTask, out_dir: str | Path) -> list[dict[str, Any]]:
    """Simulate, fit, declare and evaluate one replicate; return report rows."""
    data = {
        **task.data,
        CONF_S: task.n_studies,
        CONF_SIGMA: task.sigma,
        CONF_N_CLUSTERS: task.n_clusters,
        CONF_SEED: task.seed,
        CONF_THREADS: 1,
    }
    sim_cfg = api.create_sim_config(data)
    es, truth = simulate(sim_cfg)
    p2, sign = t_test_pvalues(es)
    p2 = clamp_pvalues(p2)
    z = p_to_z(two_sided_to_one_sided(p2, sign, es.gene_ids, es.study_ids))
    acc = mcmc.run(z, api.create_mcmc_config(data))

    level = data[CONF_FDR]
    rows = []
    declared_b = None
    for kind in SPACES:
        space = DecisionSpace.parse(kind, sim_cfg.S, data.get(CONF_R))
        truth_alt = truth_label(truth, space)
        xi = compute_xi(acc, space)
        decision = bayes_fdr_declare(xi, level)
        report = evaluate(decision.declared, 1.0 - xi, truth_alt, space)
        rows.append(_report_row(task, BAYESMP, report))
        if kind == "B":
            declared_b = decision.declared
        for method in SPACE_BASELINES[kind]:
            pvalues, _ = combine(p2, method, space.r)
            declared = bh_fdr(pvalues, level)
            report = evaluate(declared, 1.0 - pvalues, truth_alt, space)
            rows.append(_report_row(task, method, report))

    cell_dir = Path(out_dir) / CELL_DIR
    payload: dict[str, Any] = {"rows": rows, "provenance": provenance(task.seed, data)}
    if task.scenario == "metapattern":
        payload["modules"] = _cluster_declared(task, data, acc, truth, declared_b, cell_dir)
    write_json(cell_dir / f"{task.label}.json", payload)
    return rows


def _cluster_declared(task, data, acc, truth, declared, cell_dir: Path) -> dict[str, Any]:
    tight_cfg = api.create_tight_config(data)
    genes = np.flatnonzero(declared)
    if len(genes) < tight_cfg.k_start:
        _LOGGER.warning(
            "%s: only %d declared genes, skipping module extraction", task.label, len(genes)
        )
        return {"k_found": 0, "purity": {}}
    d = dissimilarity_matrix(posterior_vectors(acc)[genes])
    modules = tight_cluster(d, replace(tight_cfg, seed=task.seed))
    pattern = np.asarray(truth.pattern)[genes]
    table = contingency(modules.labels, pattern)
    write_table(
        cell_dir / f"{task.label}_contingency.tsv",
        table.reset_index(),
        provenance(task.seed, data),
    )
    purity = module_purity(modules.labels, pattern)
    return {
        "k_found": modules.k_found,
        "purity": {str(k): {"pattern": p, "share": s} for k, (p, s) in purity.items()},
    }


def summarize(rows: list[dict[str, Any]]) -> pd.DataFrame:
    """Mean and population standard deviation of every metric per cell and method."""
    frame = pd.DataFrame(rows)
    grouped = frame.groupby(SUMMARY_KEYS, sort=False)
    summary = grouped.agg(
        n_seeds=("replicate", "nunique"),
        fdr_mean=("fdr", "mean"),
        fdr_sd=("fdr", lambda x: x.std(ddof=0)),
        fnr_mean=("fnr", "mean"),
        fnr_sd=("fnr", lambda x: x.std(ddof=0)),
        auc_mean=("auc", "mean"),
        auc_sd=("auc", lambda x: x.std(ddof=0)),
        n_declared_mean=("n_declared", "mean"),
    )
    return summary.reset_index()


class BenchCoordinator:
    """Runs every replicate of a grid, isolating failed cells."""

    def __init__(self, data: dict[str, Any], out_dir: str | Path) -> None:
        """Initialize the coordinator."""
        self.data = data
        self.out_dir = Path(out_dir)
        self.name = f"{NAME} bench {data[CONF_SCENARIO]}"
        self.failures: list[tuple[str, CellFailed]] = []
        self.rows: list[dict[str, Any]] = []

    @property
    def tasks(self) -> list[BenchTask]:
        """Return the replicate tasks in grid order."""
        return [
            BenchTask(scenario, n_studies, sigma, n_clusters, replicate, self.data)
            for scenario, n_studies, sigma, n_clusters in grid_cells(self.data)
            for replicate in range(self.data[CONF_N_SEEDS])
        ]

    def _run_task(self, task: BenchTask, outcome: Callable[[], list]) -> list[dict[str, Any]]:
        """Return the rows of a task, wrapping any failure."""
        try:
            return outcome()
        except Exception as exc:
            raise CellFailed(f"{task.label}: {exc}") from exc

    def _collect(self, task: BenchTask, outcome: Callable[[], list]) -> None:
        try:
            self.rows.extend(self._run_task(task, outcome))
        except CellFailed as exc:
            _LOGGER.exception("Bench cell %s failed", task.label)
            self.failures.append((task.label, exc))

    def update(self) -> pd.DataFrame:
        """Run all tasks and write the per-cell reports and the summary."""
        tasks = self.tasks
        _LOGGER.info("%s: %d replicate tasks", self.name, len(tasks))
        threads = self.data.get(CONF_THREADS, 1)

        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as executor:
                futures = [executor.submit(run_cell, task, self.out_dir) for task in tasks]
                for task, future in zip(tasks, futures):
                    self._collect(task, future.result)
        else:
            for task in tasks:
                self._collect(task, partial(run_cell, task, self.out_dir))

        summary = summarize(self.rows) if self.rows else pd.DataFrame(columns=SUMMARY_KEYS)
        write_table(
            self.out_dir / FILE_SUMMARY,
            summary,
            provenance(self.data[CONF_SEED], self.data),
        )
        _LOGGER.info(
            "%s: %d tasks succeeded, %d failed",
            self.name,
            len(tasks) - len(self.failures),
            len(self.failures),
        )
        return summary

    @property
    def succeeded(self) -> bool:
        """Return whether every task completed."""
        return not self.failures
