"""Gibbs-within-Metropolis sampler for the hierarchical mixture model.

One iteration updates, in order, the gene-level DE probabilities pi, the
direction probabilities delta, the per-study component labels C (collapsed
Chinese-restaurant update against the DP tables) and the shared prior
parameter gamma (random-walk Metropolis-Hastings on the logit scale).
"""
from __future__ import annotations

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.special import expit, logit
from scipy.stats import beta as beta_dist, norm

from . import dp_core
from .const import DOMAIN, INIT_Z_THRESHOLD, PI_EPSILON, VERSION
from .dp_core import DpSide, Side
from .exceptions import MetaPatConfigError, MetaPatFormatError, MetaPatSamplerError
from .io_transform import (
    KIND_ZSTAT,
    ZMatrix,
    parse_matrix,
    provenance,
    write_json,
    write_matrix,
    write_table,
)
from .streams import stream

_LOGGER = logging.getLogger(__name__)

INIT_GAMMA = 0.1
INIT_PI = 0.1
INIT_DELTA = 0.5

FILE_PROB_POS = "posterior_prob_pos.tsv"
FILE_PROB_NEG = "posterior_prob_neg.tsv"
FILE_PROB_NULL = "posterior_prob_null.tsv"
FILE_K_HIST = "posterior_k_hist.tsv"
FILE_META = "posterior_meta.json"
FILE_TRACE = "trace_gamma.tsv"
CHECKPOINT_PATTERN = "checkpoint_{:07d}.npz"


@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings."""

    n_iter: int = 10_000
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    beta: float = 0.5
    sigma0_sq: float = 10.0
    alpha_pos: float = 1.0
    alpha_neg: float = 1.0
    gamma_proposal_sd: float = 0.1
    checkpoint_every: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        """Validate the settings."""
        if self.n_iter < 1:
            raise MetaPatConfigError(f"n_iter must be positive, got {self.n_iter}")
        if not 0 <= self.burn_in <= self.n_iter:
            raise MetaPatConfigError(
                f"burn_in must lie in [0, n_iter], got {self.burn_in}"
            )
        if self.thin < 1:
            raise MetaPatConfigError(f"thin must be positive, got {self.thin}")
        if not 0 <= self.seed < 2**64:
            raise MetaPatConfigError("seed must be a 64-bit unsigned integer")
        for name in ("beta", "sigma0_sq", "alpha_pos", "alpha_neg", "gamma_proposal_sd"):
            if not getattr(self, name) > 0:
                raise MetaPatConfigError(f"{name} must be positive")
        if self.checkpoint_every < 0 or self.threads < 1:
            raise MetaPatConfigError("checkpoint_every must be >= 0 and threads >= 1")


@dataclass
class ChainRng:
    """One random stream per study plus one for the gene-level parameters."""

    globals: np.random.Generator
    studies: list[np.random.Generator]

    @classmethod
    def from_seed(cls, seed: int, n_studies: int) -> ChainRng:
        """Derive all streams from one seed."""
        return cls(
            stream(seed, "mcmc-global"),
            [stream(seed, "mcmc-study", s) for s in range(n_studies)],
        )

    def state(self) -> dict[str, Any]:
        """Return the serializable state of every stream."""
        return {
            "globals": self.globals.bit_generator.state,
            "studies": [rng.bit_generator.state for rng in self.studies],
        }

    def restore(self, state: dict[str, Any]) -> None:
        """Restore every stream from ``state``."""
        self.globals.bit_generator.state = state["globals"]
        for rng, saved in zip(self.studies, state["studies"]):
            rng.bit_generator.state = saved


@dataclass
class ChainState:
    """Latent state of one iteration.

    C holds signed component labels: 0 is the null component, +k/-k the k-th
    table of the study's positive/negative DP. The effect means are collapsed
    out and never stored.
    """

    C: np.ndarray
    pi: np.ndarray
    delta: np.ndarray
    gamma: float
    dp: list[tuple[DpSide, DpSide]]
    rng: ChainRng

    @property
    def Y(self) -> np.ndarray:  # pylint: disable=invalid-name
        """Return the DE indicators sign(C)."""
        return np.sign(self.C)

    @property
    def n_genes(self) -> int:
        """Return G."""
        return self.C.shape[0]

    @property
    def n_studies(self) -> int:
        """Return S."""
        return self.C.shape[1]

    def audit(self, z: np.ndarray | None = None) -> None:
        """Check that DP tables match label occurrences in C."""
        if not (0 < self.gamma < 1):
            raise MetaPatSamplerError(f"gamma {self.gamma} outside (0, 1)")
        for name, values in (("pi", self.pi), ("delta", self.delta)):
            if not ((values > 0) & (values < 1)).all():
                raise MetaPatSamplerError(f"{name} outside (0, 1)")
        for s, sides in enumerate(self.dp):
            column = self.C[:, s]
            for dp_side in sides:
                labels = column * int(dp_side.side)
                labels = labels[labels > 0]
                n_comp = len(dp_side)
                if len(labels) and labels.max() > n_comp:
                    raise MetaPatSamplerError(
                        f"Study {s} side {dp_side.side.name}: label {labels.max()} "
                        f"exceeds {n_comp} components"
                    )
                counts = np.bincount(labels - 1, minlength=n_comp)
                if not np.array_equal(counts, dp_side.counts):
                    raise MetaPatSamplerError(
                        f"Study {s} side {dp_side.side.name}: table counts "
                        f"{dp_side.counts.tolist()} != label counts {counts.tolist()}"
                    )
                if z is not None:
                    sums = np.bincount(
                        labels - 1,
                        weights=z[:, s][column * int(dp_side.side) > 0],
                        minlength=n_comp,
                    )
                    if not np.allclose(sums, dp_side.sums, atol=1e-8):
                        raise MetaPatSamplerError(
                            f"Study {s} side {dp_side.side.name}: table sums drifted"
                        )


@dataclass
class PosteriorAccumulator:
    """Tallies of retained samples.

    k_hist[g, k] counts the retained samples in which gene g was DE in exactly
    k studies; decision-space events are unions of these cells.
    """

    count_pos: np.ndarray
    count_neg: np.ndarray
    count_null: np.ndarray
    k_hist: np.ndarray
    n_samples: int = 0
    gamma_trace: list[float] = field(default_factory=list)
    pi_mean_trace: list[float] = field(default_factory=list)
    accepted_trace: list[bool] = field(default_factory=list)
    n_pos_trace: list[int] = field(default_factory=list)
    n_neg_trace: list[int] = field(default_factory=list)

    @classmethod
    def empty(cls, n_genes: int, n_studies: int) -> PosteriorAccumulator:
        """Return an accumulator without samples."""
        shape = (n_genes, n_studies)
        return cls(
            np.zeros(shape, dtype=np.int64),
            np.zeros(shape, dtype=np.int64),
            np.zeros(shape, dtype=np.int64),
            np.zeros((n_genes, n_studies + 1), dtype=np.int64),
        )

    @property
    def n_genes(self) -> int:
        """Return G."""
        return self.count_pos.shape[0]

    @property
    def n_studies(self) -> int:
        """Return S."""
        return self.count_pos.shape[1]

    def record(self, state: ChainState) -> None:
        """Add one retained sample."""
        y = state.Y
        self.count_pos += y > 0
        self.count_neg += y < 0
        self.count_null += y == 0
        k = np.count_nonzero(y, axis=1)
        self.k_hist[np.arange(len(k)), k] += 1
        self.n_samples += 1

    def trace(self, state: ChainState, accepted: bool) -> None:
        """Append the diagnostics of one iteration."""
        self.gamma_trace.append(float(state.gamma))
        self.pi_mean_trace.append(float(state.pi.mean()))
        self.accepted_trace.append(bool(accepted))
        self.n_pos_trace.append(sum(len(pos) for pos, _ in state.dp))
        self.n_neg_trace.append(sum(len(neg) for _, neg in state.dp))

    @property
    def acceptance_rate(self) -> float:
        """Return the gamma Metropolis-Hastings acceptance rate."""
        if not self.accepted_trace:
            return float("nan")
        return float(np.mean(self.accepted_trace))

    def probabilities(self) -> np.ndarray:
        """Return U with shape (G, S, 3): Pr(Y=+1), Pr(Y=-1), Pr(Y=0)."""
        if self.n_samples < 1:
            raise MetaPatSamplerError("No retained samples")
        counts = np.stack([self.count_pos, self.count_neg, self.count_null], axis=-1)
        return counts / self.n_samples


def init_chain(z: ZMatrix, cfg: McmcConfig) -> ChainState:
    """Return the deterministic starting state.

    Genes with |Z| >= 1.96 in a study share one fresh component per side.
    """
    values = z.values
    n_genes, n_studies = values.shape
    labels = np.zeros((n_genes, n_studies), dtype=np.int64)
    dp: list[tuple[DpSide, DpSide]] = []

    for s in range(n_studies):
        column = values[:, s]
        sides = []
        for side, alpha in ((Side.POSITIVE, cfg.alpha_pos), (Side.NEGATIVE, cfg.alpha_neg)):
            dp_side = DpSide(side, alpha, cfg.sigma0_sq)
            members = column * int(side) >= INIT_Z_THRESHOLD
            if members.any():
                dp_side.counts = np.array([members.sum()], dtype=np.int64)
                dp_side.sums = np.array([column[members].sum()])
                labels[members, s] = int(side)
            sides.append(dp_side)
        dp.append((sides[0], sides[1]))

    return ChainState(
        C=labels,
        pi=np.full(n_genes, INIT_PI),
        delta=np.full(n_genes, INIT_DELTA),
        gamma=INIT_GAMMA,
        dp=dp,
        rng=ChainRng.from_seed(cfg.seed, n_studies),
    )


def _de_counts(state: ChainState) -> tuple[np.ndarray, np.ndarray]:
    return (state.C > 0).sum(axis=1), (state.C < 0).sum(axis=1)


def update_pi(state: ChainState) -> None:
    """Redraw pi_g from Beta(gamma + Y+ + Y-, S - Y+ - Y- + 1 - gamma)."""
    n_up, n_down = _de_counts(state)
    n_de = n_up + n_down
    draws = state.rng.globals.beta(
        state.gamma + n_de, state.n_studies - n_de + 1.0 - state.gamma
    )
    state.pi = np.clip(draws, PI_EPSILON, 1.0 - PI_EPSILON)


def update_delta(state: ChainState, beta: float) -> None:
    """Redraw delta_g from Beta(beta + Y+, beta + Y-)."""
    n_up, n_down = _de_counts(state)
    draws = state.rng.globals.beta(beta + n_up, beta + n_down)
    state.delta = np.clip(draws, PI_EPSILON, 1.0 - PI_EPSILON)


def _categorical(log_weights: np.ndarray, u: float) -> int:
    top = log_weights.max()
    if not np.isfinite(top):
        raise MetaPatSamplerError("All assignment weights are zero")
    cumulative = np.cumsum(np.exp(log_weights - top))
    index = int(np.searchsorted(cumulative, u * cumulative[-1], side="right"))
    return min(index, len(log_weights) - 1)


def _sweep_study(state: ChainState, z: np.ndarray, s: int) -> None:
    """Collapsed CRP update of every gene's label in study s."""
    column = state.C[:, s]
    pos, neg = state.dp[s]
    rng = state.rng.studies[s]
    z_col = z[:, s]

    with np.errstate(divide="ignore"):
        log_pos = np.log(state.pi * state.delta)
        log_neg = np.log(state.pi * (1.0 - state.delta))
        log_null = np.log1p(-state.pi) + norm.logpdf(z_col)
    uniforms = rng.random(len(z_col))

    for g, z_g in enumerate(z_col):
        label = column[g]
        if label > 0 and dp_core.remove(pos, label - 1, z_g):
            column[column > label] -= 1
        elif label < 0 and dp_core.remove(neg, -label - 1, z_g):
            column[column < label] += 1

        seat_pos = pos.log_seating(z_g) + log_pos[g]
        seat_neg = neg.log_seating(z_g) + log_neg[g]
        log_weights = np.concatenate(((log_null[g],), seat_pos, seat_neg))
        choice = _categorical(log_weights, uniforms[g])

        if choice == 0:
            column[g] = 0
        elif choice <= len(seat_pos):
            k = choice - 1
            k = dp_core.NEW if k == len(pos) else k
            column[g] = dp_core.assign(pos, k, z_g) + 1
        else:
            k = choice - 1 - len(seat_pos)
            k = dp_core.NEW if k == len(neg) else k
            column[g] = -(dp_core.assign(neg, k, z_g) + 1)


def update_assignments(
    state: ChainState, z: ZMatrix | np.ndarray, executor: ThreadPoolExecutor | None = None
) -> None:
    """Resample every C_gs, studies outer and genes inner in ascending order.

    Studies touch disjoint columns, tables and streams, so the executor path
    gives the same draws as the serial one.
    """
    values = z.values if isinstance(z, ZMatrix) else np.asarray(z, dtype=float)
    studies = range(state.n_studies)
    if executor is None:
        for s in studies:
            _sweep_study(state, values, s)
    else:
        list(executor.map(lambda s: _sweep_study(state, values, s), studies))


def log_gamma_target(gamma: float, pi: np.ndarray) -> float:
    """Return log prod_g dBeta(pi_g; gamma, 1 - gamma) under a uniform prior."""
    pi = np.clip(pi, PI_EPSILON, 1.0 - PI_EPSILON)
    return float(beta_dist.logpdf(pi, gamma, 1.0 - gamma).sum())


def metropolis_gamma(
    gamma: float, pi: np.ndarray, proposal_sd: float, rng: np.random.Generator
) -> tuple[float, bool]:
    """One random-walk step on logit(gamma) with the Jacobian correction."""
    step = rng.standard_normal()
    log_u = math.log(rng.random() or np.finfo(float).tiny)
    proposal = float(expit(logit(gamma) + proposal_sd * step))
    if not 0.0 < proposal < 1.0:
        return gamma, False

    log_ratio = (
        log_gamma_target(proposal, pi)
        - log_gamma_target(gamma, pi)
        + math.log(proposal * (1.0 - proposal))
        - math.log(gamma * (1.0 - gamma))
    )
    if log_u < log_ratio:
        return proposal, True
    return gamma, False


def update_gamma(state: ChainState, cfg: McmcConfig) -> bool:
    """Metropolis-Hastings update of gamma; returns whether the move was accepted."""
    state.gamma, accepted = metropolis_gamma(
        state.gamma, state.pi, cfg.gamma_proposal_sd, state.rng.globals
    )
    return accepted


def run(
    z: ZMatrix,
    cfg: McmcConfig,
    checkpoint_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    on_iteration: Callable[[int, ChainState], None] | None = None,
) -> PosteriorAccumulator:
    """Run the chain and return the tallies of the retained samples."""
    if resume_from is not None:
        state, acc, start = load_checkpoint(resume_from, z)
        _LOGGER.info("Resuming chain at iteration %d from %s", start, resume_from)
    else:
        state = init_chain(z, cfg)
        acc = PosteriorAccumulator.empty(z.n_genes, z.n_studies)
        start = 0

    _LOGGER.info(
        "Sampling %d genes x %d studies for %d iterations (burn-in %d, thin %d)",
        z.n_genes,
        z.n_studies,
        cfg.n_iter,
        cfg.burn_in,
        cfg.thin,
    )

    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for iteration in range(start, cfg.n_iter):
            update_pi(state)
            update_delta(state, cfg.beta)
            update_assignments(state, z, executor)
            accepted = update_gamma(state, cfg)

            acc.trace(state, accepted)
            retained = iteration - cfg.burn_in
            if retained >= 0 and retained % cfg.thin == 0:
                acc.record(state)
            if on_iteration is not None:
                on_iteration(iteration, state)

            if (iteration + 1) % 500 == 0:
                _LOGGER.debug(
                    "Iteration %d: gamma=%.4f mean pi=%.4f acceptance=%.3f",
                    iteration + 1,
                    state.gamma,
                    acc.pi_mean_trace[-1],
                    acc.acceptance_rate,
                )
            if (
                checkpoint_dir is not None
                and cfg.checkpoint_every
                and (iteration + 1) % cfg.checkpoint_every == 0
            ):
                path = Path(checkpoint_dir) / CHECKPOINT_PATTERN.format(iteration + 1)
                save_checkpoint(path, state, acc, iteration + 1, cfg)
    finally:
        if executor is not None:
            executor.shutdown()

    _LOGGER.info(
        "Retained %d samples, gamma acceptance rate %.3f",
        acc.n_samples,
        acc.acceptance_rate,
    )
    return acc


def save_checkpoint(
    path: str | Path,
    state: ChainState,
    acc: PosteriorAccumulator,
    iteration: int,
    cfg: McmcConfig,
) -> None:
    """Write a self-describing snapshot of the chain, its streams and tallies."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "tool": DOMAIN,
        "version": VERSION,
        "iteration": iteration,
        "gamma": state.gamma,
        "n_samples": acc.n_samples,
        "rng": state.rng.state(),
        "config": asdict(cfg),
        "alpha": [[pos.alpha, neg.alpha] for pos, neg in state.dp],
        "sigma0_sq": [[pos.sigma0_sq, neg.sigma0_sq] for pos, neg in state.dp],
    }
    arrays: dict[str, np.ndarray] = {
        "C": state.C,
        "pi": state.pi,
        "delta": state.delta,
        "count_pos": acc.count_pos,
        "count_neg": acc.count_neg,
        "count_null": acc.count_null,
        "k_hist": acc.k_hist,
        "gamma_trace": np.asarray(acc.gamma_trace, dtype=float),
        "pi_mean_trace": np.asarray(acc.pi_mean_trace, dtype=float),
        "accepted_trace": np.asarray(acc.accepted_trace, dtype=bool),
        "n_pos_trace": np.asarray(acc.n_pos_trace, dtype=np.int64),
        "n_neg_trace": np.asarray(acc.n_neg_trace, dtype=np.int64),
    }
    for s, sides in enumerate(state.dp):
        for dp_side in sides:
            arrays[f"{dp_side.side.name.lower()}_counts_{s}"] = dp_side.counts
            arrays[f"{dp_side.side.name.lower()}_sums_{s}"] = dp_side.sums
    with path.open("wb") as handle:
        np.savez(handle, meta=np.array(json.dumps(meta)), **arrays)
    _LOGGER.debug("Wrote checkpoint %s", path)


def _read_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            arrays = {key: data[key] for key in data.files if key != "meta"}
    except (OSError, KeyError, ValueError) as exc:
        raise MetaPatFormatError(f"Cannot read checkpoint {path}: {exc}") from exc
    return meta, arrays


def checkpoint_config(path: str | Path) -> dict[str, Any]:
    """Return the sampler settings stored in a checkpoint."""
    return dict(_read_checkpoint(path)[0]["config"])


def load_checkpoint(
    path: str | Path, z: ZMatrix
) -> tuple[ChainState, PosteriorAccumulator, int]:
    """Restore a chain written by ``save_checkpoint``."""
    meta, arrays = _read_checkpoint(path)

    labels = arrays["C"]
    if labels.shape != z.values.shape:
        raise MetaPatFormatError(
            f"Checkpoint shape {labels.shape} does not match input {z.values.shape}"
        )

    n_studies = labels.shape[1]
    dp = []
    for s in range(n_studies):
        sides = []
        for j, side in enumerate((Side.POSITIVE, Side.NEGATIVE)):
            prefix = side.name.lower()
            sides.append(
                DpSide(
                    side,
                    meta["alpha"][s][j],
                    meta["sigma0_sq"][s][j],
                    arrays[f"{prefix}_counts_{s}"],
                    arrays[f"{prefix}_sums_{s}"],
                )
            )
        dp.append((sides[0], sides[1]))

    rng = ChainRng.from_seed(meta["config"]["seed"], n_studies)
    rng.restore(meta["rng"])
    state = ChainState(
        labels.astype(np.int64),
        arrays["pi"],
        arrays["delta"],
        float(meta["gamma"]),
        dp,
        rng,
    )
    acc = PosteriorAccumulator(
        arrays["count_pos"],
        arrays["count_neg"],
        arrays["count_null"],
        arrays["k_hist"],
        int(meta["n_samples"]),
        arrays["gamma_trace"].tolist(),
        arrays["pi_mean_trace"].tolist(),
        arrays["accepted_trace"].tolist(),
        arrays["n_pos_trace"].tolist(),
        arrays["n_neg_trace"].tolist(),
    )
    state.audit()
    return state, acc, int(meta["iteration"])


def write_posterior(
    out_dir: str | Path,
    acc: PosteriorAccumulator,
    z: ZMatrix,
    cfg: McmcConfig,
    config: dict[str, Any] | None = None,
) -> None:
    """Write posterior probabilities, decision tallies and traces."""
    out_dir = Path(out_dir)
    header = provenance(cfg.seed, config if config is not None else asdict(cfg))
    genes, studies = z.gene_ids, z.study_ids

    if acc.n_samples:
        probs = acc.probabilities()
        for index, name in enumerate((FILE_PROB_POS, FILE_PROB_NEG, FILE_PROB_NULL)):
            write_matrix(out_dir / name, probs[..., index], genes, studies, header, "%.17g")
    else:
        _LOGGER.warning("No retained samples; posterior probability files not written")

    write_matrix(
        out_dir / FILE_K_HIST,
        acc.k_hist,
        genes,
        [f"k{k}" for k in range(z.n_studies + 1)],
        header,
    )

    trace = pd.DataFrame(
        {
            "iteration": np.arange(1, len(acc.gamma_trace) + 1),
            "gamma": acc.gamma_trace,
            "mean_pi": acc.pi_mean_trace,
            "accepted": np.asarray(acc.accepted_trace, dtype=int),
            "n_pos_components": acc.n_pos_trace,
            "n_neg_components": acc.n_neg_trace,
        }
    )
    write_table(out_dir / FILE_TRACE, trace, header)

    write_json(
        out_dir / FILE_META,
        {
            "tool": DOMAIN,
            "version": VERSION,
            "n_samples": acc.n_samples,
            "n_genes": z.n_genes,
            "n_studies": z.n_studies,
            "study_ids": list(studies),
            "acceptance_rate": acc.acceptance_rate,
            "config": asdict(cfg),
        },
    )


def load_posterior(posterior_dir: str | Path) -> tuple[PosteriorAccumulator, tuple, tuple]:
    """Read the tallies written by ``write_posterior``.

    Returns the accumulator (without traces), the gene IDs and the study IDs.
    """
    posterior_dir = Path(posterior_dir)
    try:
        with (posterior_dir / FILE_META).open(encoding="utf-8") as handle:
            meta = json.load(handle)
    except (OSError, ValueError) as exc:
        raise MetaPatFormatError(f"Cannot read {posterior_dir / FILE_META}: {exc}") from exc

    n_samples = int(meta["n_samples"])
    if n_samples < 1:
        raise MetaPatSamplerError(f"Posterior in {posterior_dir} has no retained samples")

    tallies = []
    for name in (FILE_PROB_POS, FILE_PROB_NEG, FILE_PROB_NULL):
        matrix = parse_matrix(posterior_dir / name, KIND_ZSTAT)
        tallies.append(np.rint(matrix.values * n_samples).astype(np.int64))
    k_hist = parse_matrix(posterior_dir / FILE_K_HIST, KIND_ZSTAT)

    acc = PosteriorAccumulator(
        tallies[0],
        tallies[1],
        tallies[2],
        np.rint(k_hist.values).astype(np.int64),
        n_samples,
    )
    return acc, matrix.gene_ids, matrix.study_ids
