"""Tests for the sampler."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from numpy.testing import assert_array_equal
import pytest
from scipy.stats import norm

from metapat import dp_core, mcmc
from metapat.dp_core import DpSide, Side
from metapat.exceptions import MetaPatConfigError, MetaPatSamplerError
from metapat.inference import DecisionSpace, bayes_fdr_declare, compute_xi
from metapat.io_transform import ZMatrix
from metapat.mcmc import ChainRng, ChainState, McmcConfig, PosteriorAccumulator


def test_init_chain_groups_strong_signals(small_z, fast_mcmc):
    state = mcmc.init_chain(small_z, fast_mcmc)
    strong_up = small_z.values >= 1.96
    strong_down = small_z.values <= -1.96
    assert_array_equal(state.C == 1, strong_up)
    assert_array_equal(state.C == -1, strong_down)
    for s, (pos, neg) in enumerate(state.dp):
        assert len(pos) == 1 and pos.total == strong_up[:, s].sum()
        assert len(neg) == 1 and neg.total == strong_down[:, s].sum()
    assert state.gamma == 0.1
    state.audit(small_z.values)


def test_audit_detects_table_drift(small_z, fast_mcmc):
    state = mcmc.init_chain(small_z, fast_mcmc)
    state.dp[0][0].counts[0] += 1
    with pytest.raises(MetaPatSamplerError):
        state.audit()


@pytest.mark.parametrize(
    "overrides",
    [{"burn_in": 100, "n_iter": 50}, {"thin": 0}, {"beta": 0.0}, {"threads": 0}],
)
def test_config_validation(overrides):
    with pytest.raises(MetaPatConfigError):
        McmcConfig(**overrides)


def test_run_tallies(small_z, fast_mcmc):
    acc = mcmc.run(small_z, fast_mcmc)
    assert acc.n_samples == 50
    assert_array_equal(acc.count_pos + acc.count_neg + acc.count_null, 50)
    assert_array_equal(acc.k_hist.sum(axis=1), 50)
    assert len(acc.gamma_trace) == 60
    assert 0.0 <= acc.acceptance_rate <= 1.0

    u = acc.probabilities()
    assert u.shape == (30, 3, 3)
    assert u[:6, :, 0].mean() > 0.8
    assert u[6:10, :, 1].mean() > 0.8


def test_thinning(small_z, fast_mcmc):
    acc = mcmc.run(small_z, replace(fast_mcmc, thin=3))
    assert acc.n_samples == len(range(10, 60, 3))


def test_same_seed_same_chain(small_z, fast_mcmc):
    first = mcmc.run(small_z, fast_mcmc)
    second = mcmc.run(small_z, fast_mcmc)
    assert_array_equal(first.k_hist, second.k_hist)
    assert first.gamma_trace == second.gamma_trace


def test_threaded_sweep_matches_serial(small_z, fast_mcmc):
    serial = mcmc.run(small_z, fast_mcmc)
    threaded = mcmc.run(small_z, replace(fast_mcmc, threads=3))
    assert_array_equal(serial.count_pos, threaded.count_pos)
    assert_array_equal(serial.count_neg, threaded.count_neg)
    assert serial.gamma_trace == threaded.gamma_trace


def test_resume_continues_the_same_chain(small_z, tmp_path):
    cfg = McmcConfig(n_iter=40, burn_in=5, seed=9, checkpoint_every=20)
    full = mcmc.run(small_z, cfg, checkpoint_dir=tmp_path)
    checkpoint = tmp_path / mcmc.CHECKPOINT_PATTERN.format(20)
    assert checkpoint.exists()
    assert mcmc.checkpoint_config(checkpoint)["seed"] == 9

    resumed = mcmc.run(small_z, cfg, resume_from=checkpoint)
    assert resumed.n_samples == full.n_samples
    assert_array_equal(resumed.k_hist, full.k_hist)
    assert_array_equal(resumed.count_pos, full.count_pos)
    assert resumed.gamma_trace == full.gamma_trace


def test_posterior_files_round_trip(small_z, fast_mcmc, tmp_path):
    acc = mcmc.run(small_z, fast_mcmc)
    mcmc.write_posterior(tmp_path, acc, small_z, fast_mcmc)
    for name in (mcmc.FILE_PROB_POS, mcmc.FILE_PROB_NEG, mcmc.FILE_PROB_NULL, mcmc.FILE_TRACE):
        assert (tmp_path / name).exists()

    loaded, genes, studies = mcmc.load_posterior(tmp_path)
    assert genes == small_z.gene_ids
    assert studies == small_z.study_ids
    assert loaded.n_samples == acc.n_samples
    assert_array_equal(loaded.count_pos, acc.count_pos)
    assert_array_equal(loaded.count_null, acc.count_null)
    assert_array_equal(loaded.k_hist, acc.k_hist)


def test_metropolis_with_zero_step_always_accepts():
    rng = np.random.default_rng(0)
    for _ in range(20):
        gamma, accepted = mcmc.metropolis_gamma(0.3, np.array([0.2, 0.6]), 0.0, rng)
        assert accepted
        assert gamma == pytest.approx(0.3)


def test_categorical_rejects_all_zero_weights():
    with pytest.raises(MetaPatSamplerError):
        mcmc._categorical(np.array([-np.inf, -np.inf]), 0.5)  # pylint: disable=protected-access


def _fixed_state(pi, delta, n_genes, seed):
    return ChainState(
        C=np.zeros((n_genes, 1), dtype=np.int64),
        pi=np.full(n_genes, pi),
        delta=np.full(n_genes, delta),
        gamma=0.5,
        dp=[(DpSide(Side.POSITIVE, 1.0, 10.0), DpSide(Side.NEGATIVE, 1.0, 10.0))],
        rng=ChainRng.from_seed(seed, 1),
    )


def _pair_type_probabilities(z1, z2, pi, delta, alpha=1.0, sigma0_sq=10.0):
    """Exact stationary law of the (null, up, down) types of two genes in one study."""
    weights = {0: 1.0 - pi, 1: pi * delta, -1: pi * (1.0 - delta)}
    null = {0: np.exp(-z1**2 / 2) / np.sqrt(2 * np.pi), 1: np.exp(-z2**2 / 2) / np.sqrt(2 * np.pi)}
    table = np.zeros((3, 3))
    types = (0, 1, -1)
    for i, t1 in enumerate(types):
        for j, t2 in enumerate(types):
            side1 = DpSide(Side(t1), alpha, sigma0_sq) if t1 else None
            side2 = DpSide(Side(t2), alpha, sigma0_sq) if t2 else None
            m1 = dp_core.predictive_new(side1, z1) if t1 else null[0]
            m2 = dp_core.predictive_new(side2, z2) if t2 else null[1]
            value = weights[t1] * weights[t2] * m1 * m2
            if t1 and t1 == t2:
                joined = DpSide(Side(t1), alpha, sigma0_sq, [1], [z1])
                shared = weights[t1] * weights[t2] * m1 * dp_core.predictive_existing(joined, 0, z2)
                value = (alpha * value + shared) / (1.0 + alpha)
            table[i, j] = value
    return table / table.sum()


@pytest.mark.slow
def test_collapsed_sweep_targets_exact_pair_law():
    z = np.array([[1.5], [-0.5]])
    state = _fixed_state(0.5, 0.5, 2, seed=21)
    counts = np.zeros((3, 3))
    index = {0: 0, 1: 1, -1: 2}
    n_sweeps = 20_000
    for _ in range(n_sweeps):
        mcmc.update_assignments(state, z)
        y = np.sign(state.C[:, 0])
        counts[index[y[0]], index[y[1]]] += 1
    state.audit(z)
    expected = _pair_type_probabilities(1.5, -0.5, 0.5, 0.5)
    assert np.abs(counts / n_sweeps - expected).max() < 0.02


@pytest.mark.slow
def test_gamma_chain_matches_sine_posterior():
    # With one gene at pi = 0.5 the gamma posterior is proportional to sin(pi * gamma).
    rng = np.random.default_rng(4)
    pi = np.array([0.5])
    gamma = 0.2
    draws = []
    for _ in range(40_000):
        gamma, _ = mcmc.metropolis_gamma(gamma, pi, 1.0, rng)
        draws.append(gamma)
    draws = np.array(draws[2000:])
    assert draws.mean() == pytest.approx(0.5, abs=0.02)
    assert draws.var() == pytest.approx(0.25 - 2.0 / np.pi**2, abs=0.01)


def test_accumulator_requires_samples():
    with pytest.raises(MetaPatSamplerError):
        PosteriorAccumulator.empty(2, 2).probabilities()


def test_checkpoint_rejects_mismatched_input(small_z, tmp_path):
    cfg = McmcConfig(n_iter=4, burn_in=0, seed=1, checkpoint_every=2)
    mcmc.run(small_z, cfg, checkpoint_dir=tmp_path)
    other = ZMatrix(small_z.values[:5], small_z.gene_ids[:5], small_z.study_ids)
    with pytest.raises(Exception, match="does not match"):
        mcmc.load_checkpoint(tmp_path / mcmc.CHECKPOINT_PATTERN.format(2), other)


def _state_with_labels(labels, gamma=0.5, seed=3):
    labels = np.asarray(labels, dtype=np.int64)
    n_genes, n_studies = labels.shape
    return ChainState(
        C=labels,
        pi=np.full(n_genes, 0.5),
        delta=np.full(n_genes, 0.5),
        gamma=gamma,
        dp=[(DpSide(Side.POSITIVE), DpSide(Side.NEGATIVE)) for _ in range(n_studies)],
        rng=ChainRng.from_seed(seed, n_studies),
    )


def _assert_beta_moments(draws, a, b):
    mean = a / (a + b)
    var = a * b / ((a + b) ** 2 * (a + b + 1))
    assert abs(draws.mean() - mean) < 3 * np.sqrt(var / len(draws))
    assert draws.var() == pytest.approx(var, rel=0.05)


def test_update_pi_draws_beta_conditionals():
    n = 50_000
    labels = np.vstack([np.zeros((n, 3)), np.ones((n, 3))])
    state = _state_with_labels(labels, gamma=0.5)
    mcmc.update_pi(state)
    _assert_beta_moments(state.pi[:n], 0.5, 3.5)
    _assert_beta_moments(state.pi[n:], 3.5, 0.5)


def test_update_delta_draws_beta_conditionals():
    n = 50_000
    labels = np.vstack([np.tile([1, 1, 0], (n, 1)), np.tile([1, -1, 0], (n, 1))])
    state = _state_with_labels(labels)
    mcmc.update_delta(state, 0.5)
    _assert_beta_moments(state.delta[:n], 2.5, 0.5)
    _assert_beta_moments(state.delta[n:], 1.5, 1.5)


def test_zero_pi_forces_null_labels():
    z = np.array([[5.0], [-5.0], [0.1]])
    state = _fixed_state(0.0, 0.5, 3, seed=8)
    for _ in range(20):
        mcmc.update_assignments(state, z)
        assert_array_equal(state.C, 0)


def test_certain_upregulation_forces_positive_labels():
    z = np.array([[-3.0], [0.0], [2.0]])
    state = _fixed_state(1.0, 1.0, 3, seed=8)
    for _ in range(20):
        mcmc.update_assignments(state, z)
        assert (state.C > 0).all()
    assert state.dp[0][0].total == 3
    assert state.dp[0][1].total == 0


def test_upregulation_probability_grows_with_z():
    pos, neg = DpSide(Side.POSITIVE), DpSide(Side.NEGATIVE)
    n_sweeps = 4000
    observed, exact = [], []
    for z in (1.0, 2.0, 3.0):
        # the same seed gives every level the same uniforms
        state = _fixed_state(0.5, 0.5, 1, seed=13)
        ups = 0
        for _ in range(n_sweeps):
            mcmc.update_assignments(state, np.array([[z]]))
            ups += int(state.C[0, 0] > 0)
        observed.append(ups / n_sweeps)
        w_up = 0.25 * dp_core.predictive_new(pos, z)
        w_down = 0.25 * dp_core.predictive_new(neg, z)
        exact.append(w_up / (0.5 * norm.pdf(z) + w_up + w_down))
    assert observed[0] < observed[1] < observed[2]
    assert np.abs(np.array(observed) - exact).max() < 0.035


@pytest.mark.slow
def test_pure_null_input_stays_mostly_null():
    rng = np.random.default_rng(17)
    genes = tuple(f"g{g}" for g in range(200))
    z = ZMatrix(rng.standard_normal((200, 2)), genes, ("s1", "s2"))
    acc = mcmc.run(z, McmcConfig(n_iter=1500, burn_in=300, seed=17))
    assert 1.0 - (acc.count_null / acc.n_samples).mean() < 0.35
    decision = bayes_fdr_declare(compute_xi(acc, DecisionSpace("B")), 0.05)
    assert decision.n_declared <= 0.05 * 200
