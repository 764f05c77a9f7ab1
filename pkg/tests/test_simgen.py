"""Tests for the expression simulator."""
from __future__ import annotations

from collections import Counter
from dataclasses import replace

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest
from scipy import stats

from metapat import simgen
from metapat.exceptions import MetaPatConfigError
from metapat.simgen import SimConfig


@pytest.fixture
def tiny_cfg() -> SimConfig:
    """60 genes over two studies with two correlated clusters."""
    return SimConfig(
        G=60,
        S=2,
        n_cases=5,
        n_controls=6,
        n_clusters=2,
        cluster_size=5,
        wishart_df=10,
        de_fraction=0.3,
        seed=7,
    )


@pytest.mark.parametrize(
    "overrides",
    [
        {"G": 10, "n_clusters": 3, "cluster_size": 5},
        {"n_clusters": 1, "cluster_size": 5, "wishart_df": 6},
        {"de_fraction": 1.0},
        {"sigma": 0.0},
        {"n_cases": (5, 5)},
        {"n_controls": 1},
    ],
)
def test_config_validation(overrides):
    settings = {"G": 100, "S": 3, "n_clusters": 0, "n_cases": 5, "n_controls": 5}
    settings.update(overrides)
    with pytest.raises(MetaPatConfigError):
        SimConfig(**settings)


def test_ids(tiny_cfg):
    assert tiny_cfg.study_ids == ("s1", "s2")
    assert tiny_cfg.gene_ids[0] == "g01"
    assert tiny_cfg.gene_ids[-1] == "g60"


def test_unbalanced_designs():
    names = ("unbalanced-a", "unbalanced-b", "unbalanced-c", "unbalanced-d")
    configs = {name: SimConfig.for_scenario(name, G=100, n_clusters=0) for name in names}
    assert configs["unbalanced-b"].n_cases == (20, 50, 100)
    assert configs["unbalanced-c"].n_cases == (60, 60, 60)
    assert configs["unbalanced-c"].n_controls == (20, 20, 20)
    assert configs["unbalanced-d"].n_controls == (60, 40, 20)
    assert all(cfg.S == 3 and cfg.G == 100 for cfg in configs.values())


def test_unknown_scenario():
    with pytest.raises(MetaPatConfigError):
        SimConfig.for_scenario("balanced")


def test_generate_shapes_and_de_genes(tiny_cfg):
    es, truth = simgen.generate(tiny_cfg)
    assert len(es.studies) == 2
    for study in es.studies:
        assert study.values.shape == (11, 60)
        assert_array_equal(study.is_case, [False] * 6 + [True] * 5)
    assert_array_equal(truth.is_de, np.arange(60) < 18)
    assert (truth.theta_g[:18] >= simgen.GENE_EFFECT_FLOOR).all()
    assert (truth.theta_g[18:] == 0).all()
    assert (truth.theta_gs[truth.de_studies] > 0).all()
    assert (truth.theta_gs[~truth.de_studies] == 0).all()
    assert np.bincount(truth.cluster).tolist() == [50, 5, 5]


def test_effects_follow_direction(tiny_cfg):
    _, truth = simgen.generate(tiny_cfg)
    effects = truth.effects()
    up = truth.direction == 0
    assert (effects[up] >= 0).all()
    assert (effects[~up] <= 0).all()
    assert_array_equal(effects != 0, truth.de_studies)


def test_generation_is_reproducible(tiny_cfg):
    first, truth = simgen.simulate(tiny_cfg)
    second, again = simgen.simulate(tiny_cfg)
    for a, b in zip(first.studies, second.studies):
        assert_array_equal(a.values, b.values)
    assert_array_equal(truth.theta_gs, again.theta_gs)


def test_seed_changes_data(tiny_cfg):
    first, _ = simgen.simulate(tiny_cfg)
    other, _ = simgen.simulate(replace(tiny_cfg, seed=8))
    assert not np.array_equal(first.studies[0].values, other.studies[0].values)


def test_no_de_genes(tiny_cfg):
    cfg = replace(tiny_cfg, de_fraction=0.0)
    _, truth = simgen.generate(cfg)
    assert not truth.is_de.any()
    assert (truth.effects() == 0).all()


def test_truth_round_trip(tiny_cfg, tmp_path):
    _, truth = simgen.generate(tiny_cfg)
    path = tmp_path / "truth.tsv"
    simgen.write_truth(path, truth, "# metapat test")
    loaded = simgen.read_truth(path)
    assert loaded.gene_ids == truth.gene_ids
    assert loaded.study_ids == truth.study_ids
    assert loaded.pattern == ()
    assert_array_equal(loaded.de_studies, truth.de_studies)
    assert_array_equal(loaded.theta_g, truth.theta_g)
    assert_array_equal(loaded.theta_gs, truth.theta_gs)
    assert_array_equal(loaded.direction, truth.direction)
    assert_array_equal(loaded.cluster, truth.cluster)


def test_t_tests(tiny_cfg):
    es, _ = simgen.generate(tiny_cfg)
    p2, sign = simgen.t_test_pvalues(es)
    assert p2.shape == sign.shape == (60, 2)
    assert ((p2 > 0) & (p2 <= 1)).all()
    assert set(np.unique(sign)) <= {-1, 1}
    assert simgen.sample_labels(es.studies[0])[:2] == ["ctrl_1", "ctrl_2"]
    assert simgen.sample_labels(es.studies[0])[-1] == "case_5"


def test_welch_t_test_by_hand():
    controls, cases = [1.0, 2.0, 3.0], [4.0, 6.0, 8.0]
    values = np.column_stack([controls + cases, cases + controls])
    study = simgen.StudyExpression(values, np.array([False] * 3 + [True] * 3))
    es = simgen.ExpressionSet(("g1", "g2"), ("s1",), (study,))
    p2, sign = simgen.t_test_pvalues(es)

    # difference 4, standard error sqrt(4/3 + 1/3), Welch df 50/17
    t_stat = 4.0 / np.sqrt(5.0 / 3.0)
    expected = 2.0 * stats.t.sf(t_stat, 50.0 / 17.0)
    assert_allclose(p2[:, 0], [expected, expected], rtol=1e-10)
    assert 0.045 < expected < 0.065
    assert sign[:, 0].tolist() == [1, -1]


def test_strong_effects_are_detected():
    cfg = SimConfig(
        G=40, S=1, n_cases=30, n_controls=30, n_clusters=0, de_fraction=0.5, seed=3
    )
    es, truth = simgen.generate(cfg)
    p2, sign = simgen.t_test_pvalues(es)
    assert np.median(p2[truth.is_de, 0]) < np.median(p2[~truth.is_de, 0])
    signed = np.where(truth.direction == 0, 1, -1)
    strong = truth.is_de & (p2[:, 0] < 1e-3)
    assert_array_equal(sign[strong, 0], signed[strong])


def test_metapattern_group_sizes():
    groups = simgen.metapattern_groups(500)
    assert [size for _, size in groups] == [10, 10, 5, 5, 5, 5, 460]
    assert [label for label, _ in groups][-1] == simgen.NON_DE


def test_metapattern_truth():
    cfg = SimConfig.for_scenario(
        "metapattern", G=100, n_clusters=0, n_cases=4, n_controls=4, seed=2
    )
    assert cfg.S == 4
    _, truth = simgen.simulate(cfg)
    assert Counter(truth.pattern) == {
        "homo-": 2, "homo+": 2, "ssp1-": 1, "ssp1+": 1, "ssp2-": 1, "ssp2+": 1, "nonDE": 92
    }
    pattern = np.array(truth.pattern)
    assert truth.de_studies[pattern == "homo+"].all()
    assert_array_equal(truth.de_studies[pattern == "ssp1-"][0], [True, False, False, False])
    assert_array_equal(truth.de_studies[pattern == "ssp2+"][0], [False, True, False, False])
    assert (truth.effects()[pattern == "homo-"] < 0).all()
    assert not truth.de_studies[pattern == "nonDE"].any()


def test_sample_cov(tiny_cfg):
    cfg = replace(tiny_cfg, sigma=2.0)
    covs = simgen.sample_cov(cfg)
    assert covs.shape == (2, 2, 5, 5)
    for block in covs.reshape(-1, 5, 5):
        assert_allclose(np.diag(block), 4.0)
        assert_allclose(block, block.T)
        np.linalg.cholesky(block)
