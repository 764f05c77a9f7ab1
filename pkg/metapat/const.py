"""Constants for the metapat meta-analysis package."""
from __future__ import annotations

DOMAIN = "metapat"

NAME = "BayesMP transcriptomic meta-analysis"

VERSION = "0.1.0"

ENV_SEED = "METAPAT_SEED"

P_EPSILON = 1e-15
PI_EPSILON = 1e-12
INIT_Z_THRESHOLD = 1.96
MIN_MODULE_SIZE = 3
AW_MAX_STUDIES = 20

CONF_SEED = "seed"
CONF_THREADS = "threads"

# Sampler
CONF_N_ITER = "n_iter"
CONF_BURN_IN = "burn_in"
CONF_THIN = "thin"
CONF_BETA = "beta"
CONF_SIGMA0_SQ = "sigma0_sq"
CONF_ALPHA_POS = "alpha_pos"
CONF_ALPHA_NEG = "alpha_neg"
CONF_GAMMA_PROPOSAL_SD = "gamma_proposal_sd"
CONF_CHECKPOINT_EVERY = "checkpoint_every"

# Inference
CONF_SPACE = "space"
CONF_R = "r"
CONF_FDR = "fdr"

# Tight clustering
CONF_K_TARGET = "k_target"
CONF_K_START = "k_start"
CONF_N_RESAMPLE = "n_resample"
CONF_SUBSAMPLE_FRAC = "subsample_frac"
CONF_TIGHTNESS_ALPHA = "tightness_alpha"
CONF_STABILITY_TOP = "stability_top"
CONF_STABILITY_BETA = "stability_beta"

# Baselines
CONF_METHOD = "method"

# Simulation
CONF_SCENARIO = "scenario"
CONF_G = "G"
CONF_S = "S"
CONF_SIGMA = "sigma"
CONF_N_CASES = "n_cases"
CONF_N_CONTROLS = "n_controls"
CONF_N_CLUSTERS = "n_clusters"
CONF_CLUSTER_SIZE = "cluster_size"
CONF_WISHART_DF = "wishart_df"
CONF_DE_FRACTION = "de_fraction"

# Bench
CONF_GRID_S = "grid_S"
CONF_GRID_SIGMA = "grid_sigma"
CONF_GRID_N_CLUSTERS = "grid_n_clusters"
CONF_N_SEEDS = "n_seeds"

SPACES = ("B", "Abar", "rbar")
METHODS = ("fisher", "stouffer", "maxp", "rop", "aw")
SCENARIOS = (
    "general",
    "metapattern",
    "unbalanced-a",
    "unbalanced-b",
    "unbalanced-c",
    "unbalanced-d",
)

# (n_cases, n_controls) per study
UNBALANCED_DESIGNS = {
    "unbalanced-a": ((20, 20), (30, 30), (40, 40)),
    "unbalanced-b": ((20, 20), (50, 50), (100, 100)),
    "unbalanced-c": ((60, 20), (60, 20), (60, 20)),
    "unbalanced-d": ((20, 60), (40, 40), (60, 20)),
}

METAPATTERN_STUDIES = 4
METAPATTERN_LABELS = (
    "homo-",
    "homo+",
    "ssp1-",
    "ssp1+",
    "ssp2-",
    "ssp2+",
    "nonDE",
)

DEFAULTS = {
    CONF_SEED: 0,
    CONF_THREADS: 1,
    CONF_N_ITER: 10_000,
    CONF_BURN_IN: 500,
    CONF_THIN: 1,
    CONF_BETA: 0.5,
    CONF_SIGMA0_SQ: 10.0,
    CONF_ALPHA_POS: 1.0,
    CONF_ALPHA_NEG: 1.0,
    CONF_GAMMA_PROPOSAL_SD: 0.1,
    CONF_CHECKPOINT_EVERY: 0,
    CONF_SPACE: "B",
    CONF_R: None,
    CONF_FDR: 0.05,
    CONF_K_TARGET: 6,
    CONF_K_START: None,
    CONF_N_RESAMPLE: 50,
    CONF_SUBSAMPLE_FRAC: 0.7,
    CONF_TIGHTNESS_ALPHA: 0.8,
    CONF_STABILITY_TOP: 3,
    CONF_STABILITY_BETA: 0.8,
    CONF_METHOD: "fisher",
    CONF_SCENARIO: "general",
    CONF_G: 10_000,
    CONF_S: 3,
    CONF_SIGMA: 1.0,
    CONF_N_CASES: 20,
    CONF_N_CONTROLS: 20,
    CONF_N_CLUSTERS: 200,
    CONF_CLUSTER_SIZE: 20,
    CONF_WISHART_DF: 60,
    CONF_DE_FRACTION: 0.30,
    CONF_GRID_S: [3],
    CONF_GRID_SIGMA: [1.0],
    CONF_GRID_N_CLUSTERS: None,
    CONF_N_SEEDS: 2,
}
