"""Run configuration for metapat: schema, TOML files and source precedence."""
from __future__ import annotations

from collections.abc import Iterable, Mapping
import logging
import os
from pathlib import Path
import sys
from typing import Any

import voluptuous as vol

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
    CONF_GRID_S,
    CONF_GRID_N_CLUSTERS,
    CONF_GRID_SIGMA,
    CONF_K_START,
    CONF_K_TARGET,
    CONF_METHOD,
    CONF_N_CASES,
    CONF_N_CLUSTERS,
    CONF_N_CONTROLS,
    CONF_N_ITER,
    CONF_N_RESAMPLE,
    CONF_N_SEEDS,
    CONF_R,
    CONF_S,
    CONF_SCENARIO,
    CONF_SEED,
    CONF_SIGMA,
    CONF_SIGMA0_SQ,
    CONF_SPACE,
    CONF_STABILITY_TOP,
    CONF_STABILITY_BETA,
    CONF_SUBSAMPLE_FRAC,
    CONF_THIN,
    CONF_THREADS,
    CONF_TIGHTNESS_ALPHA,
    CONF_WISHART_DF,
    DEFAULTS,
    ENV_SEED,
    METHODS,
    SCENARIOS,
    SPACES,
)
from .exceptions import MetaPatConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

_LOGGER = logging.getLogger(__name__)

SAMPLER_KEYS = (
    CONF_SEED,
    CONF_THREADS,
    CONF_N_ITER,
    CONF_BURN_IN,
    CONF_THIN,
    CONF_BETA,
    CONF_SIGMA0_SQ,
    CONF_ALPHA_POS,
    CONF_ALPHA_NEG,
    CONF_GAMMA_PROPOSAL_SD,
    CONF_CHECKPOINT_EVERY,
)
TIGHT_KEYS = (
    CONF_SEED,
    CONF_K_TARGET,
    CONF_K_START,
    CONF_N_RESAMPLE,
    CONF_SUBSAMPLE_FRAC,
    CONF_TIGHTNESS_ALPHA,
    CONF_STABILITY_TOP,
    CONF_STABILITY_BETA,
)
SIMULATION_KEYS = (
    CONF_SEED,
    CONF_SCENARIO,
    CONF_G,
    CONF_S,
    CONF_SIGMA,
    CONF_N_CASES,
    CONF_N_CONTROLS,
    CONF_N_CLUSTERS,
    CONF_CLUSTER_SIZE,
    CONF_WISHART_DF,
    CONF_DE_FRACTION,
)

# Keys read by each subcommand
SUBCOMMAND_KEYS: dict[str, tuple[str, ...]] = {
    "fit": SAMPLER_KEYS,
    "infer": (CONF_SPACE, CONF_R, CONF_FDR),
    "cluster": TIGHT_KEYS,
    "baselines": (CONF_METHOD, CONF_R, CONF_FDR),
    "simulate": SIMULATION_KEYS,
    "evaluate": (CONF_SPACE, CONF_R),
    "bench": tuple(
        dict.fromkeys(
            SAMPLER_KEYS
            + TIGHT_KEYS
            + SIMULATION_KEYS
            + (CONF_R, CONF_FDR, CONF_GRID_S, CONF_GRID_SIGMA, CONF_GRID_N_CLUSTERS)
            + (CONF_N_SEEDS,)
        )
    ),
}


def _count(minimum: int):
    return vol.All(int, vol.Range(min=minimum))


def _positive():
    return vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False))


def _fraction(min_included: bool = False, max_included: bool = False):
    return vol.All(
        vol.Coerce(float),
        vol.Range(
            min=0.0, max=1.0, min_included=min_included, max_included=max_included
        ),
    )


def create_schema(data=None, conf: tuple | list | None = None):
    """Construct schema from config data."""
    if data is None:
        data = DEFAULTS

    def default(key: str) -> Any:
        return data.get(key, DEFAULTS[key])

    sample_size = vol.Any(_count(2), [_count(2)])

    schema = {
        vol.Optional(CONF_SEED, default=default(CONF_SEED)): vol.All(
            int, vol.Range(min=0, max=2**64 - 1)
        ),
        vol.Optional(CONF_THREADS, default=default(CONF_THREADS)): _count(1),
        vol.Optional(CONF_N_ITER, default=default(CONF_N_ITER)): _count(1),
        vol.Optional(CONF_BURN_IN, default=default(CONF_BURN_IN)): _count(0),
        vol.Optional(CONF_THIN, default=default(CONF_THIN)): _count(1),
        vol.Optional(CONF_BETA, default=default(CONF_BETA)): _positive(),
        vol.Optional(CONF_SIGMA0_SQ, default=default(CONF_SIGMA0_SQ)): _positive(),
        vol.Optional(CONF_ALPHA_POS, default=default(CONF_ALPHA_POS)): _positive(),
        vol.Optional(CONF_ALPHA_NEG, default=default(CONF_ALPHA_NEG)): _positive(),
        vol.Optional(
            CONF_GAMMA_PROPOSAL_SD, default=default(CONF_GAMMA_PROPOSAL_SD)
        ): _positive(),
        vol.Optional(
            CONF_CHECKPOINT_EVERY, default=default(CONF_CHECKPOINT_EVERY)
        ): _count(0),
        vol.Optional(CONF_SPACE, default=default(CONF_SPACE)): vol.In(SPACES),
        vol.Optional(CONF_R, default=default(CONF_R)): vol.Any(None, _count(1)),
        vol.Optional(CONF_FDR, default=default(CONF_FDR)): _fraction(),
        vol.Optional(CONF_K_TARGET, default=default(CONF_K_TARGET)): _count(1),
        vol.Optional(CONF_K_START, default=default(CONF_K_START)): vol.Any(
            None, _count(1)
        ),
        vol.Optional(CONF_N_RESAMPLE, default=default(CONF_N_RESAMPLE)): _count(1),
        vol.Optional(
            CONF_SUBSAMPLE_FRAC, default=default(CONF_SUBSAMPLE_FRAC)
        ): _fraction(max_included=True),
        vol.Optional(
            CONF_TIGHTNESS_ALPHA, default=default(CONF_TIGHTNESS_ALPHA)
        ): vol.All(
            vol.Coerce(float),
            vol.Range(min=0.5, max=1.0, min_included=False, max_included=True),
        ),
        vol.Optional(
            CONF_STABILITY_TOP, default=default(CONF_STABILITY_TOP)
        ): _count(1),
        vol.Optional(
            CONF_STABILITY_BETA, default=default(CONF_STABILITY_BETA)
        ): _fraction(max_included=True),
        vol.Optional(CONF_METHOD, default=default(CONF_METHOD)): vol.In(METHODS),
        vol.Optional(CONF_SCENARIO, default=default(CONF_SCENARIO)): vol.In(SCENARIOS),
        vol.Optional(CONF_G, default=default(CONF_G)): _count(1),
        vol.Optional(CONF_S, default=default(CONF_S)): _count(1),
        vol.Optional(CONF_SIGMA, default=default(CONF_SIGMA)): _positive(),
        vol.Optional(CONF_N_CASES, default=default(CONF_N_CASES)): sample_size,
        vol.Optional(CONF_N_CONTROLS, default=default(CONF_N_CONTROLS)): sample_size,
        vol.Optional(CONF_N_CLUSTERS, default=default(CONF_N_CLUSTERS)): _count(0),
        vol.Optional(CONF_CLUSTER_SIZE, default=default(CONF_CLUSTER_SIZE)): _count(1),
        vol.Optional(CONF_WISHART_DF, default=default(CONF_WISHART_DF)): _count(1),
        vol.Optional(CONF_DE_FRACTION, default=default(CONF_DE_FRACTION)): _fraction(
            min_included=True
        ),
        vol.Optional(CONF_GRID_S, default=default(CONF_GRID_S)): vol.All(
            [_count(1)], vol.Length(min=1)
        ),
        vol.Optional(CONF_GRID_SIGMA, default=default(CONF_GRID_SIGMA)): vol.All(
            [_positive()], vol.Length(min=1)
        ),
        vol.Optional(
            CONF_GRID_N_CLUSTERS, default=default(CONF_GRID_N_CLUSTERS)
        ): vol.Any(None, vol.All([_count(0)], vol.Length(min=1))),
        vol.Optional(CONF_N_SEEDS, default=default(CONF_N_SEEDS)): _count(1),
    }

    if conf is not None:
        for key in list(schema.keys()):
            if key.schema not in conf:
                schema.pop(key)

    return vol.Schema(schema, extra=vol.PREVENT_EXTRA)


def _check_cross_fields(data: Mapping[str, Any]) -> None:
    """Raise MetaPatConfigError on combinations the schema cannot express."""
    if CONF_BURN_IN in data and CONF_N_ITER in data:
        if data[CONF_BURN_IN] >= data[CONF_N_ITER]:
            raise MetaPatConfigError(
                f"burn_in={data[CONF_BURN_IN]} must be smaller than "
                f"n_iter={data[CONF_N_ITER]}"
            )

    if {CONF_N_CLUSTERS, CONF_CLUSTER_SIZE, CONF_G} <= data.keys():
        if data[CONF_N_CLUSTERS] * data[CONF_CLUSTER_SIZE] > data[CONF_G]:
            raise MetaPatConfigError(
                f"{data[CONF_N_CLUSTERS]} clusters of {data[CONF_CLUSTER_SIZE]} "
                f"genes exceed G={data[CONF_G]}"
            )

    if data.get(CONF_GRID_N_CLUSTERS) and {CONF_CLUSTER_SIZE, CONF_G} <= data.keys():
        if max(data[CONF_GRID_N_CLUSTERS]) * data[CONF_CLUSTER_SIZE] > data[CONF_G]:
            raise MetaPatConfigError(
                f"{max(data[CONF_GRID_N_CLUSTERS])} clusters of "
                f"{data[CONF_CLUSTER_SIZE]} genes exceed G={data[CONF_G]}"
            )

    if {CONF_N_CLUSTERS, CONF_CLUSTER_SIZE, CONF_WISHART_DF} <= data.keys():
        clustered = data[CONF_N_CLUSTERS] or any(data.get(CONF_GRID_N_CLUSTERS) or ())
        if clustered and data[CONF_WISHART_DF] <= data[CONF_CLUSTER_SIZE] + 1:
            raise MetaPatConfigError(
                f"wishart_df={data[CONF_WISHART_DF]} must exceed "
                f"cluster_size + 1 = {data[CONF_CLUSTER_SIZE] + 1}"
            )

    if data.get(CONF_R) is not None:
        n_studies = min(data[CONF_GRID_S]) if CONF_GRID_S in data else data.get(CONF_S)
        if n_studies is not None and data[CONF_R] > n_studies:
            raise MetaPatConfigError(f"r={data[CONF_R]} exceeds S={n_studies}")

    for key in (CONF_N_CASES, CONF_N_CONTROLS):
        value = data.get(key)
        if isinstance(value, list) and CONF_S in data and len(value) != data[CONF_S]:
            raise MetaPatConfigError(
                f"{key} lists {len(value)} studies but S={data[CONF_S]}"
            )


def validate_data(
    data: Mapping[str, Any],
    conf: Iterable[str] | None = None,
    defaults: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Validate config data and fill in defaults.

    Keys unknown to metapat are rejected; known keys outside ``conf`` are
    ignored so that one file can serve every subcommand.
    """
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise MetaPatConfigError(f"Unknown configuration keys: {', '.join(unknown)}")

    conf = tuple(DEFAULTS) if conf is None else tuple(conf)
    selected = {key: value for key, value in data.items() if key in conf}

    try:
        validated = create_schema(defaults, conf=conf)(selected)
    except vol.Invalid as exc:
        raise MetaPatConfigError(f"Invalid configuration: {exc}") from exc

    _check_cross_fields(validated)
    return validated


def load_toml(path: str | Path) -> dict[str, Any]:
    """Read a flat key = value TOML file."""
    try:
        with Path(path).open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise MetaPatConfigError(f"Cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise MetaPatConfigError(f"Malformed config file {path}: {exc}") from exc

    nested = [key for key, value in data.items() if isinstance(value, dict)]
    if nested:
        raise MetaPatConfigError(
            f"Config file {path} must be flat, found tables: {', '.join(nested)}"
        )
    return data


def seed_from_env(environ: Mapping[str, str] | None = None) -> int | None:
    """Return the seed given by the METAPAT_SEED environment variable, if any."""
    environ = os.environ if environ is None else environ
    value = environ.get(ENV_SEED)
    if value is None or not value.strip():
        return None
    try:
        return int(value)
    except ValueError as exc:
        raise MetaPatConfigError(f"{ENV_SEED}={value!r} is not an integer") from exc


def merge_sources(
    cli: Mapping[str, Any] | None = None,
    file_data: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> dict[str, Any]:
    """Merge config sources: CLI flags over file over METAPAT_SEED.

    CLI entries set to None count as not given.
    """
    data: dict[str, Any] = {}
    seed = seed_from_env(environ)
    if seed is not None:
        data[CONF_SEED] = seed
    data.update(file_data or {})
    data.update({key: value for key, value in (cli or {}).items() if value is not None})
    return data


def resolve(
    subcommand: str,
    cli: Mapping[str, Any] | None = None,
    config_path: str | Path | None = None,
    environ: Mapping[str, str] | None = None,
    defaults: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Return the validated settings of one subcommand from all sources."""
    if subcommand not in SUBCOMMAND_KEYS:
        raise MetaPatConfigError(f"Unknown subcommand {subcommand!r}")
    file_data = load_toml(config_path) if config_path is not None else None
    data = merge_sources(cli, file_data, environ)
    validated = validate_data(data, SUBCOMMAND_KEYS[subcommand], defaults)
    _LOGGER.debug("Resolved %s settings: %s", subcommand, validated)
    return validated
