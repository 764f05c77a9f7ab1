"""Command line interface: ``metapat <subcommand>``."""
from __future__ import annotations

import argparse
from collections.abc import Sequence
import logging
import sys
from typing import Any

from . import api, config, mcmc
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
    CONF_STABILITY_BETA,
    CONF_STABILITY_TOP,
    CONF_SUBSAMPLE_FRAC,
    CONF_THIN,
    CONF_THREADS,
    CONF_TIGHTNESS_ALPHA,
    CONF_WISHART_DF,
    DOMAIN,
    METHODS,
    SCENARIOS,
    SPACES,
    VERSION,
)
from .exceptions import MetaPatError
from .io_transform import KIND_PVALUE, KIND_ZSTAT

_LOGGER = logging.getLogger(__name__)

LOG_FORMAT = (
    "%(asctime)s.%(msecs)03d %(levelname)-8s %(threadName)s "
    "%(name)s:%(filename)s:%(lineno)s %(message)s"
)
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

EXIT_OK = 0
EXIT_FAILURE = 1


def _seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", dest=CONF_SEED, type=int)


def _threads(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threads", dest=CONF_THREADS, type=int)


def _fdr(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fdr", dest=CONF_FDR, type=float)


def _space(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--space", dest=CONF_SPACE, choices=SPACES)
    parser.add_argument("--r", dest=CONF_R, type=int)


def _sampler(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iters", dest=CONF_N_ITER, type=int)
    parser.add_argument("--burnin", dest=CONF_BURN_IN, type=int)
    parser.add_argument("--thin", dest=CONF_THIN, type=int)
    parser.add_argument("--sigma0-sq", dest=CONF_SIGMA0_SQ, type=float)
    parser.add_argument("--alpha-pos", dest=CONF_ALPHA_POS, type=float)
    parser.add_argument("--alpha-neg", dest=CONF_ALPHA_NEG, type=float)
    parser.add_argument("--beta", dest=CONF_BETA, type=float)
    parser.add_argument("--gamma-sd", dest=CONF_GAMMA_PROPOSAL_SD, type=float)


def _simulation(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", dest=CONF_SCENARIO, choices=SCENARIOS)
    parser.add_argument("--G", dest=CONF_G, type=int)
    parser.add_argument("--n-clusters", dest=CONF_N_CLUSTERS, type=int)
    parser.add_argument("--cluster-size", dest=CONF_CLUSTER_SIZE, type=int)
    parser.add_argument("--wishart-df", dest=CONF_WISHART_DF, type=int)
    parser.add_argument("--de-fraction", dest=CONF_DE_FRACTION, type=float)
    parser.add_argument("--n-cases", dest=CONF_N_CASES, type=int, nargs="+")
    parser.add_argument("--n-controls", dest=CONF_N_CONTROLS, type=int, nargs="+")


def _tight(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", dest=CONF_K_TARGET, type=int)
    parser.add_argument("--k-start", dest=CONF_K_START, type=int)
    parser.add_argument("--resamples", dest=CONF_N_RESAMPLE, type=int)
    parser.add_argument("--subsample-frac", dest=CONF_SUBSAMPLE_FRAC, type=float)
    parser.add_argument("--tightness", dest=CONF_TIGHTNESS_ALPHA, type=float)
    parser.add_argument("--stability-top", dest=CONF_STABILITY_TOP, type=int)
    parser.add_argument("--stability-beta", dest=CONF_STABILITY_BETA, type=float)


def build_parser() -> argparse.ArgumentParser:
    """Construct the argument parser of every subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML file of configuration keys")
    common.add_argument("-v", "--verbose", action="store_true", help="log debug messages")

    parser = argparse.ArgumentParser(
        prog=DOMAIN, description="Bayesian meta-analysis of differential expression patterns"
    )
    parser.add_argument("--version", action="version", version=f"{DOMAIN} {VERSION}")
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", parents=[common], help="sample the posterior")
    fit.add_argument("--input", required=True)
    fit.add_argument("--kind", choices=(KIND_ZSTAT, KIND_PVALUE), default=KIND_ZSTAT)
    _sampler(fit)
    _seed(fit)
    _threads(fit)
    fit.add_argument("--checkpoint-every", dest=CONF_CHECKPOINT_EVERY, type=int)
    fit.add_argument("--resume")
    fit.add_argument("--out", required=True)

    infer = commands.add_parser("infer", parents=[common], help="declare genes")
    infer.add_argument("--posterior", required=True)
    _space(infer)
    _fdr(infer)
    infer.add_argument("--out", required=True)

    cluster = commands.add_parser("cluster", parents=[common], help="extract meta-pattern modules")
    cluster.add_argument("--posterior", required=True)
    cluster.add_argument("--genes", required=True)
    cluster.add_argument("--on-z", metavar="Z_TSV", help="cluster on raw Z-statistics")
    _tight(cluster)
    _seed(cluster)
    cluster.add_argument("--out", required=True)

    baselines = commands.add_parser("baselines", parents=[common], help="combine p-values")
    baselines.add_argument("--input", required=True)
    baselines.add_argument(
        "--one-sided", action="store_true", help="input holds one-sided p-values"
    )
    baselines.add_argument("--method", dest=CONF_METHOD, choices=METHODS)
    baselines.add_argument("--r", dest=CONF_R, type=int)
    _fdr(baselines)
    baselines.add_argument("--out", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="simulate studies")
    _simulation(simulate)
    simulate.add_argument("--S", dest=CONF_S, type=int)
    simulate.add_argument("--sigma", dest=CONF_SIGMA, type=float)
    _seed(simulate)
    simulate.add_argument("--out", required=True)

    evaluate = commands.add_parser("evaluate", parents=[common], help="score decisions")
    evaluate.add_argument("--decisions", required=True)
    evaluate.add_argument("--truth", required=True)
    _space(evaluate)
    evaluate.add_argument("--out", required=True)

    bench = commands.add_parser("bench", parents=[common], help="run a simulation grid")
    _simulation(bench)
    bench.add_argument("--S", dest=CONF_GRID_S, type=int, nargs="+")
    bench.add_argument("--sigma", dest=CONF_GRID_SIGMA, type=float, nargs="+")
    bench.add_argument(
        "--n-clusters-grid", dest=CONF_GRID_N_CLUSTERS, type=int, nargs="+"
    )
    bench.add_argument("--seeds", dest=CONF_N_SEEDS, type=int)
    _sampler(bench)
    _tight(bench)
    _seed(bench)
    _threads(bench)
    bench.add_argument("--r", dest=CONF_R, type=int)
    _fdr(bench)
    bench.add_argument("--out", required=True)

    return parser


def _cli_data(args: argparse.Namespace) -> dict[str, Any]:
    """Return the configuration keys given on the command line."""
    data = {
        key: getattr(args, key)
        for key in config.SUBCOMMAND_KEYS[args.command]
        if getattr(args, key, None) is not None
    }
    for key in (CONF_N_CASES, CONF_N_CONTROLS):
        if isinstance(data.get(key), list) and len(data[key]) == 1:
            data[key] = data[key][0]
    return data


def setup_logging(verbose: bool = False) -> None:
    """Send log records to stderr."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        datefmt=LOG_DATE_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def run_command(args: argparse.Namespace) -> int:
    """Resolve the configuration and run one subcommand."""
    defaults = None
    if args.command == "fit" and args.resume is not None:
        defaults = mcmc.checkpoint_config(args.resume)
    data = config.resolve(args.command, _cli_data(args), args.config, defaults=defaults)

    if args.command == "fit":
        api.fit(args.input, data, args.out, kind=args.kind, resume=args.resume)
    elif args.command == "infer":
        api.infer(args.posterior, data, args.out)
    elif args.command == "cluster":
        api.cluster(args.posterior, args.genes, data, args.out, z_path=args.on_z)
    elif args.command == "baselines":
        api.baselines(args.input, data, args.out, one_sided=args.one_sided)
    elif args.command == "simulate":
        api.simulate(data, args.out)
    elif args.command == "evaluate":
        api.evaluate(args.decisions, args.truth, data, args.out)
    elif args.command == "bench":
        coordinator = api.bench(data, args.out)
        if not coordinator.succeeded:
            _LOGGER.error(
                "%d bench cells failed: %s",
                len(coordinator.failures),
                ", ".join(label for label, _ in coordinator.failures),
            )
            return EXIT_FAILURE
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line interface and return the exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return run_command(args)
    except MetaPatError as exc:
        _LOGGER.error("%s", exc)
        return EXIT_FAILURE
