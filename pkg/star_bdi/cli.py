"""
Command-line front end for the star-graph toolkit.

Subcommands: transient, simulate, asymptotic, diffusion, combinatorics and
validate. Exit status: 0 on success, 1 on a computational failure or a failed
validation check, 2 on a usage error.
"""

import csv
import json
import sys
import logging
import argparse
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from prettytable import PrettyTable
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .asymptotics import limit_law, write_limit_csv
from .combinatorics import check_routes, t_table_recursive, write_table_csv
from .diffusion import DiffusionParams, convergence_probe, write_density_csv
from .errors import StarBDIError
from .model import ModelParams, empirical_marginal, simulate_path, write_marginal_csv
from .specfun import SeriesControl
from .transient import transient_law, write_transient_csv
from .validation import FIGURE_PARAMS, campaign

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

GridSpec = Tuple[float, float, int]


class Subcommand(str, Enum):
    TRANSIENT = "transient"
    SIMULATE = "simulate"
    ASYMPTOTIC = "asymptotic"
    DIFFUSION = "diffusion"
    COMBINATORICS = "combinatorics"
    VALIDATE = "validate"


class RunConfig(BaseModel):
    """Validated description of one CLI invocation."""

    model_config = ConfigDict(frozen=True)

    subcommand: Subcommand
    params: Optional[ModelParams] = None
    d_values: Tuple[int, ...] = ()
    diffusion: Optional[DiffusionParams] = None
    t_grid: Optional[GridSpec] = None
    x_grid: Optional[GridSpec] = None
    time: Optional[float] = None
    k_max: int = 5
    n_paths: int = 100_000
    seed: int = 0
    method: str = "auto"
    out: Optional[Path] = None
    rel_tol: Optional[float] = None
    trajectory: Optional[Path] = None
    probe: bool = False
    nmax: int = 8
    check: bool = False
    quick: bool = False
    report: Optional[Path] = None

    @field_validator("t_grid", "x_grid")
    @classmethod
    def _grid_points(cls, grid: Optional[GridSpec]) -> Optional[GridSpec]:
        if grid is not None:
            start, stop, points = grid
            if points < 2:
                raise ValueError(f"grid needs at least 2 points, got {points}")
            if stop < start:
                raise ValueError(f"grid stop {stop} is below start {start}")
        return grid

    @field_validator("method")
    @classmethod
    def _known_method(cls, method: str) -> str:
        from bdi_config import SUPPORTED_METHODS

        if method not in SUPPORTED_METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {', '.join(SUPPORTED_METHODS)}")
        return method

    @field_validator("out", "report", "trajectory")
    @classmethod
    def _writable(cls, path: Optional[Path]) -> Optional[Path]:
        if path is not None and not path.resolve().parent.is_dir():
            raise ValueError(f"output directory does not exist: {path.resolve().parent}")
        return path

    @model_validator(mode="after")
    def _required_inputs(self) -> "RunConfig":
        needs_params = (Subcommand.TRANSIENT, Subcommand.SIMULATE, Subcommand.ASYMPTOTIC)
        if self.subcommand in needs_params and self.params is None:
            raise ValueError(f"{self.subcommand.value} needs --lambda, --mu, --alpha and --d (or --figure)")
        if self.subcommand == Subcommand.TRANSIENT and self.t_grid is None:
            raise ValueError("transient needs --t start:stop:points")
        if self.subcommand == Subcommand.SIMULATE and (self.time is None or self.time <= 0):
            raise ValueError("simulate needs --time > 0")
        if self.subcommand == Subcommand.DIFFUSION and self.diffusion is None:
            raise ValueError("diffusion needs --gamma, --mu-tilde, --beta and --epsilon")
        if self.subcommand != Subcommand.VALIDATE and self.subcommand != Subcommand.COMBINATORICS:
            if self.out is None and not (self.subcommand == Subcommand.DIFFUSION and self.probe):
                raise ValueError(f"{self.subcommand.value} needs --out PATH")
        return self

    @property
    def ctl(self) -> SeriesControl:
        base = SeriesControl.from_settings()
        if self.rel_tol is None:
            return base
        return base.model_copy(update={"rel_tol": self.rel_tol})


def parse_grid(text: str) -> GridSpec:
    """Parse 'start:stop:points'."""
    try:
        start, stop, points = text.split(":")
        return float(start), float(stop), int(points)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like start:stop:points, got {text!r}")


def grid_values(grid: GridSpec) -> np.ndarray:
    start, stop, points = grid
    return np.linspace(start, stop, points)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="star-bdi",
        description="Birth-death-immigration process on a star graph",
    )
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument("--log-file", default=None, help="Session log file (default from settings)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def model_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--lambda", dest="lam", type=float, help="Birth rate per individual")
        p.add_argument("--mu", type=float, help="Death rate per individual")
        p.add_argument("--alpha", type=float, help="Immigration rate")
        p.add_argument("--d", type=int, help="Number of rays")
        p.add_argument("--figure", type=int, choices=sorted(FIGURE_PARAMS), help="Use a figure parameter set")
        p.add_argument("--k", dest="k_max", type=int, default=5, help="Largest level reported")
        p.add_argument("--paths", dest="n_paths", type=int, default=100_000, help="Monte Carlo paths")
        p.add_argument("--seed", type=int, default=0, help="Monte Carlo seed")
        p.add_argument("--out", type=Path, help="Output CSV path")

    transient = sub.add_parser("transient", help="p(0,t) and P(k,t) on a time grid")
    model_flags(transient)
    transient.add_argument("--t", dest="t_grid", type=parse_grid, help="start:stop:points")
    transient.add_argument(
        "--method", default="auto", choices=["series", "volterra", "theorem25", "mc", "auto"], help="Solution route"
    )
    transient.add_argument("--rel-tol", type=float, help="Series relative tolerance override")

    simulate = sub.add_parser("simulate", help="Empirical marginal from exact simulation")
    model_flags(simulate)
    simulate.add_argument("--time", type=float, help="Observation time")
    simulate.add_argument("--trajectory", type=Path, help="Also write one sample path here")

    asymptotic = sub.add_parser("asymptotic", help="Limit law for lambda < mu")
    model_flags(asymptotic)

    diffusion = sub.add_parser("diffusion", help="Gamma density of the scaled process")
    diffusion.add_argument("--gamma", type=float, help="Immigration ratio gamma")
    diffusion.add_argument("--mu-tilde", type=float, help="Scale rate mu")
    diffusion.add_argument("--beta", type=float, help="Drift slope beta")
    diffusion.add_argument("--epsilon", type=float, help="Scaling parameter")
    diffusion.add_argument("--x", dest="x_grid", type=parse_grid, default=(0.05, 5.0, 100), help="start:stop:points")
    diffusion.add_argument("--t", dest="t_grid", type=parse_grid, default=(0.5, 5.0, 10), help="start:stop:points")
    diffusion.add_argument("--probe", action="store_true", help="Run the KS convergence probe")
    diffusion.add_argument("--d", type=int, default=3, help="Rays of the induced chain (probe)")
    diffusion.add_argument("--time", type=float, default=1.0, help="Probe time")
    diffusion.add_argument("--paths", dest="n_paths", type=int, default=10_000, help="Probe paths")
    diffusion.add_argument("--seed", type=int, default=0, help="Probe seed")
    diffusion.add_argument("--out", type=Path, help="Output CSV path")

    combinatorics = sub.add_parser("combinatorics", help="Permutation component table t_{n,k}")
    combinatorics.add_argument("--nmax", type=int, default=8, help="Largest n")
    combinatorics.add_argument("--check", action="store_true", help="Cross-check the three routes")
    combinatorics.add_argument("--out", type=Path, help="Output CSV path")

    validate = sub.add_parser("validate", help="Cross-method validation campaign")
    validate.add_argument("--quick", action="store_true", help="Reduced path counts and ray sets")
    validate.add_argument("--report", type=Path, help="Write the JSON report here")

    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Turn parsed flags into a RunConfig (raises ValidationError)."""
    values: Dict[str, Any] = {
        key: value
        for key, value in vars(args).items()
        if key not in ("verbose", "log_file", "lam", "mu", "alpha", "d", "figure", "gamma", "mu_tilde", "beta", "epsilon")
        and value is not None
    }
    subcommand = Subcommand(args.subcommand)

    if subcommand in (Subcommand.TRANSIENT, Subcommand.SIMULATE, Subcommand.ASYMPTOTIC):
        figure = getattr(args, "figure", None)
        if figure is not None:
            preset = FIGURE_PARAMS[figure]
            d_values = (args.d,) if args.d is not None else preset["d_values"]
            values["params"] = ModelParams(alpha=preset["alpha"], lam=preset["lam"], mu=preset["mu"], d=d_values[0])
            values["d_values"] = tuple(d_values)
            if subcommand == Subcommand.TRANSIENT and args.t_grid is None:
                values["t_grid"] = (0.0, preset["t_max"], 50)
        elif None not in (args.lam, args.mu, args.alpha, args.d):
            values["params"] = ModelParams(alpha=args.alpha, lam=args.lam, mu=args.mu, d=args.d)
            values["d_values"] = (args.d,)

    if subcommand == Subcommand.DIFFUSION:
        if None not in (args.gamma, args.mu_tilde, args.beta, args.epsilon):
            values["diffusion"] = DiffusionParams(
                gamma_t=args.gamma, mu_t=args.mu_tilde, beta_t=args.beta, epsilon=args.epsilon
            )
        values["d_values"] = (args.d,)

    return RunConfig(**values)


def _per_d_path(out: Path, d: int, many: bool) -> Path:
    return out.with_name(f"{out.stem}_d{d}{out.suffix}") if many else out


def _run_transient(config: RunConfig) -> int:
    t_grid = grid_values(config.t_grid)
    many = len(config.d_values) > 1
    for d in config.d_values:
        params = config.params.with_d(d)
        law = transient_law(
            params,
            t_grid,
            method=config.method,
            k_max=config.k_max,
            ctl=config.ctl,
            n_paths=config.n_paths,
            seed=config.seed,
        )
        values = np.concatenate([law.p0[None, :], law.Pk])
        if np.any(values < -1e-9) or np.any(values > 1 + 1e-9):
            logger.warning(f"Probabilities outside [0, 1] beyond rounding for d={d}; clipping on output")
        law.p0 = np.clip(law.p0, 0.0, 1.0)
        law.Pk = np.clip(law.Pk, 0.0, 1.0)
        path = _per_d_path(config.out, d, many)
        write_transient_csv(law, str(path))
        logger.info(f"Wrote {path} ({law.method.value}, {t_grid.size} times)")
    return EXIT_OK


def _run_simulate(config: RunConfig) -> int:
    many = len(config.d_values) > 1
    for d in config.d_values:
        params = config.params.with_d(d)
        marginal = empirical_marginal(params, config.time, config.n_paths, config.seed, k_max=config.k_max, progress=True)
        path = _per_d_path(config.out, d, many)
        write_marginal_csv(marginal, str(path))
        logger.info(f"Wrote {path}")
        if config.trajectory is not None:
            trajectory = simulate_path(params, config.time, config.seed)
            with open(_per_d_path(config.trajectory, d, many), "w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(["time", "ray", "level"])
                for time, state in trajectory.events:
                    writer.writerow([f"{time:.17g}", state.ray if state.ray is not None else 0, state.level])
    return EXIT_OK


def _run_asymptotic(config: RunConfig) -> int:
    many = len(config.d_values) > 1
    for d in config.d_values:
        law = limit_law(config.params.with_d(d), config.k_max)
        path = _per_d_path(config.out, d, many)
        write_limit_csv(law, str(path))
        logger.info(f"Wrote {path} (degenerate={law.degenerate})")
    return EXIT_OK


def _run_diffusion(config: RunConfig) -> int:
    dp = config.diffusion
    if config.probe:
        d = config.d_values[0] if config.d_values else 3
        ks, band = convergence_probe(dp, d, config.time or 1.0, config.n_paths, config.seed)
        print(f"ks_distance={ks:.6f} band={band:.6f}")
        if config.out is not None:
            with open(config.out, "w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(["epsilon", "t", "ks_distance", "n_paths", "seed"])
                writer.writerow([f"{dp.epsilon:.17g}", f"{config.time:.17g}", f"{ks:.17g}", config.n_paths, config.seed])
        return EXIT_OK
    write_density_csv(dp, grid_values(config.x_grid), grid_values(config.t_grid), str(config.out))
    logger.info(f"Wrote {config.out}")
    return EXIT_OK


def _run_combinatorics(config: RunConfig) -> int:
    status = EXIT_OK
    if config.check:
        outcome = check_routes(config.nmax)
        print(f"t_(n,k) routes up to n={outcome['n_max']}: {'equal' if outcome['success'] else 'MISMATCH'}")
        if not outcome["success"]:
            for mismatch in outcome["mismatches"]:
                print(f"  n={mismatch[0]} k={mismatch[1]}: {mismatch[2]}", file=sys.stderr)
            status = EXIT_FAILURE
    if config.out is not None:
        write_table_csv(t_table_recursive(config.nmax), str(config.out))
        logger.info(f"Wrote {config.out}")
    return status


def render_report(results: List[Dict[str, Any]]) -> str:
    table = PrettyTable()
    table.field_names = ["Check", "Status", "Residual", "Threshold", "Seconds"]
    table.align["Check"] = "l"
    for result in results:
        table.add_row(
            [
                result["check"],
                "PASS" if result["success"] else "FAIL",
                f"{result.get('residual', float('nan')):.3e}",
                f"{result.get('threshold', float('nan')):.1e}",
                f"{result.get('seconds', 0.0):.1f}",
            ]
        )
    return table.get_string()


def _run_validate(config: RunConfig) -> int:
    results = campaign.run(quick=config.quick)
    print(render_report(results))
    for result in results:
        if result.get("error"):
            print(f"{result['check']}: {result['error']}", file=sys.stderr)
    if config.report is not None:
        with open(config.report, "w") as handle:
            json.dump(results, handle, indent=2, default=str)
        logger.info(f"Wrote {config.report}")
    failed = [r["check"] for r in results if not r["success"]]
    if failed:
        logger.error(f"Validation failed: {', '.join(failed)}")
        return EXIT_FAILURE
    return EXIT_OK


RUNNERS = {
    Subcommand.TRANSIENT: _run_transient,
    Subcommand.SIMULATE: _run_simulate,
    Subcommand.ASYMPTOTIC: _run_asymptotic,
    Subcommand.DIFFUSION: _run_diffusion,
    Subcommand.COMBINATORICS: _run_combinatorics,
    Subcommand.VALIDATE: _run_validate,
}


def run(config: RunConfig) -> int:
    """Execute a validated config; module errors become exit status 1."""
    try:
        return RUNNERS[config.subcommand](config)
    except StarBDIError as e:
        logger.error(f"{config.subcommand.value} failed: {e.diagnostic}")
        print(f"error: {e.diagnostic}", file=sys.stderr)
        return EXIT_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    from bdi_config import setup_logging

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    setup_logging("DEBUG" if args.verbose else None, args.log_file)
    logger.info("=" * 80)
    logger.info(f"star-bdi {args.subcommand} - argv={list(argv) if argv is not None else sys.argv[1:]}")
    logger.info("=" * 80)

    try:
        config = config_from_args(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    return run(config)
