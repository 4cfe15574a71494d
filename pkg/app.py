"""
Main Application Class for the Raceway Topography Optimizer

This module contains the RacewayApplication class that parses the command
line, routes each command to its handler, and writes the result artifacts
(result.json, table.csv, profile.csv, trajectories.csv, timing.json and the
SVG plots) into the output directory.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from dotenv import load_dotenv

import hydro
import plots
import search
import utils
from dynamics import Permutation
from errors import InternalError, OutputError, RacewayError, SearchFailedError, UsageError
from logger import AlertHandler
from objective import Raceway, Regime, flat_vertical_average, gradient_check
from params import load_config, to_mapping

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

GRADIENT_TOLERANCE = 1e-7
DEFAULT_LENGTHS = (100.0, 10.0, 1.0)
DEFAULT_NZ_RANGE = "1:12"


@dataclass
class ExperimentSpec:
    """One command-line run."""

    command: str
    out: Path
    config: Path | None = None
    regime: Regime | None = None
    workers: int = 1
    plots: bool = True
    overrides: dict = field(default_factory=dict)
    perm: str | None = None
    coeffs: list | None = None
    seed: int = 42
    instances: int = 20
    lengths: list | None = None
    nz_range: list | None = None
    mapping: Path | None = None
    optimize_profile: bool = False
    allow_large_nz: bool = False

    def echo(self):
        """Everything needed to repeat the run except the worker count."""
        return {
            "command": self.command,
            "config": str(self.config) if self.config else None,
            "regime": self.regime.value if self.regime else None,
            "overrides": self.overrides,
            "perm": self.perm,
            "coeffs": self.coeffs,
            "seed": self.seed,
            "instances": self.instances,
            "lengths": self.lengths,
            "nz_range": self.nz_range,
            "mapping": str(self.mapping) if self.mapping else None,
            "optimize_profile": self.optimize_profile,
            "allow_large_nz": self.allow_large_nz,
            "plots": self.plots,
        }


class _ArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _ArgumentParser(prog="raceway", description="Raceway pond topography and mixing optimizer")
    parser.add_argument("command", help="simulate, grad-check, optimize, search, sweep-length, nz-convergence or export-profile")
    parser.add_argument("--config", type=Path, help="model configuration file (key = value)")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--regime", choices=[regime.value for regime in Regime], help="fixed or variable volume")
    parser.add_argument("--workers", type=int, help="worker processes (fallback: RACEWAY_WORKERS, then 1)")
    parser.add_argument("--plots", choices=["on", "off"], default="on")
    parser.add_argument("--L", type=float, help="override the lap length, m")
    parser.add_argument("--Nz", type=int, help="override the layer count")
    parser.add_argument("--M", type=int, help="override the Fourier mode count")
    parser.add_argument("--perm", help="sigma as dash-separated images, or reported:<name>")
    parser.add_argument("--coeffs", help="a1..aM (fixed) or a0..aM (variable), comma-separated")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--instances", type=int, default=20)
    parser.add_argument("--lengths", help="comma-separated lap lengths for sweep-length")
    parser.add_argument("--nz-range", help="lo:hi or comma-separated layer counts for nz-convergence")
    parser.add_argument("--mapping", type=Path, help="JSON file {Nz: sigma} for nz-convergence")
    parser.add_argument("--optimize-profile", action="store_true", help="optimize the topography in nz-convergence")
    parser.add_argument("--allow-large-nz", action="store_true", help="enumerate permutations for Nz > 9")
    return parser


def spec_from_args(argv=None):
    """Parse the command line into an ExperimentSpec."""
    args = build_parser().parse_args(argv)
    workers = args.workers
    if workers is None:
        env_workers = os.getenv("RACEWAY_WORKERS", "1")
        try:
            workers = int(env_workers)
        except ValueError:
            raise UsageError(f"RACEWAY_WORKERS must be an integer, got '{env_workers}'")
    if workers < 1:
        raise UsageError(f"worker count must be at least 1, got {workers}")
    overrides = {key: value for key, value in (("L", args.L), ("Nz", args.Nz), ("M", args.M)) if value is not None}
    return ExperimentSpec(
        command=args.command,
        out=args.out,
        config=args.config,
        regime=Regime(args.regime) if args.regime else None,
        workers=workers,
        plots=args.plots == "on",
        overrides=overrides,
        perm=args.perm,
        coeffs=utils.parse_float_list(args.coeffs, "coeffs") if args.coeffs else None,
        seed=args.seed,
        instances=args.instances,
        lengths=utils.parse_float_list(args.lengths, "lengths") if args.lengths else None,
        nz_range=utils.parse_int_range(args.nz_range) if args.nz_range else None,
        mapping=args.mapping,
        optimize_profile=args.optimize_profile,
        allow_large_nz=args.allow_large_nz,
    )


class RacewayApplication:
    """
    Main application class for the raceway optimizer.

    Handles logging setup, command routing and artifact output.
    """

    REGIME_REQUIRED = {"optimize", "search", "sweep-length"}

    def __init__(self):
        """Initialize the application."""
        self.logger = logging.getLogger(__name__)
        self._handlers = []
        self.commands = {
            "simulate": self.run_simulate,
            "grad-check": self.run_grad_check,
            "optimize": self.run_optimize,
            "search": self.run_search,
            "sweep-length": self.run_sweep_length,
            "nz-convergence": self.run_nz_convergence,
            "export-profile": self.run_export_profile,
        }

    def setup_logging(self, out_dir):
        """Setup logging configuration: raceway.log in the output directory plus terminal alerts."""
        root_logger = logging.getLogger()
        root_logger.setLevel(logging.INFO)
        for handler in self._handlers:
            root_logger.removeHandler(handler)
            handler.close()
        self._handlers = []

        # File logging: write messages to raceway.log in the output directory
        file_handler = logging.FileHandler(Path(out_dir) / "raceway.log", mode="w", encoding="utf-8")
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s"))
        alert_handler = AlertHandler()
        root_logger.addHandler(file_handler)
        root_logger.addHandler(alert_handler)
        self._handlers = [file_handler, alert_handler]

        self.logger.info(f"Logger initialized - writing to {Path(out_dir) / 'raceway.log'}")

    def close(self):
        root_logger = logging.getLogger()
        for handler in self._handlers:
            root_logger.removeHandler(handler)
            handler.close()
        self._handlers = []

    # Run dispatch
    # ------------------------------------------------------------------
    def run(self, spec):
        """
        Run one command and write its artifacts.

        Args:
            spec: ExperimentSpec

        Returns:
            int: exit status, 0 success, 1 failure, 2 usage error
        """
        out = Path(spec.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            return self.fail(UsageError(f"cannot create output directory {out}: {e}", path=str(out)), None)
        try:
            self.setup_logging(out)
        except OSError as e:
            return self.fail(OutputError(f"cannot open the run log in {out}: {e}", path=str(out)), out)
        started = time.perf_counter()
        try:
            handler = self.commands.get(spec.command)
            if handler is None:
                raise UsageError(f"unknown command '{spec.command}'; choose from {', '.join(self.commands)}")
            if spec.command in self.REGIME_REQUIRED and spec.regime is None:
                raise UsageError(f"{spec.command} needs --regime fixed|variable")
            params = load_config(spec.config).with_overrides(**spec.overrides)
            self.logger.info(f"Running {spec.command} in {out}")
            status = handler(spec, params)
        except RacewayError as e:
            return self.fail(e, out)
        except Exception as e:
            self.logger.exception(f"Unexpected failure in {spec.command}")
            return self.fail(InternalError(f"{type(e).__name__}: {e}", exception=type(e).__name__), out)
        finally:
            self.write_timing(spec, out, time.perf_counter() - started)
        self.logger.info(f"{spec.command} finished with status {status}")
        return status

    def write_timing(self, spec, out, wall_time):
        try:
            utils.write_json(out / "timing.json", {"command": spec.command, "wall_time_s": wall_time, "workers": spec.workers})
        except OutputError as e:
            self.logger.error(f"{e}")

    def fail(self, error, out):
        """Report an error as JSON on stderr and in error.json; return its exit status."""
        payload = error.to_dict()
        self.logger.error(f"{error.kind}: {error.message}")
        if out is not None:
            try:
                utils.write_json(out / "error.json", payload)
            except OutputError as e:
                self.logger.error(f"{e}")
        print(json.dumps(utils.to_jsonable(payload)), file=sys.stderr)
        return EXIT_USAGE if isinstance(error, UsageError) else EXIT_FAILURE

    # Shared helpers
    # ------------------------------------------------------------------
    def resolve_permutation(self, spec, nz):
        if spec.perm is None:
            return Permutation.identity(nz)
        if spec.perm.startswith("reported:"):
            perm = search.reported_permutation(spec.perm.split(":", 1)[1])
        else:
            perm = Permutation.parse(spec.perm)
        if perm.size != nz:
            raise UsageError(f"--perm {spec.perm} has {perm.size} layers but Nz = {nz}")
        return perm

    def resolve_profile(self, spec, raceway, regime):
        if spec.coeffs is None:
            return raceway.initial_profile()
        expected = raceway.grid.M + (1 if regime is Regime.VARIABLE else 0)
        if len(spec.coeffs) != expected:
            raise UsageError(f"--coeffs needs {expected} values for the {regime.value} regime, got {len(spec.coeffs)}")
        return raceway.profile_from(spec.coeffs, regime)

    def result_header(self, spec, params):
        return {"command": spec.command, "config_echo": {"run": spec.echo(), "parameters": to_mapping(params)}}

    def write_profile(self, spec, raceway, flow, title):
        depths = hydro.layer_depths(flow, raceway.grid.Nz)
        utils.write_table(spec.out / "profile.csv", utils.profile_frame(flow))
        utils.write_table(spec.out / "trajectories.csv", utils.trajectory_frame(flow, depths))
        if spec.plots:
            plots.emit_plots({"flow": flow, "depths": depths, "title": title}, spec.out)

    @staticmethod
    def report_summary(report):
        return {
            "objective": report.value,
            "mu_bar": report.mu_bar,
            "areal_biomass": report.areal_biomass,
            "epsilon": report.epsilon,
            "gradient": report.gradient,
            "feasible": report.feasible,
            "subcritical": report.subcritical,
            "height_margin": report.height_margin,
            "max_froude": report.max_froude,
            "layer_contributions": report.layer_contributions,
            "periodic_residual": report.periodic_residual,
            "adjoint_residual": report.adjoint_residual,
        }

    # Commands
    # ------------------------------------------------------------------
    def run_simulate(self, spec, params):
        regime = spec.regime or Regime.FIXED
        raceway = Raceway(params)
        perm = self.resolve_permutation(spec, raceway.grid.Nz)
        profile = self.resolve_profile(spec, raceway, regime)
        report = raceway.evaluate(perm, profile, regime, keep_fields=True)
        result = self.result_header(spec, params)
        result.update(
            {
                "regime": regime,
                "sigma": perm.label,
                "cycles": perm.cycle_notation(),
                "order": perm.order(),
                "coefficients": profile.coefficients,
                "c0": report.state.c0,
            }
        )
        result.update(self.report_summary(report))
        utils.write_json(spec.out / "result.json", result)
        utils.write_table(spec.out / "table.csv", utils.layer_frame(report))
        self.write_profile(spec, raceway, report.flow, f"sigma = {perm.cycle_notation()}")
        self.logger.info(f"Objective {report.value:.12g} for sigma={perm.label}")
        return EXIT_OK

    def run_grad_check(self, spec, params):
        regime = spec.regime or Regime.FIXED
        report = gradient_check(params, regime, instances=spec.instances, seed=spec.seed)
        passed = report.max_rel_error < GRADIENT_TOLERANCE
        result = self.result_header(spec, params)
        result.update(
            {
                "regime": regime,
                "step": report.step,
                "tolerance": GRADIENT_TOLERANCE,
                "max_rel_error": report.max_rel_error,
                "passed": passed,
                "instances": [
                    {"instance": row.instance, "L": row.L, "Nz": row.Nz, "M": row.M, "sigma": row.sigma, "max_rel_error": row.max_rel_error}
                    for row in report.rows
                ],
            }
        )
        utils.write_json(spec.out / "result.json", result)
        utils.write_table(spec.out / "table.csv", utils.gradient_frame(report))
        if not passed:
            self.logger.error(f"Gradient check failed: max relative error {report.max_rel_error:.3e} >= {GRADIENT_TOLERANCE:g}")
            return EXIT_FAILURE
        self.logger.info(f"Gradient check passed: max relative error {report.max_rel_error:.3e}")
        return EXIT_OK

    def run_optimize(self, spec, params):
        regime = spec.regime
        raceway = Raceway(params)
        perm = self.resolve_permutation(spec, raceway.grid.Nz)
        init = self.resolve_profile(spec, raceway, regime)
        best = search.optimize_profile(perm, regime, raceway, init=init)
        r1, r2, baselines = search.gain_ratios(regime, raceway, best)
        report = raceway.evaluate(perm, best.profile, regime, keep_fields=True)
        result = self.result_header(spec, params)
        result.update(
            {
                "regime": regime,
                "sigma": perm.label,
                "cycles": perm.cycle_notation(),
                "coefficients": best.profile.coefficients,
                "initial_objective": best.initial_value,
                "iterations": best.iterations,
                "evaluations": best.evaluations,
                "converged": best.converged,
                "message": best.message,
                "kkt_residual": best.kkt_residual,
                "r1": r1,
                "r2": r2,
                "baselines": baselines,
            }
        )
        result.update(self.report_summary(report))
        utils.write_json(spec.out / "result.json", result)
        row = search.SearchRow(
            perm_id=0,
            perm=perm,
            value=best.value,
            feasible=best.feasible,
            iterations=best.iterations,
            converged=best.converged,
            coefficients=tuple(raceway.decision_vector(best.profile, regime)),
            kkt_residual=best.kkt_residual,
        )
        a0 = params.a0 if regime is Regime.FIXED else None
        utils.write_table(spec.out / "table.csv", utils.search_frame([row], raceway.grid.M, a0))
        self.write_profile(spec, raceway, report.flow, f"sigma = {perm.cycle_notation()}")
        return EXIT_OK

    def run_search(self, spec, params):
        regime = spec.regime
        raceway = Raceway(params)
        outcome = search.search_best(regime, raceway, workers=spec.workers, allow_large=spec.allow_large_nz)
        best = outcome.best
        result = self.result_header(spec, params)
        result.update(
            {
                "regime": regime,
                "permutations": len(outcome.rows),
                "failed": sum(1 for row in outcome.rows if not row.feasible),
                "sigma": best.perm.label,
                "cycles": outcome.cycles,
                "coefficients": best.profile.coefficients,
                "objective": best.value,
                "r1": outcome.r1,
                "r2": outcome.r2,
                "baselines": outcome.baselines,
                "converged": best.converged,
                "kkt_residual": best.kkt_residual,
            }
        )
        reference = search.reported_reference(regime, raceway.grid)
        if reference is not None:
            name, entry = reference
            result["reported"] = {"name": name, "sigma": search.REPORTED_PERMUTATIONS[name].label, **entry}
        utils.write_json(spec.out / "result.json", result)
        a0 = params.a0 if regime is Regime.FIXED else None
        utils.write_table(spec.out / "table.csv", utils.search_frame(outcome.rows, raceway.grid.M, a0))
        report = raceway.evaluate(best.perm, best.profile, regime, gradient=False, keep_fields=True)
        self.write_profile(spec, raceway, report.flow, f"sigma = {outcome.cycles}")
        return EXIT_OK

    def run_sweep_length(self, spec, params):
        regime = spec.regime
        lengths = spec.lengths or list(DEFAULT_LENGTHS)
        rows = search.sweep_length(regime, lengths, params, workers=spec.workers, allow_large=spec.allow_large_nz)
        result = self.result_header(spec, params)
        result.update({"regime": regime, "rows": rows})
        utils.write_json(spec.out / "result.json", result)
        a0 = params.a0 if regime is Regime.FIXED else None
        utils.write_table(spec.out / "table.csv", utils.sweep_frame(rows, params.grid.M, a0))
        if spec.plots:
            plots.emit_plots({"sweep": rows, "regime": regime}, spec.out)
        if all(row.note for row in rows):
            raise SearchFailedError("every length of the sweep failed", lengths=lengths)
        return EXIT_OK

    def run_nz_convergence(self, spec, params):
        regime = spec.regime or Regime.FIXED
        nz_values = spec.nz_range or utils.parse_int_range(DEFAULT_NZ_RANGE)
        mapping = utils.read_mapping(spec.mapping) if spec.mapping else None
        rows = search.nz_convergence(params, nz_values, mapping=mapping, optimize=spec.optimize_profile, regime=regime)
        result = self.result_header(spec, params)
        result.update({"regime": regime, "family": "mapping" if mapping else "shift", "rows": rows})
        values = [row for row in rows if not row.note]
        if len(values) >= 2:
            result["last_relative_change"] = abs(values[-1].objective - values[-2].objective) / abs(values[-1].objective)
        utils.write_json(spec.out / "result.json", result)
        utils.write_table(spec.out / "table.csv", utils.convergence_frame(rows))
        return EXIT_OK

    def run_export_profile(self, spec, params):
        regime = spec.regime or Regime.FIXED
        raceway = Raceway(params)
        profile = self.resolve_profile(spec, raceway, regime)
        flow = hydro.flow_field(profile, params.flow, raceway.grid)
        result = self.result_header(spec, params)
        result.update(
            {
                "regime": regime,
                "coefficients": profile.coefficients,
                "M0": flow.M0,
                "volume_per_width": profile.volume(raceway.grid.L),
                "min_height": float(flow.h.min()),
                "height_floor": raceway.height_floor,
                "max_froude": flow.max_froude,
                "subcritical": flow.subcritical,
                "flat_vertical_average": flat_vertical_average(raceway, regime, profile.a0),
            }
        )
        utils.write_json(spec.out / "result.json", result)
        self.write_profile(spec, raceway, flow, "topography")
        return EXIT_OK


def main(argv=None):
    """Entry point for the raceway command line."""
    # Load environment variables from .env file
    load_dotenv()
    app = RacewayApplication()
    try:
        spec = spec_from_args(argv)
    except RacewayError as e:
        print(json.dumps(utils.to_jsonable(e.to_dict())), file=sys.stderr)
        return EXIT_USAGE if isinstance(e, UsageError) else EXIT_FAILURE
    try:
        return app.run(spec)
    finally:
        app.close()


if __name__ == "__main__":
    sys.exit(main())
