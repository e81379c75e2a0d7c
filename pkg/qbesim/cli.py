"""
Batch command-line front end.

    qbesim <command> --model <path> --out <dir> [--override k=v]... [--force]

Exit codes: 0 success, 2 validation failure, 3 numeric failure.
"""

import sys
import math
import logging
import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import (TimeGrid, TwoBodyBaseline, baseline_z_closed_form, baseline_z_simulated,
                       decoherence_trace)
from .errors import (CapacityError, ConfigurationError, ContractError, ModelError, NumericError,
                     OutputExistsError, ProtocolError, QbesimError, ShapeError)
from .model import LoadedConfig, full_hamiltonian, load_model_file, product_state_vector
from .operators import hermitian_eig
from .protocol import EXACT_LIMIT_HORIZON, ProtocolConfig, run_protocol, select_robust_bath_state, sweep_ratio
from .report import (baseline_csv, cycles_csv, distances_csv, key_value_text, line_plot_svg, protocol_items,
                     protocol_pdf, records_csv, scaling_csv, scaling_plot, selection_csv, summary_items,
                     sweep_items, trace_csv, trace_plots, write_outputs)
from .settings import Settings, get_settings
from .spectral import perturbation_records, summarize

logger = logging.getLogger(__name__)

COMMANDS = ("analyze", "evolve", "protocol", "sweep", "baseline")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
VALIDATION_ERRORS = (ModelError, ShapeError, CapacityError, ConfigurationError, OutputExistsError)
NUMERIC_ERRORS = (NumericError, ContractError)


@dataclass(frozen=True)
class RunManifest:
    """One CLI invocation."""
    command: str
    model_path: Path
    output_dir: Path
    overrides: Tuple[str, ...] = ()
    force: bool = False
    seed: Optional[int] = None
    pdf: bool = False

    def items(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "model_path": str(self.model_path),
            "overrides": " ".join(self.overrides),
            "seed": "" if self.seed is None else self.seed,
        }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbesim",
                                     description="Qubit–bath–environment decoherence-suppression simulator")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "analyze": "perturbation records and summary",
        "evolve": "exact evolution trace of the configured initial state",
        "protocol": "full suppression protocol with plateau verdict",
        "sweep": "c/C sweep with log-log scaling fit",
        "baseline": "two-body Q+B baseline, closed form against simulation",
    }
    for command in COMMANDS:
        sub = subparsers.add_parser(command, help=helps[command])
        sub.add_argument("--model", required=True, type=Path, help="Model config (JSON)")
        sub.add_argument("--out", required=True, type=Path, help="Output directory (created if absent)")
        sub.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                         help="Config override applied before validation, e.g. h_qb.c=0.02")
        sub.add_argument("--force", action="store_true", help="Overwrite existing output files")
        sub.add_argument("--seed", type=int, default=None, help="Seed recorded in the run manifest")
        sub.add_argument("--log-file", type=Path, default=None, help="Also write the log to this file")
        sub.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
        if command == "protocol":
            sub.add_argument("--pdf", action="store_true", help="Also write report.pdf")
    return parser


def setup_logging(level_name: str, log_file: Optional[Path] = None, verbose: bool = False):
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file))
    level = logging.DEBUG if verbose else getattr(logging, level_name.upper(), logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
                        handlers=handlers, force=True)


def _load(manifest: RunManifest) -> LoadedConfig:
    return load_model_file(manifest.model_path, manifest.overrides)


def _reference_time(tau: float, tau_infinite: bool, hbar: float, C: float) -> float:
    return EXACT_LIMIT_HORIZON * hbar / C if tau_infinite else tau


def cmd_analyze(manifest: RunManifest, settings: Settings) -> Dict[str, Any]:
    loaded = _load(manifest)
    model = loaded.model
    records = perturbation_records(model, settings)
    selection = select_robust_bath_state(model, settings, records)
    summary = summarize(records, model, selection.i0, product_state_vector(loaded.state, model.dims))
    items = {**summary_items(summary), "tie": selection.tie, "records": len(records),
             "flagged": sum(r.flagged for r in records), **manifest.items()}
    return {
        "records.csv": records_csv(records),
        "selection.csv": selection_csv(selection),
        "summary.txt": key_value_text(items),
    }


def cmd_evolve(manifest: RunManifest, settings: Settings) -> Dict[str, Any]:
    loaded = _load(manifest)
    model = loaded.model
    config = ProtocolConfig.from_dict(loaded.protocol)
    eig = hermitian_eig(full_hamiltonian(model), settings)
    records = perturbation_records(model, settings, eig)
    selection = select_robust_bath_state(model, settings, records)
    summary = summarize(records, model, selection.i0, product_state_vector(loaded.state, model.dims))
    grid = config.grid.resolve(_reference_time(summary.tau, summary.tau_infinite, model.hbar, model.C))
    trace = decoherence_trace(model, loaded.state, grid, config.pairs_for(model.dims[0]), settings, records, eig)
    items = {**summary_items(summary), "t_start": grid.t_start, "t_end": grid.t_end, "n_points": grid.n_points,
             "min_qb_fidelity": trace.min_fidelity(), "final_qb_fidelity": float(trace.qb_fidelity[-1]),
             **manifest.items()}
    return {
        "trace.csv": trace_csv(trace),
        "distances.csv": distances_csv(trace),
        "summary.txt": key_value_text(items),
        **trace_plots(trace),
    }


def cmd_protocol(manifest: RunManifest, settings: Settings) -> Dict[str, Any]:
    loaded = _load(manifest)
    model = loaded.model
    report = run_protocol(model, ProtocolConfig.from_dict(loaded.protocol), loaded.state, settings)
    files: Dict[str, Any] = {
        "records.csv": records_csv(report.records),
        "selection.csv": selection_csv(report.selection),
        "trace.csv": trace_csv(report.trace),
        "distances.csv": distances_csv(report.trace),
        "cycles.csv": cycles_csv(report),
        "summary.txt": key_value_text({**protocol_items(report, model), **manifest.items()}),
        **trace_plots(report.trace),
    }
    if report.sweep is not None:
        files["scaling.csv"] = scaling_csv(report.sweep)
        files["scaling.svg"] = scaling_plot(report.sweep)
    if manifest.pdf:
        files["report.pdf"] = protocol_pdf(report, model)
    return files


def cmd_sweep(manifest: RunManifest, settings: Settings) -> Dict[str, Any]:
    loaded = _load(manifest)
    sweep = sweep_ratio(loaded.model, ProtocolConfig.from_dict(loaded.protocol), settings)
    return {
        "scaling.csv": scaling_csv(sweep),
        "summary.txt": key_value_text({**sweep_items(sweep), **manifest.items()}),
        "scaling.svg": scaling_plot(sweep),
    }


def cmd_baseline(manifest: RunManifest, settings: Settings) -> Dict[str, Any]:
    loaded = _load(manifest)
    model = loaded.model
    config = ProtocolConfig.from_dict(loaded.protocol)
    baseline = TwoBodyBaseline.from_model(model, loaded.baseline.get("weights"))
    # two periods of the slowest nonzero phase, when no absolute end time is configured
    horizon = 4.0 * math.pi * model.hbar / abs(model.c) if model.c != 0 else 10.0 * model.hbar
    grid = TimeGrid(config.grid.t_start, config.grid.t_end if config.grid.t_end is not None else horizon,
                    config.grid.n_points)

    files: Dict[str, Any] = {}
    series = []
    deviation = 0.0
    for p, pp in config.pairs_for(model.dims[0]):
        closed = baseline_z_closed_form(baseline, p, pp, grid)
        simulated = baseline_z_simulated(baseline, p, pp, grid, model.h_qb.right_family, settings)
        deviation = max(deviation, float(np.max(np.abs(closed - simulated))))
        files[f"baseline_{p}_{pp}.csv"] = baseline_csv(grid.times(), closed, simulated)
        series += [(f"|z_{p}{pp}| closed form", grid.times(), np.abs(closed)),
                   (f"|z_{p}{pp}| simulated", grid.times(), np.abs(simulated))]
    if deviation > settings.baseline_tol:
        raise NumericError(f"two-body simulation deviates from the closed form by {deviation:.3e} "
                           f"(QBESIM_BASELINE_TOL={settings.baseline_tol:g})")
    logger.info(f"baseline closed form and simulation agree to {deviation:.3e}")
    files["baseline.svg"] = line_plot_svg(series, "Two-body baseline", "t", "|z|")
    files["summary.txt"] = key_value_text({"max_deviation": deviation, "c": baseline.c,
                                           "t_end": grid.t_end, "n_points": grid.n_points, **manifest.items()})
    return files


HANDLERS: Dict[str, Callable[[RunManifest, Settings], Dict[str, Any]]] = {
    "analyze": cmd_analyze,
    "evolve": cmd_evolve,
    "protocol": cmd_protocol,
    "sweep": cmd_sweep,
    "baseline": cmd_baseline,
}


def exit_code_for(error: QbesimError) -> int:
    if isinstance(error, ProtocolError) and isinstance(error.__cause__, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    if isinstance(error, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    if not isinstance(error, NUMERIC_ERRORS + (ProtocolError,)):
        logger.warning(f"unclassified error type {type(error).__name__}")
    return EXIT_NUMERIC


def run(manifest: RunManifest, settings: Optional[Settings] = None) -> int:
    """
    Execute one command and write its outputs.

    Returns:
        Exit code
    """
    try:
        settings = settings or get_settings()
        logger.info(f"qbesim {manifest.command} --model {manifest.model_path} --out {manifest.output_dir}")
        files = HANDLERS[manifest.command](manifest, settings)
        write_outputs(manifest.output_dir, files, manifest.force)
    except QbesimError as e:
        print(f"error: {e}", file=sys.stderr)
        logger.debug("command failed", exc_info=True)
        return exit_code_for(e)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    setup_logging(settings.log_level, args.log_file, args.verbose)
    manifest = RunManifest(
        command=args.command,
        model_path=args.model,
        output_dir=args.out,
        overrides=tuple(args.override),
        force=args.force,
        seed=args.seed,
        pdf=getattr(args, "pdf", False),
    )
    return run(manifest, settings)


if __name__ == "__main__":
    sys.exit(main())
