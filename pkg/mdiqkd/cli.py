"""
Command-line entry points: simulate, analyze, protocol and optimize.

Every command writes its outputs with the run digest embedded and a
``<output>.manifest.json`` next to the primary output. Exit codes: 0 success,
1 invalid input, 2 I/O failure.
"""
import argparse
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import __version__
from .config import BASES, INTENSITY_ORDER
from .core import pair_pulse_count_array, validate_all
from .exceptions import DecoyBoundError, QKDError
from .io import (
    RunManifest, compute_digest, file_digest, load_published_key_params, load_published_tables,
    load_run_config, load_search_box, read_tallies_csv, write_manifest, write_report, write_sweep_csv,
    write_tallies_csv, write_trace_csv, write_transcript,
)
from .logging_setup import configure_logging, get_logger
from .manager import AnalysisManager
from .models import sci
from .optics import expected_tallies, run_monte_carlo
from .optimizer import ParameterPoint, optimize, sweep_distance
from .protocol import apply_bit_flip, measure_sifted_qber, run_session, session_transcript, sift
from .tally import from_tables

log = get_logger(__name__)

SIMULATE_MODES = ("monte_carlo", "expected")

INPUT_ERRORS = (QKDError, ValidationError, tomllib.TOMLDecodeError, pd.errors.ParserError)


@dataclass
class CommandOutcome:
    """What a command body hands back to the runner"""
    output: Optional[Path]
    manifest: Optional[RunManifest]


def _execute(command: str, body: Callable[[], CommandOutcome]) -> int:
    log.info("command_started", command=command, tool_version=__version__)
    digest = None
    try:
        outcome = body()
        if outcome.manifest is not None:
            digest = outcome.manifest.config_digest
            if outcome.output is not None:
                write_manifest(outcome.manifest.finish(0), outcome.output)
        exit_code = 0
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        log.error("command_failed", command=command, error=str(e), error_type=type(e).__name__)
        exit_code = 1
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        log.error("command_failed", command=command, error=str(e), error_type=type(e).__name__)
        exit_code = 2
    log.info("command_finished", command=command, exit_code=exit_code, digest=digest)
    return exit_code


def _manifest(command: str, payload: Dict[str, Any], seed: Optional[int] = None) -> RunManifest:
    payload = dict(payload, command=command, tool_version=__version__)
    return RunManifest(command=command, config_digest=compute_digest(payload), seed=seed, tool_version=__version__)


def _sidecar(out_path: Path, suffix: str) -> Path:
    return out_path.with_name(out_path.stem + suffix)


def cmd_simulate(config_path: Optional[str], n_trials: int, seed: Optional[int], out_path: str,
                 mode: str = "monte_carlo", workers: Optional[int] = None) -> int:
    """Simulate detection statistics and write the raw-count tallies CSV"""
    def body() -> CommandOutcome:
        run = load_run_config(config_path)
        validate_all(run.protocol, run.channel, run.detector).raise_if_invalid()
        run_seed = run.seed if seed is None else seed

        payload: Dict[str, Any] = {"config": run.to_dict(), "mode": mode}
        if mode == "expected":
            tallies = expected_tallies(run.protocol, run.channel, run.detector, run.analysis.quadrature_points)
            manifest = _manifest("simulate", payload)
        else:
            payload.update(n_trials=n_trials, seed=run_seed)
            tallies = run_monte_carlo(run.protocol, run.channel, run.detector, n_trials, run_seed, workers=workers)
            manifest = _manifest("simulate", payload, seed=run_seed)

        out = write_tallies_csv(tallies, out_path, manifest.config_digest)
        print(f"Wrote {mode} tallies to {out}")
        return CommandOutcome(out, manifest)

    return _execute("simulate", body)


def _format_comparison(comparison: Dict[str, Dict[str, Optional[str]]]) -> List[str]:
    lines = [f"{'quantity':<14}{'ours':>14}{'published':>14}{'ratio':>14}"]
    for name, row in comparison.items():
        lines.append(f"{name:<14}{str(row['ours']):>14}{str(row['published']):>14}{str(row['ratio']):>14}")
    return lines


def cmd_analyze(tallies_path: Optional[str], published_tables: bool, n_alpha: Optional[float],
                total_pulses: Optional[float], out_path: str, config_path: Optional[str] = None) -> int:
    """
    Run the bound chain on a tallies file or the packaged published tables and
    write the JSON report with both bound modes and the LP cross-check.
    """
    def body() -> CommandOutcome:
        if (tallies_path is None) == (not published_tables):
            raise QKDError("give exactly one of --tallies or --published-tables")
        run = load_run_config(config_path)
        protocol = run.protocol
        if total_pulses is not None:
            protocol = replace(protocol, total_pulses=int(total_pulses))
        counts = pair_pulse_count_array(protocol)

        payload: Dict[str, Any] = {"config": run.to_dict(), "n_alpha": n_alpha, "total_pulses": total_pulses}
        key_params = None
        if published_tables:
            gains, qbers = load_published_tables()
            tallies = from_tables(gains, qbers, counts)
            key_params = load_published_key_params()["key_rate"]
            payload["tallies"] = "published_tables_v1"
            source = "published tables"
        else:
            tallies = read_tallies_csv(tallies_path, counts=counts)
            payload["tallies"] = file_digest(tallies_path)
            source = str(tallies_path)

        manager = AnalysisManager(run.analysis)
        report = manager.analyze(tallies, protocol, n_alpha=n_alpha, total_pulses=protocol.total_pulses,
                                 source=source, published_key_params=key_params)

        manifest = _manifest("analyze", payload)
        out = write_report(report.to_dict(), out_path, manifest.config_digest)

        print(f"Infinite-key: Y11^Z,L={sci(report.infinite.y11_z_lower)} e11^X,U={sci(report.infinite.e11_x_upper)}")
        print(f"Finite (n_alpha={report.n_alpha:g}): Y11^Z,L={sci(report.finite.y11_z_lower)} "
              f"e11^X,U={sci(report.finite.e11_x_upper)}")
        print(f"Key rate R={sci(report.key_rate.rate)} per pulse, L={report.key_rate.key_length} bits")
        if report.published_key_rate is not None:
            print(f"Published-parameter key rate R={sci(report.published_key_rate.rate)}, "
                  f"L={report.published_key_rate.key_length} bits")
        for line in _format_comparison(report.comparison()):
            print(line)
        print(f"Wrote report to {out}")
        return CommandOutcome(out, manifest)

    return _execute("analyze", body)


def cmd_protocol(config_path: Optional[str], n_slots: Optional[int], seed: Optional[int],
                 out_path: Optional[str] = None, transcript_path: Optional[str] = None) -> int:
    """Run an end-to-end session, sift, flip, estimate QBERs and the final key length"""
    def body() -> CommandOutcome:
        run = load_run_config(config_path)
        session = run.session_config(n_slots=n_slots, seed=seed)
        manifest = _manifest("protocol", {"config": run.to_dict(), "n_slots": session.n_slots,
                                          "seed": session.seed}, seed=session.seed)

        alice, bob, tallies = run_session(session)
        key_a, key_b = sift(alice, bob)
        key_b = apply_bit_flip(key_b)
        qbers = measure_sifted_qber(key_a, key_b)

        sifted = {basis.value: int(np.sum(key_a.basis == basis.index)) for basis in BASES}
        signal_qber = {basis.value: qbers[basis.index, 0, 0] for basis in BASES}

        try:
            report = AnalysisManager(run.analysis).analyze(
                tallies, run.protocol, total_pulses=session.n_slots, source=f"session {session.session_id}")
            key_report = report.key_rate.to_dict()
            final_length = report.key_rate.key_length
        except DecoyBoundError as e:
            print(f"No secure key: {e}")
            key_report, final_length = None, 0

        for basis in BASES:
            print(f"{basis.value.upper()}-basis sifted length: {sifted[basis.value]}, "
                  f"QBER(mu,mu)={sci(signal_qber[basis.value])}")
        print(f"Final key length: {final_length}")

        out = None
        if out_path is not None:
            document = {
                "session_id": session.session_id,
                "sifted_lengths": sifted,
                "sifted_qber": {
                    f"{b.value}/{ia.value}/{ib.value}": sci(None if np.isnan(v) else v)
                    for (b, ia, ib), v in _qber_items(qbers)
                },
                "key_rate": key_report,
                "final_key_length": final_length,
            }
            out = write_report(document, out_path, manifest.config_digest)
        if transcript_path is not None:
            transcript = write_transcript(session_transcript(alice, bob), transcript_path, manifest.config_digest)
            out = out or transcript
        return CommandOutcome(out, manifest)

    return _execute("protocol", body)


def _qber_items(qbers: np.ndarray):
    for basis in BASES:
        for ia in INTENSITY_ORDER:
            for ib in INTENSITY_ORDER:
                yield (basis, ia, ib), float(qbers[basis.index, ia.index, ib.index])


def parse_sweep(value: str) -> List[float]:
    """'start:stop:step' in km, stop included"""
    try:
        start, stop, step = (float(part) for part in value.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"sweep must look like start:stop:step, got {value!r}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"sweep needs step > 0 and stop >= start, got {value!r}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(count)]


def cmd_optimize(config_path: Optional[str], box_path: Optional[str], budget: int, out_path: str,
                 sweep: Optional[Sequence[float]] = None, workers: Optional[int] = None) -> int:
    """Search the parameter box; write the trace CSV, best-point report and optional sweep"""
    def body() -> CommandOutcome:
        run = load_run_config(config_path)
        box = load_search_box(box_path)
        analysis = run.analysis
        manifest = _manifest("optimize", {
            "config": run.to_dict(),
            "box": {name: list(bounds) for name, bounds in box.intervals()},
            "budget": budget,
            "sweep": list(sweep) if sweep else None,
        })

        result = optimize(
            box, run.channel, run.detector, total_pulses=run.protocol.total_pulses, budget=budget,
            n_alpha=analysis.fluctuation.n_alpha, f=analysis.ec_inefficiency,
            quadrature_points=analysis.quadrature_points, start=ParameterPoint.from_protocol(run.protocol),
            workers=workers, formula=analysis.y11_formula,
        )

        out = write_trace_csv(result.trace, out_path, manifest.config_digest)
        best_path = write_report(result.to_dict(), _sidecar(out, ".best.json"), manifest.config_digest)
        print(f"Best rate {sci(result.best_rate)} after {result.evaluations} evaluation(s)")
        print(f"Best point: {result.best_point.to_dict()}")
        print(f"Wrote trace to {out} and best point to {best_path}")

        if sweep:
            pairs = sweep_distance(result.best_point, sweep, run.channel, run.detector,
                                   total_pulses=run.protocol.total_pulses, n_alpha=analysis.fluctuation.n_alpha,
                                   f=analysis.ec_inefficiency, quadrature_points=analysis.quadrature_points)
            sweep_path = write_sweep_csv(pairs, _sidecar(out, ".sweep.csv"), manifest.config_digest)
            print(f"Wrote distance sweep to {sweep_path}")
        return CommandOutcome(out, manifest)

    return _execute("optimize", body)


def create_cli_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdiqkd", description="MDI-QKD simulation and decoy-state analysis.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default="WARNING")
    parser.add_argument("--log-json", action="store_true", help="Render log events as JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Generate detection tallies")
    simulate.add_argument("--config", help="Run configuration TOML (packaged reference run if omitted)")
    simulate.add_argument("--n-trials", type=int, default=1_000_000)
    simulate.add_argument("--seed", type=int, default=None, help="Overrides the [session] seed")
    simulate.add_argument("--mode", choices=SIMULATE_MODES, default="monte_carlo")
    simulate.add_argument("--workers", type=int, default=None, help="Worker processes; results do not depend on it")
    simulate.add_argument("--out", required=True)

    analyze = sub.add_parser("analyze", help="Decoy-state bounds and key rate from tallies")
    source = analyze.add_mutually_exclusive_group(required=True)
    source.add_argument("--tallies", help="Tallies CSV (raw-count or rate schema)")
    source.add_argument("--published-tables", action="store_true", help="Use the packaged published tables")
    analyze.add_argument("--n-alpha", type=float, default=None)
    analyze.add_argument("--total-pulses", type=float, default=None)
    analyze.add_argument("--config")
    analyze.add_argument("--out", required=True)

    protocol = sub.add_parser("protocol", help="End-to-end session with sifting and key length")
    protocol.add_argument("--config")
    protocol.add_argument("--n-slots", type=int, default=None)
    protocol.add_argument("--seed", type=int, default=None)
    protocol.add_argument("--transcript", help="JSON-lines transcript output")
    protocol.add_argument("--out", help="JSON report output")

    optimize_cmd = sub.add_parser("optimize", help="Parameter search and distance sweep")
    optimize_cmd.add_argument("--config")
    optimize_cmd.add_argument("--box", help="Search box TOML")
    optimize_cmd.add_argument("--budget", type=int, default=200)
    optimize_cmd.add_argument("--sweep", type=parse_sweep, default=None, help="Distances start:stop:step in km")
    optimize_cmd.add_argument("--workers", type=int, default=None)
    optimize_cmd.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = create_cli_parser().parse_args(argv)
    configure_logging(args.log_level, json_output=args.log_json)

    if args.command == "simulate":
        return cmd_simulate(args.config, args.n_trials, args.seed, args.out, mode=args.mode, workers=args.workers)
    if args.command == "analyze":
        return cmd_analyze(args.tallies, args.published_tables, args.n_alpha, args.total_pulses, args.out,
                           config_path=args.config)
    if args.command == "protocol":
        return cmd_protocol(args.config, args.n_slots, args.seed, out_path=args.out,
                            transcript_path=args.transcript)
    return cmd_optimize(args.config, args.box, args.budget, args.out, sweep=args.sweep, workers=args.workers)


if __name__ == "__main__":
    sys.exit(main())
