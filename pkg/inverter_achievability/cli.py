"""
cli.py
------
Command-line front end.

Usage:
    python -m inverter_achievability check --p 900 --q 100 --gain reported-mirrored
    python -m inverter_achievability map --checker steady-state --out runs/map
    python -m inverter_achievability optimize --threads 8 --seed 3
    python -m inverter_achievability simulate --p 1200 --q 300 --gain reported-mirrored
    python -m inverter_achievability dump-config --config my_run.json

Exit codes: 0 achievable / success, 1 unachievable, 2 inconclusive,
3 configuration error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from inverter_achievability import __version__
from inverter_achievability.artifacts import write_csv, write_json, write_jsonl
from inverter_achievability.certificate import check_setpoint
from inverter_achievability.config import ConfigError, RunConfig
from inverter_achievability.controller import Setpoint, UnstableGainError, parse_gain
from inverter_achievability.montecarlo import Checker, SamplingError, map_region, optimize_gain
from inverter_achievability.oracle import SlowGainError, steady_state_achievable, trajectory_achievable

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNACHIEVABLE = 1
EXIT_INCONCLUSIVE = 2
EXIT_CONFIG = 3
EXIT_IO = 4

TOOL = "inverter-achievability"
ORIGIN = (0.0, 0.0)


def finite_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"must be a finite number, got {text!r}")
    return value


class _Parser(argparse.ArgumentParser):
    # usage errors belong to the configuration exit code, not argparse's 2
    def error(self, message: str):
        raise ConfigError(message)


def build_arg_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults: built-in rig values).")
    common.add_argument("--seed", type=int, help="Override sampling.seed.")
    common.add_argument("--threads", type=int, help="Worker threads (default: ACHIEVABILITY_THREADS or CPU count).")
    common.add_argument(
        "--checker",
        choices=[c.value for c in Checker],
        help="Achievability checker (default: sampling.checker).",
    )
    common.add_argument("--out", help="Output directory (default: ACHIEVABILITY_OUT or out_dir).")
    common.add_argument("--gain", help="zero, reported, reported-mirrored or a JSON 2x2 array.")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only.")

    parser = _Parser(
        prog=TOOL,
        description="Certify and map achievable inverter power setpoints, and tune the feedback gain.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    check = commands.add_parser("check", parents=[common], help="Check one setpoint.")
    check.add_argument("--p", type=finite_float, required=True, help="Active power setpoint (W).")
    check.add_argument("--q", type=finite_float, required=True, help="Reactive power setpoint (var).")

    commands.add_parser("map", parents=[common], help="Map the achievable region over the configured grid.")
    commands.add_parser("optimize", parents=[common], help="Monte Carlo gain search.")

    simulate = commands.add_parser("simulate", parents=[common], help="Simulate one setpoint on every profile.")
    simulate.add_argument("--p", type=finite_float, required=True, help="Active power setpoint (W).")
    simulate.add_argument("--q", type=finite_float, required=True, help="Reactive power setpoint (var).")

    commands.add_parser("dump-config", parents=[common], help="Print the resolved configuration.")
    return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%H:%M:%S",
        force=True,
    )


def _env_threads() -> int | None:
    value = os.getenv("ACHIEVABILITY_THREADS")
    if not value:
        return None
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"ACHIEVABILITY_THREADS must be an integer, got {value!r}") from exc


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, int]:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()

    env_out = os.getenv("ACHIEVABILITY_OUT")
    if env_out:
        cfg = cfg.replace(out_dir=env_out)

    if args.seed is not None:
        cfg = cfg.with_sampling(seed=args.seed)
    if args.checker:
        cfg = cfg.with_sampling(checker=Checker(args.checker))
    if args.gain:
        try:
            cfg = cfg.replace(gain=parse_gain(args.gain))
        except ValueError as exc:
            raise ConfigError(f"bad --gain: {exc}") from exc
    if args.out:
        cfg = cfg.replace(out_dir=args.out)

    threads = args.threads if args.threads is not None else _env_threads() or os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"threads must be at least 1, got {threads}")
    return cfg, threads


def write_manifest(out_dir: Path, command: str, cfg: RunConfig, threads: int, **extra) -> None:
    manifest = {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "seed": cfg.sampling.seed,
        "checker": cfg.sampling.checker.value,
        "threads": threads,
        "config": cfg.to_dict(),
    }
    manifest.update(extra)
    write_json(out_dir / "manifest.json", manifest)


def cmd_check(args: argparse.Namespace, cfg: RunConfig, threads: int) -> int:
    setpoint = Setpoint(args.p, args.q)
    checker = cfg.sampling.checker
    gain = cfg.gain_or_zero
    code = EXIT_UNACHIEVABLE

    if checker is Checker.CERTIFICATE:
        verdict = check_setpoint(setpoint, gain, cfg.plant, cfg.search)
        payload = verdict.to_json()
        if verdict.achievable:
            code = EXIT_OK
        elif verdict.inconclusive:
            code = EXIT_INCONCLUSIVE
    elif checker is Checker.STEADY_STATE:
        verdict = steady_state_achievable(setpoint, cfg.plant)
        payload = {
            "p_ref": setpoint.p_ref,
            "q_ref": setpoint.q_ref,
            "achievable": verdict.achievable,
            "margin": verdict.margin,
            "worst_d": verdict.worst_d,
            "flags": [],
        }
        code = EXIT_OK if verdict.achievable else EXIT_UNACHIEVABLE
    else:
        verdict = trajectory_achievable(ORIGIN, setpoint, gain, cfg.plant, cfg.profiles(), cfg.integrator)
        payload = {
            "p_ref": setpoint.p_ref,
            "q_ref": setpoint.q_ref,
            "achievable": verdict.achievable,
            "margin": verdict.worst_margin,
            "horizon": verdict.horizon,
            "profiles": [
                {"label": t.label, "worst_margin": t.worst_margin, "violations": t.n_violations}
                for t in verdict.traces
            ],
            "flags": [],
        }
        code = EXIT_OK if verdict.achievable else EXIT_UNACHIEVABLE

    payload["checker"] = checker.value
    payload["gain"] = gain.to_json()
    print(json.dumps(payload, indent=2, sort_keys=True))

    if args.out:
        out_dir = Path(cfg.out_dir)
        write_json(out_dir / "verdict.json", payload)
        write_manifest(out_dir, "check", cfg, threads, setpoint=[setpoint.p_ref, setpoint.q_ref])
    return code


def cmd_map(args: argparse.Namespace, cfg: RunConfig, threads: int) -> int:
    gain = cfg.gain_or_zero
    region = map_region(gain, cfg.grid, cfg.sampling.checker, cfg.plant, threads=threads, **cfg.checker_options())
    out_dir = Path(cfg.out_dir)
    write_csv(out_dir / "region_map.csv", region.to_frame())
    write_manifest(out_dir, "map", cfg, threads)

    print(f"Checker: {region.checker.value}")
    print(f"Gain: {gain.to_json()}")
    if region.flags:
        print(f"Flags: {', '.join(region.flags)}")
    print(f"Achievable: {sum(region.verdicts)}/{len(region.verdicts)} ({100 * region.area_fraction:.1f}% of grid)")
    print(f"Region map: {out_dir / 'region_map.csv'}")
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace, cfg: RunConfig, threads: int) -> int:
    candidates = [cfg.gain] if cfg.gain is not None else []
    result = optimize_gain(cfg.sampling, cfg.plant, candidates=candidates, threads=threads, **cfg.checker_options())
    best = result.best
    out_dir = Path(cfg.out_dir)

    write_jsonl(out_dir / "sweep.jsonl", (entry.to_json() for entry in result.sweep))
    write_csv(out_dir / "k11_curve.csv", result.k11_curve())
    summary = {
        "index": result.best_index,
        "k": best.gain.to_json(),
        "rate": best.rate,
        "n_achievable": best.n_achievable,
        "n_total": best.n_total,
        "worst_margin": best.worst_margin,
        "checker": best.checker.value,
        "draws": result.sample.draws,
        "rejected_gains": result.n_rejected,
        "baseline_rate": result.baseline.rate if result.baseline else None,
        "relative_improvement": result.relative_improvement,
    }
    if result.comparison is not None:
        summary["paired_test"] = {
            "gained": result.comparison.gained,
            "lost": result.comparison.lost,
            "p_value": result.comparison.p_value,
            "significant": result.comparison.significant,
        }
    write_json(out_dir / "best_gain.json", summary)
    write_manifest(out_dir, "optimize", cfg, threads)

    print(f"Gains scored: {len(result.sweep)} ({result.n_rejected} rejected)")
    print(f"Best gain (#{result.best_index}): {best.gain.to_json()}")
    print(f"  S(K) = {best.n_achievable}/{best.n_total} = {best.rate:.4f} [{best.checker.value}]")
    if result.baseline is not None:
        print(f"  S(0) = {result.baseline.n_achievable}/{result.baseline.n_total} = {result.baseline.rate:.4f}")
    if result.relative_improvement is not None:
        print(f"  Relative improvement over K = 0: {100 * result.relative_improvement:+.1f}%")
    if result.comparison is not None:
        c = result.comparison
        verdict = "significant" if c.significant else "not significant"
        print(f"  Paired test: +{c.gained}/-{c.lost}, p = {c.p_value:.3g} ({verdict} at 1%)")
    print(f"Sweep log: {out_dir / 'sweep.jsonl'}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, cfg: RunConfig, threads: int) -> int:
    setpoint = Setpoint(args.p, args.q)
    gain = cfg.gain_or_zero
    verdict = trajectory_achievable(ORIGIN, setpoint, gain, cfg.plant, cfg.profiles(), cfg.integrator)
    out_dir = Path(cfg.out_dir)
    for trace in verdict.traces:
        write_csv(out_dir / f"trajectory_{trace.label}.csv", trace.to_frame())
    write_manifest(out_dir, "simulate", cfg, threads, setpoint=[setpoint.p_ref, setpoint.q_ref])

    print(f"Setpoint: P = {setpoint.p_ref:g} W, Q = {setpoint.q_ref:g} var, horizon {verdict.horizon:.3f} s")
    for trace in verdict.traces:
        print(f"  {trace.label:<16} worst margin {trace.worst_margin:10.2f} V^2  violations {trace.n_violations}")
    print("Constraint satisfied on every profile." if verdict.achievable else "Constraint violated.")
    return EXIT_OK


def cmd_dump_config(args: argparse.Namespace, cfg: RunConfig, threads: int) -> int:
    print(cfg.to_json())
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "map": cmd_map,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "dump-config": cmd_dump_config,
}


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    try:
        args = build_arg_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    configure_logging(args.verbose, args.quiet)

    try:
        cfg, threads = resolve_config(args)
        return COMMANDS[args.command](args, cfg, threads)
    except (ConfigError, UnstableGainError, SlowGainError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
