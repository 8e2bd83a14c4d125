"""CLI entry point for relay-shaper."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .cave_waterfill import (
    AllocationKind,
    WaterfillProblem,
    cave_waterfill,
    kkt_residuals,
    waterfill_objective,
)
from .config import Config, Scenario
from .errors import ConfigError, RelayShaperError
from .link_sim import Metric, SimReport, run_ber, run_capacity, run_mse
from .matrix_core import hermitian_evd
from .mse_engine import Design
from .network_model import (
    ChannelEnsemble,
    ChannelMatchedShaping,
    HopSpec,
    Joint,
    NetworkSpec,
    PureShaping,
    draw_network,
    robust_substitute,
    shaping_channel_matched,
)
from .objective_solver import design_transceiver, evaluate_objective

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

CSV_HEADER = ("snr_db", "metric", "value", "stderr", "trials", "design_kind", "seed")
RANK_RTOL = 1e-9

BANNER = r"""
  ╔══════════════════════════════════════════════════════╗
  ║              📡 relay-shaper v{version}                 ║
  ║   MIMO relay transceivers: shaping, caps, THP/DFE    ║
  ╚══════════════════════════════════════════════════════╝
""".strip()

EXAMPLES = """
Examples:
  relay-shaper design --config shaping.toml --out design.json      dump one design per sweep value
  relay-shaper simulate --config joint.toml --trials 500          BER/capacity/MSE sweep to CSV
  relay-shaper simulate --config joint.toml --threads 8           spread trials over 8 threads
  relay-shaper waterfill --gains 4 1 --budget 2 --cap 1.0        one cave water-filling problem

Config sections (TOML):
  [network]     hops, antennas, streams, power, noise_variance, error_variance
  [constraint]  kind = exponential | channel_matched | explicit | joint
  [objective]   kinds = ["a_schur_convex", ...], transceivers = ["linear", "dfe", "thp"]
  [simulation]  metric = ber | capacity | sum_mse, snr_db, trials, seed, output

Exit codes: 0 success, 2 config error, 3 I/O error.
RELAY_SHAPER_THREADS sets the default for --threads.
""".strip()


class CustomHelpFormatter(argparse.RawDescriptionHelpFormatter):
    """Formatter that keeps the banner and examples verbatim."""

    def _format_usage(self, usage, actions, groups, prefix):
        return ""


def _matrix_json(M: np.ndarray) -> dict:
    M = np.asarray(M, dtype=complex)
    return {"re": M.real.tolist(), "im": M.imag.tolist()}


def _scenario_network(config: Config, scenario: Scenario) -> NetworkSpec:
    """Explicit channels from the config, else the trial-0 draw of the seed."""
    explicit = config.network.channel_matrices()
    if not explicit:
        return draw_network(scenario.template, ChannelEnsemble(config.simulation.seed), 0)

    net = config.network
    hops = []
    for H in explicit:
        constraint = scenario.template.hops[0].constraint
        hop = HopSpec.from_channel(H, net.noise_variance, net.power, Joint(1.0))
        if isinstance(constraint, ChannelMatchedShaping):
            R = shaping_channel_matched(
                hop, constraint.thresholds, constraint.eta, constraint.weighting
            )
            constraint = PureShaping(R)
        hops.append(hop.replace(constraint=constraint))
    return NetworkSpec(tuple(hops), net.streams, net.signal_variance)


def _hop_audit(hop: HopSpec, F: np.ndarray) -> dict:
    covariance = F @ F.conj().T
    values = hermitian_evd(covariance).eigenvalues
    audit = {
        "trace": float(np.real(np.trace(covariance))),
        "max_eigenvalue": float(values[0]),
        "rank": int(np.count_nonzero(values > RANK_RTOL * max(values[0], 1.0))),
        "eigen_powers": values.tolist(),
        "power_budget": hop.power_budget,
    }
    if isinstance(hop.constraint, PureShaping):
        margin = hermitian_evd(hop.constraint.shaping - covariance).eigenvalues[-1]
        audit["shaping_margin"] = float(margin)
    elif isinstance(hop.constraint, Joint):
        audit["tau_max"] = hop.constraint.tau_max
    return audit


def _design_json(scenario: Scenario, net: NetworkSpec, design: Design) -> dict:
    hops = []
    for k, (hop, F, Q, P) in enumerate(zip(net.hops, design.F, design.Q, design.P), start=1):
        hops.append(
            {
                "hop": k,
                "F": _matrix_json(F),
                "Q": _matrix_json(Q),
                "P": _matrix_json(P),
                "covariance": _matrix_json(F @ F.conj().T),
                "audit": _hop_audit(hop, F),
            }
        )
    return {
        "design_kind": scenario.label,
        "objective": scenario.objective.label,
        "transceiver": scenario.transceiver.value,
        "objective_value": evaluate_objective(scenario.objective, design, net),
        "G": _matrix_json(design.G),
        "C": _matrix_json(design.C),
        "hops": hops,
    }


def cmd_design(config: Config, out: Path) -> list[dict]:
    """Write every scenario's design matrices and constraint audit as JSON."""
    entries = []
    for scenario in config.scenarios():
        net = _scenario_network(config, scenario)
        design_net = net
        if config.error_variances() is not None:
            design_net = robust_substitute(net, config.error_variances())
        design = design_transceiver(
            design_net, scenario.objective, config.simulation.tol, config.simulation.max_iters
        )
        entries.append(_design_json(scenario, net, design))

    document = {"version": __version__, "seed": config.simulation.seed, "designs": entries}
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(document, indent=2) + "\n")
    return entries


def _simulate_scenario(config: Config, scenario: Scenario) -> SimReport:
    sim = config.simulation
    common = dict(
        threads=sim.threads, error_variances=config.error_variances(), label=scenario.label
    )
    metric = Metric(sim.metric)
    if metric is Metric.BER:
        return run_ber(
            scenario.template,
            scenario.objective,
            sim.modulation,
            sim.snr_db,
            sim.trials,
            sim.seed,
            transceiver=scenario.transceiver,
            symbols_per_trial=sim.symbols_per_trial,
            **common,
        )
    runner = run_capacity if metric is Metric.CAPACITY else run_mse
    return runner(
        scenario.template, sim.snr_db, sim.trials, sim.seed, objective=scenario.objective, **common
    )


def write_reports(reports: Sequence[SimReport], out: Path) -> None:
    """CSV with one row per (design, SNR point), numbers at 12 significant digits."""
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for report in reports:
            for snr, metric, value, err, trials, kind, seed in report.rows():
                writer.writerow(
                    [f"{snr:.12g}", metric, f"{value:.12g}", f"{err:.12g}", trials, kind, seed]
                )


def cmd_simulate(config: Config, out: Path) -> list[SimReport]:
    reports = []
    for scenario in config.scenarios():
        logger.info("simulating %s", scenario.label)
        reports.append(_simulate_scenario(config, scenario))
    write_reports(reports, out)
    return reports


def cmd_waterfill(
    gains: Sequence[float],
    aux: Sequence[float] | None,
    budget: float,
    cap: float,
    kind: AllocationKind | str,
) -> dict:
    aux = [1.0] * len(gains) if aux is None else aux
    problem = WaterfillProblem(np.asarray(gains), np.asarray(aux), budget, cap, kind)
    solution = cave_waterfill(problem)
    residuals = kkt_residuals(problem, solution)
    return {
        "powers": solution.powers.tolist(),
        "multiplier": solution.multiplier,
        "capped": solution.capped.tolist(),
        "inactive_sum": solution.inactive_sum,
        "objective": waterfill_objective(problem, solution.powers),
        "kkt": residuals._asdict(),
    }


def _print_summary(command: str, config: Config, out: Path) -> None:
    sim = config.simulation
    net = config.network
    objectives = ", ".join(config.objective.kinds)
    receivers = ", ".join(config.objective.transceivers)
    print()
    print(BANNER.format(version=__version__))
    print()
    print("  📋 Settings")
    print("  ─────────────────────────────────────────────")
    print(f"  🛰️  Command:      {command}")
    print(f"  🔗 Network:      {net.hops} hops x {net.antennas} antennas, {net.streams} streams")
    print(f"  🔋 Power:        P={net.power:g}, sigma_a^2={net.signal_variance:g}")
    print(f"  🧱 Constraint:   {config.constraint.kind}")
    print(f"  🎯 Objectives:   {objectives} / {receivers}")
    if command == "simulate":
        print(f"  📈 Metric:       {sim.metric} ({sim.modulation})")
        print(f"  📶 SNR [dB]:     {', '.join(f'{s:g}' for s in sim.snr_db)}")
        print(f"  🎲 Trials:       {sim.trials} (seed {sim.seed}, {sim.threads} thread(s))")
    print(f"  📁 Output:       {out}")
    print("  ─────────────────────────────────────────────")
    print()


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", "-c",
        help="TOML config file (default: ./relay-shaper.toml)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="master seed for channels, symbols and noise",
    )
    parser.add_argument(
        "--out", "-o",
        help="output file (default: simulation.output)",
    )
    parser.add_argument(
        "--trials",
        type=int,
        help="Monte Carlo trials per SNR point",
    )
    parser.add_argument(
        "--threads",
        type=int,
        help="worker threads (default: $RELAY_SHAPER_THREADS or 1)",
    )
    parser.add_argument(
        "--quiet", "-q",
        action="store_true",
        help="skip the settings summary",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relay-shaper",
        description=BANNER.format(version=__version__)
        + "\n\n  Optimal linear and THP/DFE transceivers for multi-hop AF MIMO relays",
        epilog=f"\n{EXAMPLES}",
        formatter_class=CustomHelpFormatter,
    )
    parser.add_argument("--version", "-V", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--verbose", "-v",
        action="count",
        default=0,
        help="more logging (-vv for debug)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    design = commands.add_parser("design", help="compute designs and write a JSON dump with audits")
    _add_run_options(design)

    simulate = commands.add_parser("simulate", help="run the Monte Carlo sweep and write CSV")
    _add_run_options(simulate)

    waterfill = commands.add_parser("waterfill", help="solve one cave water-filling problem")
    waterfill.add_argument(
        "--gains",
        type=float,
        nargs="+",
        required=True,
        help="eigen-gains h^2, nonincreasing",
    )
    waterfill.add_argument(
        "--aux",
        type=float,
        nargs="+",
        help="auxiliary gains a in (0, 1] (default: all 1)",
    )
    waterfill.add_argument(
        "--budget",
        type=float,
        required=True,
        help="sum power budget P",
    )
    waterfill.add_argument(
        "--cap",
        type=float,
        default=float("inf"),
        help="peak power tau (default: none)",
    )
    waterfill.add_argument(
        "--kind",
        choices=[k.value for k in AllocationKind],
        default=AllocationKind.A_SCHUR.value,
        help="a_schur for additive objectives, m_schur for capacity and multiplicative ones",
    )
    return parser


def _load_config(args: argparse.Namespace) -> Config:
    path = Path(args.config) if args.config else None
    if path is not None and not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config = Config.load(path)
    config.apply_overrides(
        seed=args.seed, trials=args.trials, output=args.out, threads=args.threads
    )
    return config


def main(argv: list[str] | None = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "waterfill":
            result = cmd_waterfill(args.gains, args.aux, args.budget, args.cap, args.kind)
            print(f"  💧 powers:      {', '.join(f'{p:.6g}' for p in result['powers'])}")
            print(f"  🌊 multiplier:  {result['multiplier']:.6g}")
            print(f"  🧢 capped:      {', '.join(str(c) for c in result['capped'])}")
            if result["inactive_sum"]:
                print("  ⚠️  sum power constraint inactive: every channel sits at the cap")
            print(f"  🎯 objective:   {result['objective']:.6g}")
            kkt = result["kkt"]
            print(f"  ✅ KKT:         {', '.join(f'{k}={v:.2e}' for k, v in kkt.items())}")
            return EXIT_OK

        config = _load_config(args)
        out = Path(config.simulation.output)
        if args.command == "design" and args.out is None:
            out = out.with_suffix(".json")
        if not args.quiet:
            _print_summary(args.command, config, out)

        if args.command == "design":
            entries = cmd_design(config, out)
            print(f"🧮 {len(entries)} design(s) → {out.resolve()}")
        else:
            reports = cmd_simulate(config, out)
            rows = sum(len(r.snr_db) for r in reports)
            print(f"📊 {rows} row(s) from {len(reports)} design(s) → {out.resolve()}")
        return EXIT_OK
    except RelayShaperError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"❌ I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
