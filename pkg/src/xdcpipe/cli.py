"""Command-line front end.

    xdcpipe simulate        --scenario S.toml [--metrics-out F] [--trace-out F]
    xdcpipe compare         --scenario S.toml [--metrics-out F] [--trace-out F]
    xdcpipe optimize        --scenario S.toml [--seed N] [--jobs N]
    xdcpipe sweep-bandwidth --scenario S.toml [--grid 10,20,40] [--epsilon 0.01]

Exit status: 0 ok, 1 configuration error, 2 validation failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .errors import ConfigError, DeadlockError, InfeasibleError, ValidationError
from .model import NS_PER_MS, NS_PER_US, IterationConfig
from .optimizer import find_optimization_point, optimize_ga, refine_dependency_chain, sweep_bandwidth
from .scenario import Scenario, load_scenario
from .schedule import build_1f1b, build_geopipe
from .simulator import (
    SimReport, dump_trace, export_trace, reduction, simulate, validate_trace, write_metrics_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3


class _OutputError(Exception):
    pass


def _ms(ns: int) -> str:
    return f"{ns / NS_PER_MS:.3f} ms"


def _resolve_delta_n(sc: Scenario) -> list[int]:
    p = sc.cluster.num_stages
    if isinstance(sc.delta_n, list):
        return list(sc.delta_n)
    if p < 2:
        return [0] * p
    if sc.delta_n == "greedy":
        return refine_dependency_chain(sc.cluster, sc.cfg, sc.profile, sc.hbm)
    res = optimize_ga(sc.cluster, sc.profile, sc.hbm, sc.cfg, params=sc.ga)
    return list(res.best.delta_n)


def _run(sc: Scenario, delta_n: list[int] | None) -> SimReport:
    p, m = sc.cluster.num_stages, sc.cfg.num_micro_batches
    spec = build_1f1b(p, m) if delta_n is None else build_geopipe(p, m, delta_n)
    return simulate(sc.cluster, spec, sc.profile, sc.cfg, sc.hbm)


def _summary(label: str, sc: Scenario, rep: SimReport, delta_n) -> str:
    br = rep.bubble_ratio
    lines = [
        f"[{label}] scenario {sc.name}: p={rep.p} m={rep.m}",
        f"  delta_n      {list(delta_n) if delta_n is not None else [0] * rep.p}",
        f"  makespan     {_ms(rep.makespan)}",
        f"  bubble ratio {br.numerator}/{br.denominator} = {float(br):.6f}",
        f"  steady-phase bubble ratio {float(rep.metrics.steady_bubble_ratio):.6f}",
    ]
    for s in range(rep.p):
        lines.append(f"  stage {s}: busy {_ms(rep.busy[s])}, idle {_ms(rep.idle[s])}")
    for i, b in enumerate(rep.per_link_steady_bubble):
        if rep.metrics.per_link_occurrences[i]:
            lines.append(f"  link {i}->{i + 1}: steady bubble {float(b) / NS_PER_US:.3f} us "
                         f"x {rep.metrics.per_link_occurrences[i]}")
    return "\n".join(lines)


def _write(path: str | Path, writer) -> None:
    try:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer(f)
    except OSError as exc:
        raise _OutputError(f"cannot write {path}: {exc}") from None


def _emit(sc: Scenario, rep: SimReport, metrics: str | None, trace: str | None) -> None:
    if metrics:
        _write(metrics, lambda f: write_metrics_csv(rep, f))
    if trace:
        events = export_trace(rep, sc.cluster)
        validate_trace(events)
        _write(trace, lambda f: dump_trace(events, f))


def _suffixed(path: str | None, tag: str) -> str | None:
    if not path:
        return None
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


def cmd_simulate(sc: Scenario, args) -> int:
    dn = _resolve_delta_n(sc) if sc.scheduler == "geopipe" else None
    rep = _run(sc, dn)
    print(_summary(sc.scheduler, sc, rep, dn))
    _emit(sc, rep, args.metrics_out or sc.outputs.get("metrics"), args.trace_out or sc.outputs.get("trace"))
    return EXIT_OK


def cmd_compare(sc: Scenario, args) -> int:
    base = _run(sc, None)
    dn = _resolve_delta_n(sc)
    geo = _run(sc, dn)
    print(_summary("1f1b", sc, base, None))
    print(_summary("geopipe", sc, geo, dn))
    red = reduction(base.bubble_ratio, geo.bubble_ratio)
    gain = (base.makespan - geo.makespan) / base.makespan
    print(f"bubble ratio reduction {red * 100:.2f}%")
    print(f"makespan {_ms(base.makespan)} -> {_ms(geo.makespan)} ({gain * 100:.2f}% faster)")
    metrics = args.metrics_out or sc.outputs.get("metrics")
    trace = args.trace_out or sc.outputs.get("trace")
    _emit(sc, base, _suffixed(metrics, "1f1b"), _suffixed(trace, "1f1b"))
    _emit(sc, geo, _suffixed(metrics, "geopipe"), _suffixed(trace, "geopipe"))
    return EXIT_OK


def cmd_optimize(sc: Scenario, args) -> int:
    res = optimize_ga(sc.cluster, sc.profile, sc.hbm, sc.cfg, sc.mbs_choices, sc.seq_choices, sc.ga)
    b = res.best
    print(f"[optimize] scenario {sc.name}: seed={sc.ga.seed} evaluations={res.evaluations}")
    print(f"  baseline 1F1B  mbs={res.baseline.micro_batch_size} seq={res.baseline.seq_len} "
          f"m={res.baseline.num_micro_batches}: makespan {_ms(res.baseline_makespan)}, "
          f"bubble ratio {float(res.baseline_bubble_ratio):.6f}")
    print(f"  best           mbs={b.micro_batch_size} seq={b.seq_len} m={b.num_micro_batches} "
          f"delta_n={list(b.delta_n)}: makespan {_ms(res.best_makespan)}, "
          f"bubble ratio {float(res.best_bubble_ratio):.6f}")
    print(f"  history        {' '.join(f'{h / NS_PER_MS:.3f}' for h in res.history)}")
    metrics = args.metrics_out or sc.outputs.get("metrics")
    trace = args.trace_out or sc.outputs.get("trace")
    if metrics or trace:
        cfg = IterationConfig(b.micro_batch_size, b.seq_len, b.num_micro_batches,
                              sc.cfg.hidden_dim, sc.cfg.bytes_per_element, sc.cfg.grad_msg_scale)
        rep = _run(dataclasses.replace(sc, cfg=cfg), list(b.delta_n))
        _emit(sc, rep, metrics, trace)
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--grid must be comma-separated numbers (Gbps), got {text!r}") from None
    if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] <= 0:
        raise ConfigError("--grid needs at least two positive, strictly ascending values")
    return [g * 1e9 for g in grid]


def cmd_sweep(sc: Scenario, args) -> int:
    grid = _parse_grid(args.grid) if args.grid else sc.sweep_grid_bps
    if not grid:
        raise ConfigError("no bandwidth grid: pass --grid or set sweep.grid_gbps")
    epsilon = args.epsilon if args.epsilon is not None else sc.epsilon
    res = sweep_bandwidth(sc.cluster, grid, sc.cfg, sc.profile, sc.hbm,
                          method=sc.sweep_method, ga_params=sc.ga)
    out = args.metrics_out or sc.outputs.get("sweep")
    if out:
        _write(out, res.write_csv)
    else:
        res.write_csv(sys.stdout)
    pt = find_optimization_point(res, epsilon)
    print(f"optimization point: {pt.bandwidth_bps / 1e9:g} Gbps (epsilon={epsilon:g}; "
          f"iteration time within {epsilon * 100:g}% of the {grid[-1] / 1e9:g} Gbps value)")
    print(f"bubble-ratio reduction peaks at {pt.peak_reduction_bandwidth_bps / 1e9:g} Gbps")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "simulate the scenario's scheduler and report bubbles"),
    "compare": (cmd_compare, "run 1F1B and the warm-up-extended schedule on identical inputs"),
    "optimize": (cmd_optimize, "genetic search over micro-batch size, sequence length and ΔN"),
    "sweep-bandwidth": (cmd_sweep, "sweep cross-DC bandwidth and locate the optimization point"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xdcpipe", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--scenario", required=True, help="path to a TOML scenario file")
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed for the genetic search (default: scenario value, else 0)")
        sp.add_argument("--jobs", type=int, default=None,
                        help="worker processes for fitness evaluation (default 1)")
        sp.add_argument("--metrics-out", default=None,
                        help="CSV output: per-stage busy/idle, or the sweep table for sweep-bandwidth")
        sp.add_argument("--trace-out", default=None, help="Chrome trace JSON output")
        if name == "sweep-bandwidth":
            sp.add_argument("--grid", default=None,
                            help="comma-separated ascending cross-DC bandwidths in Gbps")
            sp.add_argument("--epsilon", type=float, default=None,
                            help="tolerance for the optimization point (default 0.01 = 1%%)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = COMMANDS[args.command][0]
    try:
        sc = load_scenario(args.scenario)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.jobs is not None:
            overrides["jobs"] = args.jobs
        if overrides:
            sc.ga = dataclasses.replace(sc.ga, **overrides)
        return handler(sc, args)
    except (ValidationError, InfeasibleError, DeadlockError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        for v in getattr(exc, "violations", []):
            print(f"  {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
