"""Command-line entry point: ``relayalloc <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments, oracle
from .fbl_rate import PayloadTooLargeError
from .model import ProblemInstance, solution_to_dict
from .sca import ALGORITHMS, ScaConfig, SubproblemFailedError
from .scenario import (FactoryLayout, SchemaVersionError, generate_scenario, load_scenario,
                       save_scenario)

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _add_geometry(p):
    p.add_argument("--robots", "-K", type=int, default=4)
    p.add_argument("--relays", "-N", type=int, default=4)
    p.add_argument("--rbs", "-M", type=int, default=10)
    p.add_argument("--theta", type=float, default=0.5, help="relay radius as a fraction of the cell radius")
    p.add_argument("--radius", type=float, default=300.0, help="cell radius in meters")


def _add_traffic(p):
    p.add_argument("--payload", type=float, default=1000.0, help="bits per robot")
    p.add_argument("--eps", type=float, default=1e-5, help="end-to-end error probability")


def _sca_args(p):
    p.add_argument("--initial-factor", type=float, default=1e-3)
    p.add_argument("--eta", type=float, default=2.5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=50)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relayalloc",
        description="Relay selection, RB assignment and power allocation for short-packet uplink.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw scenario files")
    _add_geometry(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realizations", type=int, default=1,
                   help="number of files; realization j uses the derived seed of (seed, j)")
    p.add_argument("--out", required=True,
                   help="output JSON file, or a directory when --realizations > 1")

    p = sub.add_parser("solve", help="solve one instance and print the report")
    _add_geometry(p)
    _add_traffic(p)
    _sca_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", help="scenario JSON to solve instead of drawing one")
    p.add_argument("--fixed-layout", help="scenario JSON whose robot positions are reused")
    p.add_argument("--algo", choices=["ncp", "qp", "oracle"], default="qp")
    p.add_argument("--out", help="iteration trace CSV (iter, p_tot, penalty_value, penalty_factor)")

    p = sub.add_parser("sweep", help="run a parameter sweep from a JSON config")
    p.add_argument("config", help="JSON file with parameter, values and optional fixed/sca settings")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--realizations", type=int, help="overrides the config")
    p.add_argument("--algo", choices=list(experiments.ALGO_CHOICES), help="overrides the config")
    p.add_argument("--fixed-layout", help="scenario JSON whose robot positions are reused")
    p.add_argument("--workers", type=int, help="parallel processes")
    p.add_argument("--out", help="aggregate CSV path")
    p.add_argument("--records", help="per-realization CSV path")

    p = sub.add_parser("compare", help="paired NCP and QP runs")
    _add_geometry(p)
    _add_traffic(p)
    _sca_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realizations", type=int, default=100)
    p.add_argument("--algo", choices=["both"], default="both")
    p.add_argument("--fixed-layout", help="scenario JSON whose robot positions are reused")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="paired CSV path")

    p = sub.add_parser("oracle", help="exact baseline with the error splits fixed")
    _add_geometry(p)
    _add_traffic(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", help="scenario JSON to solve instead of drawing one")
    p.add_argument("--fixed-layout", help="scenario JSON whose robot positions are reused")
    p.add_argument("--algo", choices=["assignment", "enumerate"], default="assignment")
    p.add_argument("--out", help="per-mode cost table CSV")
    return parser


def _layout(args, seed):
    try:
        return FactoryLayout(radius_m=args.radius, num_robots=args.robots, num_relays=args.relays,
                             num_rbs=args.rbs, distance_factor=args.theta, seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _read_scenario(path):
    try:
        return load_scenario(path)
    except (OSError, json.JSONDecodeError, SchemaVersionError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc


def _positions(args):
    if not getattr(args, "fixed_layout", None):
        return None
    return _read_scenario(args.fixed_layout).robot_positions


def _instance(args):
    if getattr(args, "scenario", None):
        scen = _read_scenario(args.scenario)
    else:
        pos = _positions(args)
        try:
            scen = generate_scenario(_layout(args, args.seed), robot_positions=None if pos is None
                                     else pos[:args.robots])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    try:
        return ProblemInstance.from_scenario(scen, payload_bits=args.payload, eps_max=args.eps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _sca_config(args):
    try:
        return ScaConfig(initial_factor=args.initial_factor, eta=args.eta, tol=args.tol,
                         max_outer_iters=args.max_iters, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_generate(args):
    if args.realizations < 1:
        raise ConfigError("--realizations must be at least 1")
    out = Path(args.out)
    if args.realizations == 1:
        save_scenario(generate_scenario(_layout(args, args.seed)), out)
        print(out)
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    for j in range(args.realizations):
        seed = experiments.derive_seed(args.seed, j)
        path = out / f"scenario_{j:04d}.json"
        save_scenario(generate_scenario(_layout(args, seed)), path)
        print(path)
    return EXIT_OK


def cmd_solve(args):
    inst = _instance(args)
    if args.algo == "oracle":
        return _print_oracle(inst, "assignment", None)
    try:
        rep = ALGORITHMS[args.algo](inst, _sca_config(args))
    except SubproblemFailedError as exc:
        rep = exc.report
    except PayloadTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    doc = rep.summary()
    doc["trace"] = [{"iter": i, "p_tot": p, "penalty_value": f, "penalty_factor": lam}
                    for i, p, f, lam in rep.trace_rows()]
    if rep.final is not None:
        doc["solution"] = solution_to_dict(inst, rep.final)
    print(json.dumps(doc, indent=1, default=float))
    if args.out:
        rep.write_trace_csv(args.out)
    return EXIT_OK if rep.converged else EXIT_FAILURE


def _print_oracle(inst, method, out):
    try:
        sol = oracle.enumerate_exact(inst) if method == "enumerate" else oracle.assignment_exact(inst)
    except oracle.InstanceTooLargeError as exc:
        raise ConfigError(str(exc)) from exc
    except oracle.InfeasibleInstanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps({"method": sol.method, "total_power_w": sol.total_power_w,
                      "modes": [list(c) for c in sol.choices]}, indent=1))
    if out:
        oracle.write_cost_csv(inst, out)
    return EXIT_OK


def cmd_oracle(args):
    return _print_oracle(_instance(args), args.algo, args.out)


def cmd_sweep(args):
    try:
        doc = json.loads(Path(args.config).read_text())
        spec = experiments.spec_from_dict(doc, base_seed=args.seed, realizations=args.realizations,
                                          algorithm=args.algo, workers=args.workers)
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad sweep config {args.config}: {exc}") from exc
    if args.fixed_layout:
        try:
            spec = replace(spec, robot_positions=_positions(args))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    try:
        result = experiments.run_sweep(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    text = experiments.emit_csv(result, args.out)
    if not args.out:
        print(text, end="")
    print(experiments.emit_summary(result), file=sys.stderr if not args.out else sys.stdout)
    if args.records:
        experiments.write_records_csv(result.records, args.records)
    return EXIT_OK if any(r.converged for r in result.rows) else EXIT_FAILURE


def cmd_compare(args):
    fixed = {"K": args.robots, "N": args.relays, "M": args.rbs, "theta": args.theta,
             "radius_m": args.radius, "B": args.payload, "eps_max": args.eps}
    try:
        spec = experiments.SweepSpec(parameter="K", values=(args.robots,), fixed=fixed,
                                     realizations=args.realizations, algorithm="both",
                                     base_seed=args.seed, sca=_sca_config(args),
                                     robot_positions=_positions(args), workers=args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    table = experiments.compare_algorithms(spec)
    if args.out:
        Path(args.out).write_text(table.to_csv())
    print(json.dumps(table.summary(), indent=1))
    return EXIT_OK if table.rows else EXIT_FAILURE


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "sweep": cmd_sweep,
            "compare": cmd_compare, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
