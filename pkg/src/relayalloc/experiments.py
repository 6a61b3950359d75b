"""Batch experiments over channel realizations.

A sweep varies one parameter over a value list and, for every value, solves
``realizations`` random scenarios with the selected algorithms.

Seeds
-----
Realization ``j`` gets ``derive_seed(base_seed, j)``: the first eight bytes
of ``sha256("relayalloc:<base_seed>:<j>")`` as an unsigned integer. In the
default ``common`` mode the swept value is not hashed, so all values of a
sweep see the same channel draws (scenario streams are per node, so adding
robots or moving relays keeps every other draw). ``independent`` mode also
hashes ``<param>=<value>`` and gives every value fresh draws.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import oracle
from .fbl_rate import PayloadTooLargeError
from .model import ProblemInstance
from .sca import ALGORITHMS, ScaConfig, SubproblemFailedError
from .scenario import FactoryLayout, SystemParams, generate_scenario, watts_to_dbm

PARAMETERS = ("K", "eps_max", "theta", "B", "N")
ALGO_CHOICES = ("ncp", "qp", "both", "oracle")
SEED_MODES = ("common", "independent")

DEFAULT_FIXED = {
    "K": 4, "N": 4, "M": 10, "eps_max": 1e-5, "theta": 0.5, "B": 1000.0, "radius_m": 300.0,
}

CSV_COLUMNS = ["parameter", "value", "algorithm", "realizations", "converged", "failed",
               "mean_power_w", "std_power_w", "mean_iterations"]


def derive_seed(base_seed: int, j: int, param: str | None = None, value=None) -> int:
    """Stable 64-bit seed for realization ``j``; see the module docstring."""
    key = f"relayalloc:{int(base_seed)}:{int(j)}"
    if param is not None:
        key += f":{param}={float(value)!r}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


@dataclass(frozen=True)
class SweepSpec:
    """One swept parameter, its values and everything held fixed.

    ``fixed`` overrides ``DEFAULT_FIXED`` (keys K, N, M, eps_max, theta, B,
    radius_m). ``robot_positions`` replays stored positions (the first K
    are used) while fading is still redrawn per realization.
    """

    parameter: str
    values: tuple
    fixed: dict = field(default_factory=dict)
    realizations: int = 100
    algorithm: str = "both"
    base_seed: int = 0
    seed_mode: str = "common"
    sca: ScaConfig = field(default_factory=ScaConfig)
    robot_positions: np.ndarray | None = None
    workers: int = 1

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValueError(f"unknown swept parameter {self.parameter!r}; choose from {PARAMETERS}")
        if len(self.values) == 0:
            raise ValueError("value list is empty")
        object.__setattr__(self, "values", tuple(self.values))
        if self.realizations < 1:
            raise ValueError("realizations must be at least 1")
        if self.algorithm not in ALGO_CHOICES:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGO_CHOICES}")
        if self.seed_mode not in SEED_MODES:
            raise ValueError(f"unknown seed mode {self.seed_mode!r}")
        unknown = set(self.fixed) - set(DEFAULT_FIXED)
        if unknown:
            raise ValueError(f"unknown fixed parameters {sorted(unknown)}")
        for v in self.values:
            p = self.params_for(v)
            if p["M"] < p["K"]:
                raise ValueError(f"{self.parameter}={v} gives M={p['M']} < K={p['K']}")
            FactoryLayout(num_robots=p["K"], num_relays=p["N"], num_rbs=p["M"],
                          distance_factor=p["theta"], radius_m=p["radius_m"])
            if not 0 < p["eps_max"] < 1 or not p["B"] > 0:
                raise ValueError(f"invalid eps_max or B at {self.parameter}={v}")

    @property
    def algorithms(self):
        return ("ncp", "qp") if self.algorithm == "both" else (self.algorithm,)

    def params_for(self, value) -> dict:
        p = dict(DEFAULT_FIXED)
        p.update(self.fixed)
        p[self.parameter] = value
        for key in ("K", "N", "M"):
            if float(p[key]) != int(p[key]):
                raise ValueError(f"{key} must be an integer, got {p[key]}")
            p[key] = int(p[key])
        return p

    def seed_for(self, value, j) -> int:
        if self.seed_mode == "common":
            return derive_seed(self.base_seed, j)
        return derive_seed(self.base_seed, j, self.parameter, value)


@dataclass(frozen=True)
class RunRecord:
    """One algorithm on one realization."""

    value: float
    realization: int
    seed: int
    algorithm: str
    converged: bool
    total_power_w: float
    iterations: int
    mode_counts: tuple  # robots per mode: direct, relay 1..N
    message: str = ""


@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    algorithm: str
    realizations: int
    converged: int
    failed: int
    mean_power_w: float
    std_power_w: float
    mean_iterations: float
    proportions: tuple  # direct, relay 1..N over converged runs


@dataclass
class SweepResult:
    parameter: str
    rows: list
    records: list = field(default_factory=list)

    def row(self, value, algorithm) -> SweepRow:
        for r in self.rows:
            if r.algorithm == algorithm and math.isclose(r.value, float(value), rel_tol=1e-12):
                return r
        raise KeyError((value, algorithm))

    def means(self, algorithm):
        return [r.mean_power_w for r in self.rows if r.algorithm == algorithm]


def build_instance(params: dict, seed: int, robot_positions=None) -> ProblemInstance:
    layout = FactoryLayout(radius_m=params["radius_m"], num_robots=params["K"],
                           num_relays=params["N"], num_rbs=params["M"],
                           distance_factor=params["theta"], seed=seed)
    pos = None if robot_positions is None else np.asarray(robot_positions)[:params["K"]]
    scen = generate_scenario(layout, SystemParams(), robot_positions=pos)
    return ProblemInstance.from_scenario(scen, payload_bits=params["B"], eps_max=params["eps_max"])


def _solve_one(inst, algorithm, cfg):
    n_modes = inst.N + 1
    try:
        if algorithm == "oracle":
            sol = oracle.assignment_exact(inst)
            counts = np.bincount([n for _, n in sol.choices], minlength=n_modes)
            return True, sol.total_power_w, 0, tuple(int(c) for c in counts), ""
        rep = ALGORITHMS[algorithm](inst, cfg)
    except (SubproblemFailedError, oracle.InfeasibleInstanceError, PayloadTooLargeError) as exc:
        return False, float("nan"), 0, (0,) * n_modes, f"{type(exc).__name__}: {exc}"
    if not rep.converged:
        return False, float("nan"), rep.iterations, (0,) * n_modes, rep.message
    counts = np.bincount([n for _, n in rep.final.modes()], minlength=n_modes)
    return True, rep.total_power_w, rep.iterations, tuple(int(c) for c in counts), ""


def _realization(args):
    spec, value, j = args
    params = spec.params_for(value)
    seed = spec.seed_for(value, j)
    out = []
    try:
        inst = build_instance(params, seed, spec.robot_positions)
    except (ValueError, PayloadTooLargeError) as exc:
        for algo in spec.algorithms:
            out.append(RunRecord(float(value), j, seed, algo, False, float("nan"), 0,
                                 (0,) * (params["N"] + 1), f"{type(exc).__name__}: {exc}"))
        return out
    for algo in spec.algorithms:
        ok, power, its, counts, msg = _solve_one(inst, algo, spec.sca)
        out.append(RunRecord(float(value), j, seed, algo, ok, power, its, counts, msg))
    return out


def run_records(spec: SweepSpec) -> list:
    """Per-realization records in (value, realization, algorithm) order."""
    jobs = [(spec, v, j) for v in spec.values for j in range(spec.realizations)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(_realization, jobs))
    else:
        chunks = [_realization(job) for job in jobs]
    return [rec for chunk in chunks for rec in chunk]


def aggregate(spec: SweepSpec, records) -> SweepResult:
    rows = []
    n_max = max(spec.params_for(v)["N"] for v in spec.values)
    for v in spec.values:
        for algo in spec.algorithms:
            recs = [r for r in records if r.algorithm == algo and r.value == float(v)]
            ok = [r for r in recs if r.converged]
            powers = np.array([r.total_power_w for r in ok])
            counts = np.zeros(n_max + 1)
            for r in ok:
                counts[:len(r.mode_counts)] += r.mode_counts
            props = counts / counts.sum() if counts.sum() else counts
            rows.append(SweepRow(
                parameter=spec.parameter, value=float(v), algorithm=algo,
                realizations=len(recs), converged=len(ok), failed=len(recs) - len(ok),
                mean_power_w=float(powers.mean()) if len(ok) else float("nan"),
                std_power_w=float(powers.std(ddof=1)) if len(ok) > 1 else 0.0,
                mean_iterations=float(np.mean([r.iterations for r in ok])) if ok else float("nan"),
                proportions=tuple(float(p) for p in props),
            ))
    return SweepResult(spec.parameter, rows, list(records))


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Solve every (value, realization) pair and aggregate per value and algorithm.

    Infeasible realizations and failed or non-converged runs are counted,
    not fatal. Means and mode proportions use converged runs only.
    """
    return aggregate(spec, run_records(spec))


@dataclass(frozen=True)
class PairedRow:
    value: float
    realization: int
    seed: int
    ncp_power_w: float
    qp_power_w: float
    ncp_iterations: int
    qp_iterations: int
    ncp_converged: bool
    qp_converged: bool

    @property
    def relative_gap(self) -> float:
        if not (self.ncp_converged and self.qp_converged):
            return float("nan")
        return abs(self.ncp_power_w - self.qp_power_w) / self.qp_power_w


@dataclass
class PairedTable:
    rows: list

    def summary(self) -> dict:
        gaps = np.array([r.relative_gap for r in self.rows])
        gaps = gaps[np.isfinite(gaps)]
        out = {"realizations": len(self.rows),
               "median_relative_gap": float(np.median(gaps)) if gaps.size else float("nan"),
               "max_relative_gap": float(np.max(gaps)) if gaps.size else float("nan")}
        for algo in ("ncp", "qp"):
            conv = [getattr(r, f"{algo}_converged") for r in self.rows]
            its = [getattr(r, f"{algo}_iterations") for r in self.rows]
            out[f"{algo}_converged_fraction"] = float(np.mean(conv)) if conv else float("nan")
            out[f"{algo}_mean_iterations"] = float(np.mean(its)) if its else float("nan")
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(PairedRow.__dataclass_fields__) + ["relative_gap"]
        w.writerow(names)
        for r in self.rows:
            w.writerow([_fmt(x) for x in asdict(r).values()] + [_fmt(r.relative_gap)])
        return buf.getvalue()


def compare_algorithms(spec: SweepSpec) -> PairedTable:
    """Paired NCP and QP runs on identical realizations."""
    if spec.algorithm != "both":
        raise ValueError("compare_algorithms needs algorithm='both'")
    recs = run_records(spec)
    by_key = {(r.value, r.realization, r.algorithm): r for r in recs}
    rows = []
    for v in spec.values:
        for j in range(spec.realizations):
            a, b = by_key[(float(v), j, "ncp")], by_key[(float(v), j, "qp")]
            rows.append(PairedRow(float(v), j, a.seed, a.total_power_w, b.total_power_w,
                                  a.iterations, b.iterations, a.converged, b.converged))
    return PairedTable(rows)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def emit_csv(result: SweepResult, path=None) -> str:
    """Write one row per (value, algorithm); returns the CSV text.

    Mode proportions follow as ``prop_direct, prop_relay_1..N``.
    """
    n_max = max((len(r.proportions) for r in result.rows), default=1) - 1
    header = CSV_COLUMNS + ["prop_direct"] + [f"prop_relay_{n}" for n in range(1, n_max + 1)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in result.rows:
        props = list(r.proportions) + [0.0] * (n_max + 1 - len(r.proportions))
        if r.converged and abs(sum(props) - 1.0) > 1e-9:
            raise ValueError(f"mode proportions at {r.value} sum to {sum(props)}")
        w.writerow([r.parameter, _fmt(r.value), r.algorithm, r.realizations, r.converged,
                    r.failed, _fmt(r.mean_power_w), _fmt(r.std_power_w),
                    _fmt(r.mean_iterations)] + [_fmt(p) for p in props])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def parse_csv(text: str) -> SweepResult:
    """Inverse of ``emit_csv`` for the aggregate rows."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or header[:len(CSV_COLUMNS)] != CSV_COLUMNS:
        raise ValueError("not a sweep CSV")
    rows = []
    for rec in reader:
        if not rec:
            continue
        rows.append(SweepRow(
            parameter=rec[0], value=float(rec[1]), algorithm=rec[2], realizations=int(rec[3]),
            converged=int(rec[4]), failed=int(rec[5]), mean_power_w=float(rec[6]),
            std_power_w=float(rec[7]), mean_iterations=float(rec[8]),
            proportions=tuple(float(x) for x in rec[9:]),
        ))
    return SweepResult(rows[0].parameter if rows else "", rows)


def emit_summary(result: SweepResult) -> str:
    lines = [f"sweep over {result.parameter}"]
    for r in result.rows:
        if r.converged:
            dbm = float(watts_to_dbm(r.mean_power_w))
            power = f"{r.mean_power_w:.4g} W +- {r.std_power_w:.2g} ({dbm:.2f} dBm)"
        else:
            power = "no converged runs"
        props = " ".join(f"{p:.2f}" for p in r.proportions)
        lines.append(f"  {result.parameter}={r.value:g} {r.algorithm:6s} {power}; "
                     f"converged {r.converged}/{r.realizations}; "
                     f"iterations {r.mean_iterations:.1f}; modes [{props}]")
    return "\n".join(lines)


def spec_from_dict(d: dict, **overrides) -> SweepSpec:
    """Build a ``SweepSpec`` from a parsed JSON config.

    Keys: ``parameter``, ``values``, optional ``fixed``, ``realizations``,
    ``algorithm``, ``base_seed``, ``seed_mode``, ``workers`` and ``sca``
    (``initial_factor``, ``eta``, ``tol``, ``max_outer_iters``).
    """
    known = {"parameter", "values", "fixed", "realizations", "algorithm", "base_seed",
             "seed_mode", "workers", "sca"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    if "parameter" not in d or "values" not in d:
        raise ValueError("config needs 'parameter' and 'values'")
    kw = {k: d[k] for k in ("realizations", "algorithm", "base_seed", "seed_mode", "workers")
          if k in d}
    sca_keys = {"initial_factor", "eta", "tol", "max_outer_iters"}
    sca = d.get("sca", {})
    if set(sca) - sca_keys:
        raise ValueError(f"unknown sca keys {sorted(set(sca) - sca_keys)}")
    spec = SweepSpec(parameter=d["parameter"], values=tuple(d["values"]),
                     fixed=dict(d.get("fixed", {})), sca=ScaConfig(**sca), **kw)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(spec, **overrides) if overrides else spec


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "realization", "seed", "algorithm", "converged", "total_power_w",
                    "iterations", "mode_counts", "message"])
        for r in records:
            w.writerow([_fmt(r.value), r.realization, r.seed, r.algorithm, _fmt(r.converged),
                        _fmt(r.total_power_w), r.iterations,
                        " ".join(str(c) for c in r.mode_counts), r.message])
