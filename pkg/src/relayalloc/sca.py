"""Penalty-based successive convex approximation drivers.

Both drivers repeatedly linearize the binarity penalty at the current
indicators, solve the resulting convex subproblem and grow the penalty
factor geometrically until the indicators settle on a binary assignment.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import subproblem as sub
from .fbl_rate import PayloadTooLargeError
from .model import (AssignmentSolution, DEFAULT_FEAS_TOL, NonBinaryError, ProblemInstance,
                    check_feasibility, link_power_table, round_to_binary, total_power)

DEFAULT_FACTOR_CAP = 1e12


class SubproblemFailedError(RuntimeError):
    """A subproblem solve failed; ``report`` holds the trace up to that point."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ScaConfig:
    """Outer-loop settings shared by the NCP and QP drivers."""

    initial_factor: float = 1e-3
    eta: float = 2.5
    tol: float = 1e-4
    max_outer_iters: int = 50
    initial_phi: np.ndarray | None = None
    factor_cap: float = DEFAULT_FACTOR_CAP
    subproblem_tol: float = 1e-7
    stall_window: int = 5
    restart_on_stall: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.initial_factor > 0:
            raise ValueError("initial penalty factor must be positive")
        if not self.eta > 1:
            raise ValueError("eta must exceed 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if not self.factor_cap >= self.initial_factor:
            raise ValueError("factor_cap is below the initial factor")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    p_tot: float
    penalty_value: float
    penalty_factor: float
    binarity_gap: float
    subproblem_status: str
    subproblem_iterations: int
    restart: int


@dataclass
class SolverReport:
    """Outcome of one SCA run.

    ``final`` is the rounded binary assignment with closed-form powers, or
    ``None`` when the run did not converge. ``relaxed_phi`` is the last
    subproblem's indicator tensor before rounding.
    """

    algorithm: str
    records: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    final: AssignmentSolution | None = None
    relaxed_phi: np.ndarray | None = None
    wall_time_s: float = 0.0
    restarts: int = 0
    factor_capped: bool = False
    message: str = ""

    @property
    def total_power_w(self) -> float:
        return total_power(self.final) if self.final is not None else float("nan")

    def trace_rows(self):
        return [(r.iteration, r.p_tot, r.penalty_value, r.penalty_factor) for r in self.records]

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "p_tot", "penalty_value", "penalty_factor"])
            for row in self.trace_rows():
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])

    def summary(self) -> dict:
        out = {
            "algorithm": self.algorithm, "converged": self.converged,
            "iterations": self.iterations, "restarts": self.restarts,
            "factor_capped": self.factor_capped, "wall_time_s": self.wall_time_s,
            "total_power_w": self.total_power_w, "message": self.message,
        }
        if self.final is not None:
            out["modes"] = [list(m) for m in self.final.modes()]
        return out


def default_initial_phi(inst: ProblemInstance) -> np.ndarray:
    """Uniform fractional start ``1 / (M (N + 1))`` in every entry."""
    if inst.M < inst.K:
        raise ValueError(f"{inst.M} RBs cannot host {inst.K} robots")
    return np.full((inst.K, inst.N + 1, inst.M), 1.0 / (inst.M * (inst.N + 1)))


def perturbed_initial_phi(inst: ProblemInstance, rng) -> np.ndarray:
    """Half uniform start, half a random one-RB-per-robot assignment.

    Keeps robot sums at one and RB sums at most one.
    """
    K, N, M = inst.K, inst.N, inst.M
    pick = np.zeros((K, N + 1, M))
    rbs = rng.permutation(M)[:K]
    pick[np.arange(K), rng.integers(0, N + 1, size=K), rbs] = 1.0
    return 0.5 * default_initial_phi(inst) + 0.5 * pick


def binarity_gap(phi) -> float:
    """``sum(phi - phi^2)``, zero exactly on binary indicators."""
    phi = np.asarray(phi, float)
    return float(np.sum(phi - phi * phi))


def _check_payloads(inst: ProblemInstance) -> None:
    direct, hop1, hop2 = link_power_table(inst)
    usable = np.isfinite(direct).any(axis=1) | np.isfinite(hop1 + hop2).any(axis=(1, 2))
    if not np.all(usable):
        k = int(np.argmin(usable))
        raise PayloadTooLargeError(f"robot {k} cannot carry {inst.payload_bits[k]:g} bits on any link")


def _run(inst: ProblemInstance, cfg: ScaConfig, kind: str) -> SolverReport:
    _check_payloads(inst)
    build = sub.build_ncp_subproblem if kind == sub.NCP else sub.build_qp_subproblem
    report = SolverReport(algorithm=kind)
    start = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, 7])
    if cfg.initial_phi is not None:
        phi = np.asarray(cfg.initial_phi, float)
        if phi.shape != (inst.K, inst.N + 1, inst.M):
            raise ValueError(f"initial phi has shape {phi.shape}")
    else:
        phi = default_initial_phi(inst)

    restart = 0
    step = 0  # factor exponent, reset on restart
    prev_p = None
    last = None
    gaps = []
    it = 0
    while it < cfg.max_outer_iters:
        it += 1
        factor = cfg.initial_factor * cfg.eta ** step
        if factor >= cfg.factor_cap:
            factor = cfg.factor_cap
            report.factor_capped = True
        step += 1
        sp = build(inst, phi, factor)
        sol = sub.solve_subproblem(sp, tol=cfg.subproblem_tol)
        if sol.status != sub.STATUS_OPTIMAL:
            report.iterations = it
            report.wall_time_s = time.perf_counter() - start
            report.message = f"subproblem {sol.status} at iteration {it}"
            raise SubproblemFailedError(report.message, report)
        phi = sol.phi
        p_tot = sol.total_power
        pen = sub.exact_penalty(kind, phi, factor)
        gap = binarity_gap(phi)
        report.records.append(IterationRecord(it, p_tot, pen, factor, gap, sol.status,
                                              sol.iterations, restart))
        last = sol
        settled = prev_p is not None and abs(p_tot - prev_p) <= cfg.tol
        binary = gap <= cfg.tol and float(np.max(np.minimum(phi, 1.0 - phi))) <= cfg.tol
        if settled and pen <= cfg.tol and binary:
            report.converged = True
            break
        prev_p = p_tot
        gaps.append(gap)
        if (cfg.restart_on_stall and restart == 0 and len(gaps) > cfg.stall_window
                and _stalled(gaps[-cfg.stall_window - 1:], cfg.tol)):
            restart = 1
            report.restarts = 1
            phi = perturbed_initial_phi(inst, rng)
            step, prev_p, gaps = 0, None, []

    report.iterations = it
    if last is not None:
        report.relaxed_phi = last.phi
    if report.converged:
        relaxed = AssignmentSolution.with_fixed_splits(inst, last.phi, last.p_direct,
                                                       last.p_hop1, last.p_hop2)
        try:
            final = round_to_binary(inst, relaxed, tol=cfg.tol)
        except NonBinaryError as exc:
            report.converged = False
            report.message = f"rounding failed: {exc}"
        else:
            rep = check_feasibility(inst, final, DEFAULT_FEAS_TOL)
            if rep.feasible:
                report.final = final
            else:
                report.converged = False
                report.message = "rounded solution infeasible: " + ", ".join(rep.violations())
    else:
        report.message = (f"no convergence in {it} iterations "
                          f"(penalty {report.records[-1].penalty_value:.3g})")
    report.wall_time_s = time.perf_counter() - start
    return report


def _stalled(gaps, tol) -> bool:
    # penalty stuck above tol: no iteration in the window cut it by 1%
    window = np.asarray(gaps)
    if np.min(window) <= tol:
        return False
    return bool(np.all(window[1:] >= 0.99 * window[:-1]))


def solve_ncp(inst: ProblemInstance, cfg: ScaConfig | None = None) -> SolverReport:
    """SCA with the group-sparsity (norm difference) penalty.

    Parameters
    ----------
    inst : ProblemInstance
    cfg : ScaConfig, optional
        Defaults: factor 1e-3 grown by 2.5 per iteration, tolerance 1e-4.

    Returns
    -------
    SolverReport
        Converged runs carry a binary assignment whose powers are recomputed
        in closed form and verified feasible.

    Raises
    ------
    PayloadTooLargeError
        If some robot's payload needs an SNR beyond floating-point range on every link.
    SubproblemFailedError
        If a convex subproblem cannot be solved; the partial trace is attached.
    """
    return _run(inst, cfg or ScaConfig(), sub.NCP)


def solve_qp(inst: ProblemInstance, cfg: ScaConfig | None = None) -> SolverReport:
    """SCA with the quadratic ``sum(phi - phi^2)`` penalty; see ``solve_ncp``."""
    return _run(inst, cfg or ScaConfig(), sub.QP)


ALGORITHMS = {sub.NCP: solve_ncp, sub.QP: solve_qp}
