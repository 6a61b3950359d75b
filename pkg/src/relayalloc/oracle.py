"""Exact baselines for the problem with error splits fixed.

With the splits fixed every (robot, RB, mode) choice has a closed-form
minimal power, and the only coupling left is RB exclusivity. These solvers
are exact for that restricted problem, not for the problem with free error
probabilities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import ProblemInstance, link_power_table

ENUMERATION_LIMIT = 10 ** 7


class InstanceTooLargeError(ValueError):
    pass


class InfeasibleInstanceError(ValueError):
    pass


@dataclass(frozen=True)
class ModeCost:
    robot: int
    rb: int
    mode: int  # 0 direct, n >= 1 relay n
    power_w: float

    @property
    def usable(self) -> bool:
        return bool(np.isfinite(self.power_w))


@dataclass(frozen=True)
class ExactSolution:
    choices: tuple  # per robot (m, n)
    total_power_w: float
    method: str


def mode_costs(inst: ProblemInstance) -> np.ndarray:
    """Cost table of shape K x M x (N + 1); ``inf`` marks an unusable mode."""
    direct, hop1, hop2 = link_power_table(inst)
    table = np.empty((inst.K, inst.M, inst.N + 1))
    table[:, :, 0] = direct
    # K x N x M -> K x M x N
    table[:, :, 1:] = np.transpose(hop1 + hop2, (0, 2, 1))
    return table


def mode_cost_list(inst: ProblemInstance):
    table = mode_costs(inst)
    return [ModeCost(k, m, n, float(table[k, m, n]))
            for k in range(inst.K) for m in range(inst.M) for n in range(inst.N + 1)]


def enumerate_exact(inst: ProblemInstance) -> ExactSolution:
    """Exhaustive search over per-robot (RB, mode) choices.

    Depth-first over robots with RB conflicts pruned; among equal-cost modes
    on an RB the lower mode index (direct first) wins.
    """
    k_count, m_count, modes = inst.K, inst.M, inst.N + 1
    if float(m_count * modes) ** k_count > ENUMERATION_LIMIT:
        raise InstanceTooLargeError(
            f"({m_count}*{modes})^{k_count} combinations exceed {ENUMERATION_LIMIT}")
    table = mode_costs(inst)
    best = [np.inf, None]
    used = [False] * m_count
    picks = [None] * k_count

    def visit(k, acc):
        if k == k_count:
            if acc < best[0]:
                best[0], best[1] = acc, tuple(picks)
            return
        for m in range(m_count):
            if used[m]:
                continue
            used[m] = True
            for n in range(modes):
                c = table[k, m, n]
                if np.isfinite(c):
                    picks[k] = (m, n)
                    visit(k + 1, acc + c)
            used[m] = False

    visit(0, 0.0)
    if best[1] is None:
        raise InfeasibleInstanceError("no assignment with finite power exists")
    return ExactSolution(best[1], _total(table, best[1]), "enumeration")


def assignment_exact(inst: ProblemInstance) -> ExactSolution:
    """Collapse modes per (robot, RB) to the cheapest, then solve a min-cost matching.

    Exact because each robot's cost depends only on its own (RB, mode) and an
    RB hosts at most one robot.
    """
    table = mode_costs(inst)
    # argmin picks the first minimum, so ties go to direct mode
    best_mode = np.argmin(table, axis=2)
    cost = np.take_along_axis(table, best_mode[:, :, None], axis=2)[:, :, 0]
    if np.any(np.all(~np.isfinite(cost), axis=1)):
        raise InfeasibleInstanceError("some robot has no usable mode")
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError as exc:
        raise InfeasibleInstanceError(str(exc)) from exc
    choices = [None] * inst.K
    for k, m in zip(rows, cols):
        choices[k] = (int(m), int(best_mode[k, m]))
    return ExactSolution(tuple(choices), _total(table, choices), "assignment")


def _total(table, choices) -> float:
    return float(sum(table[k, m, n] for k, (m, n) in enumerate(choices)))


def write_cost_csv(inst: ProblemInstance, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["robot", "rb", "mode", "power_w"])
        for c in mode_cost_list(inst):
            w.writerow([c.robot, c.rb, c.mode, "inf" if not c.usable else repr(c.power_w)])
