"""Problem data, fixed error-probability splits and feasibility checking.

Indicator layout: ``phi[k, n, m]`` with ``n = 0`` for direct transmission of
robot ``k`` on RB ``m`` and ``n >= 1`` for forwarding through relay ``n``.
Power arrays hold the products ``phi * p`` (the tilde powers):
``p_direct`` is K x M, ``p_hop1`` and ``p_hop2`` are K x N x M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fbl_rate
from .fbl_rate import LN2, PHI_CLAMP
from .scenario import Scenario, SystemParams

DEFAULT_FEAS_TOL = 1e-7


class NonBinaryError(ValueError):
    """Raised when an indicator cannot be snapped to {0, 1}."""


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    payload_bits: np.ndarray
    eps_max: float
    tau1_s: float
    tau2_s: float
    bandwidth_hz: float
    gains_direct: np.ndarray
    gains_hop1: np.ndarray
    gains_hop2: np.ndarray

    def __post_init__(self):
        gd = np.array(self.gains_direct, dtype=float)
        k, m = gd.shape
        g1 = np.array(self.gains_hop1, dtype=float)
        g1 = g1.reshape(k, -1, m) if g1.size else np.zeros((k, 0, m))
        n = g1.shape[1]
        g2 = np.array(self.gains_hop2, dtype=float).reshape(n, m)
        b = np.broadcast_to(np.asarray(self.payload_bits, dtype=float), (k,)).copy()
        for name, arr in (("gains_direct", gd), ("gains_hop1", g1), ("gains_hop2", g2), ("payload_bits", b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if m < k:
            raise ValueError(f"{m} RBs cannot serve {k} robots")
        if not 0.0 < self.eps_max < 1.0:
            raise ValueError("eps_max must lie in (0, 1)")
        if np.any(b <= 0):
            raise ValueError("payloads must be positive")
        if min(self.tau1_s, self.tau2_s, self.bandwidth_hz) <= 0:
            raise ValueError("durations and bandwidth must be positive")
        for g in (gd, g1, g2):
            if not np.all(np.isfinite(g) & (g > 0)):
                raise ValueError("gains must be positive and finite")

    @classmethod
    def from_scenario(cls, s: Scenario, payload_bits=1000.0, eps_max=1e-5):
        sys_: SystemParams = s.system
        return cls(payload_bits=payload_bits, eps_max=eps_max, tau1_s=sys_.tau1_s,
                   tau2_s=sys_.tau2_s, bandwidth_hz=sys_.bandwidth_hz,
                   gains_direct=s.gains_direct, gains_hop1=s.gains_hop1,
                   gains_hop2=s.gains_hop2)

    @property
    def K(self) -> int:
        return self.gains_direct.shape[0]

    @property
    def M(self) -> int:
        return self.gains_direct.shape[1]

    @property
    def N(self) -> int:
        return self.gains_hop1.shape[1]

    @property
    def latency_s(self) -> float:
        return self.tau1_s + self.tau2_s

    @property
    def n1(self) -> float:
        """Channel uses in phase one."""
        return self.tau1_s * self.bandwidth_hz

    @property
    def n2(self) -> float:
        return self.tau2_s * self.bandwidth_hz

    def budget_direct(self, k, m) -> fbl_rate.LinkBudget:
        _, eps_d = fix_error_splits(self)
        return fbl_rate.LinkBudget(self.gains_direct[k, m], self.tau1_s, self.bandwidth_hz, eps_d)

    def budget_hop1(self, k, n, m) -> fbl_rate.LinkBudget:
        eps_r, _ = fix_error_splits(self)
        return fbl_rate.LinkBudget(self.gains_hop1[k, n, m], self.tau1_s, self.bandwidth_hz, eps_r)

    def budget_hop2(self, n, m) -> fbl_rate.LinkBudget:
        eps_r, _ = fix_error_splits(self)
        return fbl_rate.LinkBudget(self.gains_hop2[n, m], self.tau2_s, self.bandwidth_hz, eps_r)


def fix_error_splits(inst: ProblemInstance):
    """Per-hop error probabilities: ``eps_max / 2`` on each relay hop, ``eps_max`` direct."""
    if not 0.0 < inst.eps_max < 1.0:
        raise ValueError("eps_max must lie in (0, 1)")
    return inst.eps_max / 2.0, inst.eps_max


def backoffs(inst: ProblemInstance):
    """Rate backoff (bits per channel use) for direct, hop-1 and hop-2 links."""
    eps_r, eps_d = fix_error_splits(inst)
    q_r, q_d = fbl_rate.q_inv(eps_r), fbl_rate.q_inv(eps_d)
    return (q_d / (math.sqrt(inst.n1) * LN2),
            q_r / (math.sqrt(inst.n1) * LN2),
            q_r / (math.sqrt(inst.n2) * LN2))


def link_power_table(inst: ProblemInstance):
    """Minimum power carrying each robot's payload on every single link.

    Returns ``(direct K x M, hop1 K x N x M, hop2 K x N x M)``. Entries whose
    required SNR overflows are ``inf``.
    """
    eps_r, eps_d = fix_error_splits(inst)
    b = inst.payload_bits

    def snr(n_uses, eps):
        out = np.full(inst.K, np.inf)
        for k in range(inst.K):
            try:
                out[k] = fbl_rate.required_snr(b[k], n_uses, eps)
            except fbl_rate.PayloadTooLargeError:
                pass
        return out

    s_d, s_1, s_2 = snr(inst.n1, eps_d), snr(inst.n1, eps_r), snr(inst.n2, eps_r)
    direct = s_d[:, None] / inst.gains_direct
    hop1 = s_1[:, None, None] / inst.gains_hop1
    hop2 = s_2[:, None, None] / inst.gains_hop2[None, :, :]
    return direct, hop1, hop2


@dataclass(eq=False)
class AssignmentSolution:
    phi: np.ndarray
    p_direct: np.ndarray
    p_hop1: np.ndarray
    p_hop2: np.ndarray
    eps_direct: np.ndarray
    eps_hop1: np.ndarray
    eps_hop2: np.ndarray

    @classmethod
    def with_fixed_splits(cls, inst: ProblemInstance, phi, p_direct, p_hop1, p_hop2):
        eps_r, eps_d = fix_error_splits(inst)
        k, n, m = inst.K, inst.N, inst.M
        return cls(phi=np.asarray(phi, float), p_direct=np.asarray(p_direct, float),
                   p_hop1=np.asarray(p_hop1, float).reshape(k, n, m),
                   p_hop2=np.asarray(p_hop2, float).reshape(k, n, m),
                   eps_direct=np.full((k, m), eps_d), eps_hop1=np.full((k, n, m), eps_r),
                   eps_hop2=np.full((k, n, m), eps_r))

    def is_binary(self, tol=0.0) -> bool:
        return bool(np.all(np.minimum(self.phi, 1.0 - self.phi) <= tol))

    def modes(self):
        """Per robot ``(m, n)`` of the largest indicator; ``n = 0`` means direct."""
        out = []
        for k in range(self.phi.shape[0]):
            n, m = np.unravel_index(np.argmax(self.phi[k]), self.phi[k].shape)
            out.append((int(m), int(n)))
        return out


def total_power(sol: AssignmentSolution) -> float:
    """Sum of all (tilde) transmit powers of robots and relays, in watts."""
    for p in (sol.p_direct, sol.p_hop1, sol.p_hop2):
        if np.any(p < 0):
            raise ValueError("powers must be non-negative")
    return float(np.sum(sol.p_hop1) + np.sum(sol.p_hop2) + np.sum(sol.p_direct))


def indicator_weighted_power(phi, p_direct, p_hop1, p_hop2) -> float:
    """Original objective ``sum phi * p`` with powers not yet absorbed into phi."""
    phi = np.asarray(phi, float)
    relay = phi[:, 1:, :]
    return float(np.sum(relay * (p_hop1 + p_hop2)) + np.sum(phi[:, 0, :] * p_direct))


@dataclass
class FeasibilityReport:
    """Signed slacks, positive when satisfied.

    ``throughput`` (per robot) and ``relay_link`` (per relay link) are in
    bits; ``reliability_*``
    in probability; ``rb_capacity`` and ``robot_assignment`` in indicator
    units (the latter is ``-|sum - 1|``).
    """

    throughput: np.ndarray
    relay_link: np.ndarray
    reliability_relay: np.ndarray
    reliability_direct: np.ndarray
    rb_capacity: np.ndarray
    robot_assignment: np.ndarray
    phi_box: np.ndarray
    power_sign: np.ndarray
    tol: float = DEFAULT_FEAS_TOL
    worst_violation: float = field(init=False)
    feasible: bool = field(init=False)

    def __post_init__(self):
        worst = 0.0
        for name in self.slack_names():
            s = np.asarray(getattr(self, name))
            if s.size:
                worst = max(worst, float(-np.min(s)))
        self.worst_violation = worst
        self.feasible = worst <= self.tol

    @staticmethod
    def slack_names():
        return ("throughput", "relay_link", "reliability_relay", "reliability_direct",
                "rb_capacity", "robot_assignment", "phi_box", "power_sign")

    def violations(self):
        """Names of constraint groups violated beyond ``tol``."""
        out = []
        for name in self.slack_names():
            s = np.asarray(getattr(self, name))
            if s.size and -np.min(s) > self.tol:
                out.append(name)
        return out

    def to_dict(self):
        d = {name: np.asarray(getattr(self, name)).tolist() for name in self.slack_names()}
        d.update(tol=self.tol, worst_violation=self.worst_violation, feasible=self.feasible)
        return d


def _perspective_bits(phi, ptil, gain, n_uses, eps):
    # deliverable bits max(0, rate); links without indicator mass or with an
    # error probability outside (0, 1) deliver nothing
    live = (phi >= PHI_CLAMP) & (eps > 0.0) & (eps < 1.0)
    f = np.where(live, phi, 1.0)
    backoff = fbl_rate.q_inv(np.where(live, eps, 0.5)) / (math.sqrt(n_uses) * LN2)
    val = n_uses * (f * np.log1p(gain * ptil / f) / LN2 - f * backoff)
    return np.where(live, np.maximum(val, 0.0), 0.0)


def check_feasibility(inst: ProblemInstance, sol: AssignmentSolution,
                      tol: float = DEFAULT_FEAS_TOL) -> FeasibilityReport:
    """Evaluate every constraint of the perspective (relaxed) formulation.

    Rates are indicator-weighted perspective rates computed with each link's
    own error probability from ``sol``. Reliability uses the big-M form, which
    is vacuous on inactive links.
    """
    k, n, m = inst.K, inst.N, inst.M
    phi = np.asarray(sol.phi, float)
    if phi.shape != (k, n + 1, m):
        raise ValueError(f"phi has shape {phi.shape}, expected {(k, n + 1, m)}")
    if sol.p_direct.shape != (k, m) or sol.p_hop1.shape != (k, n, m) or sol.p_hop2.shape != (k, n, m):
        raise ValueError("power arrays do not match the instance dimensions")

    p_d, p_1, p_2 = (np.maximum(p, 0.0) for p in (sol.p_direct, sol.p_hop1, sol.p_hop2))
    ph = np.clip(phi, 0.0, 1.0)
    r_d = _perspective_bits(ph[:, 0, :], p_d, inst.gains_direct, inst.n1,
                            sol.eps_direct)
    r_2 = _perspective_bits(ph[:, 1:, :], p_2, inst.gains_hop2[None], inst.n2,
                            sol.eps_hop2) if n else np.zeros((k, 0, m))
    r_1 = _perspective_bits(ph[:, 1:, :], p_1, inst.gains_hop1, inst.n1,
                            sol.eps_hop1) if n else np.zeros((k, 0, m))
    b = inst.payload_bits
    throughput = r_d.sum(axis=1) + r_2.sum(axis=(1, 2)) - b
    relay_link = r_1 - b[:, None, None] * ph[:, 1:, :]
    rel_relay = inst.eps_max + 1.0 - phi[:, 1:, :] - (sol.eps_hop1 + sol.eps_hop2)
    rel_direct = inst.eps_max + 1.0 - phi[:, 0, :] - sol.eps_direct
    rb = 1.0 - phi.sum(axis=(0, 1))
    robot = -np.abs(phi.sum(axis=(1, 2)) - 1.0)
    box = np.minimum(phi, 1.0 - phi)
    sign = np.concatenate([p.ravel() for p in (sol.p_direct, sol.p_hop1, sol.p_hop2)])
    return FeasibilityReport(throughput, relay_link, rel_relay, rel_direct, rb, robot,
                             box, sign, tol=tol)


def round_to_binary(inst: ProblemInstance, sol: AssignmentSolution,
                    tol: float = 1e-4) -> AssignmentSolution:
    """Snap indicators to {0, 1} and recompute the minimal powers.

    Every selected link gets exactly the power that carries its robot's
    payload, so the throughput constraints hold with equality.
    """
    phi = np.asarray(sol.phi, float)
    dist = np.minimum(np.abs(phi), np.abs(1.0 - phi))
    if np.any(dist > tol):
        raise NonBinaryError(
            f"indicator {float(phi.flat[np.argmax(dist)]):.6g} is farther than {tol:g} from {{0, 1}}")
    snapped = (phi > 0.5).astype(float)
    per_robot = snapped.sum(axis=(1, 2))
    per_rb = snapped.sum(axis=(0, 1))
    if np.any(per_robot != 1.0) or np.any(per_rb > 1.0):
        raise NonBinaryError("snapped indicators violate the one-RB-per-robot assignment")
    direct, hop1, hop2 = link_power_table(inst)
    p_d = np.where(snapped[:, 0, :] > 0, direct, 0.0)
    p_1 = np.where(snapped[:, 1:, :] > 0, hop1, 0.0)
    p_2 = np.where(snapped[:, 1:, :] > 0, hop2, 0.0)
    if not all(np.all(np.isfinite(p)) for p in (p_d, p_1, p_2)):
        raise fbl_rate.PayloadTooLargeError("selected link cannot carry the payload")
    return AssignmentSolution.with_fixed_splits(inst, snapped, p_d, p_1, p_2)


def solution_from_modes(inst: ProblemInstance, modes) -> AssignmentSolution:
    """Binary solution with minimal powers from per-robot ``(m, n)`` choices."""
    phi = np.zeros((inst.K, inst.N + 1, inst.M))
    for k, (m, n) in enumerate(modes):
        phi[k, n, m] = 1.0
    zero = AssignmentSolution.with_fixed_splits(
        inst, phi, np.zeros((inst.K, inst.M)), np.zeros((inst.K, inst.N, inst.M)),
        np.zeros((inst.K, inst.N, inst.M)))
    return round_to_binary(inst, zero, tol=0.0)


def _achieved_snr_db(inst, sol, k, m, n):
    # per-hop received SNR of the selected link; the rate model is tight only well above 0 dB
    phi = float(sol.phi[k, n, m])
    if phi <= 0:
        return []
    if n == 0:
        snrs = [inst.gains_direct[k, m] * sol.p_direct[k, m] / phi]
    else:
        snrs = [inst.gains_hop1[k, n - 1, m] * sol.p_hop1[k, n - 1, m] / phi,
                inst.gains_hop2[n - 1, m] * sol.p_hop2[k, n - 1, m] / phi]
    return [float(10.0 * np.log10(s)) if s > 0 else float("-inf") for s in snrs]


def solution_to_dict(inst: ProblemInstance, sol: AssignmentSolution, tol=DEFAULT_FEAS_TOL) -> dict:
    rep = check_feasibility(inst, sol, tol)
    return {
        "dimensions": {"K": inst.K, "M": inst.M, "N": inst.N},
        "units": {"power": "W", "phi": "indicator in [0, 1]", "slack_bits": "bits"},
        "phi": sol.phi.tolist(),
        "p_direct": sol.p_direct.tolist(),
        "p_hop1": sol.p_hop1.tolist(),
        "p_hop2": sol.p_hop2.tolist(),
        "modes": [{"robot": k, "rb": m, "mode": "direct" if n == 0 else f"relay {n}",
                   "snr_db": _achieved_snr_db(inst, sol, k, m, n)}
                  for k, (m, n) in enumerate(sol.modes())],
        "total_power_w": total_power(sol),
        "feasibility": rep.to_dict(),
    }
