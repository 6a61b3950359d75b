"""Penalized convex subproblems and their interior-point solver.

One SCA step minimizes total power plus a convexified binarity penalty over
relaxed indicators ``phi in [0, 1]`` and tilde powers, subject to

* per-robot throughput: direct plus second-hop perspective rates >= B_k,
* per relay link: first-hop perspective rate >= B_k * phi of that link,
* at most one indicator mass per RB and exactly one per robot.

Two penalties are supported. ``ncp`` penalizes ``||x||_1^2 - ||x||_2^2`` of
every RB slice and every robot slice, with the squared 2-norm linearized.
``qp`` penalizes ``sum(phi - phi^2)`` with ``phi^2`` linearized. Both
linearizations majorize the exact penalty and touch it at the reference
point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import clarabel
import numpy as np
from scipy import sparse

from . import fbl_rate
from .fbl_rate import LN2
from .model import ProblemInstance, backoffs

NCP = "ncp"
QP = "qp"

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITERS = "max-iters"
STATUS_FAILED = "numerical-failure"


def ncp_penalty(phi, lam):
    """Exact non-convex penalty ``lam/2 * sum(||.||_1^2 - ||.||_2^2)`` over RB and robot slices."""
    phi = np.asarray(phi, float)
    sq = phi * phi
    rb = phi.sum(axis=(0, 1)) ** 2 - sq.sum(axis=(0, 1))
    robot = phi.sum(axis=(1, 2)) ** 2 - sq.sum(axis=(1, 2))
    return 0.5 * lam * float(rb.sum() + robot.sum())


def ncp_penalty_linearized(phi, phi_ref, lam):
    phi = np.asarray(phi, float)
    ref = np.asarray(phi_ref, float)
    lin = 2.0 * ref * phi - ref * ref
    rb = phi.sum(axis=(0, 1)) ** 2 - lin.sum(axis=(0, 1))
    robot = phi.sum(axis=(1, 2)) ** 2 - lin.sum(axis=(1, 2))
    return 0.5 * lam * float(rb.sum() + robot.sum())


def qp_penalty(phi, beta):
    phi = np.asarray(phi, float)
    return beta * float(np.sum(phi - phi * phi))


def qp_penalty_linearized(phi, phi_ref, beta):
    phi = np.asarray(phi, float)
    ref = np.asarray(phi_ref, float)
    return beta * float(np.sum(phi - 2.0 * ref * phi + ref * ref))


def exact_penalty(kind, phi, factor):
    return ncp_penalty(phi, factor) if kind == NCP else qp_penalty(phi, factor)


@dataclass(frozen=True, eq=False)
class ConvexSubproblem:
    """Objective ``total power + lin . phi + quad/2 * (sum_m S_m^2 + sum_k U_k^2) + const``.

    ``S_m`` and ``U_k`` denote the indicator sums of RB ``m`` and robot ``k``.
    """

    inst: ProblemInstance
    kind: str
    factor: float
    phi_ref: np.ndarray
    lin: np.ndarray
    quad: float
    const: float

    def penalty(self, phi) -> float:
        """Linearized penalty at ``phi``."""
        phi = np.asarray(phi, float)
        return (float(np.sum(self.lin * phi)) + 0.5 * self.quad * _group_squares(phi)
                + self.const)

    def objective(self, phi, p_direct, p_hop1, p_hop2) -> float:
        return float(np.sum(p_direct) + np.sum(p_hop1) + np.sum(p_hop2)) + self.penalty(phi)


def _group_squares(phi):
    return float(np.sum(phi.sum(axis=(0, 1)) ** 2) + np.sum(phi.sum(axis=(1, 2)) ** 2))


def _check_reference(inst, phi_ref, tol=1e-6):
    ref = np.asarray(phi_ref, float)
    if ref.shape != (inst.K, inst.N + 1, inst.M):
        raise ValueError(f"reference phi has shape {ref.shape}")
    if np.any(ref < -tol) or np.any(ref > 1 + tol):
        raise ValueError("reference phi leaves [0, 1]")
    if np.any(np.abs(ref.sum(axis=(1, 2)) - 1.0) > tol) or np.any(ref.sum(axis=(0, 1)) > 1 + tol):
        raise ValueError("reference phi violates the assignment sums")
    return np.clip(ref, 0.0, 1.0)


def build_ncp_subproblem(inst: ProblemInstance, phi_ref, lam: float) -> ConvexSubproblem:
    if not lam > 0:
        raise ValueError("penalty factor must be positive")
    ref = _check_reference(inst, phi_ref)
    # each entry sits in one RB slice and one robot slice
    return ConvexSubproblem(inst, NCP, lam, ref, lin=-2.0 * lam * ref, quad=lam,
                            const=lam * float(np.sum(ref * ref)))


def build_qp_subproblem(inst: ProblemInstance, phi_ref, beta: float) -> ConvexSubproblem:
    if not beta > 0:
        raise ValueError("penalty factor must be positive")
    ref = _check_reference(inst, phi_ref)
    return ConvexSubproblem(inst, QP, beta, ref, lin=beta * (1.0 - 2.0 * ref), quad=0.0,
                            const=beta * float(np.sum(ref * ref)))


@dataclass
class SubproblemSolution:
    phi: np.ndarray
    p_direct: np.ndarray
    p_hop1: np.ndarray
    p_hop2: np.ndarray
    objective: float
    status: str
    residual: float
    gap: float
    iterations: int

    @property
    def total_power(self) -> float:
        return float(np.sum(self.p_direct) + np.sum(self.p_hop1) + np.sum(self.p_hop2))


class _ConicForm:
    """Exponential-cone form of one ``ConvexSubproblem``.

    Each link contributes a hypograph variable ``t`` with
    ``(t, phi, phi + x) in K_exp``, i.e. ``t <= phi * ln(1 + x / phi)``.
    Powers enter as ``x = s * p``. With ``scale_mode`` "median", ``s`` is
    the median gain; "link" uses each link's own gain, so every cone is unit
    scaled and the gain spread moves into the cost; "sqrt" sits in between.

    Variable layout: direct ``phi, x, t`` (K x M each), then relay
    ``phi, x1, x2, t1, t2`` (K x N x M each).
    """

    def __init__(self, sp: ConvexSubproblem, scale_mode: str = "median"):
        inst = sp.inst
        self.sp = sp
        self.scale_mode = scale_mode
        K, N, M = self.K, self.N, self.M = inst.K, inst.N, inst.M
        kd, kr = K * M, K * N * M
        self.kd, self.kr = kd, kr
        self.g = {"d": inst.gains_direct, "1": inst.gains_hop1,
                  "2": np.broadcast_to(inst.gains_hop2[None], (K, N, M))}
        self.s = {key: self._scale(g) for key, g in self.g.items()}
        off = np.cumsum([0, kd, kd, kd, kr, kr, kr, kr, kr])
        self.sl = {name: slice(off[i], off[i + 1]) for i, name in
                   enumerate(["phi_d", "x_d", "t_d", "phi_r", "x_1", "x_2", "t_1", "t_2"])}
        self.nvar = int(off[-1])

    def _scale(self, g):
        # power variable is x = scale * p
        if self.scale_mode == "link":
            return np.asarray(g, float)
        inst = self.sp.inst
        hs = float(np.median(np.concatenate([inst.gains_direct.ravel(), inst.gains_hop1.ravel(),
                                             inst.gains_hop2.ravel()])))
        if self.scale_mode == "median":
            return np.full(np.shape(g), hs)
        return np.sqrt(np.asarray(g, float) * hs)

    def _index(self, name):
        sl = self.sl[name]
        idx = np.arange(sl.start, sl.stop)
        return idx.reshape(self.K, self.M) if name.endswith("_d") else idx.reshape(self.K, self.N, self.M)

    def phi_index(self):
        """Variable index of every indicator, shaped K x (N + 1) x M."""
        out = np.empty((self.K, self.N + 1, self.M), dtype=int)
        out[:, 0, :] = self._index("phi_d")
        out[:, 1:, :] = self._index("phi_r")
        return out

    def build(self, margin=0.0):
        """Clarabel data; ``margin`` tightens the bit constraints by that fraction of B."""
        sp, inst = self.sp, self.sp.inst
        K, N, M = self.K, self.N, self.M
        b = np.asarray(inst.payload_bits, float)
        c_d, c_1, c_2 = backoffs(inst)
        phi_all = self.phi_index()

        q = np.zeros(self.nvar)
        for key in "d12":
            q[self.sl["x_" + key]] = 1.0 / self.s[key].ravel()
        q[phi_all.ravel()] = sp.lin.ravel()

        P = None
        if sp.quad:
            groups = [phi_all[:, :, m].ravel() for m in range(M)]
            groups += [phi_all[k].ravel() for k in range(K)]
            rows = np.concatenate([np.repeat(g, len(g)) for g in groups])
            cols = np.concatenate([np.tile(g, len(g)) for g in groups])
            P = sparse.csc_matrix((np.full(len(rows), sp.quad), (rows, cols)),
                                  shape=(self.nvar, self.nvar))
            P = sparse.triu(P, format="csc")
        else:
            P = sparse.csc_matrix((self.nvar, self.nvar))

        rows, cols, vals, rhs = [], [], [], []
        nrow = [0]

        def add(r, c, v):
            rows.append(np.ravel(r))
            cols.append(np.ravel(c))
            vals.append(np.broadcast_to(v, np.shape(c)).ravel().astype(float))

        def new_rows(n):
            r = np.arange(nrow[0], nrow[0] + n)
            nrow[0] += n
            return r

        # robot sums, equality
        r = new_rows(K)
        add(np.repeat(r, (N + 1) * M), phi_all.reshape(K, -1), 1.0)
        rhs.append(np.ones(K))
        n_zero = K

        # throughput, scaled by payload: -(sum alpha t - beta phi) <= -1
        r = new_rows(K)
        rr = np.broadcast_to(r[:, None], (K, M))
        add(rr, self._index("t_d"), -(inst.n1 / (LN2 * b))[:, None])
        add(rr, self._index("phi_d"), (inst.n1 * c_d / b)[:, None])
        if N:
            rr = np.broadcast_to(r[:, None, None], (K, N, M))
            add(rr, self._index("t_2"), -(inst.n2 / (LN2 * b))[:, None, None])
            add(rr, self._index("phi_r"), (inst.n2 * c_2 / b)[:, None, None])
        rhs.append(-np.full(K, 1.0 + margin))
        n_nonneg = K
        if N:
            # relay link: each first hop carries its own indicator's share of the payload
            r = new_rows(K * N * M).reshape(K, N, M)
            add(r, self._index("t_1"), -(inst.n1 / (LN2 * b))[:, None, None])
            add(r, self._index("phi_r"), ((inst.n1 * c_1 + b * (1.0 + margin)) / b)[:, None, None])
            rhs.append(np.zeros(K * N * M))
            n_nonneg += K * N * M
        # RB capacity
        r = new_rows(M)
        add(np.broadcast_to(r[None, None, :], phi_all.shape), phi_all, 1.0)
        rhs.append(np.ones(M))
        n_nonneg += M
        # non-negative powers
        for name in ("x_d", "x_1", "x_2"):
            idx = np.arange(self.sl[name].start, self.sl[name].stop)
            if idx.size:
                add(new_rows(idx.size), idx, -1.0)
                rhs.append(np.zeros(idx.size))
                n_nonneg += idx.size

        # exponential cones: s = (t, phi, phi + a x)
        n_exp = 0
        links = [("t_d", "phi_d", "x_d")]
        if N:
            links += [("t_1", "phi_r", "x_1"), ("t_2", "phi_r", "x_2")]
        for t_name, phi_name, x_name in links:
            t_i = self._index(t_name).ravel()
            p_i = self._index(phi_name).ravel()
            x_i = self._index(x_name).ravel()
            cnt = t_i.size
            base = new_rows(3 * cnt)[::3]
            add(base, t_i, -1.0)
            add(base + 1, p_i, -1.0)
            add(base + 2, p_i, -1.0)
            key = x_name[-1]
            add(base + 2, x_i, -(self.g[key] / self.s[key]).ravel())
            rhs.append(np.zeros(3 * cnt))
            n_exp += cnt

        A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(nrow[0], self.nvar))
        cones = [clarabel.ZeroConeT(n_zero), clarabel.NonnegativeConeT(n_nonneg)]
        cones += [clarabel.ExponentialConeT()] * n_exp
        return P, q, A, np.concatenate(rhs), cones

    def unpack(self, x):
        phi = np.clip(x[self.phi_index()], 0.0, 1.0)
        # the solver meets the robot sums only to its own feasibility tolerance
        tot = phi.sum(axis=(1, 2), keepdims=True)
        phi = phi / np.where(tot > 0, tot, 1.0)
        p_d, p_1, p_2 = (np.maximum(x[self._index("x_" + key)], 0.0) / self.s[key]
                         for key in "d12")
        return phi, p_d, p_1, p_2


def relaxed_violation(inst: ProblemInstance, phi, p_direct, p_hop1, p_hop2) -> float:
    """Largest violation of the relaxed subproblem constraints.

    Throughput and relay-link constraints are measured in units of the
    payload; assignment sums and bounds in indicator units.
    """
    K, N, M = inst.K, inst.N, inst.M
    b = np.asarray(inst.payload_bits, float)
    phi = np.asarray(phi, float)
    viol = [0.0, float(np.max(-phi, initial=0.0)), float(np.max(phi - 1.0, initial=0.0))]
    for p in (p_direct, p_hop1, p_hop2):
        viol.append(float(np.max(-np.asarray(p), initial=0.0)))
    c_d, c_1, c_2 = backoffs(inst)
    with np.errstate(divide="ignore", invalid="ignore"):
        got = _link_bits(phi[:, 0, :], p_direct, inst.gains_direct, inst.n1, c_d).sum(axis=1)
        if N:
            g2 = np.broadcast_to(inst.gains_hop2[None], (K, N, M))
            got = got + _link_bits(phi[:, 1:, :], p_hop2, g2, inst.n2, c_2).sum(axis=(1, 2))
            first = _link_bits(phi[:, 1:, :], p_hop1, inst.gains_hop1, inst.n1, c_1)
            need = b[:, None, None] * phi[:, 1:, :]
            viol.append(float(np.max((need - first) / b[:, None, None])))
    viol.append(float(np.max((b - got) / b)))
    viol.append(float(np.max(np.abs(phi.sum(axis=(1, 2)) - 1.0))))
    viol.append(float(np.max(phi.sum(axis=(0, 1)) - 1.0)))
    return max(viol)


def _link_bits(phi, p, gain, n, backoff):
    # perspective rate with a per-entry gain; zero where the indicator vanishes
    live = phi >= fbl_rate.PHI_CLAMP
    safe = np.where(live, phi, 1.0)
    r = n * (safe * np.log1p(gain * np.asarray(p) / safe) / LN2 - safe * backoff)
    return np.where(live, r, 0.0)


# (scaling, equilibration) tried in order; their failure sets barely overlap
_ATTEMPTS = (("median", True), ("sqrt", False), ("link", False))


def solve_subproblem(sp: ConvexSubproblem, tol: float = 1e-7, max_iter: int = 200) -> SubproblemSolution:
    """Solve one penalized convex subproblem to relative accuracy ``tol``.

    The subproblem goes to the Clarabel interior-point solver in
    exponential-cone form, with internal tolerances well below ``tol``. If
    it stalls, the solve is repeated under a different variable scaling. A
    point is labeled optimal only if it also passes an independent check of
    the relaxed constraints at ``tol``.

    Parameters
    ----------
    sp : ConvexSubproblem
        Problem data and linearized penalty.
    tol : float
        Target relative accuracy and feasibility tolerance.
    max_iter : int
        Interior-point iteration limit per attempt.

    Returns
    -------
    SubproblemSolution
        The first attempt that passes, else the least infeasible one.
    """
    fallback = None
    iters = 0
    for mode, equilibrate in _ATTEMPTS:
        sol = _attempt(sp, tol, max_iter, mode, equilibrate)
        iters += sol.iterations
        sol.iterations = iters
        if sol.status == STATUS_OPTIMAL:
            return sol
        if fallback is None or sol.residual < fallback.residual:
            fallback = sol
    fallback.iterations = iters
    return fallback


def _attempt(sp, tol, max_iter, mode, equilibrate):
    form = _ConicForm(sp, mode)
    P, q, A, b, cones = form.build(margin=0.1 * tol)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_rel = settings.tol_gap_abs = 1e-3 * tol
    settings.tol_feas = min(1e-3 * tol, 1e-10)
    settings.equilibrate_enable = equilibrate
    result = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    x = np.asarray(result.x, float)
    name = str(result.status)
    if x.size != form.nvar or not np.all(np.isfinite(x)):
        x = np.zeros(form.nvar)
        name = "failed"
    phi, p_d, p_1, p_2 = form.unpack(x)
    if not np.all(np.isfinite(phi)):
        phi = np.asarray(sp.phi_ref, float).copy()
        name = "failed"
    residual = relaxed_violation(sp.inst, phi, p_d, p_1, p_2)
    if name in ("Solved", "AlmostSolved") and residual <= tol:
        status = STATUS_OPTIMAL
    elif name == "MaxIterations":
        status = STATUS_MAX_ITERS
    else:
        status = STATUS_FAILED
    obj = sp.objective(phi, p_d, p_1, p_2)
    gap = abs(float(result.obj_val) - float(result.obj_val_dual))
    return SubproblemSolution(phi, p_d, p_1, p_2, obj, status, residual, gap, int(result.iterations))


def dump_subproblem(sp: ConvexSubproblem, path) -> None:
    """Write the subproblem in a plain JSON form for external cross-checks."""
    inst = sp.inst
    c_d, c_1, c_2 = backoffs(inst)
    doc = {
        "objective": {
            "description": "sum(p) + sum(lin * phi) + quad/2 * (sum_m S_m^2 + sum_k U_k^2) + const",
            "kind": sp.kind, "factor": sp.factor, "lin": sp.lin.tolist(),
            "quad": sp.quad, "const": sp.const,
        },
        "constraints": [
            "throughput[k]: sum_m n1*(phi_k0m*log2(1+hd*pd/phi_k0m) - phi_k0m*backoff_direct)"
            " + sum_{n,m} n2*(phi_knm*log2(1+h2*p2/phi_knm) - phi_knm*backoff_hop2) >= B_k",
            "relay_link[k,n,m]: n1*(phi_knm*log2(1+h1*p1/phi_knm) - phi_knm*backoff_hop1)"
            " >= B_k * phi_knm  (n >= 1)",
            "rb[m]: sum_{k,n} phi_knm <= 1",
            "robot[k]: sum_{n,m} phi_knm == 1",
            "0 <= phi <= 1, powers >= 0",
        ],
        "data": {
            "n1": inst.n1, "n2": inst.n2, "payload_bits": inst.payload_bits.tolist(),
            "backoff_direct": c_d, "backoff_hop1": c_1, "backoff_hop2": c_2,
            "gains_direct": inst.gains_direct.tolist(), "gains_hop1": inst.gains_hop1.tolist(),
            "gains_hop2": inst.gains_hop2.tolist(),
        },
        "linearization_point": sp.phi_ref.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
