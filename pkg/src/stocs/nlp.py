"""Iteration-bounded augmented-Lagrangian solver for relaxed MPCCs.

Problem interface (duck typed, see :class:`stocs.mpcc.MpccProblem`)::

    n, lb, ub, n_eq, n_in, n_cc
    evaluate(x, need_jac=True) -> Evaluation(f, grad, c_eq, J_eq, c_in, J_in, cc, J_cc)
    hessian(x, w_eq, w_in, w_cc, obj_scale) -> sparse symmetric matrix

Constraints are c_eq = 0, c_in >= 0, lb <= x <= ub and complementarity
products cc (of quantities kept nonnegative elsewhere) relaxed to cc <= rc.

Every inequality row r gets a slack s_r >= 0 and enters the augmented
Lagrangian as the equality c_r(x) - s_r = 0 (the squared-slack form with the
sign condition kept as a bound).  The inner problem, minimizing the
augmented Lagrangian over the box, is solved by damped Newton steps on a
primal-dual log-barrier for the bounds.  Slacks are eliminated from the
Newton system, which leaves a symmetric matrix with the Jacobian's band
structure; it is factored by banded Cholesky with diagonal regularization
whenever it is not positive definite.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

logger = logging.getLogger(__name__)

TAU_MIN = 0.99          # fraction-to-boundary
KAPPA_SIGMA = 1e10      # bound-dual safeguard
ARMIJO = 1e-4


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    ITER_LIMIT = "IterLimit"
    INFEASIBLE = "Infeasible"


class NumericalBreakdown(RuntimeError):
    pass


class ResourceLimit(RuntimeError):
    """The Newton system would exceed the configured memory budget."""


@dataclass
class SolveSettings:
    max_iters: int = 100                 # Newton-step budget (S)
    comp_relaxation_init: float = 1e-2
    comp_relaxation_shrink: float = 0.2
    comp_relaxation_min: float = 1e-8
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-8
    barrier_init: float = 1e-3
    barrier_min: float = 1e-9
    bound_push: float = 1e-4
    infeasible_l1: float = 1e-3
    restoration_iters: int = 100
    mem_limit: float | None = None       # bytes
    deadline: float | None = None        # time.perf_counter() value
    log: list | None = None

    def __post_init__(self):
        if not (0 < self.comp_relaxation_shrink < 1 < self.penalty_growth):
            raise ValueError("need 0 < comp_relaxation_shrink < 1 < penalty_growth")
        for k in ("max_iters", "comp_relaxation_init", "penalty_init", "tol_kkt", "tol_feas",
                  "barrier_init", "barrier_min"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")


@dataclass
class SolveStats:
    iterations: int = 0
    major_iterations: int = 0
    kkt: float = math.inf
    feasibility: float = math.inf
    relaxation: float = math.nan
    penalty: float = math.nan


@dataclass
class SolveResult:
    status: Status
    x_star: np.ndarray
    stats: SolveStats
    duals: dict = field(default_factory=dict)


def violation(ev, rc: float = 0.0) -> np.ndarray:
    """Stacked constraint violations (equalities, negative inequalities,
    complementarity products above the relaxation)."""
    return np.concatenate([np.abs(ev.c_eq), np.maximum(-ev.c_in, 0.0), np.maximum(ev.cc - rc, 0.0)])


def _banded_cholesky_solve(H, rhs: np.ndarray, mem_limit=None):
    """Solve H d = rhs for SPD banded H; raises LinAlgError if not PD."""
    n = H.shape[0]
    Hc = H.tocoo()
    up = Hc.col >= Hc.row
    r, c, v = Hc.row[up], Hc.col[up], Hc.data[up]
    u = int((c - r).max()) if len(r) else 0
    if mem_limit is not None and 16.0 * n * (u + 1) > mem_limit:
        raise ResourceLimit(f"banded factor needs {16.0 * n * (u + 1) / 2**20:.1f} MiB")
    ab = np.zeros((u + 1, n))
    np.add.at(ab, (u + r - c, c), v)
    cb = sla.cholesky_banded(ab, lower=False, check_finite=False)
    return sla.cho_solve_banded((cb, False), rhs, check_finite=False)


def _check_finite(*arrs):
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise NumericalBreakdown("non-finite value in problem evaluation")


@dataclass
class _Point:
    """Primal-dual iterate and cached evaluation."""
    x: np.ndarray
    s: np.ndarray
    vl: np.ndarray
    vu: np.ndarray
    vs: np.ndarray
    ev: object = None
    c_r: np.ndarray = None


class _Solver:
    def __init__(self, prob, settings: SolveSettings):
        self.p = prob
        self.st = settings
        self.lb = np.asarray(prob.lb, dtype=float)
        self.ub = np.asarray(prob.ub, dtype=float)
        self.fixed = self.lb >= self.ub
        self.hl = np.isfinite(self.lb) & ~self.fixed
        self.hu = np.isfinite(self.ub) & ~self.fixed
        self.n_in, self.n_cc = prob.n_in, prob.n_cc
        self.iters = 0
        self.n_inner = 0        # inner solves started; parameters are fixed within one
        self.delta_last = 0.0

    # ------------------------------------------------------------ helpers
    def clip(self, x):
        return np.minimum(np.maximum(x, self.lb), self.ub)

    def out_of_time(self):
        return self.st.deadline is not None and time.perf_counter() > self.st.deadline

    def push_interior(self, x, push):
        lb, ub = self.lb, self.ub
        x = self.clip(x)
        width = np.where(self.hl & self.hu, ub - lb, np.inf)
        pl = np.minimum(push * np.maximum(1.0, np.abs(lb)), 0.5 * width)
        pu = np.minimum(push * np.maximum(1.0, np.abs(ub)), 0.5 * width)
        with np.errstate(invalid="ignore"):
            x = np.where(self.hl, np.maximum(x, lb + pl), x)
            x = np.where(self.hu, np.minimum(x, ub - pu), x)
        x[self.fixed] = lb[self.fixed]
        return x

    def evaluate(self, x, rc):
        ev = self.p.evaluate(x)
        _check_finite(ev.grad, ev.c_eq, ev.c_in, ev.cc, [ev.f])
        return ev, np.concatenate([ev.c_in, rc - ev.cc])

    def J_r(self, ev):
        return sp.vstack([ev.J_in, -ev.J_cc]).tocsr()

    def dl(self, x):
        return np.where(self.hl, x - self.lb, 1.0)

    def du(self, x):
        return np.where(self.hu, self.ub - x, 1.0)

    def phi(self, pt: _Point, al) -> float:
        """Barrier augmented Lagrangian value."""
        lam_e, lam_r, rho, mu, obj = al["lam_e"], al["lam_r"], al["rho"], al["mu"], al["obj"]
        ce = pt.ev.c_eq
        e = pt.c_r - pt.s
        v = obj * pt.ev.f - lam_e @ ce + 0.5 * rho * ce @ ce - lam_r @ e + 0.5 * rho * e @ e
        with np.errstate(divide="ignore", invalid="ignore"):
            v -= mu * (np.sum(np.log(pt.x[self.hl] - self.lb[self.hl]))
                       + np.sum(np.log(self.ub[self.hu] - pt.x[self.hu])) + np.sum(np.log(pt.s)))
        if np.isnan(v):
            return math.inf
        return float(v)

    def gradients(self, pt: _Point, al, J_r):
        lam_e, lam_r, rho, obj = al["lam_e"], al["lam_r"], al["rho"], al["obj"]
        ev = pt.ev
        we = -lam_e + rho * ev.c_eq
        wr = -lam_r + rho * (pt.c_r - pt.s)
        g0 = np.asarray(obj * ev.grad + ev.J_eq.T @ we + J_r.T @ wr).ravel()
        g0[self.fixed] = 0.0
        return we, wr, g0

    def kkt_error(self, pt: _Point, g0, wr, mu):
        """Primal-dual optimality error of the barrier subproblem."""
        gx = g0 - pt.vl * self.hl + pt.vu * self.hu
        gs = -wr - pt.vs
        cl = np.abs(pt.vl * self.dl(pt.x) - mu)[self.hl]
        cu = np.abs(pt.vu * self.du(pt.x) - mu)[self.hu]
        cs = np.abs(pt.vs * pt.s - mu)
        return max(np.max(np.abs(gx), initial=0.0), np.max(np.abs(gs), initial=0.0),
                   np.max(cl, initial=0.0), np.max(cu, initial=0.0), np.max(cs, initial=0.0))

    # ------------------------------------------------------------ inner loop
    def inner(self, pt: _Point, al, tol: float, budget: int, rc: float):
        """Damped primal-dual Newton on the barrier augmented Lagrangian.
        Returns (point, kkt error, iterations used)."""
        rho, mu = al["rho"], al["mu"]
        used = 0
        self.n_inner += 1
        lb, hl, hu = self.lb, self.hl, self.hu
        tau = max(TAU_MIN, 1.0 - mu)
        val = self.phi(pt, al)
        while True:
            J_r = self.J_r(pt.ev)
            we, wr, g0 = self.gradients(pt, al, J_r)
            err = self.kkt_error(pt, g0, wr, mu)
            if self.st.log is not None:
                self.st.log.append({"step": self.iters, "inner": self.n_inner, "merit": val,
                                    "feas": float(np.max(violation(pt.ev, rc), initial=0.0)),
                                    "rho": rho, "relax": rc, "mu": mu, "kkt": err})
            if err <= tol or used >= budget or self.out_of_time():
                return pt, err, used
            x, s = pt.x, pt.s
            dlx, dux = self.dl(x), self.du(x)
            # primal barrier gradient, primal-dual curvature
            gx = g0 - mu * hl / dlx + mu * hu / dux
            gs = -wr - mu / s
            sig_x = pt.vl * hl / dlx + pt.vu * hu / dux
            sig_s = pt.vs / s
            Dr = rho * sig_s / (rho + sig_s)
            H = self.p.hessian(x, we, wr[:self.n_in], -wr[self.n_in:], obj_scale=al["obj"])
            H = H + rho * (pt.ev.J_eq.T @ pt.ev.J_eq) + J_r.T @ sp.diags(Dr) @ J_r
            free = (~self.fixed).astype(float)
            Df = sp.diags(free)
            H = (Df @ H @ Df + sp.diags(sig_x + (1.0 - free))).tocsr()
            rhs = -(gx + J_r.T @ (rho / (rho + sig_s) * gs))
            rhs[self.fixed] = 0.0
            dx, delta = self._factor_solve(H, rhs, free)
            ds = (-gs + rho * (J_r @ dx)) / (rho + sig_s)
            dvl = np.where(hl, mu / dlx - pt.vl - pt.vl / dlx * dx, 0.0)
            dvu = np.where(hu, mu / dux - pt.vu + pt.vu / dux * dx, 0.0)
            dvs = mu / s - pt.vs - sig_s * ds
            a_max = min(_ftb(dlx[hl], dx[hl], tau), _ftb(dux[hu], -dx[hu], tau), _ftb(s, ds, tau))
            a_dual = min(_ftb(pt.vl[hl], dvl[hl], tau), _ftb(pt.vu[hu], dvu[hu], tau), _ftb(pt.vs, dvs, tau))
            slope = float(gx @ dx + gs @ ds)
            alpha = a_max
            accepted = False
            for _ in range(40):
                xn = x + alpha * dx
                xn[self.fixed] = lb[self.fixed]
                sn = s + alpha * ds
                ev, c_r = self.evaluate(xn, rc)
                cand = _Point(xn, sn, pt.vl, pt.vu, pt.vs, ev, c_r)
                vn = self.phi(cand, al)
                if np.isfinite(vn) and vn <= val + ARMIJO * alpha * min(slope, 0.0):
                    accepted = True
                    break
                alpha *= 0.5
            used += 1
            self.iters += 1
            if self.st.log is not None:
                self.st.log[-1].update(alpha=alpha if accepted else 0.0, delta=delta)
            if not accepted:
                return pt, err, used
            vl = pt.vl + a_dual * dvl
            vu = pt.vu + a_dual * dvu
            vs = pt.vs + a_dual * dvs
            # keep duals within a factor of the primal barrier estimate
            dln, dun = self.dl(xn), self.du(xn)
            vl = np.where(hl, np.clip(vl, mu / (KAPPA_SIGMA * dln), KAPPA_SIGMA * mu / dln), 0.0)
            vu = np.where(hu, np.clip(vu, mu / (KAPPA_SIGMA * dun), KAPPA_SIGMA * mu / dun), 0.0)
            vs = np.clip(vs, mu / (KAPPA_SIGMA * sn), KAPPA_SIGMA * mu / sn)
            pt = _Point(xn, sn, vl, vu, vs, ev, c_r)
            val = vn

    def _factor_solve(self, H, rhs, free):
        diag = np.abs(H.diagonal())
        scale = max(1.0, float(diag.max(initial=1.0)))
        delta = 0.0
        while True:
            try:
                M = H + sp.diags(free * delta) if delta > 0 else H
                return _banded_cholesky_solve(M, rhs, self.st.mem_limit), delta
            except np.linalg.LinAlgError:
                if delta == 0.0:
                    delta = max(1e-8, self.delta_last / 3) if self.delta_last > 0 else 1e-6
                else:
                    delta *= 10 if self.delta_last > 0 else 100
                self.delta_last = delta
                if delta > 1e10 * scale:
                    raise NumericalBreakdown("Newton matrix could not be regularized")

    def new_point(self, x, rc, mu, push):
        x = self.push_interior(x, push)
        ev, c_r = self.evaluate(x, rc)
        s = np.maximum(c_r, max(push, mu))
        vl = np.where(self.hl, mu / self.dl(x), 0.0)
        vu = np.where(self.hu, mu / self.du(x), 0.0)
        return _Point(x, s, vl, vu, mu / s, ev, c_r)

    def with_relaxation(self, pt: _Point, rc: float, mu: float):
        """Re-evaluate after changing rc; keep slacks strictly positive."""
        c_r = np.concatenate([pt.ev.c_in, rc - pt.ev.cc])
        s = pt.s.copy()
        k = self.n_in
        s[k:] = np.maximum(np.minimum(s[k:], c_r[k:]), mu)
        return _Point(pt.x, s, pt.vl, pt.vu, np.clip(pt.vs, mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s), pt.ev, c_r)

    def restoration(self, pt: _Point, rc: float, mu: float):
        """Minimize the constraint violation alone.  Returns
        (point, l1 violation, stationary?)."""
        m = self.n_in + self.n_cc
        al = {"lam_e": np.zeros(self.p.n_eq), "lam_r": np.zeros(m), "rho": 1.0, "mu": mu, "obj": 0.0}
        used = 0
        err = math.inf
        while used < self.st.restoration_iters:
            pt, err, k = self.inner(pt, al, max(10 * al["mu"], 1e-9), self.st.restoration_iters - used, rc)
            used += k
            if al["mu"] <= self.st.barrier_min:
                break
            al["mu"] = max(self.st.barrier_min, 0.2 * al["mu"])
        l1 = float(np.sum(violation(pt.ev, rc)))
        return pt, l1, err <= 1e-6


def _ftb(v, dv, tau):
    """Largest step in (0, 1] keeping v + a dv >= (1 - tau) v."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def _initial_kkt(sv: _Solver, x, ev, tol_kkt, tol_feas, rc):
    """KKT error at x with least-squares multipliers (inf if x is infeasible
    or a multiplier has the wrong sign)."""
    V = float(np.max(violation(ev, rc), initial=0.0))
    if V > tol_feas:
        return math.inf
    c_r = np.concatenate([ev.c_in, rc - ev.cc])
    J_r = sv.J_r(ev)
    act_r = np.flatnonzero(c_r <= 1e-10)
    at_l = np.flatnonzero(sv.hl & (x <= sv.lb + 1e-12))
    at_u = np.flatnonzero(sv.hu & (x >= sv.ub - 1e-12))
    n = sv.p.n
    cols = [ev.J_eq.T.tocsc(), J_r[act_r].T.tocsc(),
            sp.csc_matrix((np.ones(len(at_l)), (at_l, np.arange(len(at_l)))), shape=(n, len(at_l))),
            sp.csc_matrix((-np.ones(len(at_u)), (at_u, np.arange(len(at_u)))), shape=(n, len(at_u)))]
    free = ~sv.fixed
    A = sp.hstack(cols).tocsr()[free]
    g = ev.grad[free]
    if A.shape[0] * A.shape[1] > 2e7:
        return math.inf
    lam = np.linalg.lstsq(A.toarray(), g, rcond=None)[0]
    if np.any(lam[sv.p.n_eq:] < -tol_kkt):
        return math.inf
    return float(np.max(np.abs(g - A @ lam), initial=0.0))


def solve(problem, x0, settings: SolveSettings | None = None, duals: dict | None = None) -> SolveResult:
    """Run at most ``settings.max_iters`` Newton steps of the augmented
    Lagrangian method on ``problem`` from ``x0``."""
    st = settings or SolveSettings()
    p = problem
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (p.n,):
        from .mpcc import LayoutMismatch
        raise LayoutMismatch(f"x0 has shape {x0.shape}, problem expects ({p.n},)")
    sv = _Solver(p, st)
    stats = SolveStats()
    rc_min = st.comp_relaxation_min
    # a point that already satisfies the final KKT conditions is returned as is
    xc = sv.clip(x0)
    ev0 = p.evaluate(xc)
    _check_finite(ev0.grad, ev0.c_eq, ev0.c_in, ev0.cc, [ev0.f])
    kkt0 = _initial_kkt(sv, xc, ev0, st.tol_kkt, st.tol_feas, rc_min)
    if kkt0 <= st.tol_kkt:
        stats.kkt, stats.feasibility = kkt0, float(np.max(violation(ev0, rc_min), initial=0.0))
        stats.relaxation, stats.penalty = rc_min, st.penalty_init
        return SolveResult(Status.CONVERGED, xc, stats, {"lam_e": np.zeros(p.n_eq), "relax": rc_min})

    rho = st.penalty_init
    rc = st.comp_relaxation_init
    mu = st.barrier_init
    m = p.n_in + p.n_cc
    lam_e = np.zeros(p.n_eq)
    lam_r = np.zeros(m)
    if duals:
        if duals.get("lam_e") is not None and len(duals["lam_e"]) == p.n_eq:
            lam_e = np.array(duals["lam_e"], dtype=float)
        if duals.get("rho") is not None:
            rho = float(duals["rho"])
    pt = sv.new_point(x0, rc, mu, st.bound_push)
    omega = max(1.0 / rho, st.tol_kkt)
    eta = max(1.0 / rho ** 0.1, st.tol_feas)
    best = None
    status = Status.ITER_LIMIT
    while True:
        al = {"lam_e": lam_e, "lam_r": lam_r, "rho": rho, "mu": mu, "obj": 1.0}
        budget = st.max_iters - sv.iters
        pt, err, used = sv.inner(pt, al, max(omega, 10 * mu), max(budget, 0), rc)
        stats.major_iterations += 1
        ev = pt.ev
        V = float(max(np.max(np.abs(ev.c_eq), initial=0.0), np.max(np.abs(pt.c_r - pt.s), initial=0.0)))
        Vtrue = float(np.max(violation(ev, rc), initial=0.0))
        merit = ev.f + 1e3 * float(np.sum(violation(ev, 0.0)))
        if best is None or merit < best[0]:
            best = (merit, pt.x.copy(), err, Vtrue)
        inner_done = err <= max(omega, 10 * mu)
        if V <= eta:
            lam_e = lam_e - rho * ev.c_eq
            lam_r = lam_r - rho * (pt.c_r - pt.s)
            if (Vtrue <= st.tol_feas and err <= st.tol_kkt + 10 * mu and rc <= rc_min
                    and mu <= st.barrier_min):
                status = Status.CONVERGED
                best = (merit, pt.x.copy(), err, Vtrue)
                break
            eta = max(eta / rho ** 0.9, st.tol_feas)
            omega = max(omega / rho, st.tol_kkt)
            if inner_done:
                mu = max(st.barrier_min, min(0.2 * mu, mu ** 1.5))
                if rc > rc_min:
                    rc = max(rc * st.comp_relaxation_shrink, rc_min)
                    pt = sv.with_relaxation(pt, rc, mu)
        else:
            if rho >= st.penalty_max:
                ptr, l1, stationary = sv.restoration(pt, rc, mu)
                if stationary and l1 > st.infeasible_l1:
                    status = Status.INFEASIBLE
                    best = (math.inf, ptr.x.copy(), err, l1)
                    break
                if inner_done and used == 0:
                    break
            rho = min(rho * st.penalty_growth, st.penalty_max)
            eta = max(1.0 / rho ** 0.1, st.tol_feas)
            omega = max(1.0 / rho, st.tol_kkt)
        if sv.iters >= st.max_iters or sv.out_of_time():
            break
        if used == 0 and not inner_done:
            # line search failure at fixed parameters: tighten and retry
            if rho >= st.penalty_max:
                break
            rho = min(rho * st.penalty_growth, st.penalty_max)
    _, xb, err_b, Vb = best
    xb = sv.clip(xb)
    stats.iterations = sv.iters
    stats.kkt = float(err_b)
    stats.feasibility = float(Vb)
    stats.relaxation = rc
    stats.penalty = rho
    return SolveResult(status, xb, stats, {"lam_e": lam_e, "lam_r": lam_r, "relax": rc, "rho": rho})


def write_log_csv(log: list, path) -> None:
    keys = ["step", "inner", "merit", "feas", "rho", "relax", "mu", "kkt", "alpha", "delta"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for row in log:
            w.writerow(row)
