"""STOCS outer loop: exchange-method trajectory optimization over a growing
set of object boundary index points."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .contact import ONE_POINT_SLIDE, ContactForce, ControlInput, IndexPoint, ManipulationMode
from .geometry import Pose2, Twist2, wrap_angle
from .mpcc import Bounds, IndexSet, MpccProblem, Trajectory
from . import nlp

CONVERGED = "Converged"
INFEASIBLE = "Infeasible"
NOT_CONVERGED = "NotConverged"
RESOURCE_LIMIT = "ResourceLimit"

TIE_TOL = 1e-12


def default_schedule(k: int) -> int:
    return min(30 + 10 * k, 200)


@dataclass
class StocsSettings:
    n_max: int = 100
    eps_x: float = 1e-4
    eps_gap: float = 1e-4
    eps_s: float = 1e-4
    eps_p: float = 1e-4
    s_schedule: Callable[[int], int] = default_schedule
    n_ls_max: int = 20
    merit_mu: float = 1e3
    ls_shrink: float = 0.5
    T: int = 20
    dt: float = 0.1
    weights: tuple = (1.0, 1.0, 5.0)
    warm_duals: bool = True

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        for k in ("eps_x", "eps_gap", "eps_s", "eps_p", "merit_mu", "dt"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be > 0")
        if not 0 < self.ls_shrink < 1:
            raise ValueError("ls_shrink must be in (0, 1)")
        if self.T < 1:
            raise ValueError("T must be >= 1")


@dataclass
class TrajectoryState:
    q: Pose2
    qdot: Twist2
    u: ControlInput | None
    contacts: list   # (IndexPoint, ContactForce, slack)


@dataclass
class StocsStats:
    outer_iters: int = 0
    avg_index_points: float = 0.0
    wall_time: float = 0.0
    newton_iters: int = 0


@dataclass
class StocsResult:
    status: str
    trajectory: list
    index_set: IndexSet
    stats: StocsStats
    raw: Trajectory | None = None
    problem: MpccProblem | None = None
    trace: list = field(default_factory=list)


def initialize_trajectory(q_start, q_goal, mode: ManipulationMode | None, T: int, dt: float) -> Trajectory:
    """Straight-line initial guess with no contact points instantiated."""
    qs = _arr(q_start)
    qg = _arr(q_goal)
    d = qg - qs
    d[2] = wrap_angle(d[2])
    s = np.linspace(0.0, 1.0, T + 1)[:, None]
    q = qs + s * d
    qd = np.diff(q, axis=0) / dt
    m_u = 0 if mode is None else mode.n_controls
    u = np.zeros((T, m_u))
    if mode is not None and mode.kind == ONE_POINT_SLIDE:
        u[:, 0] = 0.5
    return Trajectory(q, qd, u, np.zeros((T, 0, 3)), np.zeros((T, 0)))


def _arr(q):
    return q.as_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float).reshape(3).copy()


def _world_points(poses, P):
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    x = poses[:, None, 0] + c[:, None] * P[None, :, 0] - s[:, None] * P[None, :, 1]
    y = poses[:, None, 1] + s[:, None] * P[None, :, 0] + c[:, None] * P[None, :, 1]
    return x, y


def max_violation_oracle(obj, env, poses, index_set: IndexSet | None = None) -> list:
    """Per-step closest/deepest boundary point, as new IndexPoints.

    Ties within 1e-12 m go to the lowest boundary index; candidates already
    in ``index_set`` (or already picked at an earlier step) are dropped.
    """
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    G = env.gap_table(poses, obj.boundary_points)
    seen = index_set.copy() if index_set is not None else IndexSet()
    out = []
    for t in range(len(poses)):
        g = G[t]
        j = int(np.flatnonzero(g <= g.min() + TIE_TOL)[0])
        p = IndexPoint(j, tuple(obj.boundary_points[j]))
        if seen.add(p):
            out.append(p)
    return out


def max_penetration(obj, env, poses) -> np.ndarray:
    """g*-(q) per pose: depth of the deepest boundary point (0 if none)."""
    G = env.gap_table(np.asarray(poses, dtype=float).reshape(-1, 3), obj.boundary_points)
    return np.maximum(-G.min(axis=1), 0.0)


def violation_vector(problem: MpccProblem, x) -> np.ndarray:
    """b(x): instantiated violations plus the exhaustive penetration term."""
    ev = problem.evaluate(x, need_jac=False)
    tr = problem.unpack(x)
    gstar = max_penetration(problem.obj, problem.env, tr.q[1:])
    return np.concatenate([nlp.violation(ev, 0.0), gstar])


def merit(problem: MpccProblem, x, mu: float = 1e3) -> float:
    ev = problem.evaluate(x, need_jac=False)
    return float(ev.f + mu * np.sum(violation_vector(problem, x)))


def line_search(problem: MpccProblem, x_prev, dx, st: StocsSettings):
    """Backtracking on the merit: alpha = 1, 1/2, ... for at most n_ls_max
    trials, first alpha without merit increase wins.  A failed search is a
    null step: x unchanged, alpha 0 and so a zero step length.

    Returns (x, merit, alpha, step length, merit at x_prev)."""
    m0 = merit(problem, x_prev, st.merit_mu)
    alpha = 1.0
    for _ in range(st.n_ls_max):
        xt = x_prev + alpha * dx
        m1 = merit(problem, xt, st.merit_mu)
        if m1 <= m0 + 1e-12:
            return xt, m1, alpha, alpha * float(np.linalg.norm(dx)), m0
        alpha *= st.ls_shrink
    return x_prev, m0, 0.0, 0.0, m0


def _grow(tr: Trajectory, old: IndexSet, new: IndexSet, problem_like) -> Trajectory:
    """Carry forces of existing points; new points get zero force and a
    sliding slack equal to their tangential speed."""
    T = tr.T
    N = len(new)
    z = np.zeros((T, N, 3))
    g = np.zeros((T, N))
    nold = len(old)
    z[:, :nold] = tr.z
    g[:, :nold] = tr.gamma
    out = Trajectory(tr.q.copy(), tr.qd.copy(), tr.u.copy(), z, g)
    if N > nold:
        v = problem_like.slip_velocity(out)[:, nold:]
        out.gamma[:, nold:] = np.abs(v)
    return out


def project_dynamics(problem: MpccProblem, x) -> np.ndarray:
    """Make the discrete dynamics hold exactly by recomputing velocities."""
    L = problem.layout
    x = np.array(x, dtype=float)
    q = x[L.q]
    x[L.qd] = np.diff(q, axis=0) / problem.dt
    return x


def residuals(problem: MpccProblem, x) -> dict:
    """Convergence residuals of an iterate (instantiated pairs, all-point penetration)."""
    ev = problem.evaluate(x, need_jac=False)
    tr = problem.unpack(x)
    bal = np.abs(ev.c_eq[problem.n_dyn:]).reshape(problem.T, 3).sum(axis=1)
    pen = max_penetration(problem.obj, problem.env, tr.q[1:])
    return {
        "comp": float(np.sum(np.abs(ev.cc))),
        "balance": float(bal.max(initial=0.0)),
        "penetration": float(pen.max(initial=0.0)),
        "ineq": float(np.max(-ev.c_in, initial=0.0)),
        "dynamics": float(np.max(np.abs(ev.c_eq[:problem.n_dyn]), initial=0.0)),
    }


def to_states(problem: MpccProblem, x) -> list:
    tr = problem.unpack(x)
    ys = list(problem.index_set)
    out = []
    for t in range(problem.T + 1):
        if t < problem.T:
            u = ControlInput.from_vector(tr.u[t], problem.mode) if problem.mode is not None else None
            cont = [(y, ContactForce(*tr.z[t, i]), float(tr.gamma[t, i])) for i, y in enumerate(ys)]
            out.append(TrajectoryState(Pose2.from_array(tr.q[t]), Twist2(*tr.qd[t]), u, cont))
        else:
            out.append(TrajectoryState(Pose2.from_array(tr.q[t]), Twist2(), None, []))
    return out


def _make_problem(scenario, mode, q_start, q_goal, Y, settings: StocsSettings, bounds=None):
    return MpccProblem(scenario.object, scenario.environment, mode, q_start, q_goal, Y,
                       settings.T, settings.dt, weights=settings.weights,
                       bounds=bounds or getattr(scenario, "bounds", None),
                       gravity=getattr(scenario, "gravity", 9.8))


def run(scenario, mode, q_start, q_goal, settings: StocsSettings | None = None,
        solver: nlp.SolveSettings | None = None, bounds: Bounds | None = None) -> StocsResult:
    """Alternate oracle index-set growth with budgeted MPCC solves and a
    merit line search until the convergence tests pass."""
    st = settings or StocsSettings()
    t0 = time.perf_counter()
    obj, env = scenario.object, scenario.environment
    qs, qg = _arr(q_start), _arr(q_goal)
    tr = initialize_trajectory(qs, qg, mode, st.T, st.dt)
    Y = IndexSet()
    sizes = []
    trace = []
    duals = None
    newton = 0
    prob = None
    status = NOT_CONVERGED
    for k in range(1, st.n_max + 1):
        new = max_violation_oracle(obj, env, tr.q, Y)
        Y_next = Y.copy()
        for p in new:
            Y_next.add(p)
        prob = _make_problem(scenario, mode, qs, qg, Y_next, st, bounds)
        tr = _grow(tr, Y, Y_next, prob)
        Y = Y_next
        sizes.append(len(Y))
        x_prev = prob.pack(tr)
        x_prev = np.clip(x_prev, prob.lb, prob.ub)
        ss = nlp.SolveSettings(max_iters=st.s_schedule(k)) if solver is None else \
            nlp.SolveSettings(**{**solver.__dict__, "max_iters": st.s_schedule(k)})
        try:
            res = nlp.solve(prob, x_prev, ss, duals=duals if st.warm_duals else None)
        except nlp.NumericalBreakdown:
            status = INFEASIBLE
            break
        newton += res.stats.iterations
        if res.status == nlp.Status.INFEASIBLE:
            status = INFEASIBLE
            trace.append({"k": k, "n_index": len(Y), "merit": math.nan, "alpha": 0.0, "nlp": res.status.value,
                          "newton": res.stats.iterations})
            break
        duals = {"lam_e": res.duals["lam_e"]}
        x_new = project_dynamics(prob, res.x_star)
        dx = x_new - x_prev
        x, m1, alpha, step, m0 = line_search(prob, x_prev, dx, st)
        tr = prob.unpack(x)
        r = residuals(prob, x)
        rec = {"k": k, "n_index": len(Y), "merit_prev": m0, "merit": m1, "alpha": alpha, "step": step,
               "nlp": res.status.value, "newton": res.stats.iterations, **r}
        trace.append(rec)
        if (step <= st.eps_x * prob.n and r["comp"] <= st.eps_gap * max(prob.n_cc, 1)
                and r["balance"] <= st.eps_s and r["penetration"] <= st.eps_p and r["ineq"] <= st.eps_p):
            status = CONVERGED
            break
    stats = StocsStats(outer_iters=len(sizes), avg_index_points=float(np.mean(sizes)) if sizes else 0.0,
                       wall_time=time.perf_counter() - t0, newton_iters=newton)
    x = prob.pack(tr) if prob is not None else None
    states = to_states(prob, x) if prob is not None else []
    return StocsResult(status, states, Y, stats, tr, prob, trace)


def run_vanilla(scenario, mode, q_start, q_goal, settings: StocsSettings | None = None,
                max_iters: int = 5000, time_limit: float | None = None, mem_limit: float | None = None,
                solver: nlp.SolveSettings | None = None, bounds: Bounds | None = None) -> StocsResult:
    """Baseline: one solve with every boundary point instantiated."""
    st = settings or StocsSettings()
    t0 = time.perf_counter()
    obj = scenario.object
    qs, qg = _arr(q_start), _arr(q_goal)
    Y = IndexSet([IndexPoint(i, tuple(p)) for i, p in enumerate(obj.boundary_points)])
    prob = _make_problem(scenario, mode, qs, qg, Y, st, bounds)
    tr = _grow(initialize_trajectory(qs, qg, mode, st.T, st.dt), IndexSet(), Y, prob)
    x0 = np.clip(prob.pack(tr), prob.lb, prob.ub)
    base = solver.__dict__ if solver is not None else {}
    ss = nlp.SolveSettings(**{**base, "max_iters": max_iters, "mem_limit": mem_limit,
                              "deadline": None if time_limit is None else t0 + time_limit})
    status = NOT_CONVERGED
    x = x0
    newton = 0
    try:
        res = nlp.solve(prob, x0, ss)
        newton = res.stats.iterations
        x = project_dynamics(prob, res.x_star)
        if res.status == nlp.Status.INFEASIBLE:
            status = INFEASIBLE
        elif res.status == nlp.Status.CONVERGED:
            r = residuals(prob, x)
            ok = (r["comp"] <= st.eps_gap * prob.n_cc and r["balance"] <= st.eps_s
                  and r["penetration"] <= st.eps_p)
            status = CONVERGED if ok else NOT_CONVERGED
        elif time_limit is not None and time.perf_counter() - t0 >= time_limit:
            status = RESOURCE_LIMIT
    except nlp.ResourceLimit:
        status = RESOURCE_LIMIT
    except nlp.NumericalBreakdown:
        status = INFEASIBLE
    stats = StocsStats(outer_iters=1, avg_index_points=float(len(Y)),
                       wall_time=time.perf_counter() - t0, newton_iters=newton)
    return StocsResult(status, to_states(prob, x), Y, stats, prob.unpack(x), prob, [])
