"""Multi-modal manipulation planner: T-RRT-style tree growth over SE(2) with
STOCS as the steering function, a statics stability test gating regrasps,
manipulation-mode sampling and a temperature-adapted transition test."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .contact import FIXED_POINTS, ONE_POINT_SLIDE, ManipulationMode
from .geometry import Pose2, rot, stable_poses, wrap_angle
from .mpcc import Evaluation
from . import nlp, trajopt
from .verify import verify_result

CONTACT_TOL = 1e-3      # gap below which a boundary point counts as touching
STABLE_TOL = 1e-4       # l1 wrench residual accepted as balanced
GRID = 1e-4             # stability cache quantization
ANGLE_TOL = 1e-3        # grasp admissibility
MIN_PROGRESS = 1e-4     # an extension must move the object at least this much

FOUND = "Found"
NOT_FOUND = "NotFound"


class NoAdmissibleMode(ValueError):
    pass


class UnstableStart(ValueError):
    pass


@dataclass
class PlannerSettings:
    p1: float = 0.5
    p2: float = 0.3
    w1: float = 1.0
    w2: float = 1.0
    W: float = 5.0
    c_max: float = 2.0
    max_extensions: int = 500
    goal_tol: float = 0.02
    temperature_init: float = 0.1
    temp_rate: float = 2.0
    n_fail_max: int = 5
    rng_seed: int = 0
    T: int = 5
    dt: float = 0.1
    n_max: int = 10
    max_samples: int | None = None   # cap on drawn samples, default 50 * max_extensions

    def __post_init__(self):
        if self.p1 < 0 or self.p2 < 0 or self.p1 + self.p2 > 1 + 1e-12:
            raise ValueError("need p1, p2 >= 0 and p1 + p2 <= 1")
        for k in ("w1", "w2"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        for k in ("W", "c_max", "goal_tol", "temperature_init", "dt"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be > 0")
        if not self.temp_rate > 1:
            raise ValueError("temp_rate must be > 1")
        if self.max_extensions < 0 or self.n_fail_max < 1 or self.T < 1 or self.n_max < 1:
            raise ValueError("max_extensions >= 0, n_fail_max >= 1, T >= 1, n_max >= 1 required")


@dataclass
class TreeNode:
    id: int
    q: Pose2
    parent: int | None = None
    incoming_mode: ManipulationMode | None = None
    incoming_trajectory: object = None   # StocsResult
    cost: float = 0.0


@dataclass
class Temperature:
    value: float
    n_fail: int = 0


@dataclass
class PlanStats:
    stocs_calls: int = 0
    samples: int = 0
    transition_rejects: int = 0
    mode_skips: int = 0
    failed_extensions: int = 0
    wall_time: float = 0.0


@dataclass
class PlanResult:
    status: str
    tree: list
    path: list | None
    stats: PlanStats = field(default_factory=PlanStats)

    @property
    def path_nodes(self) -> int:
        return len(self.path) if self.path else 0


# ---------------------------------------------------------------- metric
def se2_distance(q1, q2, w1: float = 1.0, w2: float = 1.0) -> float:
    a = q1.as_array() if isinstance(q1, Pose2) else np.asarray(q1, dtype=float)
    b = q2.as_array() if isinstance(q2, Pose2) else np.asarray(q2, dtype=float)
    d = abs(a[2] - b[2]) % (2 * math.pi)
    dth = min(d, 2 * math.pi - d)
    return math.sqrt(w1 * ((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) + w2 * dth ** 2)


def nearest(tree: list, q, w1: float = 1.0, w2: float = 1.0) -> TreeNode:
    """Nearest node; ties go to the oldest node."""
    best, bd = None, math.inf
    for nd in tree:
        d = se2_distance(nd.q, q, w1, w2)
        if d < bd:
            best, bd = nd, d
    return best


# ---------------------------------------------------------------- sampling
def _sample(settings: PlannerSettings, rng, stable_angles, q_goal, bounds):
    """(pose, branch) with branch in {"uniform", "stable", "goal"}."""
    r = rng.random()
    x0, x1, y0, y1 = bounds.workspace
    if r < settings.p1:
        return Pose2(rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-math.pi, math.pi)), "uniform"
    if r < settings.p1 + settings.p2:
        th = stable_angles[int(rng.integers(len(stable_angles)))]
        return Pose2(rng.uniform(x0, x1), rng.uniform(y0, y1), th), "stable"
    return q_goal if isinstance(q_goal, Pose2) else Pose2.from_array(q_goal), "goal"


def sample_configuration(settings: PlannerSettings, rng, stable_angles, q_goal, bounds) -> Pose2:
    return _sample(settings, rng, stable_angles, q_goal, bounds)[0]


def transition_test(q_parent, q_ideal, q_goal, temp: Temperature, settings: PlannerSettings, rng) -> bool:
    w1, w2 = settings.w1, settings.w2
    c_ideal = se2_distance(q_ideal, q_goal, w1, w2)
    if c_ideal > settings.c_max:
        return False
    c_parent = se2_distance(q_parent, q_goal, w1, w2)
    d = se2_distance(q_parent, q_ideal, w1, w2)
    dc = c_ideal - c_parent
    if d > 0:
        dc /= d
    if dc <= 0:
        return True
    K = 0.5 * (c_ideal + c_parent)
    p = math.exp(-dc / (K * temp.value)) if K * temp.value > 0 else 0.0
    if rng.random() < p:
        temp.value /= settings.temp_rate
        temp.n_fail = 0
        return True
    temp.n_fail += 1
    if temp.n_fail >= settings.n_fail_max:
        temp.value *= settings.temp_rate
        temp.n_fail = 0
    return False


# ---------------------------------------------------------------- statics
def contact_points(obj, env, q, tol: float = CONTACT_TOL) -> np.ndarray:
    """Boundary indices touching the environment at q, in oracle order.

    The max-violation oracle at a fixed pose, applied repeatedly to the
    points not yet selected, returns boundary points by increasing gap
    (ties to the lowest index); its fixed point within the contact band is
    this list."""
    qa = q.as_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float)
    g = env.gap_table(qa[None], obj.boundary_points)[0]
    order = np.argsort(g, kind="stable")
    return order[g[order] <= tol]


class StaticProblem:
    """One-step, zero-motion statics: environment forces only, q fixed.

    With zero velocity the sliding pairs are satisfied by a zero slack, so
    the remaining conditions are the friction cones at the touching points
    and wrench balance.  Balance is posed as a least-squares objective so
    the solve always terminates at the closest wrench."""

    def __init__(self, obj, env, q, idx, gravity: float = 9.8, reg: float = 1e-9, force_max: float = 100.0):
        qa = q.as_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float)
        N = len(idx)
        R = rot(qa[2])
        P = obj.boundary_points[idx]
        w = qa[:2] + P @ R.T
        _, n, _ = env.query(w)
        tau = np.stack([n[:, 1], -n[:, 0]], axis=1)
        r = (P - obj.com) @ R.T
        A = np.zeros((3, 3 * N))
        for i in range(N):
            for k, d in enumerate((n[i], tau[i], -tau[i])):
                A[:2, 3 * i + k] = d
                A[2, 3 * i + k] = r[i, 0] * d[1] - r[i, 1] * d[0]
        self.A = A
        self.b = np.array([0.0, -obj.mass * gravity, 0.0])
        C = np.zeros((N, 3 * N))
        for i in range(N):
            C[i, 3 * i:3 * i + 3] = (obj.mu_env, -1.0, -1.0)
        self.C = sp.csr_matrix(C)
        self.reg = reg
        self.n = 3 * N
        self.lb = np.zeros(self.n)
        self.ub = np.full(self.n, force_max)
        self.n_eq, self.n_in, self.n_cc = 0, N, 0
        self._H = sp.csr_matrix(A.T @ A + 2 * reg * np.eye(self.n))

    def residual(self, x):
        return self.A @ x + self.b

    def evaluate(self, x, need_jac: bool = True) -> Evaluation:
        r = self.residual(x)
        f = 0.5 * float(r @ r) + self.reg * float(x @ x)
        g = self.A.T @ r + 2 * self.reg * x
        e = sp.csr_matrix((0, self.n))
        return Evaluation(f, g, np.zeros(0), e, self.C @ x, self.C, np.zeros(0), e)

    def hessian(self, x, w_eq, w_in, w_cc, obj_scale: float = 1.0):
        return obj_scale * self._H


def stability_test(obj, env, q, gravity: float = 9.8, cache: dict | None = None,
                   contact_tol: float = CONTACT_TOL, tol: float = STABLE_TOL) -> bool:
    """True when the environment alone can hold the object at q."""
    qa = q.as_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float)
    key = None
    if cache is not None:
        key = tuple(int(v) for v in np.round(qa / GRID))
        if key in cache:
            return cache[key]
    g = env.gap_table(qa[None], obj.boundary_points)[0]
    if g.min() < -contact_tol:
        ok = False
    else:
        idx = contact_points(obj, env, qa, contact_tol)
        ok = False
        if len(idx):
            prob = StaticProblem(obj, env, qa, idx, gravity)
            x0 = np.zeros(prob.n)
            x0[0::3] = obj.mass * gravity / len(idx)
            res = nlp.solve(prob, x0, nlp.SolveSettings(max_iters=200))
            x = res.x_star
            cone = float(np.max(-(prob.C @ x), initial=0.0))
            ok = bool(np.sum(np.abs(prob.residual(x))) <= tol and cone <= tol)
    if cache is not None:
        cache[key] = ok
    return ok


# ---------------------------------------------------------------- modes
def _touching(obj, env, q, pts, tol):
    qa = q.as_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float)
    g = env.gap_table(qa[None], np.asarray(pts, dtype=float).reshape(-1, 2))[0]
    return g <= tol


def mode_admissible(obj, env, q, mode: ManipulationMode, contact_tol: float = CONTACT_TOL) -> bool:
    qa = q.as_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float)
    mode.bind(obj)
    if mode.kind == FIXED_POINTS:
        if mode.admissible_angles is not None:
            d = [abs(wrap_angle(qa[2] - a)) for a in mode.admissible_angles]
            if min(d) > ANGLE_TOL:
                return False
        return not np.any(_touching(obj, env, qa, mode.points, contact_tol))
    a, b = mode.face
    # interior samples: a face merely touching at a corner is still free
    s = np.linspace(0.0, 1.0, 13)[1:-1]
    pts = a[None] + s[:, None] * (b - a)[None]
    if np.any(_touching(obj, env, qa, pts, contact_tol)):
        return False
    if mode.admissible_angles is not None:
        d = [abs(wrap_angle(qa[2] - ang)) for ang in mode.admissible_angles]
        return min(d) <= ANGLE_TOL
    return True


def sample_mode(obj, env, q, modes, rng, contact_tol: float = CONTACT_TOL) -> ManipulationMode:
    ok = [m for m in modes if mode_admissible(obj, env, q, m, contact_tol)]
    if not ok:
        raise NoAdmissibleMode("no manipulation mode is admissible at this pose")
    return ok[int(rng.integers(len(ok)))]


# ---------------------------------------------------------------- planning
def _path(tree, leaf):
    out = []
    nd = leaf
    while nd is not None:
        out.append(nd.id)
        nd = tree[nd.parent] if nd.parent is not None else None
    return out[::-1]


def plan(scenario, q_init=None, q_goal=None, settings: PlannerSettings | None = None,
         log=None) -> PlanResult:
    st = settings or PlannerSettings()
    t0 = time.perf_counter()
    obj, env = scenario.object, scenario.environment
    q_init = q_init if q_init is not None else scenario.q_init
    q_goal = q_goal if q_goal is not None else scenario.q_goal
    q_init = q_init if isinstance(q_init, Pose2) else Pose2.from_array(q_init)
    q_goal = q_goal if isinstance(q_goal, Pose2) else Pose2.from_array(q_goal)
    gravity = getattr(scenario, "gravity", 9.8)
    bounds = scenario.bounds
    rng = np.random.default_rng(st.rng_seed)
    cache: dict = {}
    stats = PlanStats()
    root = TreeNode(0, q_init, cost=se2_distance(q_init, q_goal, st.w1, st.w2))
    tree = [root]
    if se2_distance(q_init, q_goal, 1.0, 1.0) <= st.goal_tol:
        stats.wall_time = time.perf_counter() - t0
        return PlanResult(FOUND, tree, [0], stats)
    if not stability_test(obj, env, q_init, gravity, cache):
        raise UnstableStart("q_init is not statically stable")
    stable_angles = [th for th, _ in stable_poses(obj, env)]
    temp = Temperature(st.temperature_init)
    max_samples = st.max_samples if st.max_samples is not None else 50 * max(st.max_extensions, 1)
    while stats.stocs_calls < st.max_extensions and stats.samples < max_samples:
        q_ideal, branch = _sample(st, rng, stable_angles, q_goal, bounds)
        stats.samples += 1
        parent = nearest(tree, q_ideal, 1.0, 1.0)
        if not transition_test(parent.q, q_ideal, q_goal, temp, st, rng):
            stats.transition_rejects += 1
            continue
        if parent.parent is None or stability_test(obj, env, parent.q, gravity, cache):
            try:
                mode = sample_mode(obj, env, parent.q, scenario.modes, rng)
            except NoAdmissibleMode:
                stats.mode_skips += 1
                continue
        else:
            mode = parent.incoming_mode
        w1 = 0.0 if branch == "stable" else 1.0
        ss = trajopt.StocsSettings(n_max=st.n_max, T=st.T, dt=st.dt, weights=(w1, 1.0, st.W))
        res = trajopt.run(scenario, mode, parent.q, q_ideal, ss)
        stats.stocs_calls += 1
        ok = res.status == trajopt.CONVERGED
        if not ok and res.status == trajopt.NOT_CONVERGED and res.raw is not None:
            ok = verify_result(res, scenario, mode).ok
        q_new = Pose2.from_array(res.raw.q[-1]) if res.raw is not None else parent.q
        moved = se2_distance(q_new, parent.q, 1.0, 1.0) > MIN_PROGRESS
        if log is not None:
            log({"call": stats.stocs_calls, "branch": branch, "parent": parent.id, "mode": mode.name,
                 "status": res.status, "accepted": bool(ok and moved), "q_new": q_new.as_array().tolist()})
        if not (ok and moved):
            stats.failed_extensions += 1
            continue
        nd = TreeNode(len(tree), q_new, parent.id, mode, res, se2_distance(q_new, q_goal, st.w1, st.w2))
        tree.append(nd)
        if se2_distance(q_new, q_goal, 1.0, 1.0) <= st.goal_tol:
            stats.wall_time = time.perf_counter() - t0
            return PlanResult(FOUND, tree, _path(tree, nd), stats)
    stats.wall_time = time.perf_counter() - t0
    return PlanResult(NOT_FOUND, tree, None, stats)
