"""Finite MPCC over a horizon of T quasi-static steps for a given index set.

Decision vector layout (step-major so the Lagrangian Hessian is banded)::

    for t in 0..T-1:  q_t(3) qd_t(3) u_t(m_u) [zn zp zm gamma] x N
    then:             q_T(3)

Equalities: Euler dynamics q_t + dt*qd_t - q_{t+1} = 0 and wrench balance
per step.  The initial pose is pinned through equal bounds.  Inequalities
(all ``>= 0``): gaps, sliding pairs gamma +/- v_t, friction cones, gaps at
q_T, manipulator friction cones, manipulator clearance and the per-step
slide rate bound.  Complementarity pairs (variable, inequality row):
(zn, gap), (zp, gamma + v), (zm, gamma - v), (gamma, friction cone).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .contact import FIXED_POINTS, GRAVITY, ONE_POINT_SLIDE, IndexPoint, ManipulationMode, ModeInactive
from .geometry import EnvironmentModel, ObjectModel, Pose2, wrap_angle

REGULARIZER = 1e-4
DEDUPE_TOL = 1e-6


class InvalidMode(ValueError):
    pass


class LayoutMismatch(ValueError):
    pass


@dataclass
class Bounds:
    """Box bounds of the decision variables (SI units)."""

    workspace: tuple = (-2.0, 2.0, -1.0, 2.0)
    theta_limit: float = 4 * math.pi
    velocity: tuple = (1.0, 1.0, math.pi)
    force_max: float = 100.0
    slack_max: float = 10.0
    finger_clearance: float = 0.0


class IndexSet:
    """Ordered, deduplicated, append-only set of index points."""

    def __init__(self, points=()):
        self.points: list[IndexPoint] = []
        for p in points:
            self.add(p)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def contains(self, local, tol: float = DEDUPE_TOL) -> bool:
        return any(abs(p.local[0] - local[0]) <= tol and abs(p.local[1] - local[1]) <= tol
                   for p in self.points)

    def add(self, p: IndexPoint) -> bool:
        if self.contains(p.local):
            return False
        self.points.append(p)
        return True

    def ids(self):
        return [p.id for p in self.points]

    def local_array(self) -> np.ndarray:
        return np.array([p.local for p in self.points], dtype=float).reshape(-1, 2)

    def copy(self) -> "IndexSet":
        s = IndexSet()
        s.points = list(self.points)
        return s


@dataclass
class Trajectory:
    """Structured view of a decision vector."""

    q: np.ndarray       # (T+1, 3)
    qd: np.ndarray      # (T, 3)
    u: np.ndarray       # (T, m_u)
    z: np.ndarray       # (T, N, 3)
    gamma: np.ndarray   # (T, N)

    @property
    def T(self):
        return self.qd.shape[0]

    def copy(self):
        return Trajectory(self.q.copy(), self.qd.copy(), self.u.copy(), self.z.copy(), self.gamma.copy())


class Layout:
    def __init__(self, T: int, N: int, m_u: int):
        self.T, self.N, self.m_u = T, N, m_u
        self.B = B = 6 + m_u + 4 * N
        self.n = T * B + 3
        base = np.arange(T)[:, None] * B
        self.q = np.vstack([base + np.arange(3), T * B + np.arange(3)[None]])
        self.qd = base + 3 + np.arange(3)
        self.u = base + 6 + np.arange(m_u)
        zoff = 6 + m_u + 4 * np.arange(N)
        self.z = base[:, :, None] + zoff[None, :, None] + np.arange(3)[None, None, :]
        self.gamma = base + zoff[None, :] + 3
        # Hessian color of every variable: offset inside the step for step
        # globals, 6 + m_u + k for the k-th per-point variable.
        color = np.empty(self.n, dtype=np.int64)
        loc = np.arange(T * B) % B
        color[:T * B] = np.where(loc < 6 + m_u, loc, 6 + m_u + (loc - 6 - m_u) % 4)
        color[T * B:] = np.arange(3)
        self.color = color
        self.n_colors = 6 + m_u + 4

    def pack(self, tr: Trajectory) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.q] = tr.q
        x[self.qd] = tr.qd
        x[self.u] = tr.u
        x[self.z] = tr.z
        x[self.gamma] = tr.gamma
        return x

    def unpack(self, x) -> Trajectory:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise LayoutMismatch(f"decision vector has shape {x.shape}, layout expects ({self.n},)")
        return Trajectory(x[self.q].copy(), x[self.qd].copy(), x[self.u].copy(),
                          x[self.z].copy(), x[self.gamma].copy())


def layout_counts(T: int, N: int, mode: ManipulationMode | None) -> dict:
    """Closed-form problem size for (T, |Y|, mode)."""
    m_u = 0 if mode is None else mode.n_controls
    k = 0 if mode is None else mode.n_contacts
    slide = mode is not None and mode.kind == ONE_POINT_SLIDE
    return {
        "n_var": T * (6 + m_u + 4 * N) + 3,
        "n_eq": 6 * T,
        "n_in": 4 * T * N + N + 3 * T * k + (2 * (T - 1) if slide else 0),
        "n_cc": 4 * T * N,
    }


@dataclass
class Evaluation:
    f: float
    grad: np.ndarray
    c_eq: np.ndarray
    J_eq: sp.csr_matrix
    c_in: np.ndarray
    J_in: sp.csr_matrix
    cc: np.ndarray
    J_cc: sp.csr_matrix


class _Triplets:
    """Fixed-pattern sparse Jacobian builder: blocks of (rows, cols) are
    registered once; values arrive in the same order on every evaluation."""

    def __init__(self):
        self.rows, self.cols = [], []

    def add(self, rows, cols):
        r, c = np.broadcast_arrays(np.asarray(rows), np.asarray(cols))
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())

    def finish(self):
        self.rows = np.concatenate(self.rows) if self.rows else np.zeros(0, dtype=np.int64)
        self.cols = np.concatenate(self.cols) if self.cols else np.zeros(0, dtype=np.int64)


class MpccProblem:
    """P(Y~): the instantiated complementarity-constrained trajectory problem."""

    def __init__(self, obj: ObjectModel, env: EnvironmentModel, mode: ManipulationMode | None,
                 q_start, q_goal, index_set: IndexSet, T: int, dt: float,
                 weights=(1.0, 1.0, 5.0), bounds: Bounds | None = None,
                 gravity: float = GRAVITY, regularizer: float = REGULARIZER, static: bool = False,
                 pattern: bool = True):
        if T < 1:
            raise ValueError("T must be >= 1")
        if not dt > 0:
            raise ValueError("dt must be > 0")
        if mode is not None:
            try:
                mode.bind(obj)
            except ModeInactive as e:
                raise InvalidMode(str(e)) from e
        self.obj, self.env, self.mode = obj, env, mode
        self.q_start = _arr(q_start)
        self.q_goal = _arr(q_goal)
        self.index_set = index_set if isinstance(index_set, IndexSet) else IndexSet(index_set)
        self.P = self.index_set.local_array()
        self.T, self.dt = int(T), float(dt)
        self.w1, self.w2, self.W = (float(w) for w in weights)
        self.bounds = bounds or Bounds()
        self.gravity = float(gravity)
        self.reg = float(regularizer)
        self.static = static
        self.mu_env, self.mu_mnp, self.mass = obj.mu_env, obj.mu_mnp, obj.mass
        self.N = len(self.P)
        self.m_u = 0 if mode is None else mode.n_controls
        self.k_m = 0 if mode is None else mode.n_contacts
        self.slide = mode is not None and mode.kind == ONE_POINT_SLIDE
        self.layout = L = Layout(self.T, self.N, self.m_u)
        self.n = L.n
        self._pattern = pattern
        self._bounds_arrays()
        self._structure()

    # ------------------------------------------------------------------ setup
    def _bounds_arrays(self):
        L, b, T = self.layout, self.bounds, self.T
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        x0, x1, y0, y1 = b.workspace
        lb[L.q[:, 0]], ub[L.q[:, 0]] = x0, x1
        lb[L.q[:, 1]], ub[L.q[:, 1]] = y0, y1
        th0 = self.q_start[2]
        lb[L.q[:, 2]], ub[L.q[:, 2]] = th0 - b.theta_limit, th0 + b.theta_limit
        v = np.asarray(b.velocity, dtype=float)
        lb[L.qd], ub[L.qd] = -v, v
        F = b.force_max
        if self.m_u:
            if self.slide:
                lb[L.u[:, 0]], ub[L.u[:, 0]] = 0.0, 1.0
                lb[L.u[:, 1]], ub[L.u[:, 1]] = 0.0, F
                lb[L.u[:, 2]], ub[L.u[:, 2]] = -F, F
            else:
                lb[L.u[:, 0::2]], ub[L.u[:, 0::2]] = 0.0, F
                lb[L.u[:, 1::2]], ub[L.u[:, 1::2]] = -F, F
        lb[L.z], ub[L.z] = 0.0, F
        lb[L.gamma], ub[L.gamma] = 0.0, b.slack_max
        lb[L.q[0]] = ub[L.q[0]] = self.q_start
        if self.static:
            lb[L.q] = ub[L.q] = self.q_start
            lb[L.qd] = ub[L.qd] = 0.0
        self.lb, self.ub = lb, ub

    def _structure(self):
        L, T, N, k, m_u = self.layout, self.T, self.N, self.k_m, self.m_u
        t_ar = np.arange(T)
        # ---- equality rows
        self.n_dyn = 3 * T
        self.n_eq = 6 * T
        je = _Triplets()
        dyn_rows = (3 * t_ar[:, None] + np.arange(3)).reshape(T, 3)
        je.add(dyn_rows, L.q[:T])
        je.add(dyn_rows, L.qd)
        je.add(dyn_rows, L.q[1:])
        bal = self.n_dyn + 3 * t_ar[:, None] + np.arange(3)  # (T, 3)
        self.bal_rows = bal
        je.add(bal[:, :, None], L.q[:T][:, None, :])                       # (T,3,3)
        if m_u:
            je.add(bal[:, :, None], L.u[:, None, :])                        # (T,3,m_u)
        if N:
            je.add(bal[:, :, None, None], L.z[:, None, :, :])               # (T,3,N,3)
        je.finish()
        self.je = je
        # ---- inequality rows
        off = 0
        fam = {}
        for name, size in (("gap", T * N), ("slp", T * N), ("slm", T * N), ("fc", T * N), ("gapT", N),
                           ("cone", 2 * T * k), ("clear", T * k), ("rate", 2 * (T - 1) if self.slide else 0)):
            fam[name] = np.arange(off, off + size)
            off += size
        self.n_in = off
        self.fam = fam
        ji = _Triplets()
        g_rows = fam["gap"].reshape(T, N)
        ji.add(g_rows[:, :, None], L.q[:T][:, None, :])
        for nm in ("slp", "slm"):
            r = fam[nm].reshape(T, N)
            ji.add(r[:, :, None], L.q[:T][:, None, :])
            ji.add(r[:, :, None], L.qd[:, None, :])
            ji.add(r, L.gamma)
        ji.add(fam["fc"].reshape(T, N)[:, :, None], L.z)
        ji.add(fam["gapT"][:, None], L.q[T][None, :])
        if k:
            cone = fam["cone"].reshape(T, k, 2)
            uf = L.u[:, 1:3].reshape(T, 1, 2) if self.slide else L.u.reshape(T, k, 2)
            ji.add(cone[:, :, :, None], uf[:, :, None, :])
            cl = fam["clear"].reshape(T, k)
            ji.add(cl[:, :, None], L.q[:T][:, None, :])
            if self.slide:
                ji.add(cl[:, 0], L.u[:, 0])
        if self.slide and T > 1:
            rr = fam["rate"].reshape(T - 1, 2)
            ji.add(rr[:, :, None], np.stack([L.u[:-1, 0], L.u[1:, 0]], axis=1)[:, None, :])
        ji.finish()
        self.ji = ji
        # ---- complementarity pairs (variable index, inequality row)
        if N:
            self.cc_var = np.concatenate([L.z[..., 0].ravel(), L.z[..., 1].ravel(),
                                          L.z[..., 2].ravel(), L.gamma.ravel()])
            self.cc_row = np.concatenate([fam["gap"], fam["slp"], fam["slm"], fam["fc"]])
        else:
            self.cc_var = np.zeros(0, dtype=np.int64)
            self.cc_row = np.zeros(0, dtype=np.int64)
        self.n_cc = len(self.cc_var)
        row_to_cc = np.full(self.n_in, -1)
        row_to_cc[self.cc_row] = np.arange(self.n_cc)
        sel = row_to_cc[ji.rows] >= 0
        self._cc_sel = np.nonzero(sel)[0]
        self._cc_from_in = row_to_cc[ji.rows[sel]]
        self.jcc_rows = np.concatenate([self._cc_from_in, np.arange(self.n_cc)])
        self.jcc_cols = np.concatenate([ji.cols[sel], self.cc_var])
        self._big = None
        if self._pattern:
            self._hess_pattern()

    def counts(self) -> dict:
        return {"n_var": self.n, "n_eq": self.n_eq, "n_in": self.n_in, "n_cc": self.n_cc}

    # ------------------------------------------------------------ evaluation
    def _kinematics(self, tr: Trajectory):
        T, N = self.T, self.N
        th = tr.q[:T, 2]
        c, s = np.cos(th), np.sin(th)
        P = self.P
        Rp = np.stack([c[:, None] * P[None, :, 0] - s[:, None] * P[None, :, 1],
                       s[:, None] * P[None, :, 0] + c[:, None] * P[None, :, 1]], axis=-1)
        w = tr.q[:T, None, :2] + Rp
        d, n, kap = self.env.query(w.reshape(-1, 2))
        return c, s, Rp, d.reshape(T, N), n.reshape(T, N, 2), kap.reshape(T, N)

    def _manip_points(self, tr: Trajectory):
        """Object-frame manipulator points (T, k, 2), normals (k, 2), tangents (k, 2)."""
        m = self.mode
        if self.slide:
            a, b, n_in, t = m.face_frame()
            pts = a[None, None, :] + tr.u[:, 0, None, None] * (b - a)[None, None, :]
            return pts, n_in[None], t[None], b - a
        pts, nrm, tan = m.contact_frames()
        return np.broadcast_to(pts, (self.T,) + pts.shape), nrm, tan, None

    def evaluate(self, x, need_jac: bool = True) -> Evaluation:
        L, T, N, k = self.layout, self.T, self.N, self.k_m
        tr = L.unpack(x)
        f, grad = self._objective(x, tr)
        vals_e, vals_i, c_eq, c_in = self._constraints(tr, need_jac)
        a = x[self.cc_var]
        b = c_in[self.cc_row]
        cc = a * b
        if not need_jac:
            return Evaluation(f, grad, c_eq, None, c_in, None, cc, None)
        J_eq = sp.csr_matrix((vals_e, (self.je.rows, self.je.cols)), shape=(self.n_eq, self.n))
        J_in = sp.csr_matrix((vals_i, (self.ji.rows, self.ji.cols)), shape=(self.n_in, self.n))
        vals_cc = np.concatenate([vals_i[self._cc_sel] * a[self._cc_from_in], b])
        J_cc = sp.csr_matrix((vals_cc, (self.jcc_rows, self.jcc_cols)), shape=(self.n_cc, self.n))
        return Evaluation(f, grad, c_eq, J_eq, c_in, J_in, cc, J_cc)

    def _objective(self, x, tr: Trajectory):
        L, T = self.layout, self.T
        dq = tr.q[1:] - self.q_goal
        dth = wrap_angle(dq[:, 2])
        f = self.W * (self.w1 * np.sum(dq[:, :2] ** 2) + self.w2 * np.sum(dth ** 2))
        grad = np.zeros(self.n)
        grad[L.q[1:, 0]] = 2 * self.W * self.w1 * dq[:, 0]
        grad[L.q[1:, 1]] = 2 * self.W * self.w1 * dq[:, 1]
        grad[L.q[1:, 2]] = 2 * self.W * self.w2 * dth
        ridx = self._reg_idx
        f += self.reg * np.sum(x[ridx] ** 2)
        grad[ridx] += 2 * self.reg * x[ridx]
        return float(f), grad

    @property
    def _reg_idx(self):
        L = self.layout
        parts = [L.qd.ravel(), L.z.ravel(), L.gamma.ravel()]
        if self.m_u:
            parts.append((L.u[:, 1:] if self.slide else L.u).ravel())
        return np.concatenate(parts)

    def objective_hessian_diag(self, x) -> np.ndarray:
        L = self.layout
        h = np.zeros(self.n)
        h[L.q[1:, 0]] = h[L.q[1:, 1]] = 2 * self.W * self.w1
        h[L.q[1:, 2]] = 2 * self.W * self.w2
        h[self._reg_idx] += 2 * self.reg
        return h

    def _constraints(self, tr: Trajectory, need_jac: bool):
        T, N, k, dt = self.T, self.N, self.k_m, self.dt
        mg = self.mass * self.gravity
        c, s = np.cos(tr.q[:T, 2]), np.sin(tr.q[:T, 2])
        # dynamics
        dyn = tr.q[:T] + dt * tr.qd - tr.q[1:]
        Fsum = np.zeros((T, 2))
        Fsum[:, 1] = -mg
        Tsum = np.zeros(T)
        ve, vi = [], []
        if need_jac:
            ve.append(np.ones((T, 3)))
            ve.append(np.full((T, 3), dt))
            ve.append(-np.ones((T, 3)))
        I2 = np.eye(2)
        if N:
            c_, s_, Rp, gap, n, kap = self._kinematics(tr)
            pRp = np.stack([-Rp[..., 1], Rp[..., 0]], axis=-1)
            tau = np.stack([n[..., 1], -n[..., 0]], axis=-1)
            K = kap[..., None, None] * (I2 - n[..., :, None] * n[..., None, :])
            SK = np.stack([K[..., 1, :], -K[..., 0, :]], axis=-2)
            vel = tr.qd[:, None, :2] + tr.qd[:, None, 2:3] * pRp
            v = np.sum(vel * tau, axis=-1)
            z = tr.z
            f = z[..., 0:1] * n + (z[..., 1:2] - z[..., 2:3]) * tau
            Rc = np.stack([c * self.obj.com[0] - s * self.obj.com[1],
                           s * self.obj.com[0] + c * self.obj.com[1]], axis=-1)
            r = Rp - Rc[:, None, :]
            Fsum += f.sum(axis=1)
            Tsum += np.sum(r[..., 0] * f[..., 1] - r[..., 1] * f[..., 0], axis=1)
            gam = tr.gamma
            fc = self.mu_env * z[..., 0] - z[..., 1] - z[..., 2]
        else:
            gap = v = gam = fc = np.zeros((T, 0))
        # manipulator
        if k:
            pts, nrm, tng, dface = self._manip_points(tr)
            if self.slide:
                uf = tr.u[:, 1:3].reshape(T, 1, 2)
            else:
                uf = tr.u.reshape(T, k, 2)
            fobj = uf[..., 0:1] * nrm[None] + uf[..., 1:2] * tng[None]           # (T,k,2)
            fo = fobj.sum(axis=1)
            Fm = np.stack([c * fo[:, 0] - s * fo[:, 1], s * fo[:, 0] + c * fo[:, 1]], axis=-1)
            arm = pts - self.obj.com
            Tm = np.sum(arm[..., 0] * fobj[..., 1] - arm[..., 1] * fobj[..., 0], axis=1)
            Fsum += Fm
            Tsum += Tm
            cone = np.stack([self.mu_mnp * uf[..., 0] - uf[..., 1], self.mu_mnp * uf[..., 0] + uf[..., 1]], axis=-1)
            Rpm = np.stack([c[:, None] * pts[..., 0] - s[:, None] * pts[..., 1],
                            s[:, None] * pts[..., 0] + c[:, None] * pts[..., 1]], axis=-1)
            wm = tr.q[:T, None, :2] + Rpm
            dm, nm, _ = self.env.query(wm.reshape(-1, 2))
            dm, nm = dm.reshape(T, k), nm.reshape(T, k, 2)
            clear = dm - self.bounds.finger_clearance
        else:
            cone = np.zeros((T, 0, 2))
            clear = np.zeros((T, 0))
        bal = np.concatenate([Fsum, Tsum[:, None]], axis=1)
        c_eq = np.concatenate([dyn.ravel(), bal.ravel()])
        # q_T gaps
        if N:
            PT = self.P
            cT, sT = math.cos(tr.q[T, 2]), math.sin(tr.q[T, 2])
            RpT = np.stack([cT * PT[:, 0] - sT * PT[:, 1], sT * PT[:, 0] + cT * PT[:, 1]], axis=-1)
            gT, nT, _ = self.env.query(tr.q[T, :2] + RpT)
        else:
            gT = np.zeros(0)
        parts = [gap.ravel(), (gam + v).ravel(), (gam - v).ravel(), fc.ravel(), gT, cone.ravel(), clear.ravel()]
        if self.slide and T > 1:
            ds = tr.u[1:, 0] - tr.u[:-1, 0]
            rate = self.mode.rate
            parts.append(np.stack([rate - ds, rate + ds], axis=1).ravel())
        c_in = np.concatenate(parts)
        if not need_jac:
            return None, None, c_eq, c_in
        # ---------------- Jacobian values, in registration order
        # balance wrt q_t: (T, 3 rows, 3 cols)
        dB_dq = np.zeros((T, 3, 3))
        if N:
            Mf = z[..., 0, None, None] * K + (z[..., 1] - z[..., 2])[..., None, None] * SK   # (T,N,2,2)
            dB_dq[:, :2, :2] = Mf.sum(axis=1)
            Mfp = np.einsum("tnij,tnj->tni", Mf, pRp)
            dB_dq[:, :2, 2] = Mfp.sum(axis=1)
            dB_dq[:, 2, 0] = np.sum(r[..., 0] * Mf[..., 1, 0] - r[..., 1] * Mf[..., 0, 0], axis=1)
            dB_dq[:, 2, 1] = np.sum(r[..., 0] * Mf[..., 1, 1] - r[..., 1] * Mf[..., 0, 1], axis=1)
            dB_dq[:, 2, 2] = np.sum(-np.sum(r * f, axis=-1) + r[..., 0] * Mfp[..., 1] - r[..., 1] * Mfp[..., 0],
                                    axis=1)
        if k:
            dB_dq[:, 0, 2] += -Fm[:, 1]
            dB_dq[:, 1, 2] += Fm[:, 0]
        ve.append(dB_dq)
        if self.m_u:
            dB_du = np.zeros((T, 3, self.m_u))
            Rn = np.stack([c[:, None] * nrm[None, :, 0] - s[:, None] * nrm[None, :, 1],
                           s[:, None] * nrm[None, :, 0] + c[:, None] * nrm[None, :, 1]], axis=-1)  # (T,k,2)
            Rt = np.stack([c[:, None] * tng[None, :, 0] - s[:, None] * tng[None, :, 1],
                           s[:, None] * tng[None, :, 0] + c[:, None] * tng[None, :, 1]], axis=-1)
            tn = arm[..., 0] * nrm[None, :, 1] - arm[..., 1] * nrm[None, :, 0]   # (T,k)
            tt = arm[..., 0] * tng[None, :, 1] - arm[..., 1] * tng[None, :, 0]
            if self.slide:
                dB_du[:, :2, 1] = Rn[:, 0]
                dB_du[:, :2, 2] = Rt[:, 0]
                dB_du[:, 2, 1] = tn[:, 0]
                dB_du[:, 2, 2] = tt[:, 0]
                dB_du[:, 2, 0] = dface[0] * fobj[:, 0, 1] - dface[1] * fobj[:, 0, 0]
            else:
                dB_du[:, :2, 0::2] = np.transpose(Rn, (0, 2, 1))
                dB_du[:, :2, 1::2] = np.transpose(Rt, (0, 2, 1))
                dB_du[:, 2, 0::2] = tn
                dB_du[:, 2, 1::2] = tt
            ve.append(dB_du)
        if N:
            dB_dz = np.zeros((T, 3, N, 3))
            dB_dz[:, :2, :, 0] = np.transpose(n, (0, 2, 1))
            dB_dz[:, :2, :, 1] = np.transpose(tau, (0, 2, 1))
            dB_dz[:, :2, :, 2] = -np.transpose(tau, (0, 2, 1))
            rn = r[..., 0] * n[..., 1] - r[..., 1] * n[..., 0]
            rt = r[..., 0] * tau[..., 1] - r[..., 1] * tau[..., 0]
            dB_dz[:, 2, :, 0] = rn
            dB_dz[:, 2, :, 1] = rt
            dB_dz[:, 2, :, 2] = -rt
            ve.append(dB_dz)
            # inequalities
            dg = np.concatenate([n, np.sum(n * pRp, axis=-1)[..., None]], axis=-1)       # (T,N,3)
            vi.append(dg)
            dv_dxy = np.einsum("tnj,tnjk->tnk", vel, SK)
            dv_dth = -tr.qd[:, None, 2] * np.sum(Rp * tau, axis=-1) + np.sum(dv_dxy * pRp, axis=-1)
            dv_dq = np.concatenate([dv_dxy, dv_dth[..., None]], axis=-1)
            dv_dqd = np.concatenate([tau, np.sum(pRp * tau, axis=-1)[..., None]], axis=-1)
            ones = np.ones((T, N))
            vi += [dv_dq, dv_dqd, ones, -dv_dq, -dv_dqd, ones]
            vi.append(np.broadcast_to(np.array([self.mu_env, -1.0, -1.0]), (T, N, 3)))
            pRpT = np.stack([-RpT[:, 1], RpT[:, 0]], axis=-1)
            vi.append(np.concatenate([nT, np.sum(nT * pRpT, axis=-1)[:, None]], axis=-1))
        if k:
            dcone = np.zeros((T, k, 2, 2))
            dcone[..., 0, 0] = self.mu_mnp
            dcone[..., 0, 1] = -1.0
            dcone[..., 1, 0] = self.mu_mnp
            dcone[..., 1, 1] = 1.0
            vi.append(dcone)
            pRpm = np.stack([-Rpm[..., 1], Rpm[..., 0]], axis=-1)
            vi.append(np.concatenate([nm, np.sum(nm * pRpm, axis=-1)[..., None]], axis=-1))
            if self.slide:
                Rd = np.stack([c * dface[0] - s * dface[1], s * dface[0] + c * dface[1]], axis=-1)
                vi.append(np.sum(nm[:, 0] * Rd, axis=-1))
        if self.slide and T > 1:
            vi.append(np.broadcast_to(np.array([[1.0, -1.0], [-1.0, 1.0]]), (T - 1, 2, 2)))
        vals_e = np.concatenate([np.ravel(a) for a in ve])
        vals_i = np.concatenate([np.ravel(a) for a in vi]) if vi else np.zeros(0)
        return vals_e, vals_i, c_eq, c_in

    # --------------------------------------------------------------- Hessian
    def _hess_pattern(self):
        """Symmetric pattern of the constraint Hessian and the (color, row)
        source from which each entry is recovered by finite differences."""
        L, T, N = self.layout, self.T, self.N
        G = 6 + self.m_u
        rows, cols, src_color, src_row = [], [], [], []
        gl = np.arange(G)
        for t in range(T):
            base = t * L.B
            gvar = base + gl
            # G x G
            rr, cc = np.meshgrid(gvar, gvar, indexing="ij")
            rows.append(rr.ravel()); cols.append(cc.ravel())
            src_color.append(np.broadcast_to(gl[None, :], rr.shape).ravel()); src_row.append(rr.ravel())
            if N:
                pv = base + G + np.arange(4 * N)
                # P rows x G cols and the transpose
                rr, cc = np.meshgrid(pv, gvar, indexing="ij")
                colr = np.broadcast_to(gl[None, :], rr.shape).ravel()
                rows.append(rr.ravel()); cols.append(cc.ravel()); src_color.append(colr); src_row.append(rr.ravel())
                rows.append(cc.ravel()); cols.append(rr.ravel()); src_color.append(colr); src_row.append(rr.ravel())
                # per-point 4x4
                loc = np.arange(4)
                pr = base + G + 4 * np.arange(N)[:, None, None] + loc[None, :, None]
                pc = base + G + 4 * np.arange(N)[:, None, None] + loc[None, None, :]
                pr, pc = np.broadcast_arrays(pr, pc)
                rows.append(pr.ravel()); cols.append(pc.ravel())
                src_color.append(np.broadcast_to(G + loc[None, None, :], pr.shape).ravel())
                src_row.append(pr.ravel())
        qT = L.q[T]
        rr, cc = np.meshgrid(qT, qT, indexing="ij")
        rows.append(rr.ravel()); cols.append(cc.ravel())
        src_color.append(np.broadcast_to(np.arange(3)[None, :], rr.shape).ravel()); src_row.append(rr.ravel())
        self.h_rows = np.concatenate(rows)
        self.h_cols = np.concatenate(cols)
        self.h_src_color = np.concatenate(src_color)
        self.h_src_row = np.concatenate(src_row)

    def constraint_gradient(self, x, w_eq, w_in, w_cc) -> np.ndarray:
        """J_eq^T w_eq + J_in^T w_in + J_cc^T w_cc without forming matrices."""
        tr = self.layout.unpack(x)
        vals_e, vals_i, _, c_in = self._constraints(tr, True)
        a = x[self.cc_var]
        b = c_in[self.cc_row]
        g = np.bincount(self.je.cols, weights=vals_e * w_eq[self.je.rows], minlength=self.n)
        if len(vals_i):
            g += np.bincount(self.ji.cols, weights=vals_i * w_in[self.ji.rows], minlength=self.n)
        if self.n_cc:
            vals_cc = np.concatenate([vals_i[self._cc_sel] * a[self._cc_from_in], b])
            g += np.bincount(self.jcc_cols, weights=vals_cc * w_cc[self.jcc_rows], minlength=self.n)
        return g

    def hessian(self, x, w_eq, w_in, w_cc, obj_scale: float = 1.0, h: float = 1e-6) -> sp.csr_matrix:
        """Hessian of obj_scale*f + sum w*c, constraint curvature by colored
        central differences of the analytic Jacobian.  All 2*n_colors
        perturbed copies of the step blocks are stacked along the time axis
        and evaluated in one pass."""
        L, T = self.layout, self.T
        K = 2 * L.n_colors
        big = self._stacked()
        TB = T * L.B
        X = np.repeat(np.asarray(x, dtype=float)[None, :TB], K, axis=0)
        col = L.color[:TB]
        for c in range(L.n_colors):
            X[2 * c, col == c] += h
            X[2 * c + 1, col == c] -= h
        xb = np.concatenate([X.ravel(), x[TB:]])
        wb_eq, wb_in, wb_cc = self._stack_weights(w_eq, w_in, w_cc, K)
        G = big.constraint_gradient(xb, wb_eq, wb_in, wb_cc)[:K * TB].reshape(L.n_colors, 2, TB)
        D = np.zeros((L.n_colors, self.n))
        D[:, :TB] = (G[:, 0] - G[:, 1]) / (2 * h)
        # the terminal gaps only couple q_T with itself
        if self.N:
            wT = w_in[self.fam["gapT"]]
            qT = np.asarray(x[L.q[T]], dtype=float)
            for c in range(3):
                e = np.zeros(3)
                e[c] = h
                D[c, L.q[T]] = (self._gapT_grad(qT + e, wT) - self._gapT_grad(qT - e, wT)) / (2 * h)
        vals = D[self.h_src_color, self.h_src_row]
        H = sp.csr_matrix((vals, (self.h_rows, self.h_cols)), shape=(self.n, self.n))
        H = 0.5 * (H + H.T)
        return H + sp.diags(obj_scale * self.objective_hessian_diag(x))

    def _stacked(self) -> "MpccProblem":
        if getattr(self, "_big", None) is None:
            K = 2 * self.layout.n_colors
            self._big = MpccProblem(self.obj, self.env, self.mode, self.q_start, self.q_goal, self.index_set,
                                    self.T * K, self.dt, weights=(self.w1, self.w2, self.W), bounds=self.bounds,
                                    gravity=self.gravity, regularizer=self.reg, pattern=False)
        return self._big

    def _stack_weights(self, w_eq, w_in, w_cc, K):
        """Multipliers of the stacked problem: every copy sees the step-local
        rows of this problem, linear rows and terminal gaps get zero."""
        T, N = self.T, self.N
        w_eq = np.asarray(w_eq, dtype=float)
        w_in = np.asarray(w_in, dtype=float)
        wb_eq = np.concatenate([np.zeros(K * self.n_dyn), np.tile(w_eq[self.n_dyn:], K)])
        parts = []
        for name in ("gap", "slp", "slm", "fc"):
            parts.append(np.tile(w_in[self.fam[name]], K))
        parts.append(np.zeros(N))
        for name in ("cone", "clear"):
            parts.append(np.tile(w_in[self.fam[name]], K))
        if self.slide:
            parts.append(np.zeros(2 * (K * T - 1)))
        wb_in = np.concatenate(parts)
        wb_cc = np.tile(np.asarray(w_cc, dtype=float).reshape(4, T * N), (1, K)).ravel()
        return wb_eq, wb_in, wb_cc

    def _gapT_grad(self, qT, w) -> np.ndarray:
        """Gradient of sum w_i * gap_i(q_T) with respect to q_T."""
        P = self.P
        c, s = math.cos(qT[2]), math.sin(qT[2])
        Rp = np.stack([c * P[:, 0] - s * P[:, 1], s * P[:, 0] + c * P[:, 1]], axis=-1)
        _, n, _ = self.env.query(qT[:2] + Rp)
        dth = n[:, 1] * Rp[:, 0] - n[:, 0] * Rp[:, 1]
        return np.array([w @ n[:, 0], w @ n[:, 1], w @ dth])

    def slip_velocity(self, tr: Trajectory) -> np.ndarray:
        """Tangential velocity (T, N) of every index point."""
        if self.N == 0:
            return np.zeros((self.T, 0))
        _, _, Rp, _, n, _ = self._kinematics(tr)
        pRp = np.stack([-Rp[..., 1], Rp[..., 0]], axis=-1)
        tau = np.stack([n[..., 1], -n[..., 0]], axis=-1)
        vel = tr.qd[:, None, :2] + tr.qd[:, None, 2:3] * pRp
        return np.sum(vel * tau, axis=-1)

    # ------------------------------------------------------------ utilities
    def pack(self, tr: Trajectory):
        return self.layout.pack(tr)

    def unpack(self, x) -> Trajectory:
        return self.layout.unpack(x)

    def balance_residuals(self, x) -> np.ndarray:
        ev = self.evaluate(x, need_jac=False)
        return ev.c_eq[self.n_dyn:].reshape(self.T, 3)

    def dynamics_residuals(self, x) -> np.ndarray:
        ev = self.evaluate(x, need_jac=False)
        return ev.c_eq[:self.n_dyn].reshape(self.T, 3)


def _arr(q):
    return q.as_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float).reshape(3)


def assemble(scenario, mode, q_start, q_goal, index_set, T: int, dt: float, weights=(1.0, 1.0, 5.0),
             **kw) -> MpccProblem:
    """Build P(Y~) for ``scenario`` (anything with ``object``, ``environment``,
    ``bounds`` and ``gravity``)."""
    kw.setdefault("bounds", getattr(scenario, "bounds", None))
    kw.setdefault("gravity", getattr(scenario, "gravity", GRAVITY))
    return MpccProblem(scenario.object, scenario.environment, mode, q_start, q_goal, index_set, T, dt,
                       weights=weights, **kw)
