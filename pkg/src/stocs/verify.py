"""Independent trajectory verifier.

Recomputes every physical residual of a trajectory from scratch: distances
with a separate pure-numpy polygon routine over ALL boundary points, wrench
balance point by point, complementarity of the instantiated pairs and the
Euler dynamics defect.  Nothing here goes through the optimizer's vectorized
constraint code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .contact import ONE_POINT_SLIDE, ManipulationMode

EPS = 1e-4
DYN_TOL = 1e-10


@dataclass
class TrajectoryRecord:
    """Plain arrays describing one trajectory (what the CSV stores)."""
    q: np.ndarray          # (T+1, 3)
    qd: np.ndarray         # (T, 3)
    u: np.ndarray          # (T, m_u)
    point_ids: np.ndarray  # (N,) boundary indices of the instantiated points
    z: np.ndarray          # (T, N, 3)
    gamma: np.ndarray      # (T, N)
    dt: float

    @property
    def T(self):
        return len(self.qd)


@dataclass
class VerifyReport:
    penetration: np.ndarray      # (T+1,) deepest penetration over all boundary points
    wrench: np.ndarray           # (T,) l1 wrench residual
    comp: float                  # sum of |products| over instantiated pairs
    n_cc: int
    dynamics: float              # max |q_t + dt qd_t - q_{t+1}|
    sign: float                  # worst violation of z >= 0, cone, slack pairs, push-only
    tol: dict = field(default_factory=dict)

    @property
    def checks(self) -> dict:
        t = self.tol
        return {
            "penetration": float(self.penetration.max(initial=0.0)) <= t["eps_p"],
            "wrench": float(self.wrench.max(initial=0.0)) <= t["eps_s"],
            "complementarity": self.comp <= t["eps_gap"] * max(self.n_cc, 1),
            "dynamics": self.dynamics <= t["dyn"],
            "sign": self.sign <= t["eps_p"],
        }

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def lines(self):
        c = self.checks
        vals = {"penetration": self.penetration.max(initial=0.0), "wrench": self.wrench.max(initial=0.0),
                "complementarity": self.comp, "dynamics": self.dynamics, "sign": self.sign}
        return [f"{k:16s} {'ok' if c[k] else 'FAIL':4s} {vals[k]:.3e}" for k in c]


def polygon_distance(regions, p):
    """Signed distance of world points ``p`` (m, 2) to a union of convex
    polygons, with the unit outward normal at the closest feature."""
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    best = np.full(len(p), np.inf)
    nrm = np.zeros((len(p), 2))
    for v in regions:
        v = np.asarray(v, dtype=float)
        if (np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])) < 0:
            v = v[::-1]
        a = v
        e = np.roll(v, -1, axis=0) - v
        L2 = np.sum(e * e, axis=1)
        # distance to each edge segment
        t = np.clip(np.einsum("mkj,kj->mk", p[:, None, :] - a[None], e) / L2, 0.0, 1.0)
        c = a[None] + t[..., None] * e[None]
        dv = p[:, None, :] - c
        dist = np.hypot(dv[..., 0], dv[..., 1])
        j = np.argmin(dist, axis=1)
        dmin = dist[np.arange(len(p)), j]
        # half-space test: inside iff on the left of every CCW edge
        side = e[None, :, 0] * (p[:, None, 1] - a[None, :, 1]) - e[None, :, 1] * (p[:, None, 0] - a[None, :, 0])
        inside = np.all(side > 0, axis=1)
        en = np.stack([e[:, 1], -e[:, 0]], axis=1) / np.sqrt(L2)[:, None]
        # edge interior: the edge normal; vertex: direction from the vertex
        tj = t[np.arange(len(p)), j]
        at_vertex = ((tj <= 0.0) | (tj >= 1.0)) & (dmin > 1e-12)
        n_out = np.where(at_vertex[:, None], dv[np.arange(len(p)), j] / np.maximum(dmin, 1e-300)[:, None],
                         en[j])
        # inside: nearest edge by perpendicular depth
        depth = -np.einsum("mkj,kj->mk", p[:, None, :] - a[None], en)
        jd = np.argmin(depth, axis=1)
        sd = np.where(inside, -depth[np.arange(len(p)), jd], dmin)
        n = np.where(inside[:, None], en[jd], n_out)
        upd = sd < best
        best = np.where(upd, sd, best)
        nrm = np.where(upd[:, None], n, nrm)
    return best, nrm


def _rot(th):
    c, s = math.cos(th), math.sin(th)
    return np.array([[c, -s], [s, c]])


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _manip(mode: ManipulationMode | None, u):
    """Object-frame (points, forces) of the manipulator contacts."""
    if mode is None:
        return np.zeros((0, 2)), np.zeros((0, 2))
    if mode.kind == ONE_POINT_SLIDE:
        a, b = mode.face
        d = (b - a) / np.linalg.norm(b - a)
        n_in = np.array([-d[1], d[0]])
        return (a + u[0] * (b - a))[None], (u[1] * n_in + u[2] * d)[None]
    pts = mode.points
    n_in = mode.normals
    tan = np.stack([n_in[:, 1], -n_in[:, 0]], axis=1)
    f = u.reshape(-1, 2)
    return pts, f[:, :1] * n_in + f[:, 1:2] * tan


def verify(obj, env, mode: ManipulationMode | None, rec: TrajectoryRecord, gravity: float = 9.8,
           eps_p: float = EPS, eps_s: float = EPS, eps_gap: float = EPS, dyn_tol: float = DYN_TOL) -> VerifyReport:
    T = rec.T
    q, qd, u, z, gam = (np.asarray(a, dtype=float) for a in (rec.q, rec.qd, rec.u, rec.z, rec.gamma))
    if mode is not None:
        mode.bind(obj)
    B = obj.boundary_points
    pen = np.zeros(T + 1)
    for t in range(T + 1):
        w = q[t, :2] + B @ _rot(q[t, 2]).T
        d, _ = polygon_distance(env.regions, w)
        pen[t] = max(0.0, -float(d.min()))
    dyn = float(np.max(np.abs(q[:-1] + rec.dt * qd - q[1:]), initial=0.0))
    P = B[np.asarray(rec.point_ids, dtype=int)] if len(rec.point_ids) else np.zeros((0, 2))
    wrench = np.zeros(T)
    comp = 0.0
    sign = 0.0
    mu = obj.mu_env
    for t in range(T):
        R = _rot(q[t, 2])
        F = np.array([0.0, -obj.mass * gravity])
        tau = 0.0
        for i, p in enumerate(P):
            w = q[t, :2] + R @ p
            d, n = polygon_distance(env.regions, w)
            n = n[0]
            tv = np.array([n[1], -n[0]])
            zn, zp, zm = z[t, i]
            f = zn * n + (zp - zm) * tv
            F += f
            tau += _cross(R @ (p - obj.com), f)
            vel = qd[t, :2] + qd[t, 2] * np.array([-(R @ p)[1], (R @ p)[0]])
            v = float(vel @ tv)
            g = gam[t, i]
            fc = mu * zn - zp - zm
            comp += abs(zn * d[0]) + abs(zp * (g + v)) + abs(zm * (g - v)) + abs(g * fc)
            sign = max(sign, -zn, -zp, -zm, -g, -fc, -(g + v), -(g - v))
        if mode is not None:
            mp, mf = _manip(mode, u[t])
            for p, f in zip(mp, mf):
                F += R @ f
                tau += _cross(R @ (p - obj.com), R @ f)
            fl = u[t, 1:3] if mode.kind == ONE_POINT_SLIDE else u[t]
            fl = fl.reshape(-1, 2)
            sign = max(sign, float(np.max(-fl[:, 0])),
                       float(np.max(np.abs(fl[:, 1]) - obj.mu_mnp * fl[:, 0])))
            if mode.kind == ONE_POINT_SLIDE:
                sign = max(sign, -u[t, 0], u[t, 0] - 1.0)
        wrench[t] = abs(F[0]) + abs(F[1]) + abs(tau)
    return VerifyReport(pen, wrench, float(comp), 4 * T * len(P), dyn, float(sign),
                        {"eps_p": eps_p, "eps_s": eps_s, "eps_gap": eps_gap, "dyn": dyn_tol})


def record_from_result(res) -> TrajectoryRecord:
    """TrajectoryRecord of a StocsResult (uses the final iterate)."""
    tr, prob = res.raw, res.problem
    ids = np.array([y.id for y in res.index_set], dtype=int)
    return TrajectoryRecord(tr.q.copy(), tr.qd.copy(), tr.u.copy(), ids, tr.z.copy(), tr.gamma.copy(), prob.dt)


def verify_result(res, scenario, mode, **kw) -> VerifyReport:
    return verify(scenario.object, scenario.environment, mode, record_from_result(res),
                  gravity=getattr(scenario, "gravity", 9.8), **kw)

