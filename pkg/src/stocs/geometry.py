"""Planar rigid-body geometry: poses, polygonal objects and environments,
signed distance queries and flat-ground resting poses."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _accel

TWO_PI = 2.0 * math.pi


class NoStablePose(ValueError):
    """Raised when an object has no resting orientation on the support plane."""


def wrap_angle(a):
    """Map an angle (or array of angles) to [-pi, pi)."""
    return (np.asarray(a) + math.pi) % TWO_PI - math.pi if np.ndim(a) else (a + math.pi) % TWO_PI - math.pi


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def perp(v: np.ndarray) -> np.ndarray:
    """Rotate vectors by +pi/2 (works on (..., 2) arrays)."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def cross2(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", float(wrap_angle(float(self.theta))))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def compose(self, other: "Pose2") -> "Pose2":
        p = rot(self.theta) @ np.array([other.x, other.y])
        return Pose2(self.x + p[0], self.y + p[1], self.theta + other.theta)

    def inverse(self) -> "Pose2":
        p = -(rot(self.theta).T @ np.array([self.x, self.y]))
        return Pose2(p[0], p[1], -self.theta)


@dataclass(frozen=True)
class Twist2:
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.omega])


def transform_point(pose, p) -> np.ndarray:
    """World coordinates of object-frame point(s) ``p`` at ``pose``."""
    q = pose.as_array() if isinstance(pose, Pose2) else np.asarray(pose, dtype=float)
    p = np.asarray(p, dtype=float)
    return p @ rot(q[2]).T + q[:2]


def inverse_transform_point(pose, w) -> np.ndarray:
    q = pose.as_array() if isinstance(pose, Pose2) else np.asarray(pose, dtype=float)
    return (np.asarray(w, dtype=float) - q[:2]) @ rot(q[2])


def point_velocity(pose, twist, p) -> np.ndarray:
    """World velocity of the material point ``p`` (object frame)."""
    q = pose.as_array() if isinstance(pose, Pose2) else np.asarray(pose, dtype=float)
    v = twist.as_array() if isinstance(twist, Twist2) else np.asarray(twist, dtype=float)
    rp = np.asarray(p, dtype=float) @ rot(q[2]).T
    return v[:2] + v[2] * perp(rp)


def polygon_area(verts) -> float:
    v = np.asarray(verts, dtype=float)
    return 0.5 * float(np.sum(cross2(v, np.roll(v, -1, axis=0))))


def convex_hull(points) -> np.ndarray:
    """CCW convex hull without collinear points (monotone chain)."""
    pts = sorted(set(map(tuple, np.round(np.asarray(points, dtype=float), 12))))
    if len(pts) <= 2:
        return np.array(pts)

    def half(seq):
        h = []
        for p in seq:
            while len(h) >= 2 and cross2(np.subtract(h[-1], h[-2]), np.subtract(p, h[-2])) <= 1e-14:
                h.pop()
            h.append(p)
        return h

    lower = half(pts)
    upper = half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1])


def sample_polygon_boundary(verts, n: int) -> np.ndarray:
    """Place ``n`` points on a closed polygon: every vertex plus interior points
    spread over the edges in proportion to edge length (largest remainder)."""
    v = np.asarray(verts, dtype=float)
    nv = len(v)
    if n < nv:
        raise ValueError("need at least one point per vertex")
    e = np.roll(v, -1, axis=0) - v
    lens = np.hypot(e[:, 0], e[:, 1])
    share = (n - nv) * lens / lens.sum()
    alloc = np.floor(share).astype(int)
    rest = n - nv - alloc.sum()
    order = np.argsort(-(share - alloc), kind="stable")
    alloc[order[:rest]] += 1
    out = []
    for j in range(nv):
        k = alloc[j]
        for i in range(k + 1):
            out.append(v[j] + e[j] * (i / (k + 1)))
    return np.array(out)


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """Rigid object: discretized boundary (the index domain), CoM, mass,
    friction.  ``outline`` is the CCW source polygon used for faces and
    drawing."""

    boundary_points: np.ndarray
    com: np.ndarray
    mass: float
    mu_env: float
    mu_mnp: float
    outline: np.ndarray | None = None

    def __post_init__(self):
        bp = np.asarray(self.boundary_points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "boundary_points", bp)
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(2))
        if self.outline is not None:
            object.__setattr__(self, "outline", np.asarray(self.outline, dtype=float).reshape(-1, 2))
        if len(bp) == 0:
            raise ValueError("object.boundary_points must be non-empty")
        if not np.all(np.isfinite(bp)):
            raise ValueError("object.boundary_points must be finite")
        if not self.mass > 0:
            raise ValueError("physics.mass must be > 0")
        if self.mu_env < 0 or self.mu_mnp < 0:
            raise ValueError("friction coefficients must be >= 0")

    @property
    def n_points(self) -> int:
        return len(self.boundary_points)

    def on_boundary(self, p, tol: float = 1e-6) -> bool:
        """True if ``p`` lies on the outline (or coincides with a boundary point)."""
        p = np.asarray(p, dtype=float)
        if self.outline is None:
            return bool(np.min(np.hypot(*(self.boundary_points - p).T)) <= tol)
        a = self.outline
        b = np.roll(a, -1, axis=0)
        e = b - a
        t = np.clip(np.einsum("ij,ij->i", p - a, e) / np.einsum("ij,ij->i", e, e), 0, 1)
        d = np.hypot(*(a + t[:, None] * e - p).T)
        return bool(d.min() <= tol)

    def inward_normal_at(self, p) -> np.ndarray:
        """Inward unit normal of the outline edge closest to ``p``."""
        p = np.asarray(p, dtype=float)
        a = self.outline
        b = np.roll(a, -1, axis=0)
        e = b - a
        t = np.clip(np.einsum("ij,ij->i", p - a, e) / np.einsum("ij,ij->i", e, e), 0, 1)
        j = int(np.argmin(np.hypot(*(a + t[:, None] * e - p).T)))
        d = e[j] / np.linalg.norm(e[j])
        return np.array([-d[1], d[0]])


@dataclass(frozen=True, eq=False)
class EnvironmentModel:
    """Union of convex solid polygons.  ``floor`` is the height of the flat
    support surface used for resting-pose enumeration."""

    regions: tuple
    floor: float = 0.0
    verts: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)
    enorm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        regs = []
        for r in self.regions:
            v = np.asarray(r, dtype=float).reshape(-1, 2)
            if len(v) < 3:
                raise ValueError("environment region needs >= 3 vertices")
            area = polygon_area(v)
            if area < 0:
                v = v[::-1].copy()
                area = -area
            if area <= 0:
                raise ValueError("environment region is degenerate")
            c = cross2(np.roll(v, -1, axis=0) - v, np.roll(v, -2, axis=0) - np.roll(v, -1, axis=0))
            if np.any(c < -1e-12):
                raise ValueError("environment region must be convex")
            regs.append(v)
        if not regs:
            raise ValueError("environment must contain at least one region")
        object.__setattr__(self, "regions", tuple(regs))
        verts = np.concatenate(regs)
        offsets = np.cumsum([0] + [len(r) for r in regs]).astype(np.int64)
        en = []
        for r in regs:
            e = np.roll(r, -1, axis=0) - r
            e = e / np.hypot(e[:, 0], e[:, 1])[:, None]
            en.append(np.stack([e[:, 1], -e[:, 0]], axis=1))
        object.__setattr__(self, "verts", np.ascontiguousarray(verts))
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "enorm", np.ascontiguousarray(np.concatenate(en)))

    def query(self, pts):
        """(distance, normal, curvature) for an (m, 2) array of world points."""
        return _accel.signed_distance_batch(np.asarray(pts, dtype=float).reshape(-1, 2),
                                            self.verts, self.offsets, self.enorm)

    def gap_table(self, poses, local):
        return _accel.gap_table(poses, local, self.verts, self.offsets, self.enorm)


def signed_distance(env: EnvironmentModel, p):
    """Signed distance from a world point to the environment, with the
    outward normal of the nearest surface and the tangent (normal rotated by
    -pi/2)."""
    d, n, _ = env.query(np.asarray(p, dtype=float).reshape(1, 2))
    n = n[0]
    return float(d[0]), n, np.array([n[1], -n[0]])


def resting_height(obj: ObjectModel, theta: float, floor: float = 0.0) -> float:
    """Pose y that puts the lowest boundary point on the floor at ``theta``."""
    low = (obj.boundary_points @ rot(theta).T)[:, 1].min()
    return floor - low


def stable_poses(obj: ObjectModel, env: EnvironmentModel, strict_tol: float = 1e-9):
    """Orientations at which the object rests in equilibrium on the flat floor.

    For every convex-hull edge, the orientation that puts the edge face-down
    is stable when the CoM projects strictly inside the edge.  Returns a list
    of ``(theta, height)`` with theta in [-pi, pi).
    """
    hull = convex_hull(obj.boundary_points)
    out = []
    for j in range(len(hull)):
        a, b = hull[j], hull[(j + 1) % len(hull)]
        e = b - a
        L = float(np.hypot(*e))
        d = e / L
        n_out = np.array([d[1], -d[0]])
        s = float(np.dot(obj.com - a, d))
        if not (strict_tol < s < L - strict_tol):
            continue
        theta = float(wrap_angle(-math.pi / 2 - math.atan2(n_out[1], n_out[0])))
        out.append((theta, resting_height(obj, theta, env.floor)))
    if not out:
        raise NoStablePose("no stable resting pose on the support plane")
    out.sort()
    return out
