"""Contact kinematics and the quasi-static force model.

Environment contact forces use the planar split z = (zn, zp, zm): normal
magnitude plus two nonnegative tangential magnitudes along +tangent and
-tangent of the environment contact frame.  Manipulator forces are
(un, ut) in the frame of the touched object face: ``un`` pushes inward,
``ut`` runs along the face direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import (EnvironmentModel, ObjectModel, Pose2, Twist2, cross2, perp,
                       point_velocity, rot, signed_distance, transform_point)

GRAVITY = 9.8

ONE_POINT_SLIDE = "one_point_slide"
FIXED_POINTS = "fixed_points"


class ModeInactive(ValueError):
    """A manipulation mode refers to contact points that are not on the object."""


@dataclass(frozen=True)
class IndexPoint:
    id: int
    local: tuple

    def __post_init__(self):
        object.__setattr__(self, "local", (float(self.local[0]), float(self.local[1])))


@dataclass(frozen=True)
class ContactForce:
    zn: float = 0.0
    zp: float = 0.0
    zm: float = 0.0

    def as_array(self):
        return np.array([self.zn, self.zp, self.zm])


@dataclass(frozen=True, eq=False)
class ManipulationMode:
    """Robot-object contact state.

    ``one_point_slide``: a single contact that may slide along ``face``
    (object-frame segment a -> b, CCW order on the outline); its location is
    a per-step decision variable in [0, 1] changing by at most ``rate`` per
    step.  ``fixed_points``: contacts pinned at ``points``.
    """

    name: str
    kind: str
    face: np.ndarray | None = None
    points: np.ndarray | None = None
    admissible_angles: tuple | None = None
    rate: float = 0.2
    normals: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == ONE_POINT_SLIDE:
            f = np.asarray(self.face, dtype=float).reshape(2, 2)
            if np.allclose(f[0], f[1]):
                raise ValueError(f"mode {self.name}: degenerate face")
            object.__setattr__(self, "face", f)
        elif self.kind == FIXED_POINTS:
            p = np.asarray(self.points, dtype=float).reshape(-1, 2)
            if len(p) < 1:
                raise ValueError(f"mode {self.name}: fixed_points needs >= 1 point")
            object.__setattr__(self, "points", p)
            if self.normals is not None:
                object.__setattr__(self, "normals", np.asarray(self.normals, dtype=float).reshape(-1, 2))
        else:
            raise ValueError(f"unknown mode kind {self.kind!r}")
        if self.admissible_angles is not None:
            object.__setattr__(self, "admissible_angles", tuple(float(a) for a in self.admissible_angles))

    @property
    def n_contacts(self) -> int:
        return 1 if self.kind == ONE_POINT_SLIDE else len(self.points)

    @property
    def n_controls(self) -> int:
        return 3 if self.kind == ONE_POINT_SLIDE else 2 * len(self.points)

    def face_frame(self):
        """(a, b, inward normal, unit tangent) of the sliding face."""
        a, b = self.face
        d = (b - a) / np.linalg.norm(b - a)
        return a, b, perp(d), d

    def bind(self, obj: ObjectModel) -> "ManipulationMode":
        """Validate against ``obj`` and fill per-point contact normals."""
        if self.kind == ONE_POINT_SLIDE:
            for p in self.face:
                if not obj.on_boundary(p):
                    raise ModeInactive(f"mode {self.name}: face endpoint {p} is not on the object boundary")
            return self
        for p in self.points:
            if not obj.on_boundary(p):
                raise ModeInactive(f"mode {self.name}: contact point {p} is not on the object boundary")
        if self.normals is None:
            if obj.outline is None:
                raise ModeInactive(f"mode {self.name}: object has no outline to derive contact normals")
            nrm = np.array([obj.inward_normal_at(p) for p in self.points])
            object.__setattr__(self, "normals", nrm)
        return self

    def contact_frames(self, s: float = 0.5):
        """Object-frame (points, inward normals, tangents) of the manipulator contacts."""
        if self.kind == ONE_POINT_SLIDE:
            a, b, n_in, t = self.face_frame()
            return (a + s * (b - a))[None], n_in[None], t[None]
        n = self.normals
        return self.points, n, -perp(n)


@dataclass
class ControlInput:
    contact_param: float = 0.5
    force: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)))

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float).reshape(-1, 2)

    def as_vector(self, mode: ManipulationMode | None) -> np.ndarray:
        if mode is None:
            return np.zeros(0)
        if mode.kind == ONE_POINT_SLIDE:
            return np.array([self.contact_param, self.force[0, 0], self.force[0, 1]])
        return self.force.ravel().copy()

    @classmethod
    def from_vector(cls, u, mode: ManipulationMode | None) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        if mode is None:
            return cls(0.0, np.zeros((0, 2)))
        if mode.kind == ONE_POINT_SLIDE:
            return cls(float(u[0]), u[1:3].reshape(1, 2))
        return cls(0.0, u.reshape(-1, 2))


def _q(q):
    return q.as_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float)


def contact_frame(obj: ObjectModel, env: EnvironmentModel, q, y: IndexPoint):
    """(gap, normal, tangent) of index point ``y`` against the environment."""
    w = transform_point(_q(q), np.asarray(y.local))
    return signed_distance(env, w)


def friction_residual(mu: float, z) -> float:
    z = z.as_array() if isinstance(z, ContactForce) else np.asarray(z, dtype=float)
    return mu * z[..., 0] - z[..., 1] - z[..., 2]


def tangential_velocity_pair(obj: ObjectModel, env: EnvironmentModel, q, qdot, y: IndexPoint):
    """Nonnegative split (v+, v-) of the tangential sliding velocity at ``y``."""
    q = _q(q)
    qd = qdot.as_array() if isinstance(qdot, Twist2) else np.asarray(qdot, dtype=float)
    _, _, tan = contact_frame(obj, env, q, y)
    vt = float(np.dot(point_velocity(q, qd, np.asarray(y.local)), tan))
    return max(vt, 0.0), max(-vt, 0.0)


def manipulator_wrench(mode: ManipulationMode | None, com, theta: float, u) -> np.ndarray:
    """World force and torque about the CoM applied by the manipulator."""
    if mode is None:
        return np.zeros(3)
    u = np.asarray(u, dtype=float)
    if mode.kind == ONE_POINT_SLIDE:
        pts, nrm, tan = mode.contact_frames(u[0])
        f = u[1:3].reshape(1, 2)
    else:
        pts, nrm, tan = mode.contact_frames()
        f = u.reshape(-1, 2)
    f_obj = f[:, :1] * nrm + f[:, 1:2] * tan
    F = f_obj.sum(axis=0) @ rot(theta).T
    tau = float(np.sum(cross2(pts - com, f_obj)))
    return np.array([F[0], F[1], tau])


def wrench_balance(obj: ObjectModel, env: EnvironmentModel, q, mode: ManipulationMode | None,
                   u, contacts: Sequence, gravity: float = GRAVITY) -> np.ndarray:
    """Net (Fx, Fy, torque about the world CoM) on the object.

    ``contacts`` is a sequence of ``(IndexPoint, ContactForce)``.  Zero at
    quasi-static equilibrium.
    """
    q = _q(q)
    if mode is not None:
        mode.bind(obj)
    uvec = u.as_vector(mode) if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    res = np.array([0.0, -obj.mass * gravity, 0.0])
    res += manipulator_wrench(mode, obj.com, q[2], uvec)
    R = rot(q[2])
    for y, z in contacts:
        zz = z.as_array() if isinstance(z, ContactForce) else np.asarray(z, dtype=float)
        p = np.asarray(y.local)
        _, n, t = signed_distance(env, transform_point(q, p))
        f = zz[0] * n + (zz[1] - zz[2]) * t
        r = R @ (p - obj.com)
        res[:2] += f
        res[2] += cross2(r, f)
    return res
