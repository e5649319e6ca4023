"""Scenario files: object, environment, manipulation modes, task poses,
physics and bounds in one YAML document.

Format (lengths in m, angles in rad, mass in kg)::

    name: box_pivot
    object:
      outline: [[x, y], ...]       # CCW polygon in the object frame
      n_points: 104                # boundary sampling (or boundary_points: [[x, y], ...])
      com: [0.0, 0.0]              # optional, default: polygon centroid
    physics: {mass: 0.1, mu_env: 0.3, mu_mnp: 0.7, gravity: 9.8}
    environment:
      floor: 0.0                   # support height for resting poses
      regions: [[[x, y], ...], ...] # convex solid polygons
    modes:
      - {name: left, kind: one_point_slide, face: [[xa, ya], [xb, yb]], rate: 0.2}
      - {name: grasp, kind: fixed_points, points: [[x, y], ...], admissible_angles: [0.0]}
    q_init: [x, y, theta]
    q_goal: [x, y, theta]
    bounds: {workspace: [xmin, xmax, ymin, ymax], velocity: [vx, vy, w], force_max: 100,
             slack_max: 10, theta_limit: 12.566, finger_clearance: 0.0}
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .contact import FIXED_POINTS, GRAVITY, ONE_POINT_SLIDE, ManipulationMode, ModeInactive
from .geometry import EnvironmentModel, ObjectModel, Pose2, sample_polygon_boundary
from .mpcc import Bounds

GOLDEN = ("box_pivot", "peg_pivot", "mustard_pivot",
          "task1_forward", "task1_reverse", "task2_forward", "task2_reverse",
          "task3_forward", "task3_reverse")


class ParseError(ValueError):
    def __init__(self, msg, line=None, column=None):
        self.line, self.column = line, column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(msg + where)


class UnstableInitWarning(UserWarning):
    """q_init cannot be held by the environment alone."""


class ValidationError(ValueError):
    def __init__(self, field_name, msg=""):
        self.field = field_name
        super().__init__(f"{field_name}: {msg}" if msg else field_name)


@dataclass(eq=False)
class Scenario:
    name: str
    object: ObjectModel
    environment: EnvironmentModel
    modes: list
    q_init: Pose2
    q_goal: Pose2
    gravity: float = GRAVITY
    bounds: Bounds = field(default_factory=Bounds)

    @property
    def physics(self):
        o = self.object
        return {"mass": o.mass, "mu_env": o.mu_env, "mu_mnp": o.mu_mnp, "gravity": self.gravity}

    def mode(self, name: str) -> ManipulationMode:
        for m in self.modes:
            if m.name == name:
                return m
        raise KeyError(f"no mode named {name!r} (have {[m.name for m in self.modes]})")

    def to_dict(self) -> dict:
        o, e, b = self.object, self.environment, self.bounds
        d = {
            "name": self.name,
            "object": {"outline": _lst(o.outline) if o.outline is not None else None,
                       "boundary_points": _lst(o.boundary_points), "com": _lst(o.com)},
            "physics": {k: float(v) for k, v in self.physics.items()},
            "environment": {"floor": float(e.floor), "regions": [_lst(r) for r in e.regions]},
            "modes": [_mode_dict(m) for m in self.modes],
            "q_init": _lst(self.q_init.as_array()),
            "q_goal": _lst(self.q_goal.as_array()),
            "bounds": {"workspace": [float(v) for v in b.workspace], "velocity": [float(v) for v in b.velocity],
                       "force_max": float(b.force_max), "slack_max": float(b.slack_max),
                       "theta_limit": float(b.theta_limit), "finger_clearance": float(b.finger_clearance)},
        }
        if o.outline is None:
            del d["object"]["outline"]
        return d

    def same_as(self, other: "Scenario") -> bool:
        return self.to_dict() == other.to_dict()


def _lst(a):
    a = np.asarray(a, dtype=float)
    return a.tolist()


def _mode_dict(m: ManipulationMode) -> dict:
    d = {"name": m.name, "kind": m.kind}
    if m.kind == ONE_POINT_SLIDE:
        d["face"] = _lst(m.face)
        d["rate"] = float(m.rate)
    else:
        d["points"] = _lst(m.points)
    if m.admissible_angles is not None:
        d["admissible_angles"] = [float(a) for a in m.admissible_angles]
    return d


def _req(d, key, path):
    if not isinstance(d, dict) or key not in d or d[key] is None:
        raise ValidationError(f"{path}.{key}" if path else key, "missing")
    return d[key]


def _arr(v, path, shape=None):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(path, "expected numbers")
    if shape is not None and (a.ndim != len(shape) or any(s not in (-1, n) for s, n in zip(shape, a.shape))):
        raise ValidationError(path, f"expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(path, "non-finite value")
    return a


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ValidationError("scenario", "top level must be a mapping")
    name = str(d.get("name", "scenario"))
    od = _req(d, "object", "")
    phys = _req(d, "physics", "")
    mass = float(_req(phys, "mass", "physics"))
    if not mass > 0:
        raise ValidationError("physics.mass", "must be > 0")
    mu_env = float(_req(phys, "mu_env", "physics"))
    mu_mnp = float(_req(phys, "mu_mnp", "physics"))
    if mu_env < 0 or mu_mnp < 0:
        raise ValidationError("physics.mu", "friction coefficients must be >= 0")
    gravity = float(phys.get("gravity", GRAVITY))
    outline = None
    if od.get("outline") is not None:
        outline = _arr(od["outline"], "object.outline", (-1, 2))
        if len(outline) < 3:
            raise ValidationError("object.outline", "needs >= 3 vertices")
        area2 = float(np.sum(outline[:, 0] * np.roll(outline[:, 1], -1) - np.roll(outline[:, 0], -1) * outline[:, 1]))
        if area2 < 0:
            outline = outline[::-1].copy()
        elif area2 == 0:
            raise ValidationError("object.outline", "degenerate polygon")
    if od.get("boundary_points") is not None:
        pts = _arr(od["boundary_points"], "object.boundary_points", (-1, 2))
    elif outline is not None:
        n = int(_req(od, "n_points", "object"))
        try:
            pts = sample_polygon_boundary(outline, n)
        except ValueError as e:
            raise ValidationError("object.n_points", str(e))
    else:
        raise ValidationError("object.outline", "missing (or give object.boundary_points)")
    if od.get("com") is not None:
        com = _arr(od["com"], "object.com", (2,))
    elif outline is not None:
        com = _centroid(outline)
    else:
        com = pts.mean(axis=0)
    obj = ObjectModel(pts, com, mass, mu_env, mu_mnp, outline)
    ed = _req(d, "environment", "")
    regs = _req(ed, "regions", "environment")
    try:
        env = EnvironmentModel(tuple(_arr(r, f"environment.regions[{i}]", (-1, 2)) for i, r in enumerate(regs)),
                               floor=float(ed.get("floor", 0.0)))
    except ValidationError:
        raise
    except ValueError as e:
        raise ValidationError("environment.regions", str(e))
    modes = []
    for i, md in enumerate(d.get("modes") or []):
        path = f"modes[{i}]"
        kind = _req(md, "kind", path)
        try:
            if kind == ONE_POINT_SLIDE:
                m = ManipulationMode(str(_req(md, "name", path)), kind, face=_arr(_req(md, "face", path), path + ".face", (2, 2)),
                                     admissible_angles=md.get("admissible_angles"), rate=float(md.get("rate", 0.2)))
            elif kind == FIXED_POINTS:
                m = ManipulationMode(str(_req(md, "name", path)), kind, points=_arr(_req(md, "points", path), path + ".points", (-1, 2)),
                                     admissible_angles=md.get("admissible_angles"))
            else:
                raise ValidationError(path + ".kind", f"unknown kind {kind!r}")
            m.bind(obj)
        except ModeInactive as e:
            raise ValidationError(path, str(e))
        except ValidationError:
            raise
        except ValueError as e:
            raise ValidationError(path, str(e))
        modes.append(m)
    names = [m.name for m in modes]
    if len(set(names)) != len(names):
        raise ValidationError("modes", "duplicate mode names")
    q_init = Pose2.from_array(_arr(_req(d, "q_init", ""), "q_init", (3,)))
    q_goal = Pose2.from_array(_arr(_req(d, "q_goal", ""), "q_goal", (3,)))
    bd = d.get("bounds") or {}
    kw = {}
    for k in ("workspace", "velocity"):
        if k in bd:
            kw[k] = tuple(float(v) for v in _arr(bd[k], f"bounds.{k}", (4,) if k == "workspace" else (3,)))
    for k in ("force_max", "slack_max", "theta_limit", "finger_clearance"):
        if k in bd:
            kw[k] = float(bd[k])
    b = Bounds(**kw)
    x0, x1, y0, y1 = b.workspace
    if not (x0 < x1 and y0 < y1):
        raise ValidationError("bounds.workspace", "empty box")
    return Scenario(name, obj, env, modes, q_init, q_goal, gravity, b)


def _centroid(v):
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    c = x * yn - xn * y
    a = c.sum() / 2
    return np.array([np.sum((x + xn) * c) / (6 * a), np.sum((y + yn) * c) / (6 * a)])


def loads_scenario(text: str, check_stability: bool = True) -> Scenario:
    try:
        d = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        raise ParseError(str(e.problem or e), mark.line + 1 if mark else None, mark.column + 1 if mark else None)
    except yaml.YAMLError as e:
        raise ParseError(str(e))
    sc = scenario_from_dict(d)
    if check_stability:
        from .planner import stability_test
        if not stability_test(sc.object, sc.environment, sc.q_init, sc.gravity):
            warnings.warn(f"{sc.name}: q_init is not statically stable", UnstableInitWarning, stacklevel=2)
    return sc


def load_scenario(path, check_stability: bool = True) -> Scenario:
    """Read a scenario file, or a golden scenario by name.  Warns with
    UnstableInitWarning when q_init is not statically stable."""
    p = Path(path)
    if not p.exists() and str(path) in GOLDEN:
        p = golden_path(str(path))
    return loads_scenario(p.read_text(), check_stability)


def dumps_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(sc.to_dict(), sort_keys=False, default_flow_style=None, width=120)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(sc))


def golden_path(name: str) -> Path:
    return Path(str(resources.files("stocs") / "data" / f"{name}.yaml"))
