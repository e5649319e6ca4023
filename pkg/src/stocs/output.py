"""Trajectory CSV files, deterministic SVG drawings and run reports.

Trajectory CSV: ``#``-prefixed metadata lines (scenario, mode, dt, status,
point_ids), then one header row and one row per time step t = 0..T with
columns ``t, x, y, theta, vx, vy, omega, u0..u{m-1}`` followed by
``zn_<id>, zp_<id>, zm_<id>, gamma_<id>`` for every instantiated boundary
point.  The last row (t = T) carries only the pose.  Floats are written
with ``repr`` so a file reloads bit-exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .geometry import rot
from .verify import TrajectoryRecord


# ---------------------------------------------------------------- CSV
def _f(v) -> str:
    return repr(float(v))


def trajectory_csv(rec: TrajectoryRecord, meta: dict) -> str:
    T, m = rec.T, rec.u.shape[1] if rec.u.ndim == 2 else 0
    ids = [int(i) for i in rec.point_ids]
    buf = io.StringIO()
    for k in ("scenario", "mode", "status"):
        if k in meta:
            buf.write(f"# {k}: {meta[k]}\n")
    buf.write(f"# dt: {_f(rec.dt)}\n")
    buf.write(f"# point_ids: {' '.join(str(i) for i in ids)}\n")
    head = ["t", "x", "y", "theta", "vx", "vy", "omega"] + [f"u{j}" for j in range(m)]
    for i in ids:
        head += [f"zn_{i}", f"zp_{i}", f"zm_{i}", f"gamma_{i}"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for t in range(T + 1):
        row = [str(t)] + [_f(v) for v in rec.q[t]]
        if t < T:
            row += [_f(v) for v in rec.qd[t]] + [_f(v) for v in rec.u[t]]
            for k in range(len(ids)):
                row += [_f(v) for v in rec.z[t, k]] + [_f(rec.gamma[t, k])]
        else:
            row += [""] * (len(head) - 4)
        w.writerow(row)
    return buf.getvalue()


def write_trajectory_csv(path, rec: TrajectoryRecord, meta: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trajectory_csv(rec, meta))


def read_trajectory_csv(path):
    """(TrajectoryRecord, metadata dict)."""
    meta = {}
    lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
            elif line.strip():
                lines.append(line)
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: no trajectory rows")
    head, body = rows[0], rows[1:]
    ids = [int(s) for s in meta.get("point_ids", "").split()]
    m = sum(1 for h in head if h.startswith("u") and h[1:].isdigit())
    T = len(body) - 1
    if T < 1:
        raise ValueError(f"{path}: need at least two rows")
    q = np.array([[float(v) for v in r[1:4]] for r in body])
    qd = np.array([[float(v) for v in r[4:7]] for r in body[:T]])
    u = np.array([[float(v) for v in r[7:7 + m]] for r in body[:T]]).reshape(T, m)
    N = len(ids)
    zz = np.array([[float(v) for v in r[7 + m:7 + m + 4 * N]] for r in body[:T]]).reshape(T, N, 4)
    rec = TrajectoryRecord(q, qd, u, np.array(ids, dtype=int), zz[..., :3].copy(), zz[..., 3].copy(),
                           float(meta.get("dt", "0.1")))
    return rec, meta


# ---------------------------------------------------------------- SVG
MODE_COLORS = ("#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#7f7f7f")


class _Canvas:
    def __init__(self, box, width=640):
        x0, x1, y0, y1 = box
        self.x0, self.y1 = x0, y1
        self.s = width / max(x1 - x0, 1e-9)
        self.w = width
        self.h = int(math.ceil((y1 - y0) * self.s))
        self.items = []

    def p(self, x, y):
        return (x - self.x0) * self.s, (self.y1 - y) * self.s

    def poly(self, pts, fill="none", stroke="#000", width=1.0, opacity=1.0):
        s = " ".join("%.2f,%.2f" % self.p(x, y) for x, y in pts)
        self.items.append(f'<polygon points="{s}" fill="{fill}" stroke="{stroke}" stroke-width="{width:.2f}" '
                          f'opacity="{opacity:.3f}"/>')

    def line(self, pts, stroke="#000", width=1.0):
        s = " ".join("%.2f,%.2f" % self.p(x, y) for x, y in pts)
        self.items.append(f'<polyline points="{s}" fill="none" stroke="{stroke}" stroke-width="{width:.2f}"/>')

    def arrow(self, a, b, stroke="#d62728", width=1.5):
        (x0, y0), (x1, y1) = self.p(*a), self.p(*b)
        self.items.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" stroke="{stroke}" '
                          f'stroke-width="{width:.2f}" marker-end="url(#head)"/>')

    def circle(self, c, r, fill="#d62728"):
        x, y = self.p(*c)
        self.items.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" fill="{fill}"/>')

    def text(self, c, s, size=10):
        x, y = self.p(*c)
        self.items.append(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" font-family="monospace">{s}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n'
                '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
                '<path d="M0,0 L6,3 L0,6 z" fill="#d62728"/></marker></defs>\n'
                f'<rect width="{self.w}" height="{self.h}" fill="#ffffff"/>\n')
        return head + "\n".join(self.items) + "\n</svg>\n"


def _silhouette(obj):
    if obj.outline is not None:
        return obj.outline
    from .geometry import convex_hull
    return convex_hull(obj.boundary_points)


def _view(scenario, poses, pad=0.08):
    r = float(np.max(np.hypot(*scenario.object.boundary_points.T)))
    P = np.asarray(poses, dtype=float).reshape(-1, 3)
    x0, x1 = P[:, 0].min() - r - pad, P[:, 0].max() + r + pad
    y0, y1 = min(P[:, 1].min() - r, scenario.environment.floor) - pad, P[:, 1].max() + r + pad
    return x0, x1, y0, y1


def _environment(cv, env, box):
    x0, x1, y0, y1 = box
    for reg in env.regions:
        v = np.clip(reg, [x0 - 1, y0 - 1], [x1 + 1, y1 + 1])
        cv.poly(v, fill="#cccccc", stroke="#555555", width=1.0)


def _placed(obj, q):
    return q[:2] + _silhouette(obj) @ rot(q[2]).T


def trajectory_svg(scenario, mode, rec: TrajectoryRecord, force_scale: float = 0.05) -> str:
    """Object silhouettes along the trajectory with manipulator (red) and
    environment (blue) force arrows, one arrow per nonzero force."""
    from .verify import _manip
    obj, env = scenario.object, scenario.environment
    box = _view(scenario, rec.q)
    cv = _Canvas(box)
    _environment(cv, env, box)
    T = rec.T
    for t in range(T + 1):
        q = rec.q[t]
        op = 0.25 + 0.75 * t / max(T, 1)
        cv.poly(_placed(obj, q), fill="none", stroke="#333333", width=1.0, opacity=op)
        if t == T:
            continue
        R = rot(q[2])
        if mode is not None:
            pts, f = _manip(mode, rec.u[t])
            for p, fo in zip(pts, f):
                if np.hypot(*fo) > 1e-6:
                    a = q[:2] + R @ p
                    cv.arrow(a - force_scale * (R @ fo), a, stroke="#d62728")
        for k, i in enumerate(rec.point_ids):
            zn = rec.z[t, k, 0]
            if zn > 1e-6:
                a = q[:2] + R @ obj.boundary_points[int(i)]
                cv.arrow(a, a + np.array([0.0, force_scale * zn]), stroke="#1f77b4", width=1.0)
    cv.text((box[0] + 0.01, box[3] - 0.02), f"{getattr(scenario, 'name', '')} {mode.name if mode else ''}")
    return cv.render()


def tree_svg(scenario, tree, path=None) -> str:
    """Tree of a planning run: edge waypoints colored by mode, nodes as bold
    red dots, the solution path drawn thicker."""
    obj, env = scenario.object, scenario.environment
    names = [m.name for m in scenario.modes]
    poses = [nd.q.as_array() for nd in tree] + [scenario.q_goal.as_array()]
    box = _view(scenario, poses)
    cv = _Canvas(box)
    _environment(cv, env, box)
    on_path = set(path or [])
    cv.poly(_placed(obj, scenario.q_goal.as_array()), stroke="#2ca02c", width=1.0, opacity=0.6)
    for nd in tree:
        if nd.parent is None or nd.incoming_trajectory is None:
            continue
        name = nd.incoming_mode.name if nd.incoming_mode is not None else ""
        col = MODE_COLORS[names.index(name) % len(MODE_COLORS)] if name in names else "#000000"
        q = nd.incoming_trajectory.raw.q
        cv.line(q[:, :2], stroke=col, width=2.5 if nd.id in on_path else 1.0)
        for qq in q[1:-1]:
            cv.circle(qq[:2], 1.5, fill=col)
    for nd in tree:
        qa = nd.q.as_array()
        if nd.id in on_path:
            cv.poly(_placed(obj, qa), stroke="#333333", width=0.8, opacity=0.5)
        cv.circle(qa[:2], 4.0, fill="#d62728")
    return cv.render()


# ---------------------------------------------------------------- reports
REPORT_KEYS = ("kind", "scenario", "mode", "seed", "status", "outer_iters", "avg_index_points",
               "n_points", "newton_iters", "tree_nodes", "path_nodes", "stocs_calls")


def dumps_report(rep: dict) -> str:
    """Deterministic JSON of the run report (timing lives in timing.json)."""
    d = {k: rep[k] for k in REPORT_KEYS if k in rep}
    return json.dumps(d, indent=1, sort_keys=True) + "\n"


def _med(v):
    return float(np.median(v)) if len(v) else math.nan


def planner_table(name: str, reports: list, times: list | None = None) -> str:
    """Row in the style of the planner timing table: success, times, nodes."""
    ok = [r for r in reports if r["status"] == "Found"]
    head = f"{'Task':24s} {'Success':>8s} {'Time med (min-max) s':>24s} {'Tree':>6s} {'Path':>6s} {'STOCS':>6s}"
    if times:
        tt = [times[i] for i, r in enumerate(reports) if r["status"] == "Found"]
        tstr = f"{_med(tt):.1f} ({min(tt):.1f}-{max(tt):.1f})" if tt else "-"
    else:
        tstr = "-"
    row = (f"{name:24s} {len(ok):>4d}/{len(reports):<3d} {tstr:>24s} {_med([r['tree_nodes'] for r in ok]):>6.1f} "
           f"{_med([r['path_nodes'] for r in ok]):>6.1f} {_med([r['stocs_calls'] for r in ok]):>6.1f}")
    return head + "\n" + row + "\n"


def stocs_table(rows: list) -> str:
    """Rows of {scenario, n_points, stocs: report, vanilla: report, times}."""
    out = [f"{'Object':16s} {'# Points':>8s} {'STOCS s':>9s} {'Outer':>6s} {'Index':>7s} {'MPCC s':>10s} {'MPCC':>14s}"]
    for r in rows:
        s, v = r.get("stocs") or {}, r.get("vanilla") or {}
        st = r.get("stocs_time")
        vt = r.get("vanilla_time")
        out.append(f"{r['scenario']:16s} {r['n_points']:>8d} {('%.1f' % st) if st is not None else '-':>9s} "
                   f"{s.get('outer_iters', '-')!s:>6s} "
                   f"{('%.2f' % s['avg_index_points']) if 'avg_index_points' in s else '-':>7s} "
                   f"{('%.1f' % vt) if vt is not None else '-':>10s} {v.get('status', '-'):>14s}")
    return "\n".join(out) + "\n"
