"""Regenerate the golden scenario files in src/stocs/data.

Object silhouettes are hand-digitized reference shapes; task environments
are reconstructions of shelf/slot/hole layouts, not measured geometry.
"""
import math
from pathlib import Path

import numpy as np
import yaml

from stocs.geometry import ObjectModel, EnvironmentModel, convex_hull, rot, sample_polygon_boundary, stable_poses, wrap_angle

OUT = Path(__file__).resolve().parents[1] / "src" / "stocs" / "data"
FLOOR = [[-2.0, -1.0], [2.0, -1.0], [2.0, 0.0], [-2.0, 0.0]]


def centroid(v):
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    c = x * yn - xn * y
    a = c.sum() / 2
    return np.array([np.sum((x + xn) * c) / (6 * a), np.sum((y + yn) * c) / (6 * a)])


def centered(v):
    v = np.asarray(v, dtype=float)
    return np.round(v - centroid(v), 6)


BOX = centered([[-0.05, -0.1], [0.05, -0.1], [0.05, 0.1], [-0.05, 0.1]])
PEG = centered([[-0.02, -0.08], [0.02, -0.08], [0.02, 0.04], [0.06, 0.04], [0.06, 0.08],
                [-0.06, 0.08], [-0.06, 0.04], [-0.02, 0.04]])
MUSTARD = centered([[-0.045, -0.095], [0.045, -0.095], [0.045, 0.045], [0.03, 0.07], [0.015, 0.075],
                    [0.015, 0.095], [-0.015, 0.095], [-0.015, 0.075], [-0.03, 0.07], [-0.045, 0.045]])


def r6(a):
    return [round(float(v), 9) for v in a]


def pts(v):
    return [r6(p) for p in v]


def edge_modes(outline, names):
    """One-point sliding modes on the listed outline edges (index -> name)."""
    out = []
    n = len(outline)
    for j, name in names.items():
        out.append({"name": name, "kind": "one_point_slide", "face": pts([outline[j], outline[(j + 1) % n]]), "rate": 0.2})
    return out


def resting_y(outline, theta, floor=0.0):
    return floor - float((outline @ rot(theta).T)[:, 1].min())


def pivot_goal(outline, n_points, mass, q_init):
    """Roll about the bottom-right hull corner onto the stable side nearest -pi/2."""
    obj = ObjectModel(sample_polygon_boundary(outline, n_points), [0, 0], mass, 0.3, 0.7, outline)
    env = EnvironmentModel((np.array(FLOOR),))
    angles = [a for a, _ in stable_poses(obj, env)]
    th = min(angles, key=lambda a: abs(wrap_angle(a + math.pi / 2)))
    low = outline[np.isclose(outline[:, 1], outline[:, 1].min())]
    c = low[np.argmax(low[:, 0])]
    corner = np.asarray(q_init[:2]) + c
    xy = corner - rot(th) @ c
    return [float(xy[0]), float(xy[1]), float(th)]


def write(name, doc):
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / f"{name}.yaml").write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=120))


def pivot(name, outline, n, left_edge):
    q0 = [0.0, resting_y(outline, 0.0), 0.0]
    doc = {
        "name": name,
        "object": {"outline": pts(outline), "n_points": n, "com": [0.0, 0.0]},
        "physics": {"mass": 0.1, "mu_env": 0.3, "mu_mnp": 0.7, "gravity": 9.8},
        "environment": {"floor": 0.0, "regions": [FLOOR]},
        "modes": edge_modes(outline, {left_edge: "push_left"}),
        "q_init": r6(q0),
        "q_goal": r6(pivot_goal(outline, n, 0.1, q0)),
        "bounds": {"workspace": [-2.0, 2.0, -1.0, 2.0], "velocity": [1.0, 1.0, round(math.pi, 9)],
                   "force_max": 100.0, "slack_max": 10.0, "theta_limit": round(4 * math.pi, 9), "finger_clearance": 0.0},
    }
    write(name, doc)


def task(name, outline, n, env, modes, q_init, q_goal, workspace):
    doc = {
        "name": name,
        "object": {"outline": pts(outline), "n_points": n, "com": [0.0, 0.0]},
        "physics": {"mass": 0.1, "mu_env": 1.0, "mu_mnp": 1.0, "gravity": 9.8},
        "environment": {"floor": 0.0, "regions": env},
        "modes": modes,
        "q_init": r6(q_init),
        "q_goal": r6(q_goal),
        "bounds": {"workspace": workspace, "velocity": [1.0, 1.0, round(math.pi, 9)],
                   "force_max": 100.0, "slack_max": 10.0, "theta_limit": round(4 * math.pi, 9), "finger_clearance": 0.005},
    }
    write(name, doc)


def main():
    pivot("box_pivot", BOX, 104, 3)
    pivot("peg_pivot", PEG, 104, 5)
    pivot("mustard_pivot", MUSTARD, 247, 9)

    # Task 1: reorient a lying box to upright and place it
    half = math.pi / 2
    box_modes = edge_modes(BOX, {0: "push_bottom", 1: "push_right", 2: "push_top", 3: "push_left"})
    box_modes.append({"name": "grasp_sides", "kind": "fixed_points",
                      "points": pts([[BOX[0, 0], 0.0], [BOX[1, 0], 0.0]]), "admissible_angles": [0.0, -math.pi]})
    lying = [0.0, resting_y(BOX, half), half]
    upright = [0.3, resting_y(BOX, 0.0), 0.0]
    ws = [-0.3, 0.6, 0.0, 0.3]
    task("task1_forward", BOX, 104, [FLOOR], box_modes, lying, upright, ws)
    task("task1_reverse", BOX, 104, [FLOOR], box_modes, upright, lying, ws)

    # Task 2: pack a mustard bottle upright into a slot between two walls
    m_modes = edge_modes(MUSTARD, {0: "push_bottom", 1: "push_right", 9: "push_left"})
    m_modes.append({"name": "grasp_body", "kind": "fixed_points",
                    "points": pts([[MUSTARD[0, 0], MUSTARD[0, 1] + 0.07], [MUSTARD[1, 0], MUSTARD[1, 1] + 0.07]]),
                    "admissible_angles": [0.0]})
    slot_env = [FLOOR, [[0.25, 0.0], [0.30, 0.0], [0.30, 0.12], [0.25, 0.12]],
                [[0.40, 0.0], [0.45, 0.0], [0.45, 0.12], [0.40, 0.12]]]
    m_lying = [-0.1, resting_y(MUSTARD, half), half]
    m_slot = [0.35, resting_y(MUSTARD, 0.0), 0.0]
    task("task2_forward", MUSTARD, 247, slot_env, m_modes, m_lying, m_slot, [-0.3, 0.6, 0.0, 0.4])
    task("task2_reverse", MUSTARD, 247, slot_env, m_modes, m_slot, m_lying, [-0.3, 0.6, 0.0, 0.4])

    # Task 3: unplug a peg from a hole and lay it down
    p_modes = edge_modes(PEG, {4: "push_top", 5: "push_head_left", 3: "push_head_right"})
    p_modes.append({"name": "grasp_head", "kind": "fixed_points",
                    "points": pts([[PEG[5, 0], (PEG[5, 1] + PEG[6, 1]) / 2], [PEG[3, 0], (PEG[2, 1] + PEG[3, 1]) / 2]]),
                    "admissible_angles": [0.0]})
    hole = [[[-2.0, -1.0], [0.4775, -1.0], [0.4775, 0.0], [-2.0, 0.0]],
            [[0.5225, -1.0], [2.0, -1.0], [2.0, 0.0], [0.5225, 0.0]],
            [[0.4775, -1.0], [0.5225, -1.0], [0.5225, -0.06], [0.4775, -0.06]]]
    p_in = [0.5, -0.06 - float(PEG[:, 1].min()), 0.0]
    obj = ObjectModel(sample_polygon_boundary(PEG, 104), [0, 0], 0.1, 1.0, 1.0, PEG)
    th = min((a for a, _ in stable_poses(obj, EnvironmentModel((np.array(FLOOR),)))), key=lambda a: abs(wrap_angle(a - half)))
    p_down = [0.2, resting_y(PEG, th), th]
    task("task3_forward", PEG, 104, hole, p_modes, p_in, p_down, [-0.3, 0.8, -0.1, 0.4])
    task("task3_reverse", PEG, 104, hole, p_modes, p_down, p_in, [-0.3, 0.8, -0.1, 0.4])


if __name__ == "__main__":
    main()
