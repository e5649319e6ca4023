import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from stocs import _accel
from stocs.geometry import (EnvironmentModel, NoStablePose, ObjectModel, Pose2, Twist2, inverse_transform_point,
                            point_velocity, rot, sample_polygon_boundary, signed_distance, stable_poses,
                            transform_point, wrap_angle)
from stocs.planner import stability_test
from stocs.scenario import load_scenario
from stocs.verify import polygon_distance

from conftest import floor_env

coord = st.floats(-3, 3, allow_nan=False)
angle = st.floats(-10, 10, allow_nan=False)


# ------------------------------------------------------------ transforms
def test_transform_point_examples():
    assert np.allclose(transform_point(Pose2(0, 0, 0), [0.3, -0.2]), [0.3, -0.2], atol=1e-15)
    assert np.allclose(transform_point(Pose2(1, 0, math.pi / 2), [1, 0]), [1, 1], atol=1e-12)
    assert np.allclose(transform_point(Pose2(0.5, -0.2, math.pi), [1, 1]), [-0.5, -1.2], atol=1e-12)


def test_point_velocity_examples():
    assert np.allclose(point_velocity(Pose2(), Twist2(), [0.4, 0.1]), [0, 0])
    assert np.allclose(point_velocity(Pose2(), Twist2(0, 0, 1), [1, 0]), [0, 1])
    assert np.allclose(point_velocity(Pose2(), Twist2(1, 0, 2), [0, 0.5]), [0, 0], atol=1e-15)


@given(coord, coord, angle, coord, coord)
def test_transform_inverse_identity(x, y, th, px, py):
    q = Pose2(x, y, th)
    w = transform_point(q, [px, py])
    assert np.allclose(inverse_transform_point(q, w), [px, py], atol=1e-12, rtol=0)
    # composing with the inverse pose gives the identity pose
    e = q.compose(q.inverse()).as_array()
    assert np.allclose(e[:2], 0, atol=1e-12)
    assert abs(wrap_angle(e[2])) < 1e-12


@given(angle)
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w < math.pi
    assert abs(math.remainder(w - a, 2 * math.pi)) < 1e-9


# ------------------------------------------------------------ signed distance
def test_signed_distance_floor_examples(floor):
    d, n, t = signed_distance(floor, [0, 0.5])
    assert d == pytest.approx(0.5) and np.allclose(n, [0, 1]) and np.allclose(t, [1, 0])
    assert signed_distance(floor, [0, 0])[0] == pytest.approx(0.0, abs=1e-15)
    assert signed_distance(floor, [0, -0.2])[0] == pytest.approx(-0.2)


def test_signed_distance_vertex_normal_and_union():
    env = floor_env([[0.3, 0], [0.5, 0], [0.5, 0.3], [0.3, 0.3]])
    # outside near the shelf top-left vertex: normal points from the vertex to the query point
    d, n, _ = signed_distance(env, [0.27, 0.34])
    assert d == pytest.approx(0.05) and np.allclose(n, [-0.6, 0.8])
    # inside the shelf: minimum over regions of per-region depth
    d, n, _ = signed_distance(env, [0.32, 0.2])
    assert d == pytest.approx(-0.02) and np.allclose(n, [-1, 0])


def test_environment_rejects_bad_regions():
    with pytest.raises(ValueError):
        EnvironmentModel(regions=[])
    with pytest.raises(ValueError):
        EnvironmentModel(regions=[[[0, 0], [1, 0], [0.2, 0.2], [0, 1]]])   # non-convex
    with pytest.raises(ValueError):
        EnvironmentModel(regions=[[[0, 0], [1, 0]]])


@pytest.fixture(scope="module")
def shelf():
    return floor_env([[0.3, 0], [0.5, 0], [0.5, 0.3], [0.3, 0.3]], [[-0.4, 0.1], [-0.2, 0.15], [-0.3, 0.4]])


pt = st.tuples(st.floats(-1, 1), st.floats(-0.5, 1))


@given(pt, pt)
def test_signed_distance_lipschitz(shelf, p, r):
    d1 = signed_distance(shelf, p)[0]
    d2 = signed_distance(shelf, r)[0]
    assert abs(d1 - d2) <= math.dist(p, r) + 1e-12


@given(pt)
def test_normal_matches_distance_gradient(shelf, p):
    d, n, _ = signed_distance(shelf, p)
    assume(abs(d) > 1e-3)
    h = 1e-7
    g = np.array([(signed_distance(shelf, np.add(p, e))[0] - signed_distance(shelf, np.subtract(p, e))[0]) / (2 * h)
                  for e in (np.array([h, 0]), np.array([0, h]))])
    # skip points equidistant from two features (the medial axis), where the gradient is not unique
    assume(np.linalg.norm(g) > 1 - 1e-4)
    assert np.allclose(g, n, atol=1e-5)


def test_signed_distance_matches_independent_routine(shelf):
    pts = np.random.default_rng(3).uniform([-1, -0.5], [1, 1], (2000, 2))
    d, n, _ = shelf.query(pts)
    d2, n2 = polygon_distance(shelf.regions, pts)
    assert np.abs(d - d2).max() < 1e-12
    assert np.abs(n - n2).max() < 1e-9


@pytest.mark.parametrize("use_numba", [False, True])
def test_kernel_paths_agree(shelf, use_numba):
    if use_numba and not _accel.numba_enabled():
        pytest.skip("numba disabled")
    rng = np.random.default_rng(4)
    pts = rng.uniform([-1, -0.5], [1, 1], (500, 2))
    ref = _accel.signed_distance_batch(pts, shelf.verts, shelf.offsets, shelf.enorm, use_numba=False)
    got = _accel.signed_distance_batch(pts, shelf.verts, shelf.offsets, shelf.enorm, use_numba=use_numba)
    for a, b in zip(ref, got):
        assert np.allclose(a, b, atol=1e-14)
    poses = rng.uniform([-0.5, 0, -4], [0.5, 0.5, 4], (7, 3))
    local = rng.uniform(-0.1, 0.1, (30, 2))
    G = _accel.gap_table(poses, local, shelf.verts, shelf.offsets, shelf.enorm, use_numba=use_numba)
    for t in range(len(poses)):
        w = transform_point(poses[t], local)
        assert np.allclose(G[t], polygon_distance(shelf.regions, w)[0], atol=1e-12)


# ------------------------------------------------------------ boundary sampling
@pytest.mark.parametrize("n", [4, 10, 104, 247])
def test_sample_polygon_boundary_counts(n):
    v = np.array([[-0.05, -0.1], [0.05, -0.1], [0.05, 0.1], [-0.05, 0.1]])
    b = sample_polygon_boundary(v, n)
    assert b.shape == (n, 2)
    assert len(np.unique(np.round(b, 12), axis=0)) == n
    obj = ObjectModel(b, [0, 0], 1.0, 0.3, 0.3, v)
    assert all(obj.on_boundary(p) for p in b)
    for corner in v:
        assert np.min(np.hypot(*(b - corner).T)) == 0.0


# ------------------------------------------------------------ stable poses
def _rect(w, h):
    v = np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]])
    return ObjectModel(sample_polygon_boundary(v, 40), [0, 0], 1.0, 0.5, 0.5, v)


def test_stable_poses_unit_square(floor):
    th = [a for a, _ in stable_poses(_rect(1, 1), floor)]
    assert np.allclose(th, [-math.pi, -math.pi / 2, 0, math.pi / 2])


def test_stable_poses_rectangle(floor):
    res = stable_poses(_rect(2, 1), floor)
    assert np.allclose([a for a, _ in res], [-math.pi, -math.pi / 2, 0, math.pi / 2])
    assert np.allclose([h for _, h in res], [0.5, 1.0, 0.5, 1.0])


def test_stable_poses_none(floor):
    # a CoM inside a convex body always projects into some edge, so place
    # it outside every edge's perpendicular slab
    v = np.array([[0, 0], [1, 0], [0, 1]])
    obj = ObjectModel(sample_polygon_boundary(v, 12), [5, -3], 1.0, 0.3, 0.3, v)
    with pytest.raises(NoStablePose):
        stable_poses(obj, floor)


def settle_sweep(obj, n=3600, tol=1e-9):
    """Resting angles reached by rolling the object from n orientations.

    From each start the lowest point is put on the floor; while the CoM is
    not strictly above the support interval the body pivots about the
    support end on the CoM side until the next boundary point lands."""
    P = obj.boundary_points - obj.com
    found = []
    for th in np.linspace(-math.pi, math.pi, n, endpoint=False):
        for _ in range(100):
            W = P @ rot(th).T
            W = W - [0, W[:, 1].min()]
            S = W[W[:, 1] <= tol]
            lo, hi = S[:, 0].min(), S[:, 0].max()
            if lo + tol < 0 < hi - tol:
                found.append(float(wrap_angle(th)))
                break
            if hi - tol <= 0 and lo + tol >= 0:
                break   # balanced on a single point above the CoM: unstable, never rests
            if hi - tol <= 0:    # CoM right of the support: roll clockwise about its right end
                r = W - S[np.argmax(S[:, 0])]
                m = r[:, 0] > 1e-12
                th -= np.arctan2(r[m, 1], r[m, 0]).min()
            else:                # CoM left of the support: roll counter-clockwise about its left end
                r = W - S[np.argmin(S[:, 0])]
                m = r[:, 0] < -1e-12
                th += np.arctan2(r[m, 1], -r[m, 0]).min()
    out = []
    for a in sorted(found):
        if not out or abs(a - out[-1]) > 1e-6:
            out.append(a)
    if len(out) > 1 and abs(out[-1] - out[0] - 2 * math.pi) < 1e-6:
        out.pop()
    return out


@pytest.mark.parametrize("name", ["peg_pivot", "box_pivot", "mustard_pivot"])
def test_stable_poses_match_settle_sweep(name):
    sc = load_scenario(name)
    got = [a for a, _ in stable_poses(sc.object, sc.environment)]
    ref = settle_sweep(sc.object)
    assert len(got) == len(ref)
    assert np.allclose(got, ref, atol=1e-6)


@pytest.mark.parametrize("name", ["peg_pivot", "box_pivot", "mustard_pivot"])
def test_stable_poses_pass_stability_test(name):
    sc = load_scenario(name)
    for th, h in stable_poses(sc.object, sc.environment):
        assert stability_test(sc.object, sc.environment, [0.0, h, th])
