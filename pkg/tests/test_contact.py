import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stocs.contact import (FIXED_POINTS, ONE_POINT_SLIDE, ContactForce, ControlInput, IndexPoint, ManipulationMode,
                           ModeInactive, contact_frame, friction_residual, manipulator_wrench,
                           tangential_velocity_pair, wrench_balance)
from stocs.geometry import Pose2, Twist2, cross2, rot

from conftest import BOX

force = st.floats(0, 10, allow_nan=False)
signed = st.floats(-10, 10, allow_nan=False)


def corner(i):
    return IndexPoint(i, tuple(BOX[i]))


# ------------------------------------------------------------ frames
def test_contact_frame_examples(box, floor):
    g, n, t = contact_frame(box, floor, [0, 0.1, 0], corner(0))
    assert g == pytest.approx(0, abs=1e-15) and np.allclose(n, [0, 1]) and np.allclose(t, [1, 0])
    assert contact_frame(box, floor, [0, 0.2, 0], corner(0))[0] == pytest.approx(0.1)
    assert contact_frame(box, floor, [0, 0.05, 0], corner(1))[0] == pytest.approx(-0.05)


def test_friction_residual_examples():
    assert friction_residual(0.3, ContactForce(1, 0.2, 0)) == pytest.approx(0.1)
    assert friction_residual(0.3, ContactForce(1, 0.3, 0)) == pytest.approx(0, abs=1e-15)
    assert friction_residual(0.7, ContactForce()) == 0.0


@given(st.floats(0, 2), force, force, force, st.floats(0, 100))
def test_friction_residual_homogeneous(mu, zn, zp, zm, c):
    z = np.array([zn, zp, zm])
    assert friction_residual(mu, c * z) == pytest.approx(c * friction_residual(mu, z), rel=1e-12, abs=1e-9)


def test_tangential_velocity_pair_examples(box, floor):
    q = [0, 0.1, 0]
    y = corner(0)
    assert tangential_velocity_pair(box, floor, q, Twist2(), y) == (0.0, 0.0)
    assert tangential_velocity_pair(box, floor, q, Twist2(0.2, 0, 0), y) == pytest.approx((0.2, 0.0))
    assert tangential_velocity_pair(box, floor, q, Twist2(-0.1, 0, 0), y) == pytest.approx((0.0, 0.1))


# ------------------------------------------------------------ wrench
def test_wrench_balance_examples(box, floor):
    q = Pose2(0, 0.1, 0)
    two = [(corner(0), ContactForce(0.49, 0, 0)), (corner(1), ContactForce(0.49, 0, 0))]
    assert np.allclose(wrench_balance(box, floor, q, None, np.zeros(0), two), 0, atol=1e-12)
    mid = IndexPoint(999, (0.0, -0.1))
    assert np.allclose(wrench_balance(box, floor, q, None, np.zeros(0), [(mid, ContactForce(0.98, 0, 0))]), 0,
                       atol=1e-12)
    # an unbalanced single corner leaves a torque m g * 0.05
    r = wrench_balance(box, floor, q, None, np.zeros(0), [(corner(0), ContactForce(0.98, 0, 0))])
    assert np.allclose(r, [0, 0, -0.98 * 0.05], atol=1e-12)


def test_wrench_balance_pivot_state(box_pivot_run):
    sc, m, res = box_pivot_run
    t = len(res.trajectory) // 2
    s = res.trajectory[t]
    r = wrench_balance(sc.object, sc.environment, s.q, m, s.u, [(y, z) for y, z, _ in s.contacts])
    assert np.max(np.abs(r)) <= 1e-4


def test_manipulator_wrench_push(push_left):
    # pushing the left face at its midpoint with 1 N moves the box along +x with no torque
    w = manipulator_wrench(push_left, np.zeros(2), 0.0, [0.5, 1.0, 0.0])
    assert np.allclose(w, [1, 0, 0], atol=1e-15)
    # the same push at the top end of the face, 0.1 above the CoM, turns the box clockwise
    w = manipulator_wrench(push_left, np.zeros(2), 0.0, [0.0, 1.0, 0.0])
    assert np.allclose(w, [1, 0, -0.1], atol=1e-15)
    # rotation of the object rotates the force, torque is frame independent
    w = manipulator_wrench(push_left, np.zeros(2), math.pi / 2, [0.0, 1.0, 0.0])
    assert np.allclose(w, [0, 1, -0.1], atol=1e-15)


vec11 = st.lists(signed, min_size=11, max_size=11)


@given(st.floats(-3, 3), vec11, vec11, st.floats(-5, 5))
def test_wrench_balance_linear(box, floor, push_left, th, a, b, c):
    """Without gravity the residual is linear in (u.force, z) at fixed q."""
    q = [0.1, 0.3, th]
    ys = [corner(0), corner(1), IndexPoint(7, tuple(box.boundary_points[7]))]

    def s(v):
        cs = [(y, ContactForce(*v[2 + 3 * i:5 + 3 * i])) for i, y in enumerate(ys)]
        return wrench_balance(box, floor, q, push_left, [0.25, v[0], v[1]], cs, gravity=0.0)

    va, vb = np.array(a), np.array(b)
    assert np.allclose(s(va + c * vb), s(va) + c * s(vb), atol=1e-9)


def test_wrench_balance_matches_manual_sum(box, floor, push_left):
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = np.array([rng.uniform(-1, 1), rng.uniform(0, 0.5), rng.uniform(-4, 4)])
        u = np.array([rng.uniform(0, 1), rng.uniform(0, 3), rng.uniform(-2, 2)])
        ids = rng.choice(box.n_points, 3, replace=False)
        zs = rng.uniform(0, 2, (3, 3))
        cs = [(IndexPoint(int(i), tuple(box.boundary_points[i])), ContactForce(*z)) for i, z in zip(ids, zs)]
        R = rot(q[2])
        F = np.array([0, -0.98])
        tau = 0.0
        p = BOX[3] + u[0] * (BOX[0] - BOX[3])
        f = R @ (u[1] * np.array([1.0, 0.0]) + u[2] * np.array([0.0, -1.0]))
        F = F + f
        tau += cross2(R @ p, f)
        for i, z in zip(ids, zs):
            w = q[:2] + R @ box.boundary_points[i]
            _, n, t = contact_frame(box, floor, q, IndexPoint(int(i), tuple(box.boundary_points[i])))
            fz = z[0] * n + (z[1] - z[2]) * t
            F = F + fz
            tau += cross2(w - q[:2], fz)
        assert np.allclose(wrench_balance(box, floor, q, push_left, u, cs), [F[0], F[1], tau], atol=1e-12)


# ------------------------------------------------------------ modes
def test_mode_validation(box):
    with pytest.raises(ValueError):
        ManipulationMode("bad", "rolling")
    with pytest.raises(ValueError):
        ManipulationMode("bad", ONE_POINT_SLIDE, face=[[0, 0], [0, 0]])
    with pytest.raises(ModeInactive):
        ManipulationMode("off", FIXED_POINTS, points=[[0.0, 0.0]]).bind(box)
    with pytest.raises(ModeInactive):
        ManipulationMode("off", ONE_POINT_SLIDE, face=[[0.0, 0.0], [0.05, 0.1]]).bind(box)
    g = ManipulationMode("grasp", FIXED_POINTS, points=[[-0.05, 0], [0.05, 0]]).bind(box)
    assert np.allclose(g.normals, [[1, 0], [-1, 0]])


def test_control_input_round_trip(push_left):
    u = ControlInput(0.3, [[1.5, -0.2]])
    assert np.allclose(u.as_vector(push_left), [0.3, 1.5, -0.2])
    v = ControlInput.from_vector([0.3, 1.5, -0.2], push_left)
    assert v.contact_param == 0.3 and np.allclose(v.force, [[1.5, -0.2]])
    g = ManipulationMode("grasp", FIXED_POINTS, points=[[-0.05, 0], [0.05, 0]])
    assert np.allclose(ControlInput.from_vector([1, 2, 3, 4], g).as_vector(g), [1, 2, 3, 4])
