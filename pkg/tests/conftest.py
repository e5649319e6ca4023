import os
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stocs.contact import ONE_POINT_SLIDE, ManipulationMode
from stocs.geometry import EnvironmentModel, ObjectModel, sample_polygon_boundary
from stocs.mpcc import Bounds

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.register_profile("exhaustive", max_examples=10_000, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

BOX = np.array([[-0.05, -0.1], [0.05, -0.1], [0.05, 0.1], [-0.05, 0.1]])
FLOOR = [[-2.0, -1.0], [2.0, -1.0], [2.0, 0.0], [-2.0, 0.0]]


def box_object(mu_env=0.3, mu_mnp=0.7, mass=0.1, outline=BOX, n=104):
    return ObjectModel(sample_polygon_boundary(outline, n), [0.0, 0.0], mass, mu_env, mu_mnp, outline)


def floor_env(*extra):
    return EnvironmentModel(regions=[FLOOR, *extra])


def scenario_ns(obj, env, bounds=None):
    return SimpleNamespace(object=obj, environment=env, bounds=bounds or Bounds(), gravity=9.8,
                           name="test")


@pytest.fixture
def box():
    return box_object()


@pytest.fixture
def floor():
    return floor_env()


@pytest.fixture
def push_left():
    return ManipulationMode("push_left", ONE_POINT_SLIDE, face=[BOX[3], BOX[0]])


@pytest.fixture(scope="session")
def box_pivot_run():
    """Golden box pivot solved once per session: (scenario, mode, result, wall time)."""
    from stocs import trajopt
    from stocs.scenario import load_scenario
    sc = load_scenario("box_pivot")
    m = sc.modes[0]
    res = trajopt.run(sc, m, sc.q_init, sc.q_goal, trajopt.StocsSettings())
    return sc, m, res


SHELF = [[0.3, 0.0], [0.5, 0.0], [0.5, 0.3], [0.3, 0.3]]
GRASP_POINTS = [[-0.05, 0.0], [0.05, 0.0]]


def jacobian_problem(mode_kind, T=4, ids=(0, 5, 40, 77), clearance=0.01):
    """Small problem over floor + shelf used by the finite-difference checks."""
    from stocs.contact import FIXED_POINTS, IndexPoint
    from stocs.mpcc import IndexSet, MpccProblem
    obj = box_object()
    env = floor_env(SHELF)
    mode = {None: None,
            ONE_POINT_SLIDE: ManipulationMode("left", ONE_POINT_SLIDE, face=[BOX[3], BOX[0]]),
            FIXED_POINTS: ManipulationMode("grasp", FIXED_POINTS, points=GRASP_POINTS)}[mode_kind]
    Y = IndexSet([IndexPoint(i, obj.boundary_points[i]) for i in ids])
    return MpccProblem(obj, env, mode, [0, 0.1, 0], [0.15, 0.05, -np.pi / 2], Y, T, 0.1,
                       bounds=Bounds(finger_clearance=clearance))


def random_interior_point(pb, rng):
    """Random decision vector strictly inside the variable bounds (q_0 is free here:
    derivatives are taken with respect to every coordinate)."""
    x = rng.uniform(-0.5, 0.5, pb.n)
    L = pb.layout
    x[L.q[:, 1]] += 0.3
    x[L.z] = rng.uniform(0.01, 2.0, L.z.shape)
    x[L.gamma] = rng.uniform(0.01, 1.0, L.gamma.shape)
    if pb.slide:
        x[L.u[:, 0]] = rng.uniform(0.1, 0.9, pb.T)
        x[L.u[:, 1]] = rng.uniform(0.01, 2.0, pb.T)
    elif pb.m_u:
        x[L.u[:, 0::2]] = rng.uniform(0.01, 2.0, L.u[:, 0::2].shape)
    return x


def fd_jacobian(fun, x, h=1e-6):
    f0 = np.atleast_1d(fun(x))
    J = np.zeros((len(f0), len(x)))
    for j in range(len(x)):
        e = np.zeros(len(x))
        e[j] = h
        J[:, j] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * h)
    return J


def rel_err(A, B):
    """Largest entrywise difference, relative to the larger of 1 and the Jacobian scale."""
    if A.size == 0:
        return 0.0
    return float(np.abs(A - B).max() / max(1.0, np.abs(B).max()))


def family_jacobian_errors(pb, x, h=1e-6):
    """Relative error of every constraint family's analytic Jacobian at x."""
    ev = pb.evaluate(x)
    Je = fd_jacobian(lambda v: pb.evaluate(v, False).c_eq, x, h)
    Ji = fd_jacobian(lambda v: pb.evaluate(v, False).c_in, x, h)
    Jc = fd_jacobian(lambda v: pb.evaluate(v, False).cc, x, h)
    Jf = fd_jacobian(lambda v: pb.evaluate(v, False).f, x, h)
    Ae, Ai, Ac = ev.J_eq.toarray(), ev.J_in.toarray(), ev.J_cc.toarray()
    out = {"dynamics": rel_err(Ae[:pb.n_dyn], Je[:pb.n_dyn]),
           "balance": rel_err(Ae[pb.n_dyn:], Je[pb.n_dyn:]),
           "complementarity": rel_err(Ac, Jc),
           "objective": rel_err(ev.grad[None], Jf)}
    for name, rows in pb.fam.items():
        if len(rows):
            out[name] = rel_err(Ai[rows], Ji[rows])
    return out


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []


def record_criterion(n, ok, detail):
    ACCEPTANCE.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
