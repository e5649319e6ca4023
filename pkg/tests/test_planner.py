import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from stocs import planner as pl
from stocs.geometry import Pose2, resting_height, stable_poses
from stocs.mpcc import Bounds
from stocs.planner import PlannerSettings, Temperature, TreeNode, se2_distance, transition_test
from stocs.scenario import load_scenario
from stocs.verify import verify_result

from conftest import box_object, floor_env

angle = st.floats(-10, 10, allow_nan=False)
coord = st.floats(-5, 5, allow_nan=False)


# ------------------------------------------------------------ metric
def test_se2_distance_examples():
    assert se2_distance([0, 0, 0], [3, 4, 0]) == pytest.approx(5)
    assert se2_distance([1, 1, 0.1], [1, 1, 2 * math.pi - 0.1]) == pytest.approx(0.2)
    assert se2_distance([0, 0, 0], [7, -3, math.pi / 2], w1=0, w2=1) == pytest.approx(math.pi / 2)
    assert se2_distance(Pose2(0, 0, 0), Pose2(0, 0, -math.pi)) == pytest.approx(math.pi)


@given(coord, coord, angle, coord, coord, angle, st.integers(-3, 3))
def test_se2_distance_wraparound(x1, y1, t1, x2, y2, t2, k):
    a, b = [x1, y1, t1], [x2, y2, t2]
    d = se2_distance(a, b)
    assert d == pytest.approx(se2_distance(b, a), abs=1e-12)
    assert d == pytest.approx(se2_distance(a, [x2, y2, t2 + 2 * math.pi * k]), abs=1e-9)
    assert se2_distance([0, 0, t1], [0, 0, t2]) <= math.pi + 1e-12


def brute_nearest(tree, q):
    ds = [se2_distance(n.q, q) for n in tree]
    return tree[int(np.argmin(ds))]


@given(st.integers(0, 2**31))
def test_nearest_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    tree = [TreeNode(i, Pose2(*rng.uniform([-1, -1, -4], [1, 1, 4]))) for i in range(int(rng.integers(1, 40)))]
    q = rng.uniform([-1, -1, -4], [1, 1, 4])
    assert pl.nearest(tree, q).id == brute_nearest(tree, q).id


# ------------------------------------------------------------ sampling
BOUNDS = Bounds(workspace=(-0.3, 0.6, 0.0, 0.3))


def test_uniform_samples_ks():
    rng = np.random.default_rng(0)
    s = PlannerSettings(p1=1.0, p2=0.0)
    q = np.array([pl.sample_configuration(s, rng, [0.0], [0, 0, 0], BOUNDS).as_array() for _ in range(10_000)])
    for col, (lo, hi) in zip(q.T, [(-0.3, 0.6), (0.0, 0.3), (-math.pi, math.pi)]):
        assert col.min() >= lo and col.max() <= hi
        assert stats.kstest(col, stats.uniform(lo, hi - lo).cdf).pvalue > 1e-3


def test_goal_branch_only():
    rng = np.random.default_rng(1)
    s = PlannerSettings(p1=0.0, p2=0.0)
    goal = Pose2(0.1, 0.2, 0.3)
    assert all(pl.sample_configuration(s, rng, [0.0], goal, BOUNDS) == goal for _ in range(100))


def test_stable_angle_branch_square():
    sq = box_object(outline=np.array([[-0.1, -0.1], [0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]]))
    angles = [th for th, _ in stable_poses(sq, floor_env())]
    rng = np.random.default_rng(2)
    s = PlannerSettings(p1=0.0, p2=1.0)
    got = {round(pl.sample_configuration(s, rng, angles, [0, 0, 0], BOUNDS).theta, 9) for _ in range(400)}
    assert got == {round(a, 9) for a in (0.0, math.pi / 2, -math.pi, -math.pi / 2)}


# ------------------------------------------------------------ transition test
def test_transition_rejects_above_c_max():
    rng = np.random.default_rng(0)
    t = Temperature(1e9)
    assert not transition_test([0, 0, 0], [3, 0, 0], [0, 0, 0], t, PlannerSettings(c_max=2.0), rng)
    assert t.value == 1e9 and t.n_fail == 0


@given(st.integers(0, 2**31))
def test_transition_downhill_always_accepted(seed):
    rng = np.random.default_rng(seed)
    goal = rng.uniform(-0.5, 0.5, 3)
    parent = goal + rng.uniform(-1, 1, 3)
    ideal = goal + rng.uniform(0, 1) * (parent - goal)        # strictly closer to the goal
    t = Temperature(float(rng.uniform(1e-9, 1)))
    v = t.value
    assert transition_test(parent, ideal, goal, t, PlannerSettings(c_max=10.0), rng)
    assert t.value == v


def accept_rate(temp, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    s = PlannerSettings(c_max=10.0)
    return np.mean([transition_test([0.5, 0, 0], [0.6, 0, 0], [0, 0, 0], Temperature(temp), s, rng)
                    for _ in range(n)])


def test_transition_temperature_limits():
    rates = [accept_rate(T) for T in (1e-6, 0.05, 0.2, 1.0, 1e6)]
    assert rates[0] == 0.0
    assert rates[-1] == 1.0
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    # closed form at T = 0.2: dC = 1, K = 0.55
    assert rates[2] == pytest.approx(math.exp(-1 / (0.55 * 0.2)), abs=0.03)


def test_temperature_adaptation():
    s = PlannerSettings(c_max=10.0, n_fail_max=3, temp_rate=2.0)
    t = Temperature(1e-9)
    rng = np.random.default_rng(0)
    for _ in range(3):
        transition_test([0.5, 0, 0], [0.6, 0, 0], [0, 0, 0], t, s, rng)
    assert t.value == 2e-9 and t.n_fail == 0
    t = Temperature(1e9)
    assert transition_test([0.5, 0, 0], [0.6, 0, 0], [0, 0, 0], t, s, rng)
    assert t.value == 5e8


# ------------------------------------------------------------ statics
def test_stability_flat_and_corner(box, floor):
    assert pl.stability_test(box, floor, [0, 0.1, 0])
    th = 0.3
    h = resting_height(box, th, 0.0)
    assert not pl.stability_test(box, floor, [0, h, th])
    assert not pl.stability_test(box, floor, [0, 0.5, 0])          # airborne
    assert not pl.stability_test(box, floor, [0, 0.09, 0])         # penetrating


def test_stability_at_stable_poses():
    for name in ("peg_pivot", "box_pivot", "mustard_pivot"):
        sc = load_scenario(name)
        for th, h in stable_poses(sc.object, sc.environment):
            assert pl.stability_test(sc.object, sc.environment, [0.0, h, th]), (name, th)


def test_stability_cache(box, floor):
    cache = {}
    assert pl.stability_test(box, floor, [0, 0.1, 0], cache=cache)
    assert list(cache.values()) == [True]
    assert pl.stability_test(box, floor, [0.00001, 0.1, 0], cache=cache)
    assert len(cache) == 1


# ------------------------------------------------------------ modes
def test_sample_mode_flat_box():
    sc = load_scenario("task1_reverse")
    ok = {m.name for m in sc.modes if pl.mode_admissible(sc.object, sc.environment, [0, 0.1, 0], m)}
    assert ok == {"push_right", "push_top", "push_left", "grasp_sides"}
    rng = np.random.default_rng(0)
    seen = {pl.sample_mode(sc.object, sc.environment, [0, 0.1, 0], sc.modes, rng).name for _ in range(200)}
    assert seen == ok


def test_grasp_needs_admissible_angle():
    sc = load_scenario("task1_reverse")
    grasp = next(m for m in sc.modes if m.name == "grasp_sides")
    assert pl.mode_admissible(sc.object, sc.environment, [0, 0.1, -math.pi], grasp)
    assert not pl.mode_admissible(sc.object, sc.environment, [0, 0.05, math.pi / 2], grasp)
    assert not pl.mode_admissible(sc.object, sc.environment, [0, 0.1, 0.01], grasp)


def test_no_admissible_mode():
    sc = load_scenario("task1_reverse")
    grasp = [m for m in sc.modes if m.name == "grasp_sides"]
    with pytest.raises(pl.NoAdmissibleMode):
        pl.sample_mode(sc.object, sc.environment, [0, 0.05, math.pi / 2], grasp, np.random.default_rng(0))


# ------------------------------------------------------------ planning
def test_plan_goal_equals_start():
    sc = load_scenario("task1_reverse")
    r = pl.plan(sc, sc.q_init, sc.q_init)
    assert r.status == pl.FOUND and len(r.tree) == 1 and r.path == [0]


def test_plan_unstable_start():
    sc = load_scenario("task1_reverse")
    with pytest.raises(pl.UnstableStart):
        pl.plan(sc, [0.3, 0.5, 0.0], sc.q_goal)


def test_plan_zero_extensions():
    sc = load_scenario("task1_reverse")
    r = pl.plan(sc, settings=PlannerSettings(max_extensions=0))
    assert r.status == pl.NOT_FOUND and len(r.tree) == 1 and r.stats.stocs_calls == 0


def test_settings_validation():
    with pytest.raises(ValueError):
        PlannerSettings(p1=0.8, p2=0.3)
    with pytest.raises(ValueError):
        PlannerSettings(temp_rate=1.0)
    with pytest.raises(ValueError):
        PlannerSettings(c_max=0.0)


@pytest.fixture(scope="module")
def small_plans():
    sc = load_scenario("task1_reverse")
    s = PlannerSettings(rng_seed=3, max_extensions=4)
    return sc, pl.plan(sc, settings=s), pl.plan(sc, settings=s)


def test_plan_deterministic(small_plans):
    _, a, b = small_plans
    assert a.status == b.status and a.path == b.path
    assert [n.q for n in a.tree] == [n.q for n in b.tree]
    assert [n.parent for n in a.tree] == [n.parent for n in b.tree]
    assert [vars(a.stats)[k] for k in ("stocs_calls", "samples", "transition_rejects")] == \
        [vars(b.stats)[k] for k in ("stocs_calls", "samples", "transition_rejects")]


def test_plan_edges_verify_and_switch_legality(small_plans):
    sc, r, _ = small_plans
    assert len(r.tree) >= 2
    for nd in r.tree[1:]:
        assert verify_result(nd.incoming_trajectory, sc, nd.incoming_mode).ok
        parent = r.tree[nd.parent]
        assert se2_distance(nd.q, parent.q) > pl.MIN_PROGRESS
        if parent.parent is not None and nd.incoming_mode is not parent.incoming_mode:
            assert pl.stability_test(sc.object, sc.environment, parent.q)
        if parent.parent is not None and not pl.stability_test(sc.object, sc.environment, parent.q):
            assert nd.incoming_mode is parent.incoming_mode
