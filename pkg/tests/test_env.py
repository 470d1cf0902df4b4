import math
from fractions import Fraction
from itertools import permutations

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualpatrol import env
from dualpatrol.env import (
    ConfigurationError,
    InvalidStateError,
    JointState,
    line_of_sight,
    load_plan,
    observe_tile,
    reward,
    segments_hit_walls,
    step,
    zone_membership,
)


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def exact_blocked(p, q, walls):
    """Open segment (p, q) against closed walls, in rational arithmetic."""
    p = tuple(map(Fraction, p))
    q = tuple(map(Fraction, q))
    if p == q:
        return False
    d = (q[0] - p[0], q[1] - p[1])
    for a, b in walls:
        a = tuple(map(Fraction, a))
        b = tuple(map(Fraction, b))
        o1, o2 = _orient(p, q, a), _orient(p, q, b)
        if o1 == 0 and o2 == 0:
            dd = d[0] ** 2 + d[1] ** 2
            ta = ((a[0] - p[0]) * d[0] + (a[1] - p[1]) * d[1]) / dd
            tb = ((b[0] - p[0]) * d[0] + (b[1] - p[1]) * d[1]) / dd
            if min(ta, tb) < 1 and max(ta, tb) > 0:
                return True
            continue
        w = (b[0] - a[0], b[1] - a[1])
        den = d[0] * w[1] - d[1] * w[0]
        if den == 0:
            continue
        # p + t d = a + s w
        t = ((a[0] - p[0]) * w[1] - (a[1] - p[1]) * w[0]) / den
        s = ((a[0] - p[0]) * d[1] - (a[1] - p[1]) * d[0]) / den
        if 0 < t < 1 and 0 <= s <= 1:
            return True
    return False


# -- reward ------------------------------------------------------------------

def test_reward_all_outside(plan):
    assert reward(np.array([[1.0, 1.0], [15.0, 2.0]]), plan).tolist() == [0] * 6


def test_reward_agent_at_first_zone_center(plan):
    assert reward(np.array([[6.0, 9.0]]), plan)[0] == 1


def test_reward_saturates(plan):
    r = reward(np.array([[13.0, 9.0], [13.2, 9.1]]), plan)
    assert r.tolist() == [0, 1, 0, 0, 0, 0]


def test_reward_boundary_inclusive(plan):
    assert reward(np.array([[7.0, 9.0]]), plan)[0] == 1
    assert reward(np.array([[7.0 + 1e-6, 9.0]]), plan)[0] == 0


def test_reward_accepts_joint_state(plan):
    s = JointState(np.array([[20.0, 9.0]]))
    assert reward(s, plan)[2] == 1


free_point = st.tuples(st.floats(0.05, 29.95), st.floats(0.05, 13.95))


@given(st.lists(free_point, min_size=1, max_size=6), st.randoms())
def test_reward_permutation_invariant(plan, points, rnd):
    pts = np.array(points)
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    assert (reward(pts, plan) == reward(pts[perm], plan)).all()


@given(st.lists(free_point, min_size=1, max_size=5), free_point)
def test_reward_monotone_in_agents(plan, points, extra):
    pts = np.array(points)
    more = np.vstack([pts, [extra]])
    assert (reward(more, plan) >= reward(pts, plan)).all()


def test_overlapping_zones_both_set():
    data = {
        "bounds": [0, 0, 6, 4],
        "walls": [],
        "zones": [{"center": [2.5, 2], "radius": 1}, {"center": [3.5, 2], "radius": 1}],
        "tiles": [[0, 0, 6, 4]],
    }
    p = load_plan(data)
    assert zone_membership([3.0, 2.0], p).tolist() == [True, True]


# -- tiles -------------------------------------------------------------------

def test_tile_centroid(plan):
    x0, y0, x1, y1 = plan.tiles[0]
    assert observe_tile([(x0 + x1) / 2, (y0 + y1) / 2], plan) == 0


def test_tile_shared_boundary_goes_to_lowest_index(small_room):
    # the two tiles of the small room meet at x = 3
    assert observe_tile([3.0, 2.0], small_room) == 0


@given(free_point)
def test_tile_index_in_range(plan, p):
    if plan.on_wall(p):
        with pytest.raises(InvalidStateError):
            observe_tile(p, plan)
        return
    i = observe_tile(p, plan)
    assert 0 <= i < plan.n_tiles
    x0, y0, x1, y1 = plan.tiles[i]
    assert x0 - 1e-9 <= p[0] <= x1 + 1e-9 and y0 - 1e-9 <= p[1] <= y1 + 1e-9
    assert all(not (t[0] < p[0] < t[2] and t[1] < p[1] < t[3]) for t in plan.tiles[:i])


def test_tile_rejects_invalid_positions(plan):
    with pytest.raises(InvalidStateError):
        observe_tile([-1.0, 3.0], plan)
    with pytest.raises(InvalidStateError):
        observe_tile([9.5, 8.0], plan)  # on the wall between the first two offices


# -- line of sight -----------------------------------------------------------

def test_los_degenerate(plan):
    assert line_of_sight([3.0, 3.0], [3.0, 3.0], plan)


def test_los_same_room(plan):
    assert line_of_sight([2.0, 6.0], [8.0, 12.0], plan)


def test_los_blocked_by_wall(plan):
    assert not line_of_sight([6.0, 9.0], [13.0, 9.0], plan)


segment = st.tuples(st.floats(0.05, 29.95), st.floats(0.05, 13.95), st.floats(0.05, 29.95), st.floats(0.05, 13.95))


@given(segment)
def test_los_matches_exact_oracle(plan, seg):
    p, q = seg[:2], seg[2:]
    if not (plan.is_free(p) and plan.is_free(q)):
        return
    walls = [tuple(map(tuple, w)) for w in plan.walls.tolist()]
    assert line_of_sight(p, q, plan) == (not exact_blocked(p, q, walls))


@given(st.lists(segment, min_size=1, max_size=20))
def test_vector_and_scalar_kernels_agree(plan, segs):
    s = np.array(segs)
    vec = segments_hit_walls(s[:, :2], s[:, 2:], plan.walls).any(axis=1)
    scal = [plan._wallset.blocked(*row) for row in s.tolist()]
    assert vec.tolist() == scal


def test_los_grid_against_exact_oracle(plan):
    walls = [tuple(map(tuple, w)) for w in plan.walls.tolist()]
    pts = [(x + 0.5, y + 0.5) for x in range(0, 30, 3) for y in range(0, 14, 3)]
    pts = [p for p in pts if plan.is_free(p)]
    for a in pts:
        for b in pts[::3]:
            assert line_of_sight(a, b, plan) == (not exact_blocked(a, b, walls))


@given(free_point)
def test_near_wall_kernel_agrees(plan, p):
    d = env.point_wall_distance(np.array([p]), plan.walls)[0]
    assert plan._wallset.near(*p) == bool((d <= 1e-9).any())


def test_wall_touch_is_blocking_but_endpoint_contact_is_not(two_rooms):
    # passes exactly through the tip of the lower door jamb at (5, 1.5)
    assert not line_of_sight([4.0, 1.0], [6.0, 2.0], two_rooms)
    # ends next to the wall without crossing it
    assert line_of_sight([4.0, 1.0], [4.9, 1.0], two_rooms)


# -- navigation --------------------------------------------------------------

def _oracle_path_length(plan, start, zone):
    walls = [tuple(map(tuple, w)) for w in plan.walls.tolist()]
    nodes = [tuple(start)] + [tuple(w) for w in plan.waypoints.tolist()]
    g = nx.Graph()
    for i, a in enumerate(nodes):
        for j in range(i + 1, len(nodes)):
            if not exact_blocked(a, nodes[j], walls):
                g.add_edge(i, j, weight=math.dist(a, nodes[j]))
    goal = 1 + int(plan.zone_waypoint[zone])
    best = math.inf
    for path in nx.all_simple_paths(g, 0, goal):
        best = min(best, sum(g[u][v]["weight"] for u, v in zip(path, path[1:])))
    return best


@pytest.mark.parametrize("start", [(1.0, 1.0), (3.0, 3.5), (9.0, 3.5), (6.5, 0.5), (2.0, 2.0)])
@pytest.mark.parametrize("zone", [0, 1])
def test_shortest_path_matches_exhaustive_enumeration(two_rooms, start, zone):
    assert two_rooms.path_length(start, zone) == pytest.approx(_oracle_path_length(two_rooms, start, zone), abs=1e-9)


def test_cross_room_path_uses_the_door(two_rooms):
    # no straight line from here threads the door gap
    assert not line_of_sight([1.0, 3.5], [8.0, 2.0], two_rooms)
    route = two_rooms.route([1.0, 3.5], 1)
    crossing = [tuple(p) for p in route.tolist() if p in ([4.4, 2.0], [5.6, 2.0])]
    assert crossing
    state = JointState(np.array([[1.0, 3.5]]))
    for _ in range(40):
        nxt = step(state, [1], two_rooms)
        assert np.linalg.norm(nxt.positions - state.positions) <= 0.5 + 1e-12
        state = nxt
    assert np.allclose(state.positions[0], [8.0, 2.0])


def test_step_fixed_point_at_target(plan):
    s = JointState(np.array([[13.0, 9.0]]), 7)
    n = step(s, [1], plan)
    assert n.positions.tolist() == [[13.0, 9.0]] and n.time == 8


def test_step_clamps_final_approach(small_room):
    s = JointState(np.array([[1.2, 2.0]]))
    assert step(s, [0], small_room).positions.tolist() == [[1.5, 2.0]]


def test_step_rejects_bad_actions(plan):
    s = JointState(np.array([[13.0, 9.0]]))
    with pytest.raises(ValueError):
        step(s, [6], plan)
    with pytest.raises(ValueError):
        step(s, [0, 1], plan)


@given(free_point, st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_step_never_crosses_walls(plan, start, actions):
    if not plan.is_free(start):
        return
    state = JointState(np.array([start]))
    walls = plan.walls
    for a in actions:
        nxt = step(state, [a], plan)
        p, q = state.positions[0], nxt.positions[0]
        assert np.linalg.norm(q - p) <= 0.5 + 1e-9
        pts = p + np.linspace(0, 1, 41)[:, None] * (q - p)
        assert (env.point_wall_distance(pts, walls) > 1e-9).all()
        state = nxt


@given(free_point, st.integers(0, 5))
def test_reaches_target_within_bound(plan, start, zone):
    if not plan.is_free(start):
        return
    n_steps = env.steps_to_reach(start, zone, plan, 0.5)
    state = JointState(np.array([start]))
    for _ in range(n_steps):
        state = step(state, [zone], plan)
    assert np.linalg.norm(state.positions[0] - plan.zone_centers[zone]) <= 1e-9


def test_step_is_pure(plan):
    s = JointState(np.array([[2.0, 2.0], [25.0, 7.0]]))
    a = step(s, [5, 0], plan)
    b = step(s, [5, 0], plan)
    assert a.positions.tobytes() == b.positions.tobytes()


# -- plan validation ---------------------------------------------------------

def _box(**over):
    base = {
        "bounds": [0, 0, 6, 4],
        "walls": [],
        "zones": [{"center": [2, 2], "radius": 1}],
        "tiles": [[0, 0, 6, 4]],
    }
    base.update(over)
    return base


def test_zone_crossing_wall_rejected():
    with pytest.raises(ConfigurationError):
        load_plan(_box(walls=[[[2.5, 0], [2.5, 4]]]))


def test_zone_outside_bounds_rejected():
    with pytest.raises(ConfigurationError):
        load_plan(_box(zones=[{"center": [0.5, 2], "radius": 1}]))


def test_tiles_must_partition():
    with pytest.raises(ConfigurationError):
        load_plan(_box(tiles=[[0, 0, 3, 4]]))
    with pytest.raises(ConfigurationError):
        load_plan(_box(tiles=[[0, 0, 4, 4], [2, 0, 6, 4]]))


def test_zone_radius_positive():
    with pytest.raises((ConfigurationError, ValueError)):
        load_plan(_box(zones=[{"center": [2, 2], "radius": 0}]))


def test_disconnected_waypoints_rejected():
    walls = [[[3, 0], [3, 4]]]
    zones = [{"center": [1.5, 2], "radius": 1}, {"center": [4.5, 2], "radius": 1}]
    with pytest.raises(ConfigurationError):
        load_plan(_box(walls=walls, zones=zones, tiles=[[0, 0, 3, 4], [3, 0, 6, 4]]))


def test_missing_geometry_file_names_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(FileNotFoundError, match="nope.json"):
        load_plan(missing)


def test_geometry_roundtrip_from_toml(tmp_path):
    text = """
bounds = [0.0, 0.0, 6.0, 4.0]
walls = []
tiles = [[0.0, 0.0, 6.0, 4.0]]
[[zones]]
center = [2.0, 2.0]
radius = 1.0
"""
    path = tmp_path / "box.toml"
    path.write_text(text)
    p = load_plan(path)
    assert p.n_zones == 1 and p.n_tiles == 1


def test_default_plan_shape(plan):
    assert plan.n_zones == 6 and plan.n_tiles == 12
    assert plan.bounds == (0.0, 0.0, 30.0, 14.0)
    assert plan.zone_centers.tolist() == [[6, 9], [13, 9], [20, 9], [28, 4], [28, 8], [28, 12]]
    assert (plan.zone_radii == 1).all()
    # zone centers are waypoints
    for m in range(6):
        assert plan.waypoints[plan.zone_waypoint[m]].tolist() == plan.zone_centers[m].tolist()


def test_sample_free_position(plan):
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert plan.is_free(env.sample_free_position(rng, plan))


def test_permutations_of_three_agents(plan):
    pts = np.array([[6.0, 9.0], [28.0, 4.0], [1.0, 1.0]])
    ref = reward(pts, plan)
    for perm in permutations(range(3)):
        assert (reward(pts[list(perm)], plan) == ref).all()
