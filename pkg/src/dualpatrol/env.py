"""Floor-plan environment: geometry, zone rewards, tile observations and
waypoint navigation.

Positions are in meters. Walls are closed line segments; free space is
every point of the bounding box that does not lie on a wall.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

_EPS = 1e-9
BUILTIN_PLANS = ("floorplan", "small_room", "two_rooms")


class InvalidStateError(ValueError):
    """A position lies on a wall or outside the floor-plan bounds."""


class ConfigurationError(ValueError):
    """Geometry or parameters that cannot support the requested operation."""


@dataclass(frozen=True)
class Zone:
    center: tuple[float, float]
    radius: float
    index: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError(f"zone {self.index}: radius must be positive")


@dataclass(frozen=True)
class JointState:
    positions: np.ndarray  # (N, 2)
    time: int = 0

    @property
    def n_agents(self) -> int:
        return len(self.positions)


def _signs(v: np.ndarray, tol: float) -> np.ndarray:
    return (v > tol).astype(np.int8) - (v < -tol).astype(np.int8)


class _Walls:
    """Wall endpoints split into flat arrays for the intersection kernel."""

    __slots__ = ("ax", "ay", "bx", "by", "wx", "wy", "tol", "n", "rows")

    def __init__(self, walls: np.ndarray):
        walls = np.asarray(walls, dtype=float).reshape(-1, 2, 2)
        self.ax, self.ay = walls[:, 0, 0].copy(), walls[:, 0, 1].copy()
        self.bx, self.by = walls[:, 1, 0].copy(), walls[:, 1, 1].copy()
        self.wx, self.wy = self.bx - self.ax, self.by - self.ay
        self.tol = _EPS * max(1.0, float(np.abs(walls).max(initial=1.0))) ** 2
        self.n = len(walls)
        self.rows = [tuple(map(float, (a, b, c, d))) for a, b, c, d in zip(self.ax, self.ay, self.bx, self.by)]

    def blocked(self, px: float, py: float, qx: float, qy: float) -> bool:
        """Scalar twin of :meth:`hits` for one segment, any wall."""
        dx, dy = qx - px, qy - py
        if abs(dx) + abs(dy) <= _EPS:
            return False
        tol = self.tol
        for ax, ay, bx, by in self.rows:
            o1 = dx * (ay - py) - dy * (ax - px)
            o2 = dx * (by - py) - dy * (bx - px)
            if (o1 > tol and o2 > tol) or (o1 < -tol and o2 < -tol):
                continue
            if -tol <= o1 <= tol and -tol <= o2 <= tol:
                dd = dx * dx + dy * dy
                ta = ((ax - px) * dx + (ay - py) * dy) / dd
                tb = ((bx - px) * dx + (by - py) * dy) / dd
                if min(ta, tb) < 1 - _EPS and max(ta, tb) > _EPS:
                    return True
                continue
            wx, wy = bx - ax, by - ay
            o3 = wx * (py - ay) - wy * (px - ax)
            o4 = wx * (qy - ay) - wy * (qx - ax)
            if (o3 > tol and o4 > tol) or (o3 < -tol and o4 < -tol):
                continue
            return True
        return False

    def near(self, px: float, py: float, eps: float = 1e-9) -> bool:
        """Scalar twin of :func:`point_wall_distance` ``<= eps`` for any wall."""
        for ax, ay, bx, by in self.rows:
            if (px < ax - eps and px < bx - eps) or (px > ax + eps and px > bx + eps):
                continue
            if (py < ay - eps and py < by - eps) or (py > ay + eps and py > by + eps):
                continue
            wx, wy = bx - ax, by - ay
            ww = max(wx * wx + wy * wy, _EPS)
            t = min(1.0, max(0.0, ((px - ax) * wx + (py - ay) * wy) / ww))
            if math.hypot(px - ax - t * wx, py - ay - t * wy) <= eps:
                return True
        return False

    def hits(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        px, py = p[:, 0:1], p[:, 1:2]
        qx, qy = q[:, 0:1], q[:, 1:2]
        dx, dy = qx - px, qy - py
        ax, ay, bx, by, wx, wy, tol = self.ax, self.ay, self.bx, self.by, self.wx, self.wy, self.tol
        s1 = _signs(dx * (ay - py) - dy * (ax - px), tol)
        s2 = _signs(dx * (by - py) - dy * (bx - px), tol)
        s3 = _signs(wx * (py - ay) - wy * (px - ax), tol)
        s4 = _signs(wx * (qy - ay) - wy * (qx - ax), tol)
        collinear = (s1 == 0) & (s2 == 0)
        hit = (s1 * s2 <= 0) & (s3 * s4 <= 0) & ~collinear
        if collinear.any():
            # project the wall onto the segment parameter; overlap with the
            # open interval (0, 1) means the segment runs along the wall
            dd = np.maximum(dx * dx + dy * dy, _EPS)
            ta = ((ax - px) * dx + (ay - py) * dy) / dd
            tb = ((bx - px) * dx + (by - py) * dy) / dd
            hit |= collinear & (np.minimum(ta, tb) < 1 - _EPS) & (np.maximum(ta, tb) > _EPS)
        return hit & ((np.abs(dx) + np.abs(dy)) > _EPS)


def segments_hit_walls(p: np.ndarray, q: np.ndarray, walls) -> np.ndarray:
    """Which open segments ``(p_i, q_i)`` touch which closed walls.

    ``p`` and ``q`` have shape (S, 2), ``walls`` (W, 2, 2). Returns an (S, W)
    boolean array. Endpoints of the query segments are excluded, so a
    segment that ends next to a wall is not blocked by it; grazing a wall
    endpoint anywhere else counts as a hit.
    """
    prep = walls if isinstance(walls, _Walls) else _Walls(walls)
    return prep.hits(np.asarray(p, dtype=float).reshape(-1, 2), np.asarray(q, dtype=float).reshape(-1, 2))


def point_wall_distance(points: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """Distance from each point (P, 2) to each wall segment, shape (P, W)."""
    pts = np.asarray(points, dtype=float)[:, None, :]
    a = walls[None, :, 0, :]
    w = walls[None, :, 1, :] - a
    ww = np.maximum((w * w).sum(axis=-1), _EPS)
    t = np.clip(((pts - a) * w).sum(axis=-1) / ww, 0.0, 1.0)
    proj = a + t[..., None] * w
    return np.linalg.norm(pts - proj, axis=-1)


class FloorPlan:
    """Static geometry plus the precomputed waypoint graph.

    Zone centers are always part of the waypoint set; they occupy the last
    ``M`` waypoint slots so that ``zone_waypoint[m] == K - M + m``.
    """

    def __init__(
        self,
        bounds: Sequence[float],
        walls: Sequence,
        zones: Sequence[Zone],
        tiles: Sequence[Sequence[float]],
        waypoints: Sequence[Sequence[float]],
        adjacency: str | Sequence[Sequence[int]] = "visibility",
        spawn: Sequence[Sequence[float]] | None = None,
        name: str = "custom",
    ):
        self.name = name
        self.bounds = tuple(float(v) for v in bounds)
        self.walls = np.asarray(walls, dtype=float).reshape(-1, 2, 2)
        self.zones = list(zones)
        self.zone_centers = np.array([z.center for z in self.zones], dtype=float)
        self.zone_radii = np.array([z.radius for z in self.zones], dtype=float)
        self.tiles = np.asarray(tiles, dtype=float).reshape(-1, 4)
        own = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        self.waypoints = np.vstack([own, self.zone_centers])
        self.zone_waypoint = np.arange(len(own), len(self.waypoints))
        self.spawn = None if spawn is None else np.asarray(spawn, dtype=float).reshape(-1, 2)
        self._wallset = _Walls(self.walls)
        self._waypoint_rows = [tuple(map(float, w)) for w in self.waypoints]
        self._tile_rows = [tuple(map(float, t)) for t in self.tiles]
        self._zone_rows = [(float(cx), float(cy), float(r) ** 2 + 1e-12)
                           for (cx, cy), r in zip(self.zone_centers, self.zone_radii)]
        self._validate_static()
        self._build_graph(adjacency, n_user=len(own))

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "FloorPlan":
        zones = [
            Zone(center=(float(z["center"][0]), float(z["center"][1])), radius=float(z["radius"]), index=i)
            for i, z in enumerate(data["zones"])
        ]
        return cls(
            bounds=data["bounds"],
            walls=data["walls"],
            zones=zones,
            tiles=data["tiles"],
            waypoints=data.get("waypoints", []),
            adjacency=data.get("adjacency", "visibility"),
            spawn=data.get("spawn"),
            name=data.get("name", "custom"),
        )

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def n_tiles(self) -> int:
        return len(self.tiles)

    def _validate_static(self):
        x0, y0, x1, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise ConfigurationError("bounds must be a non-empty rectangle")
        if self.n_zones == 0:
            raise ConfigurationError("floor plan needs at least one zone")
        c, r = self.zone_centers, self.zone_radii
        inside = (c[:, 0] - r >= x0) & (c[:, 0] + r <= x1) & (c[:, 1] - r >= y0) & (c[:, 1] + r <= y1)
        if not inside.all():
            raise ConfigurationError(f"zones {np.flatnonzero(~inside).tolist()} leave the bounds")
        if len(self.walls):
            clear = point_wall_distance(c, self.walls) > r[:, None]
            if not clear.all():
                raise ConfigurationError(f"zones {np.flatnonzero(~clear.all(axis=1)).tolist()} intersect a wall")
        t = self.tiles
        if (t[:, 2] <= t[:, 0]).any() or (t[:, 3] <= t[:, 1]).any():
            raise ConfigurationError("tiles must be non-empty rectangles")
        if (t[:, 0] < x0 - _EPS).any() or (t[:, 1] < y0 - _EPS).any() or (t[:, 2] > x1 + _EPS).any() or (t[:, 3] > y1 + _EPS).any():
            raise ConfigurationError("tiles must lie inside the bounds")
        # partition: pairwise overlaps have zero area and areas add up
        ox = np.minimum(t[:, None, 2], t[None, :, 2]) - np.maximum(t[:, None, 0], t[None, :, 0])
        oy = np.minimum(t[:, None, 3], t[None, :, 3]) - np.maximum(t[:, None, 1], t[None, :, 1])
        overlap = np.clip(ox, 0, None) * np.clip(oy, 0, None)
        np.fill_diagonal(overlap, 0.0)
        if overlap.max(initial=0.0) > 1e-9:
            raise ConfigurationError("tiles overlap")
        area = ((t[:, 2] - t[:, 0]) * (t[:, 3] - t[:, 1])).sum()
        if abs(area - (x1 - x0) * (y1 - y0)) > 1e-6:
            raise ConfigurationError("tiles do not cover the bounds")
        for wp in self.waypoints:
            if not self.is_free(wp):
                raise ConfigurationError(f"waypoint {wp.tolist()} is not in free space")

    def _build_graph(self, adjacency, n_user: int):
        K = len(self.waypoints)
        if isinstance(adjacency, str):
            if adjacency != "visibility":
                raise ConfigurationError(f"unknown adjacency mode {adjacency!r}")
            i, j = np.triu_indices(K, k=1)
            ok = ~segments_hit_walls(self.waypoints[i], self.waypoints[j], self._wallset).any(axis=1)
            edges = list(zip(i[ok].tolist(), j[ok].tolist()))
        else:
            edges = [tuple(e) for e in adjacency]
            for a, b in edges:
                if not self.line_of_sight(self.waypoints[a], self.waypoints[b]):
                    raise ConfigurationError(f"waypoint edge {a}-{b} crosses a wall")
        self.edges = edges
        weights = np.full((K, K), np.inf)
        np.fill_diagonal(weights, 0.0)
        for a, b in edges:
            dist = float(np.linalg.norm(self.waypoints[a] - self.waypoints[b]))
            weights[a, b] = weights[b, a] = dist
        dense = np.where(np.isinf(weights), 0.0, weights)
        self.dist, self.pred = shortest_path(dense, method="D", directed=False, return_predecessors=True)
        if np.isinf(self.dist).any():
            raise ConfigurationError("waypoint graph is disconnected")
        self._dist_rows = self.dist.tolist()
        self._pred_rows = self.pred.tolist()

    # -- geometry queries ---------------------------------------------------

    def in_bounds(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 - _EPS <= p[0] <= x1 + _EPS and y0 - _EPS <= p[1] <= y1 + _EPS

    def on_wall(self, p) -> bool:
        return self._wallset.near(float(p[0]), float(p[1]))

    def is_free(self, p) -> bool:
        return self.in_bounds(p) and not self.on_wall(p)

    def line_of_sight(self, a, b) -> bool:
        return line_of_sight(a, b, self)

    def check_position(self, p):
        if not self.in_bounds(p):
            raise InvalidStateError(f"position {list(map(float, p))} is out of bounds")
        if self.on_wall(p):
            raise InvalidStateError(f"position {list(map(float, p))} lies on a wall")

    # -- navigation ---------------------------------------------------------

    def route(self, position, zone: int) -> np.ndarray:
        """Polyline (P, 2) of the shortest waypoint path to a zone center.

        The first vertex is ``position`` itself.
        """
        key = (float(position[0]), float(position[1]), int(zone))
        return np.array(self._route_cached(key))

    def path_length(self, position, zone: int) -> float:
        r = self.route(position, zone)
        return float(np.linalg.norm(np.diff(r, axis=0), axis=1).sum())

    @lru_cache(maxsize=8192)
    def _route_cached(self, key):
        x, y, zone = key
        if not 0 <= zone < self.n_zones:
            raise ValueError(f"zone {zone} out of range")
        goal = int(self.zone_waypoint[zone])
        to_goal = self._dist_rows[goal]
        wps = self._waypoint_rows
        cost = [math.hypot(wx - x, wy - y) + dg for (wx, wy), dg in zip(wps, to_goal)]
        first = -1
        # cheapest-first scan; the first visible candidate is the optimum
        for k in sorted(range(len(cost)), key=cost.__getitem__):
            if not self._wallset.blocked(x, y, *wps[k]):
                first = k
                break
        if first < 0:
            raise ConfigurationError(f"no waypoint visible from {[x, y]}")
        pred = self._pred_rows[goal]
        chain = [first]
        while chain[-1] != goal:
            chain.append(pred[chain[-1]])
        return ((x, y),) + tuple(wps[k] for k in chain)

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other

    def __repr__(self):
        return f"FloorPlan({self.name!r}, zones={self.n_zones}, tiles={self.n_tiles}, waypoints={len(self.waypoints)})"


def load_plan(source: str | Path | dict = "floorplan") -> FloorPlan:
    """Load a floor plan from a builtin name, a JSON/TOML file, or a dict."""
    if isinstance(source, dict):
        return FloorPlan.from_dict(source)
    text_source = str(source)
    if text_source in BUILTIN_PLANS or text_source == "default":
        name = "floorplan" if text_source == "default" else text_source
        data = json.loads(resources.files("dualpatrol.data").joinpath(f"{name}.json").read_text())
        return FloorPlan.from_dict(data)
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"geometry file not found: {path}")
    if path.suffix == ".toml":
        from ._toml import loads

        data = loads(path.read_text())
    else:
        data = json.loads(path.read_text())
    return FloorPlan.from_dict(data)


def line_of_sight(a, b, plan: FloorPlan) -> bool:
    """True iff the open segment between ``a`` and ``b`` touches no wall."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not len(plan.walls):
        return True
    return not plan._wallset.blocked(float(a[0]), float(a[1]), float(b[0]), float(b[1]))


def zone_membership(position, plan: FloorPlan) -> np.ndarray:
    """Boundary-inclusive indicator of each zone for one position, (M,) bool."""
    x, y = float(position[0]), float(position[1])
    return np.array([(x - cx) ** 2 + (y - cy) ** 2 <= r2 for cx, cy, r2 in plan._zone_rows])


def reward(state: JointState | np.ndarray, plan: FloorPlan) -> np.ndarray:
    """Joint indicator reward: zone m pays 1 iff some agent is inside it."""
    pos = state.positions if isinstance(state, JointState) else np.asarray(state, dtype=float)
    pos = pos.reshape(-1, 2)
    d2 = ((pos[:, None, :] - plan.zone_centers[None]) ** 2).sum(axis=-1)
    inside = d2 <= plan.zone_radii[None] ** 2 + 1e-12
    return inside.any(axis=0).astype(np.int8)


def observe_tile(position, plan: FloorPlan) -> int:
    """Index of the tile holding ``position``; shared edges go to the lowest index."""
    plan.check_position(position)
    x, y = float(position[0]), float(position[1])
    for i, (x0, y0, x1, y1) in enumerate(plan._tile_rows):
        if x0 - _EPS <= x <= x1 + _EPS and y0 - _EPS <= y <= y1 + _EPS:
            return i
    raise InvalidStateError(f"position {[x, y]} is in no tile")


def advance(route: np.ndarray, distance: float) -> np.ndarray:
    """Point reached after travelling ``distance`` along a polyline."""
    remaining = float(distance)
    pts = np.asarray(route, dtype=float).tolist()
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        seg = math.hypot(bx - ax, by - ay)
        if seg >= remaining:
            if seg == 0.0:
                return np.array([bx, by])
            f = remaining / seg
            return np.array([ax + (bx - ax) * f, ay + (by - ay) * f])
        remaining -= seg
    return np.array(pts[-1])


def step(state: JointState, actions: Sequence[int], plan: FloorPlan, speed: float = 0.5) -> JointState:
    """Move every agent up to ``speed`` meters along its route to the chosen zone."""
    actions = np.asarray(actions, dtype=int).reshape(-1)
    if len(actions) != state.n_agents:
        raise ValueError(f"expected {state.n_agents} actions, got {len(actions)}")
    if ((actions < 0) | (actions >= plan.n_zones)).any():
        raise ValueError(f"actions must lie in [0, {plan.n_zones})")
    new = np.empty_like(state.positions, dtype=float)
    for n, ((x, y), a) in enumerate(zip(state.positions.tolist(), actions.tolist())):
        new[n] = advance(plan._route_cached((x, y, a)), speed)
    return JointState(positions=new, time=state.time + 1)


def sample_free_position(rng: np.random.Generator, plan: FloorPlan) -> np.ndarray:
    """Uniform draw over free space (rejection on the measure-zero wall set)."""
    x0, y0, x1, y1 = plan.bounds
    while True:
        p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        if not plan.on_wall(p):
            return p


def check_state(state: JointState, plan: FloorPlan):
    for p in state.positions:
        plan.check_position(p)


def steps_to_reach(position, zone: int, plan: FloorPlan, speed: float) -> int:
    return math.ceil(plan.path_length(position, zone) / speed - 1e-12)
