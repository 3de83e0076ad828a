"""Synthetic grid-world navigation environment.

Worlds are occupancy grids carved into rooms and corridors, populated with
categorised landmarks. The agent has a continuous pose, moves with four
discrete actions and perceives the world through landmark-visibility
embeddings that share a projection with instruction embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .memory import Frame

STEP_LENGTH = 0.25
TURN_DEGREES = 15.0
N_CATEGORIES = 16

CATEGORY_NAMES = (
    "sofa", "plant", "table", "lamp", "fridge", "bed", "painting", "door",
    "sink", "chair", "bookshelf", "tv", "stairs", "mirror", "rug", "clock",
)


class WorldError(ValueError):
    """Raised for invalid world queries or failed generation."""


class Action(IntEnum):
    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


@dataclass(frozen=True)
class Landmark:
    id: int
    category: int
    cell: tuple[int, int]  # (col, row)


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float  # degrees, counterclockwise from +x

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass
class ActuationNoise:
    """Uniform bounded jitter applied to motion primitives."""

    enabled: bool = False
    distance_jitter: float = 0.2  # relative
    rotation_jitter: float = 3.0  # degrees
    rng_seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.distance_jitter < 0 or self.rotation_jitter < 0:
            raise ValueError("jitter bounds must be non-negative")
        self.rng = np.random.default_rng(self.rng_seed)


NO_NOISE = ActuationNoise(enabled=False)


@dataclass(frozen=True)
class WorldGenParams:
    width: int = 48
    height: int = 48
    cell_size: float = 0.25
    room_count: int = 3
    corridor_width: int = 6
    landmark_count: int = 24
    n_categories: int = N_CATEGORIES
    fov_degrees: float = 90.0
    view_range: float = 3.0
    success_radius: float = 3.0
    d: int = 64
    embedding_seed: int = 0
    door_landmark_fraction: float = 0.5

    def validate(self) -> None:
        positive = ("width", "height", "cell_size", "room_count", "corridor_width",
                    "n_categories", "fov_degrees", "view_range", "success_radius", "d")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"WorldGenParams.{name} must be positive")
        if self.landmark_count < 0:
            raise ValueError("WorldGenParams.landmark_count must be non-negative")
        if not 0.0 <= self.door_landmark_fraction <= 1.0:
            raise ValueError("WorldGenParams.door_landmark_fraction must lie in [0, 1]")
        if self.fov_degrees > 360:
            raise ValueError("WorldGenParams.fov_degrees must be <= 360")


class GridWorld:
    """Immutable occupancy grid with landmarks and a cached geodesic engine.

    ``occupancy[row, col]`` is True for blocked cells. Row index grows with y,
    column index with x.
    """

    def __init__(self, occupancy: np.ndarray, landmarks: Sequence[Landmark],
                 params: WorldGenParams, seed: int):
        occ = np.array(occupancy, dtype=bool)
        occ.setflags(write=False)
        self.occupancy = occ
        self.height, self.width = occ.shape
        self.params = params
        self.cell_size = float(params.cell_size)
        self.seed = int(seed)
        self.landmarks: tuple[Landmark, ...] = tuple(landmarks)
        if self.cell_size <= 0:
            raise WorldError("cell_size must be positive")
        ids = [lm.id for lm in self.landmarks]
        if len(set(ids)) != len(ids):
            raise WorldError("landmark ids must be unique")
        for lm in self.landmarks:
            c, r = lm.cell
            if not (0 <= lm.category < params.n_categories):
                raise WorldError(f"landmark {lm.id} has category out of range")
            if not self.cell_free(c, r):
                raise WorldError(f"landmark {lm.id} sits on a blocked cell")
        self._landmark_by_id = {lm.id: lm for lm in self.landmarks}
        self.projection = embedding_projection(params)
        if self.landmarks:
            self._lm_xy = np.array([self.cell_center(*lm.cell) for lm in self.landmarks])
            self._lm_cat = np.array([lm.category for lm in self.landmarks])
        else:
            self._lm_xy = np.zeros((0, 2))
            self._lm_cat = np.zeros(0, dtype=int)
        self._build_graph()
        self._apsp: Optional[np.ndarray] = None
        self._fan: Optional[tuple[np.ndarray, np.ndarray]] = None

    # ------------------------------------------------------------------ cells

    def in_bounds(self, col: int, row: int) -> bool:
        return 0 <= col < self.width and 0 <= row < self.height

    def cell_free(self, col: int, row: int) -> bool:
        return self.in_bounds(col, row) and not self.occupancy[row, col]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size)))

    def cell_center(self, col: int, row: int) -> tuple[float, float]:
        return ((col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size)

    def is_free(self, x: float, y: float) -> bool:
        if x < 0 or y < 0 or x >= self.width * self.cell_size or y >= self.height * self.cell_size:
            return False
        return self.cell_free(*self.cell_of(x, y))

    def landmark(self, landmark_id: int) -> Landmark:
        try:
            return self._landmark_by_id[landmark_id]
        except KeyError:
            raise WorldError(f"unknown landmark id {landmark_id}") from None

    def free_cells(self) -> np.ndarray:
        """(n, 2) array of (col, row) for every free cell, row-major order."""
        rows, cols = np.nonzero(~self.occupancy)
        return np.stack([cols, rows], axis=1)

    # --------------------------------------------------------------- geodesic

    def _build_graph(self) -> None:
        free = ~self.occupancy
        node = -np.ones(self.occupancy.shape, dtype=np.int64)
        rows, cols = np.nonzero(free)
        node[rows, cols] = np.arange(len(rows))
        self._node = node
        self._node_cells = np.stack([cols, rows], axis=1)
        src, dst, wts = [], [], []
        h, w = self.occupancy.shape
        for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
            r2, c2 = rows + dr, cols + dc
            ok = (r2 >= 0) & (r2 < h) & (c2 >= 0) & (c2 < w)
            r1, c1, r2, c2 = rows[ok], cols[ok], r2[ok], c2[ok]
            ok = free[r2, c2]
            a, b = node[r1[ok], c1[ok]], node[r2[ok], c2[ok]]
            cost = self.cell_size * (math.sqrt(2.0) if dr and dc else 1.0)
            src += [a, b]
            dst += [b, a]
            wts.append(np.full(2 * len(a), cost))
        n = len(rows)
        if n:
            self._graph = csr_matrix(
                (np.concatenate(wts), (np.concatenate(src), np.concatenate(dst))), shape=(n, n))
        else:
            self._graph = csr_matrix((0, 0))

    @property
    def n_nodes(self) -> int:
        return self._graph.shape[0]

    def node_of(self, x: float, y: float) -> int:
        """Graph node of the cell containing (x, y); raises for blocked points."""
        if not self.is_free(x, y):
            raise WorldError(f"point ({x:.3f}, {y:.3f}) is blocked or out of bounds")
        c, r = self.cell_of(x, y)
        return int(self._node[r, c])

    def node_cell(self, node: int) -> tuple[int, int]:
        c, r = self._node_cells[node]
        return int(c), int(r)

    def all_pairs(self) -> np.ndarray:
        """Dense geodesic distance matrix between free cells (computed once).

        Values are symmetrised and quantised to 1e-9 m so they do not depend
        on the order in which edge costs were summed.
        """
        if self._apsp is None:
            d = dijkstra(self._graph, directed=False)
            d = np.round(np.minimum(d, d.T), 9)
            d.setflags(write=False)
            self._apsp = d
        return self._apsp

    def distance_field(self, nodes: Sequence[int]) -> np.ndarray:
        """Geodesic distance from every free cell to the nearest of ``nodes``."""
        return self.all_pairs()[np.asarray(nodes, dtype=np.int64)].min(axis=0)

    def component_sizes(self) -> np.ndarray:
        if self.n_nodes == 0:
            return np.zeros(0, dtype=int)
        _, labels = connected_components(self._graph, directed=False)
        return np.bincount(labels)

    # ------------------------------------------------------------- perception

    def ray_fan(self) -> tuple[np.ndarray, np.ndarray]:
        """Ray angle offsets (radians) across the FOV and half-cell sample radii."""
        if self._fan is None:
            p = self.params
            half = p.fov_degrees / 2.0
            n_rays = max(2, int(round(p.fov_degrees / 5.0)) + 1)
            step = 0.5 * self.cell_size
            n_samples = max(1, int(math.ceil(p.view_range / step)))
            self._fan = (np.radians(np.linspace(-half, half, n_rays)),
                         step * np.arange(1, n_samples + 1))
        return self._fan

    def line_of_sight(self, a: tuple[float, float], b: tuple[float, float]) -> bool:
        """Grid raycast at quarter-cell resolution; endpoints' cells are exempt."""
        ax, ay = a
        bx, by = b
        dist = math.hypot(bx - ax, by - ay)
        n = max(1, int(math.ceil(dist / (0.25 * self.cell_size))))
        ts = np.arange(1, n) / n
        if len(ts) == 0:
            return True
        xs = ax + ts * (bx - ax)
        ys = ay + ts * (by - ay)
        cols = np.floor(xs / self.cell_size).astype(int)
        rows = np.floor(ys / self.cell_size).astype(int)
        ok = (cols >= 0) & (cols < self.width) & (rows >= 0) & (rows < self.height)
        if not ok.all():
            return False
        end_cell = self.cell_of(bx, by)
        blocked = self.occupancy[rows, cols]
        blocked &= ~((cols == end_cell[0]) & (rows == end_cell[1]))
        return not blocked.any()


# ---------------------------------------------------------------- generation


def embedding_projection(params: WorldGenParams) -> np.ndarray:
    """Fixed Gaussian d x (C+2) projection shared by every world with these params.

    Sharing it lets one policy read observations from many worlds.
    """
    rng = np.random.default_rng([int(params.embedding_seed), 0x9E37])
    n_in = params.n_categories + 2
    proj = rng.standard_normal((params.d, n_in)) / math.sqrt(params.d)
    proj.setflags(write=False)
    return proj


def generate_world(seed: int, params: WorldGenParams = WorldGenParams(),
                   max_retries: int = 50) -> GridWorld:
    """Carve rooms joined by corridors, then scatter landmarks on free cells."""
    params.validate()
    rng = np.random.default_rng([int(seed), 17])
    for _ in range(max_retries):
        layout = _carve_layout(rng, params)
        if layout is None:
            continue
        occ, rooms = layout
        free = ~occ
        if free.sum() < 2:
            continue
        world = GridWorld(occ, [], params, seed)
        sizes = world.component_sizes()
        if sizes.max() < 0.8 * free.sum():
            continue
        landmarks = _place_landmarks(rng, world, params, doorway_cells(occ, rooms))
        if landmarks is None:
            continue
        return GridWorld(occ, landmarks, params, seed)
    raise WorldError(f"world generation failed after {max_retries} retries (seed={seed})")


def _carve_layout(rng: np.random.Generator, p: WorldGenParams) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Occupancy plus a mask of room cells (free cells outside it are corridor)."""
    h, w = p.height, p.width
    occ = np.ones((h, w), dtype=bool)
    rooms: list[tuple[int, int, int, int]] = []  # (c0, r0, c1, r1) inclusive-exclusive
    lo = max(4, min(w, h) // 6)
    hi = max(lo + 1, min(w, h) // 3)
    attempts = 0
    while len(rooms) < p.room_count and attempts < 200:
        attempts += 1
        rw, rh = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
        if rw + 2 > w or rh + 2 > h:
            continue
        c0 = int(rng.integers(1, w - rw))
        r0 = int(rng.integers(1, h - rh))
        cand = (c0, r0, c0 + rw, r0 + rh)
        if any(_overlap(cand, other, margin=2) for other in rooms):
            continue
        rooms.append(cand)
    if len(rooms) < min(2, p.room_count):
        return None
    for c0, r0, c1, r1 in rooms:
        occ[r0:r1, c0:c1] = False
    room_mask = ~occ
    centers = [((c0 + c1) // 2, (r0 + r1) // 2) for c0, r0, c1, r1 in rooms]
    # chain rooms in nearest-neighbour order, plus one extra link for a loop
    order = [0]
    remaining = set(range(1, len(rooms)))
    while remaining:
        last = centers[order[-1]]
        nxt = min(remaining, key=lambda i: (abs(centers[i][0] - last[0]) + abs(centers[i][1] - last[1]), i))
        order.append(nxt)
        remaining.remove(nxt)
    links = list(zip(order[:-1], order[1:]))
    if len(rooms) > 2:
        links.append((order[0], order[-1]))
    half = p.corridor_width // 2
    for a, b in links:
        (ca, ra), (cb, rb) = centers[a], centers[b]
        horizontal_first = bool(rng.integers(0, 2))
        if horizontal_first:
            _carve_segment(occ, ca, ra, cb, ra, half, p.corridor_width)
            _carve_segment(occ, cb, ra, cb, rb, half, p.corridor_width)
        else:
            _carve_segment(occ, ca, ra, ca, rb, half, p.corridor_width)
            _carve_segment(occ, ca, rb, cb, rb, half, p.corridor_width)
    # keep a solid outer wall
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    return occ, room_mask & ~occ


def _overlap(a, b, margin: int) -> bool:
    return not (a[2] + margin <= b[0] or b[2] + margin <= a[0]
                or a[3] + margin <= b[1] or b[3] + margin <= a[1])


def _carve_segment(occ, c0, r0, c1, r1, half, width) -> None:
    cmin, cmax = sorted((c0, c1))
    rmin, rmax = sorted((r0, r1))
    if r0 == r1:
        occ[max(0, r0 - half):r0 - half + width, cmin:cmax + 1] = False
    else:
        occ[rmin:rmax + 1, max(0, c0 - half):c0 - half + width] = False


def doorway_cells(occ: np.ndarray, rooms: np.ndarray) -> np.ndarray:
    """(col, row) of corridor cells that touch a room cell (4-neighbourhood)."""
    corridor = ~occ & ~rooms
    touch = np.zeros_like(rooms)
    touch[1:, :] |= rooms[:-1, :]
    touch[:-1, :] |= rooms[1:, :]
    touch[:, 1:] |= rooms[:, :-1]
    touch[:, :-1] |= rooms[:, 1:]
    rows, cols = np.nonzero(corridor & touch)
    return np.stack([cols, rows], axis=1)


def _place_landmarks(rng: np.random.Generator, world: GridWorld, p: WorldGenParams,
                     doorways: Optional[np.ndarray] = None) -> Optional[list[Landmark]]:
    """Landmarks on the main component, at least 4 cells apart.

    A share of them (``door_landmark_fraction``) is drawn first from doorway
    cells so that routes between rooms pass named objects.
    """
    if p.landmark_count == 0:
        return []
    _, labels = connected_components(world._graph, directed=False)
    main = int(np.argmax(np.bincount(labels)))
    cells = world._node_cells[labels == main]
    if len(cells) < p.landmark_count:
        return None
    in_main = {(int(c), int(r)) for c, r in cells}
    min_sep = 4  # cells
    chosen: list[tuple[int, int]] = []

    def take(pool: np.ndarray, limit: int) -> None:
        for idx in rng.permutation(len(pool)):
            if len(chosen) >= limit:
                return
            c, r = (int(v) for v in pool[idx])
            if (c, r) in in_main and all(max(abs(c - c2), abs(r - r2)) >= min_sep for c2, r2 in chosen):
                chosen.append((c, r))

    if doorways is not None and len(doorways):
        take(doorways, int(round(p.door_landmark_fraction * p.landmark_count)))
    take(cells, p.landmark_count)
    if len(chosen) < p.landmark_count:
        return None
    cats = rng.integers(0, p.n_categories, size=len(chosen))
    return [Landmark(id=i, category=int(cat), cell=cell)
            for i, (cell, cat) in enumerate(zip(chosen, cats))]


# ---------------------------------------------------------------- dynamics


def step(world: GridWorld, state: AgentState, action: Action,
         noise: ActuationNoise = NO_NOISE) -> AgentState:
    action = Action(action)
    if action == Action.STOP:
        return state
    if action in (Action.TURN_LEFT, Action.TURN_RIGHT):
        delta = TURN_DEGREES
        if noise.enabled:
            delta += noise.rng.uniform(-noise.rotation_jitter, noise.rotation_jitter)
        sign = 1.0 if action == Action.TURN_LEFT else -1.0
        heading = round((state.heading + sign * delta) % 360.0, 9) % 360.0
        return replace(state, heading=heading)
    dist = STEP_LENGTH
    if noise.enabled:
        dist *= 1.0 + noise.rng.uniform(-noise.distance_jitter, noise.distance_jitter)
    rad = math.radians(state.heading)
    x = round(state.x + dist * math.cos(rad), 12)
    y = round(state.y + dist * math.sin(rad), 12)
    if not world.is_free(x, y):
        return state
    return AgentState(x, y, state.heading)


def geodesic_distance(world: GridWorld, a: tuple[float, float], b: tuple[float, float]) -> float:
    """Shortest 8-connected free-cell path length between the cells containing a and b.

    Returns ``math.inf`` when the cells are in different components.
    """
    na, nb = world.node_of(*a), world.node_of(*b)
    return float(world.all_pairs()[na, nb])


def shortest_path(world: GridWorld, start: AgentState, goal: tuple[float, float]) -> list[AgentState]:
    """Cell-centre waypoints of a shortest path from ``start`` to the goal cell.

    The first element is ``start`` itself; each later pose faces the following
    waypoint (the last keeps the final travel direction).
    """
    ns, ng = world.node_of(start.x, start.y), world.node_of(*goal)
    g = world.all_pairs()[ns, ng]
    if not math.isfinite(g):
        raise WorldError("goal unreachable from start")
    if g <= world.params.success_radius:
        return [start]
    return cell_route(world, start.position, goal)


def polyline_length(points: Sequence) -> float:
    pts = np.array([(p.x, p.y) if isinstance(p, AgentState) else p for p in points], dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


# --------------------------------------------------------------- perception


def landmark_features(world: GridWorld, state: AgentState) -> np.ndarray:
    """Raw feature vector v: weighted category block, blocked fraction, heading."""
    p = world.params
    v = np.zeros(p.n_categories + 2)
    half_fov = p.fov_degrees / 2.0
    if len(world._lm_xy):
        dxy = world._lm_xy - np.array([state.x, state.y])
        dist = np.hypot(dxy[:, 0], dxy[:, 1])
        bearing = np.degrees(np.arctan2(dxy[:, 1], dxy[:, 0]))
        rel = (bearing - state.heading + 180.0) % 360.0 - 180.0
        cand = np.flatnonzero((dist <= p.view_range) & ((np.abs(rel) <= half_fov) | (dist == 0)))
        if len(cand):
            seen = cand[visible_from(world, state.position, world._lm_xy[cand])]
            np.add.at(v, world._lm_cat[seen], 1.0 / (1.0 + dist[seen]))
    v[p.n_categories] = blocked_fraction(world, state)
    v[p.n_categories + 1] = 0.5 * (1.0 + state.heading / 360.0)
    return v


def visible_from(world: GridWorld, a: tuple[float, float], targets: np.ndarray) -> np.ndarray:
    """Vectorised ``line_of_sight`` from one point to each row of ``targets``."""
    ax, ay = a
    dx = targets[:, 0] - ax
    dy = targets[:, 1] - ay
    n = np.maximum(1, np.ceil(np.hypot(dx, dy) / (0.25 * world.cell_size)).astype(int))
    idx = np.arange(1, int(n.max()))
    if len(idx) == 0:
        return np.ones(len(targets), dtype=bool)
    valid = idx[None, :] < n[:, None]
    ts = idx[None, :] / n[:, None]
    cols = np.floor((ax + ts * dx[:, None]) / world.cell_size).astype(int)
    rows = np.floor((ay + ts * dy[:, None]) / world.cell_size).astype(int)
    inside = (cols >= 0) & (cols < world.width) & (rows >= 0) & (rows < world.height)
    end_c = np.floor(targets[:, 0] / world.cell_size).astype(int)
    end_r = np.floor(targets[:, 1] / world.cell_size).astype(int)
    blocked = np.ones(cols.shape, dtype=bool)
    blocked[inside] = world.occupancy[rows[inside], cols[inside]]
    blocked &= ~((cols == end_c[:, None]) & (rows == end_r[:, None]))
    return ~(blocked & valid).any(axis=1)


def blocked_fraction(world: GridWorld, state: AgentState) -> float:
    """Share of the view cone hidden by obstacles.

    Rays fanned across the field of view are marched at half-cell steps; each
    contributes the part of its length beyond the first blocked sample (out of
    bounds counts as blocked). Facing a wall up close gives a value near 1.
    """
    offsets, radii = world.ray_fan()
    angles = math.radians(state.heading) + offsets
    xs = state.x + np.cos(angles)[:, None] * radii
    ys = state.y + np.sin(angles)[:, None] * radii
    cols = np.floor(xs / world.cell_size).astype(int)
    rows = np.floor(ys / world.cell_size).astype(int)
    inside = (cols >= 0) & (cols < world.width) & (rows >= 0) & (rows < world.height)
    blocked = np.ones(xs.shape, dtype=bool)
    blocked[inside] = world.occupancy[rows[inside], cols[inside]]
    n_samples = len(radii)
    first = np.where(blocked.any(axis=1), blocked.argmax(axis=1), n_samples)
    return float(1.0 - first.mean() / n_samples)


def _unit(vec: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(vec)
    if n == 0 or not np.isfinite(n):
        raise WorldError("cannot normalise a zero vector")
    return vec / n


def observe(world: GridWorld, state: AgentState, t: int) -> Frame:
    v = landmark_features(world, state)
    return Frame(timestamp=int(t), embedding=_unit(world.projection @ v), pose_snapshot=state)


def instruction_embedding(world: GridWorld, waypoint_ids: Sequence[int]) -> np.ndarray:
    if len(waypoint_ids) == 0:
        raise WorldError("instruction needs at least one waypoint")
    u = np.zeros(world.params.n_categories + 2)
    for k, lid in enumerate(waypoint_ids):
        u[world.landmark(lid).category] += 0.9 ** k
    return _unit(world.projection @ u)


def cell_route(world: GridWorld, a: tuple[float, float], b: tuple[float, float]) -> list[AgentState]:
    """Waypoints a, intermediate cell centres, b along one shortest cell path.

    Among equally short next cells, straight moves win, then the lower node id.
    Each pose faces the following waypoint; the last keeps the travel direction.
    """
    na, nb = world.node_of(*a), world.node_of(*b)
    drow = world.all_pairs()[nb]
    if not math.isfinite(drow[na]):
        raise WorldError("goal unreachable from start")
    graph = world._graph
    nodes, cur = [na], na
    while cur != nb:
        lo, hi = graph.indptr[cur], graph.indptr[cur + 1]
        nbrs, wts = graph.indices[lo:hi], graph.data[lo:hi]
        best = np.flatnonzero(np.isclose(wts + drow[nbrs], drow[cur], rtol=0, atol=1e-9))
        cur = int(nbrs[sorted(best, key=lambda i: (wts[i], nbrs[i]))[0]])
        nodes.append(cur)
    pts = [tuple(a)] + [world.cell_center(*world.node_cell(n)) for n in nodes[1:-1]] + [tuple(b)]
    if len(nodes) == 1:
        pts = [tuple(a), tuple(b)]
    out = []
    for i, p in enumerate(pts):
        if i + 1 < len(pts):
            q = pts[i + 1]
            hd = math.atan2(q[1] - p[1], q[0] - p[0])
        elif i > 0:
            q = pts[i - 1]
            hd = math.atan2(p[1] - q[1], p[0] - q[0])
        else:
            hd = 0.0
        out.append(AgentState(p[0], p[1], round(math.degrees(hd) % 360.0, 9) % 360.0))
    return out
