"""Episodes: start/goal pairs with expert paths and synthetic instructions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .expert import ExpertError, trace_expert_path
from .world import (CATEGORY_NAMES, TURN_DEGREES, AgentState, GridWorld, WorldError,
                    cell_route, geodesic_distance, instruction_embedding, polyline_length,
                    shortest_path)


class GapTooLarge(WorldError):
    pass


@dataclass(frozen=True)
class Instruction:
    waypoint_landmark_ids: tuple[int, ...]
    text_form: str
    embedding: np.ndarray = field(compare=False, repr=False)


def make_instruction(world: GridWorld, waypoint_ids: Sequence[int]) -> Instruction:
    ids = tuple(int(i) for i in waypoint_ids)
    emb = instruction_embedding(world, ids)
    names = [CATEGORY_NAMES[world.landmark(i).category % len(CATEGORY_NAMES)] for i in ids]
    if len(names) == 1:
        text = f"Walk to the {names[0]} and stop."
    else:
        text = "Walk past the " + ", then the ".join(names[:-1]) + f", and stop near the {names[-1]}."
    return Instruction(ids, text, emb)


@dataclass(frozen=True)
class Episode:
    id: int
    world_seed: int
    start: AgentState
    goal: tuple[float, float]
    expert_path: tuple[AgentState, ...]
    instruction: Instruction
    shortest_geodesic_length: float

    @property
    def path_length(self) -> float:
        return polyline_length(self.expert_path)


@dataclass(frozen=True)
class EpisodeGenParams:
    min_length: float = 5.0
    max_length: float = 15.0
    goal_landmark_radius: float = 1.0
    max_retries: int = 500

    def validate(self) -> None:
        if not 0 <= self.min_length <= self.max_length:
            raise ValueError("episode length band must satisfy 0 <= min <= max")
        if self.goal_landmark_radius < 0 or self.max_retries < 1:
            raise ValueError("invalid episode generation parameters")


def main_component(world: GridWorld) -> np.ndarray:
    """Node ids of the largest connected free-space component."""
    _, labels = connected_components(world._graph, directed=False)
    return np.flatnonzero(labels == int(np.argmax(np.bincount(labels))))


def generate_episode(world: GridWorld, seed: int, params: EpisodeGenParams = EpisodeGenParams(),
                     episode_id: Optional[int] = None) -> Episode:
    """Sample start and goal with geodesic separation inside the length band.

    Goals are free cells within ``goal_landmark_radius`` of a landmark, so the
    final instruction waypoint names the goal area.
    """
    params.validate()
    if len(world.landmarks) < 2:
        raise WorldError("episode generation needs at least two landmarks")
    rng = np.random.default_rng([world.seed, int(seed), 31])
    dist = world.all_pairs()
    main = main_component(world)
    lm_nodes = np.array([world.node_of(*world.cell_center(*lm.cell)) for lm in world.landmarks])
    goal_nodes = main[dist[lm_nodes][:, main].min(axis=0) <= params.goal_landmark_radius]
    if len(goal_nodes) == 0:
        raise WorldError("no goal cells near landmarks")
    for _ in range(params.max_retries):
        ns = int(rng.choice(main))
        ng = int(rng.choice(goal_nodes))
        heading = float(rng.integers(0, 24) * TURN_DEGREES)
        g = float(dist[ns, ng])
        if not (params.min_length <= g <= params.max_length):
            continue
        sx, sy = world.cell_center(*world.node_cell(ns))
        start = AgentState(sx, sy, heading)
        goal = world.cell_center(*world.node_cell(ng))
        try:
            path = build_expert_path(world, start, goal)
        except ExpertError:
            continue
        return Episode(
            id=int(seed if episode_id is None else episode_id),
            world_seed=world.seed,
            start=start,
            goal=goal,
            expert_path=tuple(path),
            instruction=make_instruction(world, waypoints_along(world, path)),
            shortest_geodesic_length=g,
        )
    raise WorldError(f"episode sampling failed after {params.max_retries} retries")


def build_expert_path(world: GridWorld, start: AgentState, goal: tuple[float, float]) -> list[AgentState]:
    reference = shortest_path(world, start, goal)
    if len(reference) == 1:
        reference = [start, AgentState(goal[0], goal[1], start.heading)]
    return trace_expert_path(world, start, reference, goal)


def waypoints_along(world: GridWorld, path: Sequence[AgentState]) -> list[int]:
    """Landmarks nearest to 2-5 evenly spaced points along the path (one per ~3 m)."""
    pts = np.array([(s.x, s.y) for s in path])
    seg = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = int(np.clip(round(total / 3.0), 2, 5))
    ids: list[int] = []
    for k in range(1, n + 1):
        target = total * k / n
        i = min(int(np.searchsorted(cum, target - 1e-12)), len(pts) - 1)
        if i > 0 and cum[i] > cum[i - 1]:
            a = (target - cum[i - 1]) / (cum[i] - cum[i - 1])
            point = pts[i - 1] + a * (pts[i] - pts[i - 1])
        else:
            point = pts[i]
        d = np.hypot(*(world._lm_xy - point).T)
        lid = world.landmarks[int(np.argmin(d))].id
        if not ids or ids[-1] != lid:
            ids.append(lid)
    if len(ids) < 2:
        d = np.hypot(*(world._lm_xy - pts[0]).T)
        for j in np.argsort(d, kind="stable"):
            lid = world.landmarks[int(j)].id
            if lid != ids[-1]:
                ids.insert(0, lid)
                break
    return ids


def _flip(s: AgentState) -> AgentState:
    return AgentState(s.x, s.y, round((s.heading + 180.0) % 360.0, 9) % 360.0)


def reverse_episode(world: GridWorld, e: Episode, episode_id: Optional[int] = None) -> Episode:
    """The same route walked backwards: swapped endpoints, reversed waypoints."""
    path = tuple(_flip(s) for s in reversed(e.expert_path))
    ids = tuple(reversed(e.instruction.waypoint_landmark_ids))
    return Episode(
        id=e.id if episode_id is None else int(episode_id),
        world_seed=e.world_seed,
        start=path[0],
        goal=(e.start.x, e.start.y),
        expert_path=path,
        instruction=make_instruction(world, ids),
        shortest_geodesic_length=geodesic_distance(world, path[0].position, e.start.position),
    )


def stitch_episodes(world: GridWorld, e1: Episode, e2: Episode, max_gap: float = 2.0,
                    episode_id: Optional[int] = None) -> Episode:
    """Concatenate two episodes of one world through a follower-traced connector.

    The instruction routes the agent through e1's goal, so the stitched
    shortest length is the shortest route via that junction: both legs plus
    the gap between them.
    """
    if not (e1.world_seed == e2.world_seed == world.seed):
        raise WorldError("episodes come from different worlds")
    end = e1.expert_path[-1]
    gap = geodesic_distance(world, end.position, e2.start.position)
    if gap > max_gap:
        raise GapTooLarge(f"gap {gap:.3f} m exceeds max_gap {max_gap} m")
    path = list(e1.expert_path) + connector(world, end, e2.start) + list(e2.expert_path)
    ids = list(e1.instruction.waypoint_landmark_ids)
    for lid in e2.instruction.waypoint_landmark_ids:
        if ids[-1] != lid:
            ids.append(lid)
    return Episode(
        id=int(episode_id) if episode_id is not None else e1.id * 100_000 + e2.id,
        world_seed=world.seed,
        start=e1.start,
        goal=e2.goal,
        expert_path=tuple(path),
        instruction=make_instruction(world, ids),
        shortest_geodesic_length=e1.shortest_geodesic_length + gap + e2.shortest_geodesic_length,
    )


def connector(world: GridWorld, a: AgentState, b: AgentState) -> list[AgentState]:
    """Interior states of a follower trace from pose a to pose b (empty if co-located)."""
    if math.hypot(a.x - b.x, a.y - b.y) < 1e-9:
        return []
    if world.node_of(a.x, a.y) == world.node_of(b.x, b.y):
        return []
    trace = trace_expert_path(world, a, cell_route(world, a.position, b.position), b.position)
    return trace[1:-1] if len(trace) > 2 else []


class InsufficientEpisodes(WorldError):
    pass


def stitch_chains(world: GridWorld, candidates: Sequence[Episode], min_length: float,
                  max_gap: float = 2.0, max_legs: int = 4, limit: Optional[int] = None,
                  first_id: int = 0) -> list[Episode]:
    """Chain candidate episodes end to start until each route reaches ``min_length``.

    Candidates are scanned in id order; each chain extends with the unused
    candidate, starting within ``max_gap`` of the current end, whose goal is
    geodesically farthest from the chain's start (lower id on ties), so
    routes head away instead of doubling back. A candidate joins at most one emitted chain; chains that stay
    short after ``max_legs`` legs are dropped.
    """
    if max_legs < 1:
        raise ValueError("max_legs must be at least 1")
    pool = sorted(candidates, key=lambda e: e.id)
    if not pool:
        return []
    dist = world.all_pairs()
    starts = np.array([world.node_of(*e.start.position) for e in pool])
    ends = np.array([world.node_of(*e.expert_path[-1].position) for e in pool])
    goals = np.array([world.node_of(*e.goal) for e in pool])
    used = np.zeros(len(pool), dtype=bool)
    out: list[Episode] = []
    for i in range(len(pool)):
        if used[i] or (limit is not None and len(out) >= limit):
            continue
        chain, merged = [i], pool[i]
        while merged.shortest_geodesic_length < min_length and len(chain) < max_legs:
            gaps = dist[ends[chain[-1]], starts]
            ok = ~used & (gaps <= max_gap)
            ok[chain] = False
            if not ok.any():
                break
            reach = dist[starts[i], goals]
            j = int(np.flatnonzero(ok)[np.argmax(reach[ok])])
            merged = stitch_episodes(world, merged, pool[j], max_gap)
            chain.append(j)
        if len(chain) > 1 and merged.shortest_geodesic_length >= min_length:
            used[chain] = True
            out.append(replace(merged, id=first_id + len(out)))
    return out
