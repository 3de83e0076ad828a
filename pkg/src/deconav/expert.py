"""Shortest-path-follower expert."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .world import (STEP_LENGTH, TURN_DEGREES, Action, AgentState, GridWorld, WorldError, step)

CHUNK = 4
_EXACT = 1e-9


class ExpertError(ValueError):
    pass


class ExpertGuide:
    """Per-path lookup tables for the follower and the deviation metric.

    ``deviation[node]`` is the geodesic distance from a free cell to the
    nearest path state; ``goal_dist[node]`` the distance to the goal cell.
    """

    def __init__(self, world: GridWorld, path: Sequence[AgentState],
                 goal: Optional[tuple[float, float]] = None,
                 success_radius: Optional[float] = None):
        if len(path) == 0:
            raise ExpertError("empty expert path")
        self.world = world
        self.success_radius = (world.params.success_radius if success_radius is None
                               else float(success_radius))
        self.points = np.array([(s.x, s.y) for s in path], dtype=float)
        goal = tuple(path[-1].position) if goal is None else tuple(goal)
        try:
            self.path_nodes = np.array([world.node_of(*p) for p in self.points], dtype=np.int64)
            self.goal_node = world.node_of(*goal)
        except WorldError as exc:
            raise ExpertError(f"unreachable expert path: {exc}") from None
        dist = world.all_pairs()
        self._sub = dist[self.path_nodes]
        self.deviation = self._sub.min(axis=0)
        self.goal_dist = dist[self.goal_node]
        self._memo: dict[AgentState, "Action"] = {}

    def goal_distance(self, state: AgentState) -> float:
        return float(self.goal_dist[self.world.node_of(state.x, state.y)])

    def deviation_at(self, state: AgentState) -> float:
        return float(self.deviation[self.world.node_of(state.x, state.y)])

    def nearest_index(self, state: AgentState) -> int:
        """Geodesically nearest path state; Euclidean distance then later index break ties."""
        node = self.world.node_of(state.x, state.y)
        m = self.deviation[node]
        if not math.isfinite(m):
            raise ExpertError("expert path unreachable from state")
        cand = np.flatnonzero(self._sub[:, node] <= m + 1e-12)
        eu = np.hypot(self.points[cand, 0] - state.x, self.points[cand, 1] - state.y)
        eu = np.round(eu, 9)
        best = cand[eu == eu.min()]
        return int(best.max())

    def target(self, state: AgentState) -> tuple[tuple[float, float], int]:
        """Point (and its cell node) the follower steers toward.

        Exactly on a path position the target is the next distinct position,
        which makes a noise-free replay retrace the path; elsewhere it is the
        first path state more than one step away.
        """
        i = self.nearest_index(state)
        pos = np.array([state.x, state.y])
        d = np.hypot(*(self.points[i + 1:] - pos).T) if i + 1 < len(self.points) else np.zeros(0)
        on_path = np.hypot(*(self.points[i] - pos)) < _EXACT
        ahead = np.flatnonzero(d > (_EXACT if on_path else STEP_LENGTH))
        j = i + 1 + int(ahead[0]) if len(ahead) else len(self.points) - 1
        return (float(self.points[j, 0]), float(self.points[j, 1])), int(self.path_nodes[j])


def bearing_to(state: AgentState, target: tuple[float, float]) -> float:
    """Signed angle (degrees, counterclockwise positive) from heading to target, in (-180, 180]."""
    ang = math.degrees(math.atan2(target[1] - state.y, target[0] - state.x))
    d = (ang - state.heading) % 360.0
    return d - 360.0 if d > 180.0 else d


_TURNS = np.array([0] + [k * s for k in range(1, 13) for s in (1, -1)][:-1])


def best_turn(world: GridWorld, state: AgentState, target: tuple[float, float],
              target_node: int) -> Optional[int]:
    """Signed number of 15-degree turns to the heading whose forward step lands best.

    Candidate landings must be free; they are ranked by geodesic distance to
    the target cell, then Euclidean distance to the target point, then by the
    size of the turn. Returns None when every forward step is blocked.
    """
    headings = np.radians(state.heading + TURN_DEGREES * _TURNS)
    xs = np.round(state.x + STEP_LENGTH * np.cos(headings), 12)
    ys = np.round(state.y + STEP_LENGTH * np.sin(headings), 12)
    cs = world.cell_size
    cols, rows = np.floor(xs / cs).astype(int), np.floor(ys / cs).astype(int)
    ok = (xs >= 0) & (ys >= 0) & (cols < world.width) & (rows < world.height)
    ok[ok] = ~world.occupancy[rows[ok], cols[ok]]
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    nodes = world._node[rows[idx], cols[idx]]
    geo = np.round(world.all_pairs()[target_node, nodes], 9)
    eu = np.round(np.hypot(xs[idx] - target[0], ys[idx] - target[1]), 9)
    best = min(range(len(idx)), key=lambda k: (geo[k], eu[k], abs(_TURNS[idx[k]])))
    return int(_TURNS[idx[best]])


def follow_action(guide: ExpertGuide, state: AgentState) -> Action:
    """Advance along the path: turn toward the best landing heading, else move forward."""
    hit = guide._memo.get(state)
    if hit is None:
        hit = guide._memo[state] = _follow(guide, state)
    return hit


def _follow(guide: ExpertGuide, state: AgentState) -> Action:
    world = guide.world
    tgt, node = guide.target(state)
    if math.hypot(tgt[0] - state.x, tgt[1] - state.y) < _EXACT:
        if world.node_of(state.x, state.y) == guide.goal_node:
            return Action.STOP
        tgt, node = world.cell_center(*world.node_cell(guide.goal_node)), guide.goal_node
    k = best_turn(world, state, tgt, node)
    if k is None or k > 0:
        return Action.TURN_LEFT
    if k < 0:
        return Action.TURN_RIGHT
    return Action.MOVE_FORWARD


def expert_action(world: GridWorld, state: AgentState,
                  expert_path: Sequence[AgentState] | ExpertGuide,
                  success_radius: Optional[float] = None,
                  goal: Optional[tuple[float, float]] = None) -> Action:
    """STOP within the success radius of the goal, otherwise follow the expert path."""
    guide = expert_path if isinstance(expert_path, ExpertGuide) else ExpertGuide(
        world, list(expert_path), goal, success_radius)
    if guide.goal_distance(state) <= guide.success_radius:
        return Action.STOP
    return follow_action(guide, state)


def expert_chunk(world: GridWorld, state: AgentState, guide: ExpertGuide) -> list[Action]:
    """The expert's next CHUNK actions from ``state`` under noise-free execution."""
    out: list[Action] = []
    s = state
    for _ in range(CHUNK):
        a = expert_action(world, s, guide)
        out.append(a)
        if a == Action.STOP:
            out += [Action.STOP] * (CHUNK - len(out))
            break
        s = step(world, s, a)
    return out


def trace_expert_path(world: GridWorld, start: AgentState, reference: Sequence[AgentState],
                      goal: tuple[float, float], max_steps: int = 4000) -> list[AgentState]:
    """Roll the follower along a geometric reference until it reaches the goal cell.

    The trace ends with the exact goal position so endpoints are shared with
    the reference.
    """
    guide = ExpertGuide(world, reference, goal, success_radius=0.0)
    s = start
    states = [s]
    goal_node = world.node_of(*goal)
    stalls = 0
    for _ in range(max_steps):
        if world.node_of(s.x, s.y) == goal_node:
            break
        a = follow_action(guide, s)
        if a == Action.STOP:
            break
        nxt = step(world, s, a)
        stalls = stalls + 1 if nxt == s else 0
        if stalls > 24:
            raise ExpertError("follower stalled while tracing the expert path")
        s = nxt
        states.append(s)
    else:
        raise ExpertError("follower exceeded max_steps while tracing the expert path")
    if math.hypot(goal[0] - s.x, goal[1] - s.y) > _EXACT:
        states.append(AgentState(float(goal[0]), float(goal[1]), s.heading))
    return states
