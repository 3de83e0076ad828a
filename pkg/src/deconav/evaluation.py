"""Episode rollouts and navigation metrics (SR, SPL, NE, OS, nDTW)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .episodes import Episode
from .expert import ExpertGuide, expert_chunk
from .memory import MemoryBank, RefineParams, StreamState, uniform_sample
from .policy import T_MAX, PolicyParams, featurize, predict_chunk
from .world import NO_NOISE, Action, ActuationNoise, AgentState, GridWorld, observe, step


class MemoryMode(str, Enum):
    AMR = "amr"
    UNIFORM = "uniform"
    NONE = "none"


@dataclass(frozen=True)
class Reward:
    success_bonus: float = 10.0
    step_penalty: float = -0.01
    gamma: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class RolloutConfig:
    memory_mode: MemoryMode = MemoryMode.AMR
    refine: RefineParams = RefineParams()
    t_max: int = T_MAX
    stall_limit: int = 20
    reward: Reward = Reward()


class Navigator:
    """Mutable per-episode state: pose, clock, memory stream and current frame."""

    def __init__(self, world: GridWorld, episode: Episode, cfg: RolloutConfig,
                 noise: ActuationNoise = NO_NOISE, guide: Optional[ExpertGuide] = None):
        self.world = world
        self.episode = episode
        self.cfg = cfg
        self.noise = noise
        self.guide = guide or ExpertGuide(world, episode.expert_path, episode.goal)
        self.e_i = episode.instruction.embedding
        self.state = episode.start
        self.t = 0
        self.mode = MemoryMode(cfg.memory_mode)
        self.stream = StreamState(capacity=cfg.refine.k)
        self._stale = False
        self.frame = observe(world, self.state, 0)
        self._remember(self.frame)
        self.path: list[AgentState] = [self.state]
        self.actions: list[Action] = []
        self.bank_trace: list[list[int]] = []  # bank seen when each action was chosen
        self._query_bank: list[int] = []
        self.stalls = 0

    def _remember(self, frame) -> None:
        # the bank only matters when the policy reads it, so it is solved lazily
        self._stale = self.stream.push(frame) or self._stale

    @property
    def bank(self) -> MemoryBank:
        if self._stale:
            if self.mode is MemoryMode.AMR:
                picked = self.stream.solve(self.e_i, self.cfg.refine)
                bank = MemoryBank(tuple(self.stream.pool[i] for i in picked), self.cfg.refine.k)
            elif self.mode is MemoryMode.UNIFORM:
                bank = uniform_sample(self.stream.pool, self.cfg.refine.k)
            else:
                bank = MemoryBank((), self.cfg.refine.k)
            self.stream.current_bank = bank
            self._stale = False
        return self.stream.current_bank

    def features(self) -> np.ndarray:
        bank = self.bank
        self._query_bank = bank.timestamps
        return featurize(self.e_i, bank, self.stream.recent, self.frame, self.t, self.cfg.t_max)

    def advance(self, action: Action) -> AgentState:
        """Execute one non-STOP action, observe, and update memory."""
        new = step(self.world, self.state, action, self.noise)
        if action == Action.MOVE_FORWARD:
            self.stalls = self.stalls + 1 if new == self.state else 0
        self.state = new
        self.t += 1
        self.frame = observe(self.world, new, self.t)
        self._remember(self.frame)
        self.path.append(new)
        self.actions.append(Action(action))
        self.bank_trace.append(self._query_bank)
        return new

    @property
    def stalled(self) -> bool:
        return self.stalls >= self.cfg.stall_limit

    @property
    def out_of_time(self) -> bool:
        return self.t >= self.cfg.t_max


ChunkPolicy = Callable[[Navigator], Sequence[Action]]


def learned_policy(params: PolicyParams) -> ChunkPolicy:
    def act(nav: Navigator) -> list[Action]:
        return predict_chunk(params, nav.features())
    return act


def expert_policy(nav: Navigator) -> list[Action]:
    return expert_chunk(nav.world, nav.state, nav.guide)


def as_policy(policy: PolicyParams | ChunkPolicy) -> ChunkPolicy:
    return learned_policy(policy) if isinstance(policy, PolicyParams) else policy


@dataclass
class EpisodeResult:
    episode_id: int
    success: bool
    stop_geodesic_to_goal: float
    agent_path: list[AgentState]
    agent_path_length: float
    shortest_length: float
    steps_taken: int
    min_goal_distance_along_path: float
    cumulative_return: float
    ndtw: float
    success_radius: float = 3.0
    actions: list[Action] = field(default_factory=list)
    bank_trace: list[list[int]] = field(default_factory=list)
    stopped: bool = False


def run_episode(world: GridWorld, episode: Episode, policy: PolicyParams | ChunkPolicy,
                memory_mode: Optional[MemoryMode] = None,
                cfg: RolloutConfig = RolloutConfig()) -> EpisodeResult:
    """Roll a chunked policy until STOP, a collision stall or the step limit.

    ``memory_mode`` overrides the mode in ``cfg`` when given.
    """
    if memory_mode is not None:
        cfg = replace(cfg, memory_mode=MemoryMode(memory_mode))
    act = as_policy(policy)
    nav = Navigator(world, episode, cfg)
    stopped = False
    while not (nav.out_of_time or nav.stalled or stopped):
        for a in act(nav):
            if a == Action.STOP:
                stopped = True
                break
            nav.advance(a)
            if nav.out_of_time or nav.stalled:
                break
    return summarize(world, nav, stopped)


def summarize(world: GridWorld, nav: Navigator, stopped: bool) -> EpisodeResult:
    guide = nav.guide
    radius = world.params.success_radius
    nodes = np.array([world.node_of(s.x, s.y) for s in nav.path])
    goal_d = guide.goal_dist[nodes]
    final = float(goal_d[-1])
    success = bool(stopped and final <= radius)
    pts = np.array([(s.x, s.y) for s in nav.path])
    length = float(np.hypot(*np.diff(pts, axis=0).T).sum()) if len(pts) > 1 else 0.0
    r = nav.cfg.reward
    steps = len(nav.actions)
    ret = float(sum(r.step_penalty * r.gamma ** i for i in range(steps)))
    if success:
        ret += r.success_bonus * r.gamma ** steps
    return EpisodeResult(
        episode_id=nav.episode.id,
        success=success,
        stop_geodesic_to_goal=final,
        agent_path=list(nav.path),
        agent_path_length=length,
        shortest_length=nav.episode.shortest_geodesic_length,
        steps_taken=steps,
        min_goal_distance_along_path=float(goal_d.min()),
        cumulative_return=ret,
        ndtw=ndtw(world, nav.path, nav.episode.expert_path, radius),
        success_radius=radius,
        actions=list(nav.actions),
        bank_trace=nav.bank_trace,
        stopped=stopped,
    )


# ---------------------------------------------------------------- metrics


def _dedupe(points: Sequence) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for p in points:
        xy = (p.x, p.y) if isinstance(p, AgentState) else (float(p[0]), float(p[1]))
        if not out or out[-1] != xy:
            out.append(xy)
    return out


def dtw_cost(cost: np.ndarray) -> float:
    """Dynamic-time-warping alignment cost for a pairwise cost matrix."""
    n, m = cost.shape
    if n == 0 or m == 0:
        raise ValueError("empty path")
    rows = np.asarray(cost, dtype=float).tolist()
    prev = [0.0] * m
    acc = 0.0
    for j, c in enumerate(rows[0]):
        acc += c
        prev[j] = acc
    for row in rows[1:]:
        cur = [0.0] * m
        cur[0] = prev[0] + row[0]
        for j in range(1, m):
            a, b, c = prev[j], prev[j - 1], cur[j - 1]
            cur[j] = row[j] + (a if a < b and a < c else b if b < c else c)
        prev = cur
    return float(prev[-1])


def geodesic_cost_matrix(world: GridWorld, path: Sequence, ref: Sequence) -> np.ndarray:
    a = np.array([world.node_of(*p) for p in path])
    b = np.array([world.node_of(*p) for p in ref])
    return world.all_pairs()[np.ix_(a, b)]


def ndtw(world: GridWorld, path: Sequence, ref_path: Sequence, d_th: float) -> float:
    """exp(-DTW / (|ref| * d_th)) with geodesic ground distance.

    Consecutive duplicate positions (turns in place) are collapsed first.
    """
    p, r = _dedupe(path), _dedupe(ref_path)
    if not p or not r:
        raise ValueError("empty path")
    cost = dtw_cost(geodesic_cost_matrix(world, p, r))
    return math.exp(-cost / (len(r) * d_th))


@dataclass(frozen=True)
class MetricsReport:
    sr: float
    spl: float
    ne: float
    os: float
    ndtw: float
    n_episodes: int
    fingerprint: str = ""

    def as_row(self) -> dict:
        return {"sr": self.sr, "spl": self.spl, "ne": self.ne, "os": self.os,
                "ndtw": self.ndtw, "n_episodes": self.n_episodes}


def spl_term(r: EpisodeResult) -> float:
    if not r.success:
        return 0.0
    return r.shortest_length / max(r.agent_path_length, r.shortest_length)


def compute_metrics(results: Sequence[EpisodeResult], fingerprint: str = "") -> MetricsReport:
    if len(results) == 0:
        raise ValueError("cannot compute metrics over empty results")
    n = len(results)

    def mean(values) -> float:
        # fsum is exactly rounded, so the mean does not depend on result order
        return math.fsum(float(v) for v in values) / n

    return MetricsReport(
        sr=mean(r.success for r in results),
        spl=mean(spl_term(r) for r in results),
        ne=mean(r.stop_geodesic_to_goal for r in results),
        os=mean(r.min_goal_distance_along_path <= r.success_radius for r in results),
        ndtw=mean(r.ndtw for r in results),
        n_episodes=n,
        fingerprint=fingerprint,
    )
