"""Adaptive memory refinement over a stream of embedded frames.

A bank of at most K frames is chosen greedily from a candidate pool by
trading instruction relevance against visual and temporal redundancy with
the frames already picked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .world import AgentState

RECENT_WINDOW = 4


@dataclass(frozen=True, eq=False)
class Frame:
    timestamp: int
    embedding: np.ndarray
    pose_snapshot: Optional["AgentState"] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("frame timestamp must be non-negative")


@dataclass(frozen=True)
class MemoryBank:
    frames: tuple[Frame, ...] = ()
    capacity: int = 8

    def __post_init__(self):
        if len(self.frames) > self.capacity:
            raise ValueError("memory bank over capacity")
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("memory bank timestamps must be strictly increasing")

    @property
    def timestamps(self) -> list[int]:
        return [f.timestamp for f in self.frames]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class CandidatePool:
    frames: tuple[Frame, ...] = ()

    def __post_init__(self):
        ts = [f.timestamp for f in self.frames]
        if len(set(ts)) != len(ts):
            raise ValueError("candidate pool timestamps must be unique")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class RefineParams:
    lambda_r: float = 0.5
    w_v: float = 0.5
    w_t: float = 0.5
    epsilon: float = 1.0
    k: int = 8

    def __post_init__(self):
        if not 0.0 <= self.lambda_r <= 1.0:
            raise ValueError("lambda_r must lie in [0, 1]")
        if self.w_v < 0 or self.w_t < 0 or abs(self.w_v + self.w_t - 1.0) > 1e-9:
            raise ValueError("w_v and w_t must be non-negative and sum to 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.dot(a, b) / (na * nb))


def sim_sem(f: Frame, e_i: np.ndarray) -> float:
    return _cos(f.embedding, e_i)


def sim_vis(f: Frame, bank: MemoryBank) -> float:
    if not bank.frames:
        return 0.0
    return max(_cos(f.embedding, m.embedding) for m in bank.frames)


def sim_temp(f: Frame, bank: MemoryBank, epsilon: float) -> float:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not bank.frames:
        return 0.0
    return 1.0 / (min(abs(f.timestamp - m.timestamp) for m in bank.frames) + epsilon)


def frame_score(f: Frame, bank: MemoryBank, e_i: np.ndarray, p: RefineParams) -> float:
    penalty = p.w_v * sim_vis(f, bank) + p.w_t * sim_temp(f, bank, p.epsilon)
    return p.lambda_r * sim_sem(f, e_i) - (1.0 - p.lambda_r) * penalty


def refine(pool: CandidatePool | Sequence[Frame], e_i: np.ndarray, p: RefineParams) -> MemoryBank:
    """Greedily pick up to K frames maximising relevance minus redundancy.

    Each step scores every unpicked candidate against the bank built so far;
    ties go to the earliest timestamp.
    """
    frames = pool.frames if isinstance(pool, CandidatePool) else tuple(pool)
    if len(frames) <= p.k:
        return MemoryBank(tuple(sorted(frames, key=lambda f: f.timestamp)), p.k)
    frames = sorted(frames, key=lambda f: f.timestamp)
    emb = np.stack([f.embedding for f in frames])
    ts = np.array([f.timestamp for f in frames], dtype=float)
    picked = select_indices(emb, ts, relevance(emb, e_i), p)
    return MemoryBank(tuple(frames[i] for i in picked), p.k)


def relevance(emb: np.ndarray, e_i: np.ndarray) -> np.ndarray:
    """Cosine of each row of ``emb`` with the instruction embedding."""
    norms = np.linalg.norm(emb, axis=1)
    ni = np.linalg.norm(e_i)
    if ni == 0 or np.any(norms == 0):
        raise ValueError("cosine similarity of a zero vector")
    # row-wise reduction: identical rows give bit-identical scores, so ties are real ties
    return (emb * e_i).sum(axis=1) / (norms * ni)


def select_indices(emb: np.ndarray, ts: np.ndarray, rel: np.ndarray, p: RefineParams) -> list[int]:
    """Greedy selection over timestamp-sorted arrays; returns sorted row indices.

    Redundancy terms are kept incrementally (running max cosine, running min
    time gap), which yields the same scores as recomputing them per step.
    """
    n = len(ts)
    if n <= p.k:
        return list(range(n))
    unit = emb / np.linalg.norm(emb, axis=1)[:, None]
    order, _ = _greedy(unit, np.asarray(ts, dtype=float), rel, p, [], [])
    return sorted(order)


def _greedy(unit: np.ndarray, ts: np.ndarray, rel: np.ndarray, p: RefineParams,
            order: list[int], scores: list[float]) -> tuple[list[int], list[float]]:
    """Extend a greedy prefix (picks and their winning scores) to min(K, n) picks."""
    n = len(ts)
    max_vis = np.full(n, -np.inf)
    min_gap = np.full(n, np.inf)
    available = np.ones(n, dtype=bool)
    for b in order:
        available[b] = False
        max_vis = np.maximum(max_vis, (unit * unit[b]).sum(axis=1))
        min_gap = np.minimum(min_gap, np.abs(ts - ts[b]))
    while len(order) < min(p.k, n):
        if not order:
            score = p.lambda_r * rel
        else:
            penalty = p.w_v * max_vis + p.w_t / (min_gap + p.epsilon)
            score = p.lambda_r * rel - (1.0 - p.lambda_r) * penalty
        score = np.where(available, score, -np.inf)
        best = int(np.argmax(score))  # first maximum == earliest timestamp
        order.append(best)
        scores.append(float(score[best]))
        available[best] = False
        max_vis = np.maximum(max_vis, (unit * unit[best]).sum(axis=1))
        min_gap = np.minimum(min_gap, np.abs(ts - ts[best]))
    return order, scores


def uniform_sample(pool: CandidatePool | Sequence[Frame], k: int) -> MemoryBank:
    """k frames at evenly spaced positions of the timestamp-ordered pool."""
    if k < 1:
        raise ValueError("k must be at least 1")
    frames = sorted(pool.frames if isinstance(pool, CandidatePool) else pool,
                    key=lambda f: f.timestamp)
    n = len(frames)
    if n <= k:
        return MemoryBank(tuple(frames), k)
    if k == 1:
        idx = [0]
    else:
        idx = [math.floor(i * (n - 1) / (k - 1) + 0.5) for i in range(k)]
    return MemoryBank(tuple(frames[i] for i in idx), k)


class StreamState:
    """Per-episode memory stream: recent window, spilled pool, current bank.

    Pool embeddings and their instruction relevance are cached in arrays, and
    the previous greedy solution is reused: when one frame joins the pool the
    old picks remain the greedy choices up to the first step at which the
    newcomer outscores them, so only the remainder is recomputed.
    """

    def __init__(self, capacity: int = 8, window: int = RECENT_WINDOW):
        self.capacity = capacity
        self.window = window
        self.pool: list[Frame] = []
        self.recent: list[Frame] = []
        self.current_bank = MemoryBank((), capacity)
        self._emb: Optional[np.ndarray] = None
        self._ts = np.zeros(0)
        self._rel = np.zeros(0)
        self._rel_key: Optional[bytes] = None
        self._unit: Optional[np.ndarray] = None
        self._solution: Optional[tuple] = None  # (key, order, scores, pool size)

    @property
    def last_timestamp(self) -> int:
        frames = self.recent or self.pool
        return frames[-1].timestamp if frames else -1

    def push(self, frame: Frame) -> bool:
        """Append a frame to the window; returns True if one spilled into the pool."""
        if frame.timestamp <= self.last_timestamp:
            raise ValueError(
                f"non-monotonic timestamp {frame.timestamp} after {self.last_timestamp}")
        self.recent.append(frame)
        if len(self.recent) <= self.window:
            return False
        spilled = self.recent.pop(0)
        self.pool.append(spilled)
        n = len(self.pool)
        if self._emb is None:
            self._emb = np.empty((16, len(spilled.embedding)))
            self._unit = np.empty_like(self._emb)
        elif n > len(self._emb):
            self._emb = np.concatenate([self._emb, np.empty_like(self._emb)])
            self._unit = np.concatenate([self._unit, np.empty_like(self._unit)])
        self._emb[n - 1] = spilled.embedding
        row = self._emb[n - 1:n]
        self._unit[n - 1] = (row / np.linalg.norm(row, axis=1)[:, None])[0]
        self._ts = np.append(self._ts, float(spilled.timestamp))
        return True

    def pool_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.pool)
        if self._emb is None:
            return np.zeros((0, 0)), self._ts
        return self._emb[:n], self._ts

    def pool_relevance(self, e_i: np.ndarray) -> np.ndarray:
        key = np.asarray(e_i, dtype=float).tobytes()
        emb, _ = self.pool_arrays()
        if key != self._rel_key:
            self._rel_key, self._rel = key, np.zeros(0)
        if len(self._rel) < len(emb):
            self._rel = np.concatenate([self._rel, relevance(emb[len(self._rel):], e_i)])
        return self._rel


    def solve(self, e_i: np.ndarray, p: RefineParams) -> list[int]:
        """Greedy bank over the pool (sorted indices), reusing the last solution."""
        _, ts = self.pool_arrays()
        rel = self.pool_relevance(e_i)
        n = len(ts)
        if n <= p.k:
            self._solution = None
            return list(range(n))
        unit = self._unit[:n]
        key = (self._rel_key, p)
        prev = self._solution
        if prev is None or prev[0] != key:
            order, scores = _greedy(unit, ts, rel, p, [], [])
        elif prev[3] == n:
            order, scores = prev[1], prev[2]
        else:
            order, scores = _extend(prev[1], prev[2], unit, ts, rel, p, prev[3])
        self._solution = (key, order, scores, n)
        return sorted(order)


def _extend(order: list[int], scores: list[float], unit: np.ndarray, ts: np.ndarray,
            rel: np.ndarray, p: RefineParams, first_new: int) -> tuple[list[int], list[float]]:
    """Update a full greedy solution after frames ``first_new..n-1`` joined the pool.

    With the same prefix, old candidates score exactly as before, so the old
    pick at step j stands unless a newcomer strictly beats its score (the
    newcomers are later, so they lose exact ties). The first step where one
    does becomes the branch point and the rest is recomputed.
    """
    new = np.arange(first_new, len(ts))
    picks = np.array(order)
    sims = (unit[new][:, None, :] * unit[picks][None, :, :]).sum(axis=2)
    vis = np.maximum.accumulate(sims, axis=1)
    gap = np.minimum.accumulate(np.abs(ts[picks][None, :] - ts[new][:, None]), axis=1)
    cand = np.empty((len(new), len(picks)))
    cand[:, 0] = p.lambda_r * rel[new]
    penalty = p.w_v * vis[:, :-1] + p.w_t / (gap[:, :-1] + p.epsilon)
    cand[:, 1:] = p.lambda_r * rel[new][:, None] - (1.0 - p.lambda_r) * penalty
    best = cand.max(axis=0)
    beats = np.flatnonzero(best > np.array(scores))
    if beats.size == 0:
        return list(order), list(scores)
    j = int(beats[0])
    m = int(new[int(np.argmax(cand[:, j]))])
    return _greedy(unit, ts, rel, p, list(order[:j]) + [m], list(scores[:j]) + [float(best[j])])


def update_online(st: StreamState, new_frame: Frame, e_i: np.ndarray, p: RefineParams) -> StreamState:
    """Advance the stream by one frame and re-solve the bank over the pool."""
    if st.push(new_frame):
        picked = st.solve(e_i, p)
        st.current_bank = MemoryBank(tuple(st.pool[i] for i in picked), p.k)
    return st


def update_uniform(st: StreamState, new_frame: Frame, k: int) -> StreamState:
    if st.push(new_frame):
        st.current_bank = uniform_sample(st.pool, k)
    return st


def update_none(st: StreamState, new_frame: Frame) -> StreamState:
    st.push(new_frame)
    return st
