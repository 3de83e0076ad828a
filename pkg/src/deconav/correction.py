"""Correction data: the deviation metric, trust-region collection and a DAgger baseline.

Every record stores the policy input features and the expert's next action
chunk alongside the pose and frame, so datasets feed ``bc_train`` directly.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .episodes import Episode, reverse_episode
from .evaluation import ChunkPolicy, MemoryMode, Navigator, RolloutConfig, as_policy
from .expert import CHUNK, ExpertGuide, expert_chunk
from .memory import Frame, RefineParams
from .policy import N_RELEVANCE, T_MAX, PolicyParams
from .world import Action, ActuationNoise, AgentState, GridWorld, WorldError

SCHEMA_VERSION = "v1"


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class CollectionConfig:
    tau: float = 3.0
    on_path_tolerance: float = 0.05
    t_max: int = T_MAX
    seeds: tuple[int, ...] = ()

    def validate(self) -> None:
        if not 0 < self.on_path_tolerance < self.tau:
            raise ValueError("need 0 < on_path_tolerance < tau")
        if self.t_max < 1:
            raise ValueError("t_max must be positive")


@dataclass(frozen=True, eq=False)
class StateActionPair:
    state: AgentState
    expert_action: Action
    frame: Frame
    episode_id: int
    step_index: int
    deviation: float
    expert_chunk: tuple[Action, ...] = ()
    features: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class CorrectionDataset:
    pairs: list[StateActionPair] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    schema: str = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.pairs)

    def append(self, pair: StateActionPair) -> None:
        self.pairs.append(pair)

    def truncated(self, n: int) -> "CorrectionDataset":
        """The first ``n`` pairs, for matched-budget comparisons."""
        prov = dict(self.provenance, truncated_to=int(n))
        return CorrectionDataset(self.pairs[:n], prov, self.schema)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(features, chunk labels) ready for ``bc_train``."""
        if any(p.features is None or len(p.expert_chunk) != CHUNK for p in self.pairs):
            raise SchemaError("dataset lacks features or expert chunks")
        if not self.pairs:
            return np.zeros((0, 0)), np.zeros((0, CHUNK), dtype=np.int64)
        feats = np.stack([p.features for p in self.pairs])
        chunks = np.array([[int(a) for a in p.expert_chunk] for p in self.pairs], dtype=np.int64)
        return feats, chunks


def deviation_metric(world: GridWorld, state: AgentState,
                     expert_path: Sequence[AgentState] | ExpertGuide) -> float:
    """Minimum geodesic distance from ``state`` to any state of the expert path."""
    if not world.is_free(state.x, state.y):
        raise WorldError(f"state ({state.x}, {state.y}) lies in an obstacle")
    guide = expert_path if isinstance(expert_path, ExpertGuide) else ExpertGuide(world, list(expert_path))
    return guide.deviation_at(state)


def _pair(nav: Navigator, dm: float) -> StateActionPair:
    chunk = expert_chunk(nav.world, nav.state, nav.guide)
    return StateActionPair(
        state=nav.state,
        expert_action=chunk[0],
        frame=nav.frame,
        episode_id=nav.episode.id,
        step_index=nav.t,
        deviation=dm,
        expert_chunk=tuple(chunk),
        features=nav.features(),
    )


def _example_key(pair: StateActionPair) -> tuple:
    """Identity of a training example with the clock entry masked.

    The dataset is a set, so pushing into a wall repeatedly stores the
    stuck state once its memory inputs stop changing instead of every step.
    """
    feats = pair.features.copy()
    feats[-(N_RELEVANCE + 1)] = 0.0
    return pair.state, pair.expert_chunk, feats.tobytes()


@dataclass
class _Outcome:
    pairs: list[StateActionPair]
    status: str  # success | stop | abort | stall | timeout
    log: list[float]  # DM at every visited state


def _collect_episode(world: GridWorld, episode: Episode, act: ChunkPolicy, cfg: CollectionConfig,
                     refine: RefineParams, trust_region: bool) -> _Outcome:
    nav = Navigator(world, episode, RolloutConfig(MemoryMode.AMR, refine, cfg.t_max))
    pairs: list[StateActionPair] = []
    seen: set[tuple] = set()
    log: list[float] = []
    queue: list[Action] = []
    while True:
        dm = nav.guide.deviation_at(nav.state)
        log.append(dm)
        if trust_region and dm > cfg.tau:
            return _Outcome(pairs, "abort", log)
        if dm > cfg.on_path_tolerance or not trust_region:
            pair = _pair(nav, dm)
            key = _example_key(pair)
            if key not in seen:
                seen.add(key)
                pairs.append(pair)
        if nav.out_of_time:
            return _Outcome(pairs, "timeout", log)
        if nav.stalled:
            return _Outcome(pairs, "stall", log)
        if not queue:
            queue = list(act(nav))
        a = queue.pop(0)
        if a == Action.STOP:
            ok = nav.guide.goal_distance(nav.state) <= world.params.success_radius
            return _Outcome(pairs, "success" if ok else "stop", log)
        nav.advance(a)


def _provenance(kind: str, policy, cfg: CollectionConfig, refine: RefineParams,
                statuses: list[str], episodes: Sequence[Episode]) -> dict:
    ckpt = policy.checksum() if isinstance(policy, PolicyParams) else getattr(policy, "__name__", "scripted")
    counts = {s: statuses.count(s) for s in sorted(set(statuses))}
    return {
        "kind": kind,
        "policy": ckpt,
        "tau": cfg.tau,
        "on_path_tolerance": cfg.on_path_tolerance,
        "t_max": cfg.t_max,
        "seeds": list(cfg.seeds),
        "refine": [refine.lambda_r, refine.w_v, refine.w_t, refine.epsilon, refine.k],
        "episodes": len(episodes),
        "outcomes": counts,
    }


Worlds = GridWorld | Mapping[int, GridWorld]


def _world_for(worlds: Worlds, ep: Episode) -> GridWorld:
    if isinstance(worlds, GridWorld):
        if worlds.seed != ep.world_seed:
            raise WorldError(f"episode {ep.id} belongs to world {ep.world_seed}")
        return worlds
    return worlds[ep.world_seed]


def _collect(kind: str, worlds: Worlds, episodes: Sequence[Episode], policy,
             cfg: CollectionConfig, refine: RefineParams, budget: Optional[int]) -> CorrectionDataset:
    cfg.validate()
    if budget is not None and budget < 0:
        raise ValueError("budget must be non-negative")
    act = as_policy(policy)
    ds = CorrectionDataset()
    statuses = []
    for ep in sorted(episodes, key=lambda e: (e.id, e.world_seed)):
        if budget is not None and len(ds) >= budget:
            break
        out = _collect_episode(_world_for(worlds, ep), ep, act, cfg, refine,
                               trust_region=kind == "trust_region")
        ds.pairs.extend(out.pairs)
        statuses.append(out.status)
    if budget is not None:
        del ds.pairs[budget:]
    ds.provenance = _provenance(kind, policy, cfg, refine, statuses, episodes)
    ds.provenance["budget"] = budget
    return ds


def collect_corrections(worlds: Worlds, episodes: Sequence[Episode],
                        policy: PolicyParams | ChunkPolicy,
                        cfg: CollectionConfig = CollectionConfig(),
                        refine_params: RefineParams = RefineParams(),
                        budget: Optional[int] = None) -> CorrectionDataset:
    """Trust-region correction collection.

    At every visited state the deviation from the expert path is measured; a
    pair is stored when it lies in (on_path_tolerance, tau] and the episode is
    abandoned as soon as it exceeds tau. The policy is queried for a chunk of
    actions whenever its queue is empty, so the check runs after every
    primitive action. Actuation is noise-free.

    Episodes run in (id, world) order, which interleaves worlds; with a
    ``budget`` collection stops once that many pairs exist and the surplus of
    the last episode is dropped.
    """
    return _collect("trust_region", worlds, episodes, policy, cfg, refine_params, budget)


def dagger_collect(worlds: Worlds, episodes: Sequence[Episode],
                   policy: PolicyParams | ChunkPolicy,
                   cfg: CollectionConfig = CollectionConfig(),
                   refine_params: RefineParams = RefineParams(),
                   budget: Optional[int] = None) -> CorrectionDataset:
    """Vanilla DAgger: label every visited state, with no trust region and no abort."""
    return _collect("dagger", worlds, episodes, policy, cfg, refine_params, budget)


def collection_log(world: GridWorld, episode: Episode, policy: PolicyParams | ChunkPolicy,
                   cfg: CollectionConfig = CollectionConfig(),
                   refine_params: RefineParams = RefineParams()) -> tuple[list[StateActionPair], str, list[float]]:
    """Pairs, termination status and the per-state deviation log of one episode."""
    cfg.validate()
    out = _collect_episode(world, episode, as_policy(policy), cfg, refine_params, trust_region=True)
    return out.pairs, out.status, out.log


def merge(*datasets: CorrectionDataset) -> CorrectionDataset:
    """Concatenate datasets, keeping each provenance record."""
    schemas = {d.schema for d in datasets}
    if len(schemas) > 1:
        raise SchemaError(f"cannot merge schema versions {sorted(schemas)}")
    out = CorrectionDataset(schema=schemas.pop() if schemas else SCHEMA_VERSION)
    parts = []
    for d in datasets:
        out.pairs.extend(d.pairs)
        parts.extend(d.provenance.get("parts", [d.provenance]) if d.provenance else [])
    out.provenance = {"kind": "merged", "parts": parts} if len(parts) != 1 else dict(parts[0])
    return out


# ------------------------------------------------------------ expert data


def expert_demonstrations(world: GridWorld, episodes: Sequence[Episode], mode: MemoryMode,
                          refine: RefineParams = RefineParams(), noise_seed: int = 0,
                          noisy: bool = True, reverse: bool = True,
                          t_max: int = T_MAX) -> CorrectionDataset:
    """Expert rollouts labelled with noise-free expert chunks.

    Execution uses actuation noise so the data covers small drifts; reversed
    copies of each episode are added when ``reverse`` is set. Features are
    computed under the given memory mode.
    """
    items: list[Episode] = []
    for ep in sorted(episodes, key=lambda e: e.id):
        items.append(ep)
        if reverse:
            items.append(reverse_episode(world, ep, episode_id=-ep.id - 1))
    ds = CorrectionDataset()
    for ep in items:
        noise = ActuationNoise(enabled=noisy, rng_seed=(noise_seed * 1_000_003 + ep.id) % (2 ** 63))
        nav = Navigator(world, ep, RolloutConfig(mode, refine, t_max), noise=noise)
        while not (nav.out_of_time or nav.stalled):
            pair = _pair(nav, nav.guide.deviation_at(nav.state))
            ds.append(pair)
            if pair.expert_action == Action.STOP:
                break
            nav.advance(pair.expert_action)
    ds.provenance = {
        "kind": "expert",
        "memory_mode": MemoryMode(mode).value,
        "noise_seed": noise_seed,
        "noisy": noisy,
        "reverse": reverse,
        "episodes": len(items),
    }
    return ds


# ---------------------------------------------------------------- file IO


def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _unb64(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").copy()


def pair_record(p: StateActionPair) -> dict:
    return {
        "episode_id": p.episode_id,
        "step": p.step_index,
        "pose": [p.state.x, p.state.y, p.state.heading],
        "action": p.expert_action.name,
        "chunk": [a.name for a in p.expert_chunk],
        "deviation": p.deviation,
        "frame_t": p.frame.timestamp,
        "embedding": _b64(p.frame.embedding),
        "features": None if p.features is None else _b64(p.features),
    }


def record_pair(r: dict) -> StateActionPair:
    state = AgentState(*r["pose"])
    return StateActionPair(
        state=state,
        expert_action=Action[r["action"]],
        frame=Frame(int(r["frame_t"]), _unb64(r["embedding"]), state),
        episode_id=int(r["episode_id"]),
        step_index=int(r["step"]),
        deviation=float(r["deviation"]),
        expert_chunk=tuple(Action[a] for a in r["chunk"]),
        features=None if r["features"] is None else _unb64(r["features"]),
    )


def write_dataset(ds: CorrectionDataset, path: Path, fingerprint: str = "") -> None:
    """JSON Lines: a header with provenance, then one pair per line.

    Arrays are stored as base64 little-endian float64 so a round trip is exact.
    """
    lines = [json.dumps({"header": True, "schema": ds.schema, "fingerprint": fingerprint,
                         "provenance": ds.provenance, "n_pairs": len(ds)}, sort_keys=True)]
    lines += [json.dumps(pair_record(p), sort_keys=True) for p in ds.pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path: Path) -> CorrectionDataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if not header.get("header"):
            raise SchemaError(f"{path}: missing header line")
        if header.get("schema") != SCHEMA_VERSION:
            raise SchemaError(f"{path}: unsupported schema {header.get('schema')!r}")
        pairs = [record_pair(json.loads(line)) for line in fh if line.strip()]
    if len(pairs) != header["n_pairs"]:
        raise SchemaError(f"{path}: expected {header['n_pairs']} pairs, found {len(pairs)}")
    return CorrectionDataset(pairs, header["provenance"], header["schema"])


def read_fingerprint(path: Path) -> str:
    with open(path) as fh:
        return json.loads(fh.readline()).get("fingerprint", "")
