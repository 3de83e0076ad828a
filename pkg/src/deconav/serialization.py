"""JSON Lines files for worlds, episodes and rollout traces.

Every record carries ``schema`` and the producing ``fingerprint``. Poses are
written with three decimals; downstream stages always read episodes back from
disk so in-memory and resumed runs see the same values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .episodes import Episode, Instruction
from .evaluation import EpisodeResult
from .world import Action, AgentState, GridWorld, Landmark, WorldGenParams

SCHEMA = "v1"


class FileSchemaError(ValueError):
    pass


def _pose(s: AgentState) -> list[float]:
    return [round(s.x, 3), round(s.y, 3), round(s.heading, 3)]


def _state(p: Sequence[float]) -> AgentState:
    return AgentState(float(p[0]), float(p[1]), float(p[2]))


def _check(record: dict, path: Path) -> dict:
    if record.get("schema") != SCHEMA:
        raise FileSchemaError(f"{path}: unsupported schema {record.get('schema')!r}")
    return record


def write_jsonl(path: Path, records: Iterable[dict]) -> None:
    text = "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [_check(json.loads(line), path) for line in fh if line.strip()]


def file_fingerprint(path: Path) -> Optional[str]:
    """Fingerprint embedded in the first record of a JSONL file, if any."""
    with open(path) as fh:
        line = fh.readline()
    try:
        return json.loads(line).get("fingerprint")
    except (json.JSONDecodeError, AttributeError):
        return None


# ----------------------------------------------------------------- worlds


def rle_encode(occ: np.ndarray) -> list[int]:
    """Run lengths of the row-major flattened grid, starting with a free run."""
    flat = np.asarray(occ, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    return ([0] + runs) if flat[0] else runs


def rle_decode(runs: Sequence[int], shape: tuple[int, int]) -> np.ndarray:
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, np.asarray(runs, dtype=int))
    if flat.size != shape[0] * shape[1]:
        raise FileSchemaError("occupancy run lengths do not match the grid shape")
    return flat.reshape(shape)


def world_record(world: GridWorld, fingerprint: str = "") -> dict:
    return {
        "schema": SCHEMA,
        "fingerprint": fingerprint,
        "seed": world.seed,
        "params": asdict(world.params),
        "shape": [world.height, world.width],
        "occupancy_rle": rle_encode(world.occupancy),
        "landmarks": [[lm.id, lm.category, lm.cell[0], lm.cell[1]] for lm in world.landmarks],
    }


def record_world(r: dict) -> GridWorld:
    names = {f.name for f in fields(WorldGenParams)}
    params = WorldGenParams(**{k: v for k, v in r["params"].items() if k in names})
    occ = rle_decode(r["occupancy_rle"], tuple(r["shape"]))
    landmarks = [Landmark(int(i), int(c), (int(col), int(row))) for i, c, col, row in r["landmarks"]]
    return GridWorld(occ, landmarks, params, int(r["seed"]))


def write_worlds(path: Path, worlds: Sequence[GridWorld], fingerprint: str = "") -> None:
    write_jsonl(path, (world_record(w, fingerprint) for w in worlds))


def read_worlds(path: Path) -> dict[int, GridWorld]:
    worlds = [record_world(r) for r in read_jsonl(path)]
    return {w.seed: w for w in worlds}


# --------------------------------------------------------------- episodes


def episode_record(e: Episode, fingerprint: str = "") -> dict:
    return {
        "schema": SCHEMA,
        "fingerprint": fingerprint,
        "id": e.id,
        "world_seed": e.world_seed,
        "start": _pose(e.start),
        "goal": [round(e.goal[0], 3), round(e.goal[1], 3)],
        "expert_path": [_pose(s) for s in e.expert_path],
        "waypoints": list(e.instruction.waypoint_landmark_ids),
        "text": e.instruction.text_form,
        "embedding": [float(v) for v in e.instruction.embedding],
        "shortest_geodesic_length": round(e.shortest_geodesic_length, 6),
    }


def record_episode(r: dict) -> Episode:
    inst = Instruction(tuple(int(i) for i in r["waypoints"]), r["text"],
                       np.array(r["embedding"], dtype=float))
    return Episode(
        id=int(r["id"]),
        world_seed=int(r["world_seed"]),
        start=_state(r["start"]),
        goal=(float(r["goal"][0]), float(r["goal"][1])),
        expert_path=tuple(_state(p) for p in r["expert_path"]),
        instruction=inst,
        shortest_geodesic_length=float(r["shortest_geodesic_length"]),
    )


def write_episodes(path: Path, episodes: Sequence[Episode], fingerprint: str = "") -> None:
    write_jsonl(path, (episode_record(e, fingerprint) for e in episodes))


def read_episodes(path: Path) -> list[Episode]:
    return [record_episode(r) for r in read_jsonl(path)]


# ----------------------------------------------------------------- traces


_SYMBOL = {Action.MOVE_FORWARD: "F", Action.TURN_LEFT: "L", Action.TURN_RIGHT: "R", Action.STOP: "S"}


def trace_record(r: EpisodeResult, world_seed: int, fingerprint: str = "") -> dict:
    """Per-episode rollout trace plus the per-episode metric terms."""
    actions = "".join(_SYMBOL[Action(a)] for a in r.actions) + ("S" if r.stopped else "")
    return {
        "schema": SCHEMA,
        "fingerprint": fingerprint,
        "episode_id": r.episode_id,
        "world_seed": world_seed,
        "success": r.success,
        "stopped": r.stopped,
        "stop_geodesic_to_goal": r.stop_geodesic_to_goal,
        "agent_path_length": r.agent_path_length,
        "shortest_length": r.shortest_length,
        "steps_taken": r.steps_taken,
        "min_goal_distance_along_path": r.min_goal_distance_along_path,
        "cumulative_return": r.cumulative_return,
        "ndtw": r.ndtw,
        "success_radius": r.success_radius,
        "poses": [_pose(s) for s in r.agent_path],
        "actions": actions,
        "banks": r.bank_trace,
    }


def record_result(r: dict) -> EpisodeResult:
    """Rebuild the metric-relevant part of an EpisodeResult from a trace record."""
    symbols = {v: k for k, v in _SYMBOL.items()}
    acts = [symbols[c] for c in r["actions"]]
    if r["stopped"]:
        acts = acts[:-1]
    return EpisodeResult(
        episode_id=int(r["episode_id"]),
        success=bool(r["success"]),
        stop_geodesic_to_goal=float(r["stop_geodesic_to_goal"]),
        agent_path=[_state(p) for p in r["poses"]],
        agent_path_length=float(r["agent_path_length"]),
        shortest_length=float(r["shortest_length"]),
        steps_taken=int(r["steps_taken"]),
        min_goal_distance_along_path=float(r["min_goal_distance_along_path"]),
        cumulative_return=float(r["cumulative_return"]),
        ndtw=float(r["ndtw"]),
        success_radius=float(r["success_radius"]),
        actions=acts,
        bank_trace=[list(b) for b in r["banks"]],
        stopped=bool(r["stopped"]),
    )
