"""Experiment configuration and the staged, resumable pipeline.

Artifacts live under ``<out_dir>/artifacts/seed<s>/`` and are named by a
stage fingerprint: a hash of the config fields that stage depends on plus the
fingerprints of its inputs. A stage whose file exists is loaded instead of
recomputed, so deleting downstream files and re-running rebuilds exactly those,
and sweeps that change one field reuse every stage that does not depend on it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .correction import (CollectionConfig, CorrectionDataset, collect_corrections, dagger_collect,
                         expert_demonstrations, merge, read_dataset, write_dataset)
from .episodes import Episode, EpisodeGenParams, InsufficientEpisodes, generate_episode, stitch_chains
from .evaluation import MemoryMode, MetricsReport, RolloutConfig, compute_metrics, run_episode
from .memory import RefineParams
from .policy import PolicyParams, TrainConfig, bc_train, load_checkpoint, save_checkpoint
from .serialization import (read_episodes, read_jsonl, read_worlds, record_result, trace_record,
                            write_episodes, write_jsonl, write_worlds)
from .world import GridWorld, WorldGenParams, generate_world

SEED_ENV = "DECONAV_SEED"
VAL_SEED_OFFSET = 100_000
LONG_POOL_SEED_OFFSET = 200_000
LONG_ID_OFFSET = 300_000

TABLE2_ROWS = ("baseline", "+AMR", "+AMR+CF")
SWEEP_AXES = ("k", "lambda_r", "w_v", "tau", "data_budget")


class ConfigError(ValueError):
    pass


class FingerprintMismatch(RuntimeError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class LongHorizonConfig:
    episodes_per_world: int = 30
    pool_per_world: int = 200
    min_length: float = 18.0
    max_gap: float = 2.0
    max_legs: int = 4
    min_episodes: int = 100

    def validate(self) -> None:
        if self.episodes_per_world < 1 or self.pool_per_world < 2 or self.max_legs < 2:
            raise ConfigError("long_horizon needs episodes_per_world >= 1, pool_per_world >= 2, max_legs >= 2")
        if self.min_length <= 0 or self.max_gap < 0 or self.min_episodes < 0:
            raise ConfigError("long_horizon lengths must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldGenParams = WorldGenParams()
    episodes: EpisodeGenParams = EpisodeGenParams()
    n_worlds: int = 4
    train_episodes: int = 60  # per world
    val_episodes: int = 50  # per world
    long_horizon: LongHorizonConfig = LongHorizonConfig()
    refine: RefineParams = RefineParams()
    collection: CollectionConfig = CollectionConfig()
    train: TrainConfig = TrainConfig(epochs=20)
    finetune_epochs: int = 5
    correction_budget: float = 0.1  # correction pairs as a fraction of SFT pairs
    memory_mode: MemoryMode = MemoryMode.AMR
    action_noise: bool = True
    reverse_augment: bool = True
    base_seed: int = 0
    n_seeds: int = 3
    out_dir: str = "runs/default"

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.n_seeds)]

    def validate(self) -> "ExperimentConfig":
        try:
            self.world.validate()
            self.episodes.validate()
            self.collection.validate()
            self.train.validate()
            self.long_horizon.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("n_worlds", "train_episodes", "val_episodes", "finetune_epochs", "n_seeds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not self.correction_budget > 0:
            raise ConfigError("correction_budget must be positive")
        if MemoryMode(self.memory_mode) is MemoryMode.NONE:
            raise ConfigError("memory_mode must select a memory bank (amr or uniform)")
        return self

    def to_dict(self) -> dict:
        return _plain(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "")

    def fingerprint(self) -> str:
        body = self.to_dict()
        body.pop("out_dir")
        return digest(body)


def _plain(obj: Any) -> Any:
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    default = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(default, name)
        key = prefix + name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, key + ".")
        else:
            kwargs[name] = _coerce(current, value, key)
    try:
        return replace(default, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _coerce(current: Any, value: Any, key: str) -> Any:
    try:
        if isinstance(current, Enum):
            return type(current)(value)
        if isinstance(current, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            return tuple(int(v) for v in value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key}: {value!r}") from None


def flat_fields(cfg: Optional[ExperimentConfig] = None) -> dict[str, Any]:
    """Dotted key -> current value for every scalar config field."""
    out: dict[str, Any] = {}

    def walk(obj, prefix):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if is_dataclass(v):
                walk(v, prefix + f.name + ".")
            else:
                out[prefix + f.name] = v
    walk(cfg or ExperimentConfig(), "")
    return out


def with_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Apply dotted-key overrides such as ``{"refine.k": 4}``."""
    data = cfg.to_dict()
    valid = flat_fields(cfg)
    for key, value in overrides.items():
        if key not in valid:
            raise ConfigError(f"unknown config key: {key}")
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return ExperimentConfig.from_dict(data)


def load_config(path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None,
                env: Optional[dict[str, str]] = None) -> ExperimentConfig:
    """Config file (JSON mapping of sections) + overrides + DECONAV_SEED, validated."""
    cfg = ExperimentConfig()
    if path is not None:
        try:
            cfg = ExperimentConfig.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if overrides:
        cfg = with_overrides(cfg, overrides)
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "").strip():
        try:
            cfg = replace(cfg, base_seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return cfg.validate()


def digest(*parts: Any) -> str:
    text = json.dumps(_plain(list(parts)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# --------------------------------------------------------------- artifacts


def _atomic_write(path: Path, writer: Callable[[Path], Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _arrays(datasets: Sequence[CorrectionDataset]) -> tuple[np.ndarray, np.ndarray]:
    parts = [d.arrays() for d in datasets if len(d)]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


@dataclass
class EvalOutcome:
    report: MetricsReport
    path: Path


class SeedRun:
    """All stages for one seed, each loaded from disk when already present."""

    def __init__(self, cfg: ExperimentConfig, seed: int, log: Callable[[str], None] = lambda m: None):
        self.cfg = cfg
        self.seed = seed
        self.dir = Path(cfg.out_dir) / "artifacts" / f"seed{seed}"
        self.log = log
        self._worlds: Optional[dict[int, GridWorld]] = None
        self._splits: dict[str, tuple[str, list[Episode]]] = {}
        self._sft: dict[MemoryMode, CorrectionDataset] = {}
        self._policies: dict[str, tuple[str, PolicyParams, dict]] = {}

    def _path(self, name: str, fp: str, ext: str) -> Path:
        return self.dir / f"{name}-{fp}.{ext}"

    def _stage(self, name: str, fn: Callable[[], Any]) -> Any:
        t0 = time.perf_counter()
        try:
            out = fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.log(f"[seed {self.seed}] {name} ({time.perf_counter() - t0:.1f}s)")
        return out

    # worlds and episodes ------------------------------------------------

    @property
    def worlds_fp(self) -> str:
        return digest("worlds", self.cfg.world, self.cfg.n_worlds, self.seed)

    def worlds(self) -> dict[int, GridWorld]:
        if self._worlds is None:
            self._worlds = self._stage("gen-world", self._load_worlds)
        return self._worlds

    def _load_worlds(self) -> dict[int, GridWorld]:
        fp = self.worlds_fp
        path = self._path("worlds", fp, "jsonl")
        if not path.exists():
            worlds = [generate_world(self.seed * 1000 + i, self.cfg.world) for i in range(self.cfg.n_worlds)]
            _atomic_write(path, lambda p: write_worlds(p, worlds, fp))
        return read_worlds(path)

    def split(self, name: str) -> tuple[str, list[Episode]]:
        """(fingerprint, episodes) of the train, val or long split."""
        if name not in self._splits:
            stage = "stitch-long" if name == "long" else "gen-episodes"
            self._splits[name] = self._stage(stage, lambda: self._load_split(name))
        return self._splits[name]

    def _split_fp(self, name: str) -> str:
        cfg = self.cfg
        if name == "long":
            return digest("long", self.worlds_fp, cfg.episodes, cfg.long_horizon)
        count = cfg.train_episodes if name == "train" else cfg.val_episodes
        return digest("episodes", self.worlds_fp, cfg.episodes, name, count)

    def _load_split(self, name: str) -> tuple[str, list[Episode]]:
        if name not in ("train", "val", "long"):
            raise ConfigError(f"unknown split {name!r}")
        fp = self._split_fp(name)
        path = self._path(f"episodes-{name}", fp, "jsonl")
        if not path.exists():
            worlds = self.worlds()
            if name == "long":
                episodes = build_long_horizon_split(worlds, self.cfg)
            else:
                count = self.cfg.train_episodes if name == "train" else self.cfg.val_episodes
                offset = 0 if name == "train" else VAL_SEED_OFFSET
                episodes = [generate_episode(w, offset + j, self.cfg.episodes)
                            for _, w in sorted(worlds.items()) for j in range(count)]
            _atomic_write(path, lambda p: write_episodes(p, episodes, fp))
        return fp, read_episodes(path)

    # training -----------------------------------------------------------

    def _train_cfg(self, epochs: Optional[int] = None) -> TrainConfig:
        t = self.cfg.train
        return replace(t, seed=t.seed + self.seed, epochs=epochs or t.epochs)

    def sft(self, mode: MemoryMode) -> CorrectionDataset:
        mode = MemoryMode(mode)
        if mode not in self._sft:
            def build():
                worlds = self.worlds()
                _, train = self.split("train")
                parts = []
                for ws, w in sorted(worlds.items()):
                    eps = [e for e in train if e.world_seed == ws]
                    parts.append(expert_demonstrations(
                        w, eps, mode, self.cfg.refine, noise_seed=self.seed,
                        noisy=self.cfg.action_noise, reverse=self.cfg.reverse_augment,
                        t_max=self.cfg.collection.t_max))
                return merge(*parts)
            self._sft[mode] = self._stage(f"sft-data[{mode.value}]", build)
        return self._sft[mode]

    def _policy_fp(self, mode: MemoryMode) -> str:
        cfg = self.cfg
        refine = None if mode is MemoryMode.NONE else cfg.refine
        return digest("policy", self.split("train")[0], mode, refine, self._train_cfg(),
                      cfg.action_noise, cfg.reverse_augment, cfg.collection.t_max)

    def policy(self, mode: MemoryMode) -> tuple[str, PolicyParams, dict]:
        """(fingerprint, params, meta) of the behaviour-cloned policy for a memory mode."""
        mode = MemoryMode(mode)
        key = mode.value
        if key not in self._policies:
            self._policies[key] = self._stage(f"train[{key}]", lambda: self._load_policy(mode))
        return self._policies[key]

    def _load_policy(self, mode: MemoryMode):
        fp = self._policy_fp(mode)
        path = self._path(f"policy-{mode.value}", fp, "json")
        if not path.exists():
            data = self.sft(mode)
            params = bc_train(*data.arrays(), self._train_cfg()).params
            meta = {"fingerprint": fp, "memory_mode": mode.value, "n_pairs": len(data)}
            _atomic_write(path, lambda p: save_checkpoint(params, p, meta))
        return fp, load_checkpoint(path), json.loads(path.read_text())["meta"]

    # corrections --------------------------------------------------------

    def budget(self) -> int:
        _, _, meta = self.policy(self.cfg.memory_mode)
        return max(1, int(round(self.cfg.correction_budget * meta["n_pairs"])))

    def _collect_fp(self, kind: str) -> str:
        cfg = self.cfg
        base_fp = self.policy(cfg.memory_mode)[0]
        fp = digest("collect", "trust_region", base_fp, self.split("train")[0],
                    cfg.collection, cfg.refine, cfg.correction_budget)
        if kind == "dagger":
            fp = digest("collect", "dagger", fp)
        return fp

    def corrections(self, kind: str) -> tuple[str, CorrectionDataset]:
        """Trust-region corrections, or DAgger data truncated to the same pair count."""
        if kind not in ("trust_region", "dagger"):
            raise ConfigError(f"unknown correction kind {kind!r}")
        return self._stage(f"collect[{kind}]", lambda: self._load_corrections(kind))

    def _load_corrections(self, kind: str):
        fp = self._collect_fp(kind)
        path = self._path(f"corrections-{kind}", fp, "jsonl")
        if not path.exists():
            cfg = self.cfg
            _, params, _ = self.policy(cfg.memory_mode)
            _, train = self.split("train")
            if kind == "trust_region":
                ds = collect_corrections(self.worlds(), train, params, cfg.collection,
                                         cfg.refine, budget=self.budget())
            else:
                n = len(self.corrections("trust_region")[1])
                ds = dagger_collect(self.worlds(), train, params, cfg.collection, cfg.refine, budget=n)
            _atomic_write(path, lambda p: write_dataset(ds, p, fp))
        return fp, read_dataset(path)

    def finetuned(self, kind: str) -> tuple[str, PolicyParams, dict]:
        key = f"ft-{kind}"
        if key not in self._policies:
            self._policies[key] = self._stage(f"retrain[{kind}]", lambda: self._load_finetuned(kind))
        return self._policies[key]

    def _load_finetuned(self, kind: str):
        cfg = self.cfg
        base_fp, base, _ = self.policy(cfg.memory_mode)
        cfp, extra = self.corrections(kind)
        tcfg = self._train_cfg(cfg.finetune_epochs)
        fp = digest("finetune", base_fp, cfp, tcfg)
        path = self._path(f"policy-{kind}", fp, "json")
        if not path.exists():
            sft = self.sft(cfg.memory_mode)
            params = bc_train(*_arrays([sft, extra]), tcfg, init=base).params
            meta = {"fingerprint": fp, "memory_mode": MemoryMode(cfg.memory_mode).value,
                    "n_pairs": len(sft) + len(extra), "n_corrections": len(extra)}
            _atomic_write(path, lambda p: save_checkpoint(params, p, meta))
        return fp, load_checkpoint(path), json.loads(path.read_text())["meta"]

    # evaluation ---------------------------------------------------------

    def evaluate(self, policy: tuple[str, PolicyParams, dict], split: str) -> EvalOutcome:
        pfp, params, meta = policy
        mode = MemoryMode(meta["memory_mode"])
        return self._stage(f"eval[{mode.value}:{split}]",
                           lambda: self._load_eval(pfp, params, mode, split))

    def _load_eval(self, pfp: str, params: PolicyParams, mode: MemoryMode, split: str) -> EvalOutcome:
        sfp, episodes = self.split(split)
        rollout = RolloutConfig(mode, self.cfg.refine, self.cfg.collection.t_max)
        fp = digest("eval", pfp, sfp, rollout)
        path = self._path(f"traces-{split}", fp, "jsonl")
        if not path.exists():
            worlds = self.worlds()
            records = [trace_record(run_episode(worlds[e.world_seed], e, params, mode, rollout),
                                    e.world_seed, fp) for e in episodes]
            _atomic_write(path, lambda p: write_jsonl(p, records))
        results = [record_result(r) for r in read_jsonl(path)]
        return EvalOutcome(compute_metrics(results, fp), path)


def build_long_horizon_split(worlds: dict[int, GridWorld], cfg: ExperimentConfig) -> list[Episode]:
    """Stitched routes of at least ``min_length`` metres from a per-world candidate pool."""
    lh = cfg.long_horizon
    out: list[Episode] = []
    for ws, w in sorted(worlds.items()):
        pool = [generate_episode(w, LONG_POOL_SEED_OFFSET + j, cfg.episodes) for j in range(lh.pool_per_world)]
        out += stitch_chains(w, pool, lh.min_length, lh.max_gap, lh.max_legs,
                             limit=lh.episodes_per_world, first_id=LONG_ID_OFFSET + len(out))
    if len(out) < max(1, lh.min_episodes):
        raise InsufficientEpisodes(
            f"stitching produced {len(out)} episodes of >= {lh.min_length} m; need {max(1, lh.min_episodes)}")
    return out


def build_long_horizon(cfg: ExperimentConfig, log: Callable[[str], None] = lambda m: None) -> dict:
    """Build (or load) the long-horizon split for every seed; returns its length statistics."""
    cfg.validate()
    guard_output_dir(cfg, force=False)
    out = {}
    for s in cfg.seeds:
        run = SeedRun(cfg, s, log)
        fp, eps = run.split("long")
        lengths = [e.shortest_geodesic_length for e in eps]
        out[s] = {"path": str(run._path("episodes-long", fp, "jsonl")), "n_episodes": len(eps),
                  "mean_length": math.fsum(lengths) / len(lengths), "min_length": min(lengths)}
    return out


# ----------------------------------------------------------------- reports


METRICS = ("sr", "spl", "ne", "os", "ndtw")
CSV_FIELDS = ("fingerprint", "table", "row", "split", "seed", "n_pairs") + METRICS + ("n_episodes",)


def _config_file(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / "config.json"


def guard_output_dir(cfg: ExperimentConfig, force: bool) -> None:
    """Refuse to reuse an output directory produced by a different config."""
    path = _config_file(cfg)
    fp = cfg.fingerprint()
    if path.exists():
        old = json.loads(path.read_text()).get("fingerprint")
        if old != fp and not force:
            raise FingerprintMismatch(
                f"{path.parent} holds outputs of config {old}, current config is {fp}; use --force")
    if not path.exists() or json.loads(path.read_text()).get("fingerprint") != fp:
        body = {"fingerprint": fp, "config": cfg.to_dict()}
        _atomic_write(path, lambda p: p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n"))


def _check_output(path: Path, fp: str, force: bool) -> None:
    if path.exists() and not force:
        old = embedded_fingerprint(path)
        if old != fp:
            raise FingerprintMismatch(f"{path} was written by config {old}, not {fp}; use --force")


def embedded_fingerprint(path: Path) -> Optional[str]:
    """Fingerprint stored in a report file (CSV column, Markdown/JSON header)."""
    text = Path(path).read_text()
    if path.suffix == ".csv":
        rows = list(csv.DictReader(io.StringIO(text)))
        return rows[0]["fingerprint"] if rows else None
    if path.suffix == ".json":
        return json.loads(text).get("fingerprint")
    first = text.splitlines()[0] if text else ""
    return first.split("fingerprint:")[-1].strip(" ->`") if "fingerprint:" in first else None


def _row(fp: str, table: str, row: str, split: str, seed, m: MetricsReport, n_pairs="") -> dict:
    return {"fingerprint": fp, "table": table, "row": row, "split": split, "seed": seed,
            "n_pairs": n_pairs, **{k: f"{getattr(m, k):.6f}" for k in METRICS},
            "n_episodes": m.n_episodes}


def _mean_rows(rows: list[dict]) -> list[dict]:
    """Append a seed='mean' row for every (table, row, split) group, keeping first-seen order."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["table"], r["row"], r["split"]), []).append(r)
    out = list(rows)
    for (table, row, split), rs in groups.items():
        mean = {"fingerprint": rs[0]["fingerprint"], "table": table, "row": row, "split": split,
                "seed": "mean", "n_pairs": rs[0]["n_pairs"] if len(rs) == 1 else "",
                "n_episodes": sum(int(r["n_episodes"]) for r in rs)}
        for k in METRICS:
            mean[k] = f"{math.fsum(float(r[k]) for r in rs) / len(rs):.6f}"
        out.append(mean)
    return out


def _csv_text(rows: list[dict], fieldnames: Sequence[str] = CSV_FIELDS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _md_table(rows: list[dict], label: str, seeds: Sequence) -> list[str]:
    head = f"| {label} | SR | SPL | NE (m) | OS | nDTW | " + " | ".join(f"SR s{s}" for s in seeds) + " |"
    lines = [head, "|" + "---|" * (6 + len(seeds))]
    names = list(dict.fromkeys(r["row"] for r in rows))
    for name in names:
        mean = next(r for r in rows if r["row"] == name and r["seed"] == "mean")
        per = [next((r["sr"] for r in rows if r["row"] == name and r["seed"] == s), "") for s in seeds]
        cells = [f"{100 * float(mean[k]):.1f}" for k in ("sr", "spl")] + [f"{float(mean['ne']):.2f}"]
        cells += [f"{100 * float(mean[k]):.1f}" for k in ("os", "ndtw")]
        cells += [f"{100 * float(v):.1f}" if v != "" else "" for v in per]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return lines


TABLE_TITLES = {
    "table2": "Module ablation (held-out episodes)",
    "memory": "Memory modes, behaviour cloning only (held-out episodes)",
    "table5": "Trust-region corrections vs DAgger at a matched pair budget",
    "long": "Long-horizon stitched episodes",
}


def _markdown(fp: str, rows: list[dict], seeds: Sequence, extra: Sequence[str] = ()) -> str:
    lines = [f"<!-- fingerprint: {fp} -->", "# Results", "",
             f"Config fingerprint: `{fp}`. Seeds: {', '.join(str(s) for s in seeds)}. "
             "Rates in percent; per-seed SR columns follow the means.", ""]
    lines += list(extra)
    for table in dict.fromkeys(r["table"] for r in rows):
        sub = [r for r in rows if r["table"] == table]
        lines += [f"## {TABLE_TITLES.get(table, table)}", ""]
        lines += _md_table(sub, "Configuration", seeds) + [""]
    return "\n".join(lines)


@dataclass
class PipelineResult:
    fingerprint: str
    rows: list[dict]
    summary: dict
    paths: dict[str, Path] = field(default_factory=dict)

    def mean(self, table: str, row: str, metric: str = "sr") -> float:
        r = next(r for r in self.rows if r["table"] == table and r["row"] == row and r["seed"] == "mean")
        return float(r[metric])

    def per_seed(self, table: str, row: str, metric: str = "sr") -> dict:
        return {r["seed"]: float(r[metric]) for r in self.rows
                if r["table"] == table and r["row"] == row and r["seed"] != "mean"}


def _write_reports(cfg: ExperimentConfig, stem: str, fp: str, rows: list[dict], summary: dict,
                   force: bool, extra_md: Sequence[str] = ()) -> dict[str, Path]:
    root = Path(cfg.out_dir)
    paths = {"csv": root / f"{stem}.csv", "md": root / f"{stem}.md", "json": root / f"{stem}.json"}
    for p in paths.values():
        _check_output(p, fp, force)
    _atomic_write(paths["csv"], lambda p: p.write_text(_csv_text(rows)))
    _atomic_write(paths["md"], lambda p: p.write_text(_markdown(fp, rows, cfg.seeds, extra_md) + "\n"))
    body = {"fingerprint": fp, **summary}
    _atomic_write(paths["json"], lambda p: p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n"))
    return paths


def run_pipeline(cfg: ExperimentConfig, force: bool = False, long_horizon: bool = True,
                 log: Callable[[str], None] = lambda m: None) -> PipelineResult:
    """Every stage for every seed, then CSV/Markdown/JSON reports in ``out_dir``.

    Rows: module ablation {baseline, +AMR, +AMR+CF}, memory modes {none,
    uniform, amr}, trust-region vs DAgger at the trust-region pair count and,
    when ``long_horizon`` is set, the ablation rows on the stitched split.
    """
    try:
        cfg.validate()
    except ConfigError as exc:
        raise StageError("config", exc) from exc
    guard_output_dir(cfg, force)
    fp = cfg.fingerprint()
    rows: list[dict] = []
    lengths: dict = {}
    main_mode = MemoryMode(cfg.memory_mode)
    for s in cfg.seeds:
        run = SeedRun(cfg, s, log)
        base = run.policy(MemoryMode.UNIFORM)
        amr = run.policy(main_mode)
        none = run.policy(MemoryMode.NONE)
        cf = run.finetuned("trust_region")
        dagger = run.finetuned("dagger")
        n_cf, n_dagger = cf[2]["n_corrections"], dagger[2]["n_corrections"]
        ev = {name: run.evaluate(p, "val").report
              for name, p in (("baseline", base), ("+AMR", amr), ("+AMR+CF", cf), ("none", none),
                              ("dagger", dagger))}
        rows += [_row(fp, "table2", name, "val", s, ev[name]) for name in TABLE2_ROWS]
        rows += [_row(fp, "memory", name, "val", s, ev[key])
                 for name, key in (("none", "none"), ("uniform", "baseline"), (main_mode.value, "+AMR"))]
        rows += [_row(fp, "table5", "trust_region", "val", s, ev["+AMR+CF"], n_cf),
                 _row(fp, "table5", "dagger", "val", s, ev["dagger"], n_dagger)]
        if long_horizon:
            lfp, leps = run.split("long")
            ls = [e.shortest_geodesic_length for e in leps]
            lengths[s] = {"n_episodes": len(leps), "mean_length": math.fsum(ls) / len(ls),
                          "min_length": min(ls)}
            for name, p in (("baseline", base), ("+AMR", amr), ("+AMR+CF", cf)):
                rows.append(_row(fp, "long", name, "long", s, run.evaluate(p, "long").report))
    rows = _mean_rows(rows)
    summary = {"seeds": cfg.seeds, "long_horizon": {str(k): v for k, v in lengths.items()}}
    extra = []
    if lengths:
        extra = ["Long-horizon split: " + "; ".join(
            f"seed {s}: {v['n_episodes']} episodes, mean shortest length {v['mean_length']:.2f} m"
            for s, v in lengths.items()), ""]
    paths = _write_reports(cfg, "report", fp, rows, summary, force, extra)
    return PipelineResult(fp, rows, summary, paths)


# ------------------------------------------------------------------- sweep


def sweep_config(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "k":
        if float(value) != int(value):
            raise ConfigError("k must be an integer")
        return replace(cfg, refine=replace(cfg.refine, k=int(value)))
    if axis == "lambda_r":
        return replace(cfg, refine=replace(cfg.refine, lambda_r=float(value)))
    if axis == "w_v":
        return replace(cfg, refine=replace(cfg.refine, w_v=float(value), w_t=1.0 - float(value)))
    if axis == "tau":
        return replace(cfg, collection=replace(cfg.collection, tau=float(value)))
    if axis == "data_budget":
        return replace(cfg, correction_budget=float(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence[float], force: bool = False,
          log: Callable[[str], None] = lambda m: None) -> PipelineResult:
    """Re-run the pipeline slice that depends on ``axis`` for each value.

    Memory axes (k, lambda_r, w_v) retrain and evaluate the memory policy;
    tau retrains with trust-region corrections; data_budget compares
    trust-region and DAgger corrections at each budget. Upstream artifacts
    are shared through their fingerprints.
    """
    if not values:
        raise ConfigError("sweep needs at least one value")
    try:
        cfg.validate()
        variants = [(v, sweep_config(cfg, axis, v).validate()) for v in values]
    except (ConfigError, ValueError) as exc:
        raise StageError("config", exc) from exc
    guard_output_dir(cfg, force)
    fp = digest("sweep", cfg.fingerprint(), axis, list(values))
    rows: list[dict] = []
    stage_fps: dict = {}
    for value, vcfg in variants:
        label = f"{axis}={value:g}"
        for s in vcfg.seeds:
            run = SeedRun(vcfg, s, log)
            fps = {"worlds": run.worlds_fp, "train": run.split("train")[0]}
            if axis in ("k", "lambda_r", "w_v"):
                pol = run.policy(vcfg.memory_mode)
                fps["policy"] = pol[0]
                rows.append(_row(fp, f"sweep-{axis}", label, "val", s, run.evaluate(pol, "val").report))
            else:
                fps["policy"] = run.policy(vcfg.memory_mode)[0]
                kinds = ("trust_region",) if axis == "tau" else ("trust_region", "dagger")
                for kind in kinds:
                    pol = run.finetuned(kind)
                    fps[kind] = pol[0]
                    name = label if axis == "tau" else f"{label} {kind}"
                    rows.append(_row(fp, f"sweep-{axis}", name, "val", s,
                                     run.evaluate(pol, "val").report, pol[2]["n_corrections"]))
            stage_fps[f"{label}/seed{s}"] = fps
    rows = _mean_rows(rows)
    return PipelineResult(fp, rows, {"axis": axis, "values": list(values), "stages": stage_fps},
                          _write_reports(cfg, f"sweep-{axis}", fp, rows,
                                         {"axis": axis, "values": list(values), "stages": stage_fps},
                                         force))
