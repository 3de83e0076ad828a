"""Expert and learned policies.

The learned policy is four position-conditioned linear softmax heads over a
fixed feature vector; each inference emits a chunk of four actions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .memory import Frame, MemoryBank
from .expert import CHUNK
from .world import Action

N_ACTIONS = len(Action)
T_MAX = 500
CHECKPOINT_VERSION = "v1"


class PolicyError(ValueError):
    pass


# --------------------------------------------------------------- features


N_RELEVANCE = 5


def feature_dim(d: int) -> int:
    return 4 * d + 2 + N_RELEVANCE


def featurize(e_i: np.ndarray, bank: MemoryBank, recent: Sequence[Frame], current: Frame,
              t: int, t_max: int = T_MAX) -> np.ndarray:
    """[e_I | bank mean | recent mean | current | fill | time | relevance summary].

    The relevance summary holds the cosine of the instruction with the bank
    mean, the recent mean and the current frame, then the cosine of the
    current frame with the bank and recent means (zero for an empty slot).
    """
    d = len(e_i)
    cur = current.embedding
    if len(cur) != d:
        raise PolicyError(f"frame dimension {len(cur)} != instruction dimension {d}")
    if bank.frames:
        bank_mean = np.mean([f.embedding for f in bank.frames], axis=0)
    else:
        bank_mean = np.zeros(d)
    if recent:
        recent_mean = np.mean([f.embedding for f in recent], axis=0)
    else:
        recent_mean = np.zeros(d)
    if len(bank_mean) != d or len(recent_mean) != d:
        raise PolicyError("memory embedding dimension mismatch")
    fill = len(bank.frames) / bank.capacity
    rel = np.array([_safe_cos(e_i, bank_mean), _safe_cos(e_i, recent_mean), _safe_cos(e_i, cur),
                    _safe_cos(cur, bank_mean), _safe_cos(cur, recent_mean)])
    return np.concatenate([e_i, bank_mean, recent_mean, cur, [fill, t / t_max], rel])


def _safe_cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


# ------------------------------------------------------------------ params


@dataclass
class PolicyParams:
    """Weights ``w[j]`` map features plus a position one-hot to logits of head j."""

    w: np.ndarray  # (CHUNK, N_ACTIONS, F + CHUNK)
    b: np.ndarray  # (CHUNK, N_ACTIONS)
    init_seed: int = 0

    @property
    def n_features(self) -> int:
        return self.w.shape[2] - CHUNK

    @classmethod
    def init(cls, n_features: int, seed: int = 0, scale: float = 0.01) -> "PolicyParams":
        rng = np.random.default_rng([seed, 101])
        w = scale * rng.standard_normal((CHUNK, N_ACTIONS, n_features + CHUNK))
        return cls(w, np.zeros((CHUNK, N_ACTIONS)), seed)

    @classmethod
    def zeros(cls, n_features: int) -> "PolicyParams":
        return cls(np.zeros((CHUNK, N_ACTIONS, n_features + CHUNK)), np.zeros((CHUNK, N_ACTIONS)))

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.w.copy(), self.b.copy(), self.init_seed)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.w, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.b, dtype="<f8").tobytes())
        return h.hexdigest()


def _augment(feats: np.ndarray) -> np.ndarray:
    """(B, F) -> (B, CHUNK, F + CHUNK) with the position one-hot appended."""
    b = feats.shape[0]
    eye = np.broadcast_to(np.eye(CHUNK), (b, CHUNK, CHUNK))
    return np.concatenate([np.broadcast_to(feats[:, None, :], (b, CHUNK, feats.shape[1])), eye], axis=2)


def logits(params: PolicyParams, feats: np.ndarray) -> np.ndarray:
    """(B, F) -> (B, CHUNK, N_ACTIONS)."""
    x = _augment(np.atleast_2d(feats))
    return np.einsum("bjf,jaf->bja", x, params.w) + params.b[None]


def predict_chunk(params: PolicyParams, feat: np.ndarray) -> list[Action]:
    z = logits(params, np.asarray(feat, dtype=float)[None])[0]
    # argmax returns the first maximum, i.e. enum order breaks ties
    return [Action(int(np.argmax(z[j]))) for j in range(CHUNK)]


# ------------------------------------------------------------------- loss


def loss_and_grad(params: PolicyParams, feats: np.ndarray, chunks: np.ndarray,
                  l2: float = 1e-4, weights: Optional[np.ndarray] = None):
    """Mean per-position cross-entropy plus ``0.5 * l2 * ||w||^2``.

    ``chunks`` is (B, CHUNK) integer actions. Returns ``(loss, (grad_w, grad_b))``.
    """
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    chunks = np.asarray(chunks, dtype=np.int64).reshape(-1, CHUNK)
    n = feats.shape[0]
    if n == 0:
        raise PolicyError("empty batch")
    if weights is None:
        weights = np.ones(n)
    x = _augment(feats)
    z = np.einsum("bjf,jaf->bja", x, params.w) + params.b[None]
    z = z - z.max(axis=2, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=2, keepdims=True))
    onehot = np.zeros_like(logp)
    np.put_along_axis(onehot, chunks[:, :, None], 1.0, axis=2)
    wsum = weights.sum()
    nll = -(logp * onehot).sum(axis=2)  # (B, CHUNK)
    loss = float((weights[:, None] * nll).sum() / (wsum * CHUNK)) + 0.5 * l2 * float((params.w ** 2).sum())
    dz = (np.exp(logp) - onehot) * (weights[:, None, None] / (wsum * CHUNK))
    grad_w = np.einsum("bja,bjf->jaf", dz, x) + l2 * params.w
    grad_b = dz.sum(axis=0)
    return loss, (grad_w, grad_b)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    l2: float = 1e-4
    seed: int = 0
    momentum: float = 0.9

    def validate(self) -> None:
        for name in ("learning_rate", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.l2 < 0:
            raise ValueError("TrainConfig.l2 must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("TrainConfig.momentum must be in [0, 1)")


@dataclass
class TrainResult:
    params: PolicyParams
    loss_trace: list[float] = field(default_factory=list)


def bc_train(feats: np.ndarray, chunks: np.ndarray, cfg: TrainConfig = TrainConfig(),
             init: Optional[PolicyParams] = None) -> TrainResult:
    """Mini-batch SGD with momentum on the imitation loss.

    ``loss_trace`` holds the mean training loss of each epoch.
    """
    cfg.validate()
    feats = np.asarray(feats, dtype=float)
    chunks = np.asarray(chunks, dtype=np.int64)
    if len(feats) == 0:
        raise PolicyError("empty dataset")
    params = init.copy() if init is not None else PolicyParams.init(feats.shape[1], cfg.seed)
    rng = np.random.default_rng([cfg.seed, 202])
    vw, vb = np.zeros_like(params.w), np.zeros_like(params.b)
    trace = []
    n = len(feats)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss, (gw, gb) = loss_and_grad(params, feats[idx], chunks[idx], cfg.l2)
            total += loss * len(idx)
            vw = cfg.momentum * vw - cfg.learning_rate * gw
            vb = cfg.momentum * vb - cfg.learning_rate * gb
            params.w += vw
            params.b += vb
        trace.append(total / n)
    return TrainResult(params, trace)


# -------------------------------------------------------------- checkpoint


def save_checkpoint(params: PolicyParams, path: Path, extra: Optional[dict] = None) -> str:
    record = {
        "version": CHECKPOINT_VERSION,
        "init_seed": params.init_seed,
        "w_shape": list(params.w.shape),
        "b_shape": list(params.b.shape),
        "w": [float(v) for v in params.w.ravel()],
        "b": [float(v) for v in params.b.ravel()],
        "checksum": params.checksum(),
    }
    if extra:
        record["meta"] = extra
    Path(path).write_text(json.dumps(record, sort_keys=True) + "\n")
    return record["checksum"]


def load_checkpoint(path: Path) -> PolicyParams:
    record = json.loads(Path(path).read_text())
    if record.get("version") != CHECKPOINT_VERSION:
        raise PolicyError(f"unsupported checkpoint version {record.get('version')!r}")
    w = np.array(record["w"], dtype=float).reshape(record["w_shape"])
    b = np.array(record["b"], dtype=float).reshape(record["b_shape"])
    params = PolicyParams(w, b, int(record["init_seed"]))
    if params.checksum() != record["checksum"]:
        raise PolicyError("checkpoint checksum mismatch")
    return params
