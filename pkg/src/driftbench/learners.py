"""Online learners sharing one predict/update contract.

Prototype learners (OAP, CPM-lite, Proto-OML, Upper bound) score by cosine
similarity against per-class prototypes; head learners (Base, LwF) train a
linear classifier on top of a frozen embedding. Every learner skips
unlabeled events.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, asdict, fields
from typing import Dict, Optional

import numpy as np

from . import kernels
from .diffcore import EmbeddingParams, forward_embed
from .errors import ConfigError, NumericError
from .stream import FeatureFrame, Prediction, StreamEvent

LEARNER_NAMES = ("base", "lwf", "oap", "cpm-lite", "proto-oml", "upper-bound")
PROTOTYPE_LEARNERS = ("oap", "cpm-lite", "proto-oml", "upper-bound")
HEAD_LEARNERS = ("base", "lwf")


@dataclass(frozen=True)
class LearnerConfig:
    name: str = "oap"
    lr: float = 0.27
    lambda_oml: float = 1.0
    lambda_distill: float = 1.0
    temperature: float = 2.0
    alpha_min: float = 0.2
    decay: float = 0.05
    logit_scale: float = 10.0
    stop_grad_prototypes: bool = False
    head_normalize: bool = True
    embed_dim: int = 0  # 0 means same as the feature dimension
    hidden: int = 0
    init: str = "identity"

    def validate(self) -> None:
        if self.name not in LEARNER_NAMES:
            raise ConfigError(f"unknown learner {self.name!r}; choose from {', '.join(LEARNER_NAMES)}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.lambda_oml < 0 or self.lambda_distill < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.alpha_min <= 1.0:
            raise ConfigError("alpha_min must lie in [0, 1]")
        if self.decay < 0:
            raise ConfigError("decay must be non-negative")
        if self.embed_dim < 0 or self.hidden < 0:
            raise ConfigError("embed_dim and hidden must be non-negative")
        if self.init not in ("identity", "gaussian"):
            raise ConfigError("init must be 'identity' or 'gaussian'")

    @property
    def prototype_rule(self) -> str:
        return "gated" if self.name in ("cpm-lite", "proto-oml") else "mean"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# --- prototype table --------------------------------------------------------

class PrototypeTable:
    """Per-class prototype rows kept sorted by class id."""

    def __init__(self, dim: int):
        self.dim = dim
        self.ids: list = []
        self.P = np.empty((0, dim))
        self.counts = np.empty(0, dtype=np.int64)

    def __len__(self):
        return len(self.ids)

    def __contains__(self, c):
        return c in self._index

    @property
    def _index(self) -> Dict[int, int]:
        return {c: k for k, c in enumerate(self.ids)}

    def index(self, c: int) -> int:
        return self._index[c]

    def insert(self, c: int, f: np.ndarray) -> None:
        pos = int(np.searchsorted(np.asarray(self.ids, dtype=np.int64), c))
        self.ids.insert(pos, c)
        self.P = np.ascontiguousarray(np.insert(self.P, pos, f, axis=0))
        self.counts = np.insert(self.counts, pos, 1)

    def prototype(self, c: int) -> np.ndarray:
        return self.P[self.index(c)].copy()

    def count(self, c: int) -> int:
        return int(self.counts[self.index(c)]) if c in self else 0

    def clear(self) -> None:
        self.ids = []
        self.P = np.empty((0, self.dim))
        self.counts = np.empty(0, dtype=np.int64)

    def copy(self) -> "PrototypeTable":
        out = PrototypeTable(self.dim)
        out.ids = list(self.ids)
        out.P = self.P.copy()
        out.counts = self.counts.copy()
        return out


def _check_finite(f):
    f = np.ascontiguousarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite feature")
    return f


def cosine_scores(embedding, table: PrototypeTable) -> Dict[int, float]:
    """Cosine similarity of an embedding to every prototype; {} when the table is empty."""
    if len(table) == 0:
        return {}
    vals = kernels.cosine_scores(np.ascontiguousarray(embedding, dtype=np.float64), table.P)
    return {c: float(v) for c, v in zip(table.ids, vals)}


def oap_update(table: PrototypeTable, c: int, f) -> None:
    """Online averaging: P <- (f + n*P) / (n+1), n <- n+1."""
    f = _check_finite(f)
    if c not in table:
        table.insert(c, f)
        return
    k = table.index(c)
    kernels.mean_update(table.P[k], f, int(table.counts[k]))
    table.counts[k] += 1


def context_proto_update(table: PrototypeTable, c: int, f, alpha: float) -> None:
    """Convex update P <- (1-alpha)*P + alpha*f; first observation sets P = f."""
    if not (0.0 < alpha <= 1.0) or math.isnan(alpha):
        raise ConfigError(f"gate alpha={alpha} outside (0, 1]")
    f = _check_finite(f)
    if c not in table:
        table.insert(c, f)
        return
    k = table.index(c)
    kernels.gated_update(table.P[k], f, float(alpha))
    table.counts[k] += 1


def recency_gate(count: int, age: int, alpha_min: float, decay: float) -> float:
    """Update weight for a class seen ``count`` times, last updated ``age`` frames ago.

    max(alpha_min, 1/(count+1), 1 - 1/(1 + decay*age)). With decay=0 and
    alpha_min=0 this is the running-mean weight 1/(count+1).
    """
    stale = 1.0 - 1.0 / (1.0 + decay * age)
    return max(alpha_min, 1.0 / (count + 1), stale)


# --- linear head ------------------------------------------------------------

class LinearHead:
    """Classifier rows activated as classes appear; logits = W @ e."""

    def __init__(self, dim: int, lr: float = 0.27):
        self.dim = dim
        self.lr = lr
        self.ids: list = []
        self.W = np.zeros((0, dim))

    def __len__(self):
        return len(self.ids)

    def __contains__(self, c):
        return c in self.ids

    def index(self, c: int) -> int:
        return self.ids.index(c)

    def activate(self, c: int) -> int:
        if c in self.ids:
            return self.ids.index(c)
        pos = int(np.searchsorted(np.asarray(self.ids, dtype=np.int64), c))
        self.ids.insert(pos, c)
        self.W = np.ascontiguousarray(np.insert(self.W, pos, 0.0, axis=0))
        return pos

    def logits(self, e) -> np.ndarray:
        return kernels.linear_scores(np.ascontiguousarray(e, dtype=np.float64), self.W)

    def copy(self) -> "LinearHead":
        out = LinearHead(self.dim, self.lr)
        out.ids = list(self.ids)
        out.W = self.W.copy()
        return out


def _softmax(z):
    z = z - np.max(z)
    ex = np.exp(z)
    return ex / ex.sum()


def head_loss_and_grad(W, ids, e, label, snapshot: Optional[LinearHead] = None,
                       lambda_distill: float = 0.0, temperature: float = 2.0):
    """Loss and logit gradient for one labeled example on a linear head.

    Loss is CE(label) plus, when a snapshot is given,
    ``lambda_distill * T^2 * KL(softmax(z_old/T) || softmax(z_new/T))`` over
    the classes active in the snapshot. Returns (loss, dloss/dlogits).
    """
    z = W @ e
    y = ids.index(label)
    p = _softmax(z)
    loss = -math.log(max(p[y], 1e-300))
    g = p.copy()
    g[y] -= 1.0
    if snapshot is not None and len(snapshot) > 0:
        if temperature <= 0:
            raise ConfigError("temperature must be positive")
        sel = [ids.index(c) for c in snapshot.ids]
        z_old = snapshot.W @ e
        p_old = _softmax(z_old / temperature)
        q = _softmax(z[sel] / temperature)
        kl = float(np.sum(p_old * (np.log(np.maximum(p_old, 1e-300)) - np.log(np.maximum(q, 1e-300)))))
        loss += lambda_distill * temperature * temperature * kl
        g[sel] += lambda_distill * temperature * (q - p_old)
    return loss, g


def base_update(head: LinearHead, embedding, label: int) -> None:
    """One SGD step of softmax cross-entropy over the active rows."""
    lwf_update(head, None, embedding, label, 0.0, 1.0)


def lwf_update(head: LinearHead, snapshot_head: Optional[LinearHead], embedding, label: int,
               lambda_distill: float, temperature: float) -> None:
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    e = _check_finite(embedding)
    head.activate(label)
    _, g = head_loss_and_grad(head.W, head.ids, e, label, snapshot_head, lambda_distill, temperature)
    kernels.sgd_softmax_step(head.W, e, g, head.lr)


# --- learners ---------------------------------------------------------------

class _EmbeddingCache:
    """Frozen-embedding cache keyed by the identity of a frame's feature array."""

    def __init__(self, params: EmbeddingParams, normalize: bool = False):
        self.params = params
        self.normalize = normalize
        self._store = {}

    def __call__(self, features: np.ndarray) -> np.ndarray:
        hit = self._store.get(id(features))
        if hit is not None and hit[0] is features:
            return hit[1]
        e = forward_embed(self.params, features)
        if self.normalize:
            n = float(np.sqrt(e @ e))
            e = e / n if n > 0 else e
        e = np.ascontiguousarray(e)
        e.setflags(write=False)
        self._store[id(features)] = (features, e)
        return e

    def rows(self, frames) -> np.ndarray:
        if not frames:
            return np.empty((0, self.params.d_emb))
        return np.ascontiguousarray(np.stack([self(fr.features) for fr in frames]))


class Snapshot:
    """Frozen evaluator over a copy of a learner's class state."""

    def __init__(self, embed: _EmbeddingCache, ids, matrix, scorer: str):
        self._embed = embed
        self.ids = tuple(ids)
        self.matrix = matrix.copy()
        self.matrix.setflags(write=False)
        self.scorer = scorer

    def predict(self, frame: FeatureFrame) -> Prediction:
        if not self.ids:
            return Prediction({}, None)
        e = self._embed(frame.features)
        if self.scorer == "cosine":
            vals = kernels.cosine_scores(e, self.matrix)
        else:
            vals = kernels.linear_scores(e, self.matrix)
        return Prediction.from_arrays(self.ids, vals)

    def predict_frames(self, frames) -> np.ndarray:
        """Predicted class id per frame, -1 where no class is known."""
        out = np.full(len(frames), -1, dtype=np.int64)
        if not self.ids or not frames:
            return out
        E = self._embed.rows(frames)
        argmax = kernels.cosine_argmax if self.scorer == "cosine" else kernels.linear_argmax
        idx = argmax(E, np.ascontiguousarray(self.matrix))
        return np.asarray(self.ids, dtype=np.int64)[idx]


class Learner:
    """Base class for the online learner contract.

    ``predict`` never changes state; ``update`` consumes one event;
    ``snapshot`` returns a frozen evaluator isolated from later updates.
    """

    name = "learner"

    def __init__(self, params: EmbeddingParams, config: LearnerConfig):
        self.params = params
        self.config = config
        self.reset_for_episode()

    def _new_cache(self):
        return _EmbeddingCache(self.params)

    def reset_for_episode(self) -> None:
        self._embed = self._new_cache()
        self._clock = 0

    def on_environment_start(self, env_index: int) -> None:
        pass

    def embed(self, frame: FeatureFrame) -> np.ndarray:
        return self._embed(frame.features)

    def predict(self, frame: FeatureFrame) -> Prediction:
        raise NotImplementedError

    def update(self, event: StreamEvent) -> None:
        raise NotImplementedError

    def snapshot(self) -> Snapshot:
        raise NotImplementedError

    def _state_arrays(self):
        return []

    def state_digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self._clock).encode())
        for arr in self._state_arrays():
            a = np.ascontiguousarray(arr)
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()


class PrototypeLearner(Learner):
    """Cosine-prototype learner.

    ``rule="mean"`` is OAP; ``rule="gated"`` is CPM-lite, whose update
    weight grows with the time since a class was last seen.
    ``reset_each_env`` empties the table at every environment start
    (the Upper bound learner).
    """

    def __init__(self, params, config, rule="mean", reset_each_env=False):
        if rule not in ("mean", "gated"):
            raise ConfigError(f"unknown prototype rule {rule!r}")
        self.rule = rule
        self.reset_each_env = reset_each_env
        self.name = config.name
        super().__init__(params, config)

    def reset_for_episode(self) -> None:
        super().reset_for_episode()
        self.table = PrototypeTable(self.params.d_emb)
        self._last_update: Dict[int, int] = {}

    def on_environment_start(self, env_index: int) -> None:
        if self.reset_each_env:
            self.table.clear()
            self._last_update = {}

    def predict(self, frame):
        if len(self.table) == 0:
            return Prediction({}, None)
        vals = kernels.cosine_scores(self.embed(frame), self.table.P)
        return Prediction.from_arrays(self.table.ids, vals)

    def gate(self, c: int) -> float:
        age = self._clock - self._last_update.get(c, self._clock)
        return recency_gate(self.table.count(c), age, self.config.alpha_min, self.config.decay)

    def update(self, event):
        self._clock += 1
        c = event.revealed_label
        if c is None:
            return
        f = self.embed(event.frame)
        if self.rule == "mean":
            oap_update(self.table, c, f)
        else:
            context_proto_update(self.table, c, f, self.gate(c))
        self._last_update[c] = self._clock

    def snapshot(self):
        return Snapshot(self._embed, self.table.ids, self.table.P, "cosine")

    def _state_arrays(self):
        return [np.asarray(self.table.ids), self.table.P, self.table.counts,
                np.asarray(sorted(self._last_update.items()))]


class HeadLearner(Learner):
    """Linear head trained online by SGD; with distillation it is LwF."""

    def __init__(self, params, config, distill=False):
        self.distill = distill
        self.name = config.name
        super().__init__(params, config)

    def _new_cache(self):
        return _EmbeddingCache(self.params, normalize=self.config.head_normalize)

    def reset_for_episode(self) -> None:
        super().reset_for_episode()
        self.head = LinearHead(self.params.d_emb, self.config.lr)
        self.snapshot_head: Optional[LinearHead] = None

    def on_environment_start(self, env_index: int) -> None:
        if self.distill and env_index > 0:
            self.snapshot_head = self.head.copy()

    def predict(self, frame):
        if len(self.head) == 0:
            return Prediction({}, None)
        return Prediction.from_arrays(self.head.ids, self.head.logits(self.embed(frame)))

    def update(self, event):
        self._clock += 1
        c = event.revealed_label
        if c is None:
            return
        e = self.embed(event.frame)
        if self.distill:
            lwf_update(self.head, self.snapshot_head, e, c,
                       self.config.lambda_distill, self.config.temperature)
        else:
            base_update(self.head, e, c)

    def snapshot(self):
        return Snapshot(self._embed, self.head.ids, self.head.W, "linear")

    def _state_arrays(self):
        arrs = [np.asarray(self.head.ids), self.head.W]
        if self.snapshot_head is not None:
            arrs += [np.asarray(self.snapshot_head.ids), self.snapshot_head.W]
        return arrs


def make_learner(config: LearnerConfig, params: EmbeddingParams) -> Learner:
    config.validate()
    name = config.name
    if name == "base":
        return HeadLearner(params, config, distill=False)
    if name == "lwf":
        return HeadLearner(params, config, distill=True)
    if name == "oap":
        return PrototypeLearner(params, config, rule="mean")
    if name == "upper-bound":
        return PrototypeLearner(params, config, rule="mean", reset_each_env=True)
    # cpm-lite and proto-oml share the gated rule; they differ in how the
    # embedding was meta-trained.
    return PrototypeLearner(params, config, rule="gated")
