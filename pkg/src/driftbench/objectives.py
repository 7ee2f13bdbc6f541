"""Training objectives for the embedding map.

Prototype learners are meta-trained episode by episode on the online
cross-entropy of their own stream predictions, optionally plus the
Proto-OML replay loss. Base and LwF get an embedding pre-trained offline
as a plain supervised classifier.

Prototypes are linear in the frame embeddings, with coefficients that
depend only on the label sequence. A :class:`StreamPlan` records those
coefficients by replaying the prototype rule on one-hot weight vectors,
so the whole online loss is a handful of taped matrix products.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .diffcore import EmbeddingParams, Tape, backward, forward_embed
from .errors import ConfigError, TrainingError, UndefinedMetricError
from .learners import LearnerConfig, recency_gate
from .stream import Episode
from .world import WorldConfig, make_rng, sample_episode

log = logging.getLogger(__name__)


@dataclass
class StreamPlan:
    """Coefficients of every prototype state and the online queries that use them.

    ``states`` is (S, n): row s is the weight of each frame in prototype
    state s. Query q is labeled frame ``query_frames[q]``; ``mask[q]`` marks
    the states that were current at that time and ``targets[q]`` the state
    of its true class.
    """

    states: np.ndarray
    query_frames: np.ndarray
    mask: np.ndarray
    targets: np.ndarray

    @property
    def n_queries(self) -> int:
        return int(self.query_frames.shape[0])


def build_stream_plan(episode: Episode, rule: str = "mean", alpha_min: float = 0.0,
                      decay: float = 0.0, reset_each_env: bool = False) -> StreamPlan:
    frames = episode.frames
    n = len(frames)
    T = episode.T
    states: List[np.ndarray] = []
    current: Dict[int, int] = {}
    counts: Dict[int, int] = {}
    last: Dict[int, int] = {}
    queries = []  # (frame index, {class: state}, true class)
    clock = 0
    for t, fr in enumerate(frames):
        if reset_each_env and t % T == 0:
            current, counts, last = {}, {}, {}
        if fr.labeled and fr.true_class in current:
            queries.append((t, dict(current), fr.true_class))
        clock += 1
        if not fr.labeled:
            continue
        c = fr.true_class
        onehot = np.zeros(n)
        onehot[t] = 1.0
        if c not in current:
            w = onehot
        elif rule == "mean":
            k = counts[c]
            w = (onehot + k * states[current[c]]) / (k + 1)
        else:
            alpha = recency_gate(counts[c], clock - last[c], alpha_min, decay)
            w = (1.0 - alpha) * states[current[c]] + alpha * onehot
        states.append(w)
        current[c] = len(states) - 1
        counts[c] = counts.get(c, 0) + 1
        last[c] = clock
    S = len(states)
    mask = np.zeros((len(queries), S), dtype=bool)
    targets = np.zeros(len(queries), dtype=np.int64)
    for q, (_, cur, c) in enumerate(queries):
        mask[q, list(cur.values())] = True
        targets[q] = cur[c]
    return StreamPlan(
        states=np.array(states).reshape(S, n),
        query_frames=np.array([q[0] for q in queries], dtype=np.int64),
        mask=mask,
        targets=targets,
    )


def _selection(rows: np.ndarray, n: int) -> np.ndarray:
    sel = np.zeros((rows.shape[0], n))
    sel[np.arange(rows.shape[0]), rows] = 1.0
    return sel


def online_loss(tape: Tape, params: EmbeddingParams, X: np.ndarray, plan: StreamPlan,
                logit_scale: float, stop_grad_prototypes: bool = False, E=None):
    """Mean CE of the on-stream cosine predictions at labeled, already-seen frames."""
    if plan.n_queries == 0:
        raise UndefinedMetricError("no labeled frame of an already seen class")
    if E is None:
        E = forward_embed(params, X, tape)
    protos = tape.matmul(plan.states, E)
    if stop_grad_prototypes:
        protos = tape.detach(protos)
    Pn = tape.l2_normalize(protos)
    Qn = tape.l2_normalize(tape.matmul(_selection(plan.query_frames, X.shape[0]), E))
    logits = tape.scale(tape.matmul(Qn, Pn, trans_b=True), logit_scale)
    return tape.softmax_ce(logits, plan.targets, plan.mask)


def proto_oml_loss(tape: Tape, params: EmbeddingParams, episode: Episode, env_count: int,
                   logit_scale: float, stop_grad_prototypes: bool = False, X=None, E=None):
    """Replay loss after ``env_count`` environments: prototypes are recomputed
    as class means over the first ``env_count * T`` frames and every labeled
    frame in that range is scored again; returns the mean CE."""
    frames = episode.frames[: env_count * episode.T]
    n_all = len(episode.frames)
    labeled = [t for t, fr in enumerate(frames) if fr.labeled]
    if not labeled:
        raise UndefinedMetricError(f"no labeled frames in the first {env_count} environments")
    if E is None:
        X = episode.feature_matrix() if X is None else X
        E = forward_embed(params, X, tape)
    classes = sorted({frames[t].true_class for t in labeled})
    col = {c: k for k, c in enumerate(classes)}
    M = np.zeros((len(classes), n_all))
    for t in labeled:
        M[col[frames[t].true_class], t] = 1.0
    M /= M.sum(axis=1, keepdims=True)
    protos = tape.matmul(M, E)
    if stop_grad_prototypes:
        protos = tape.detach(protos)
    Pn = tape.l2_normalize(protos)
    Qn = tape.l2_normalize(tape.matmul(_selection(np.array(labeled), n_all), E))
    logits = tape.scale(tape.matmul(Qn, Pn, trans_b=True), logit_scale)
    targets = np.array([col[frames[t].true_class] for t in labeled])
    return tape.softmax_ce(logits, targets)


def plan_for(episode: Episode, config: LearnerConfig) -> StreamPlan:
    if config.prototype_rule == "gated":
        return build_stream_plan(episode, "gated", config.alpha_min, config.decay)
    return build_stream_plan(episode, "mean", reset_each_env=config.name == "upper-bound")


def episode_objective(tape: Tape, params: EmbeddingParams, episode: Episode,
                      config: LearnerConfig, use_oml: Optional[bool] = None):
    """Online CE, plus ``lambda_oml * sum_{i>=2} L_i`` for Proto-OML. None if nothing is scorable."""
    if use_oml is None:
        use_oml = config.name == "proto-oml"
    X = episode.feature_matrix()
    E = forward_embed(params, X, tape)
    total = None
    plan = plan_for(episode, config)
    if plan.n_queries:
        total = online_loss(tape, params, X, plan, config.logit_scale,
                            config.stop_grad_prototypes, E=E)
    if use_oml:
        replay = None
        for i in range(2, episode.N + 1):
            try:
                li = proto_oml_loss(tape, params, episode, i, config.logit_scale,
                                    config.stop_grad_prototypes, E=E)
            except UndefinedMetricError:
                continue
            replay = li if replay is None else tape.add(replay, li)
        if replay is not None:
            weighted = tape.scale(replay, config.lambda_oml)
            total = weighted if total is None else tape.add(total, weighted)
    return total


# --- optimisation -------------------------------------------------------------

def step_decay_lr(step: int, budget: int, base_lr: float) -> float:
    """Base rate for the first half, /10 until 75%, /100 after."""
    if 2 * step < budget:
        return base_lr
    if 4 * step < 3 * budget:
        return base_lr * 0.1
    return base_lr * 0.01


class Adam:
    def __init__(self, params: Dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass(frozen=True)
class MetaTrainConfig:
    budget: int = 200
    lr: float = 1e-4

    def validate(self):
        if self.budget < 0:
            raise ConfigError("meta_train.budget must be non-negative")
        if not self.lr > 0:
            raise ConfigError("meta_train.lr must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PretrainConfig:
    episodes: int = 48
    epochs: int = 3
    batch_size: int = 64
    lr: float = 1e-3

    def validate(self):
        if self.episodes <= 0 or self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("pretrain episodes/batch_size must be positive, epochs non-negative")
        if not self.lr > 0:
            raise ConfigError("pretrain.lr must be positive")

    def to_dict(self):
        return asdict(self)


def initial_params(world: WorldConfig, config: LearnerConfig) -> EmbeddingParams:
    d_emb = config.embed_dim or world.feature_dim
    rng = make_rng(world.seed ^ 0x5EED)
    return EmbeddingParams.init(world.feature_dim, d_emb, rng, hidden=config.hidden, kind=config.init)


def meta_train(world: WorldConfig, config: LearnerConfig, train: MetaTrainConfig,
               episode_seeds: Sequence[int], init: Optional[EmbeddingParams] = None,
               use_oml: Optional[bool] = None,
               callback: Optional[Callable[[int, float], None]] = None) -> EmbeddingParams:
    """One Adam step per episode on the learner's episode objective."""
    config.validate()
    train.validate()
    params = (init or initial_params(world, config)).copy()
    values = params.as_dict()
    opt = Adam(values)
    budget = len(episode_seeds)
    for k, seed in enumerate(episode_seeds):
        episode = sample_episode(world, seed)
        tape = Tape()
        loss = episode_objective(tape, EmbeddingParams.from_dict(values), episode, config, use_oml)
        if loss is None:
            continue
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingError("loss is not finite", episode_index=k)
        grads = backward(tape, loss)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingError("gradient is not finite", episode_index=k)
        opt.step(values, grads, step_decay_lr(k, budget, train.lr))
        if callback is not None:
            callback(k, value)
    return EmbeddingParams.from_dict(values)


def pretrain_loss(tape: Tape, params: EmbeddingParams, classifier: np.ndarray,
                  X: np.ndarray, y: np.ndarray):
    E = forward_embed(params, X, tape)
    V = tape.param("classifier", classifier)
    return tape.softmax_ce(tape.matmul(E, V), y)


def pretrain(world: WorldConfig, config: LearnerConfig, train: PretrainConfig,
             episode_seeds: Sequence[int], callback=None) -> EmbeddingParams:
    """Supervised embedding training on frames pooled across training episodes.

    A linear classifier over the whole class pool is trained jointly and
    then discarded; only the embedding is returned.
    """
    config.validate()
    train.validate()
    episodes = [sample_episode(world, s) for s in episode_seeds]
    X = np.concatenate([ep.feature_matrix() for ep in episodes])
    y = np.array([fr.true_class for ep in episodes for fr in ep.frames], dtype=np.int64)
    params = initial_params(world, config)
    values = params.as_dict()
    values["classifier"] = np.zeros((params.d_emb, world.pool_size))
    opt = Adam(values)
    rng = make_rng(world.seed ^ 0x9E7)
    step = 0
    for epoch in range(train.epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], train.batch_size):
            idx = order[start:start + train.batch_size]
            tape = Tape()
            emb = EmbeddingParams.from_dict({k: v for k, v in values.items() if k != "classifier"})
            loss = pretrain_loss(tape, emb, values["classifier"], X[idx], y[idx])
            if not math.isfinite(float(loss.value)):
                raise TrainingError("pretraining loss is not finite", episode_index=step)
            grads = backward(tape, loss)
            opt.step(values, grads, train.lr)
            step += 1
        if callback is not None:
            callback(epoch, float(loss.value))
    return EmbeddingParams.from_dict({k: v for k, v in values.items() if k != "classifier"})
