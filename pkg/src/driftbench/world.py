"""Seeded synthetic episodes with class novelty, disappearance and
persistence under a per-environment context shift, plus the DBENCH1
text format used to store and ingest feature streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .stream import Environment, Episode, FeatureFrame

MASK64 = (1 << 64) - 1
FORMAT_MAGIC = "DBENCH1"
LABEL_RETRIES = 64


def splitmix64(x: int) -> int:
    """One splitmix64 output step; used to derive independent seeds."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-episode seed: splitmix64(seed XOR index)."""
    return splitmix64((seed ^ index) & MASK64)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))


def n_labeled_for(label_fraction: float, T: int) -> int:
    return int(round(label_fraction * T))


@dataclass(frozen=True)
class WorldConfig:
    feature_dim: int = 512
    pool_size: int = 40
    classes_per_env: int = 6
    persist_prob: float = 0.5
    T: int = 100
    N: int = 4
    label_fraction: float = 0.4
    noise_sigma: float = 0.5
    context_sigma: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if self.pool_size <= 0:
            raise ConfigError("pool_size must be positive")
        if self.classes_per_env <= 0:
            raise ConfigError("classes_per_env must be positive")
        if self.classes_per_env > self.pool_size:
            raise ConfigError(
                f"classes_per_env={self.classes_per_env} exceeds pool_size={self.pool_size}"
            )
        if self.T <= 0 or self.N <= 0:
            raise ConfigError("T and N must be positive")
        for name in ("persist_prob", "label_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        for name in ("noise_sigma", "context_sigma"):
            v = getattr(self, name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ConfigError(f"{name}={v} must be finite and >= 0")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ClassPool:
    means: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64)
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    @property
    def size(self) -> int:
        return self.means.shape[0]


def sample_class_pool(config: WorldConfig, rng: np.random.Generator) -> ClassPool:
    config.validate()
    return ClassPool(rng.standard_normal((config.pool_size, config.feature_dim)))


@lru_cache(maxsize=16)
def _pool_for(config: WorldConfig) -> ClassPool:
    # The class pool is shared by every episode of a world: categories are
    # global, episodes differ in which classes appear and in context.
    return sample_class_pool(config, make_rng(derive_seed(config.seed, 0x9001)))


def pool_for(config: WorldConfig) -> ClassPool:
    return _pool_for(config)


def _label_mask(classes: np.ndarray, n_labels: int, rng: np.random.Generator) -> np.ndarray:
    T = classes.shape[0]
    present = np.unique(classes)
    need_cover = n_labels >= present.size
    for _ in range(LABEL_RETRIES):
        idx = rng.permutation(T)[:n_labels]
        if not need_cover or np.unique(classes[idx]).size == present.size:
            break
    else:
        # Bounded retries exhausted: one labeled frame per present class,
        # the rest of the budget filled at random.
        first = [int(rng.choice(np.flatnonzero(classes == c))) for c in present]
        rest = np.setdiff1d(np.arange(T), first)
        extra = rng.permutation(rest)[: n_labels - len(first)]
        idx = np.concatenate([np.array(first, dtype=np.int64), extra])
    mask = np.zeros(T, dtype=bool)
    mask[idx] = True
    return mask


def sample_environment(
    pool: ClassPool,
    prev_classes: Optional[frozenset],
    config: WorldConfig,
    rng: np.random.Generator,
    env_index: int = 0,
    t_offset: int = 0,
) -> Environment:
    config.validate()
    if config.classes_per_env > pool.size:
        raise ConfigError("classes_per_env exceeds pool size")
    if prev_classes is None:
        class_set = set(int(c) for c in rng.choice(pool.size, config.classes_per_env, replace=False))
    else:
        prev_sorted = sorted(prev_classes)
        keep = rng.random(len(prev_sorted)) < config.persist_prob
        class_set = {c for c, k in zip(prev_sorted, keep) if k}
        if len(class_set) > config.classes_per_env:
            class_set = set(sorted(class_set)[: config.classes_per_env])
        missing = config.classes_per_env - len(class_set)
        if missing > 0:
            # Fresh classes exclude the ones that just disappeared, unless
            # the pool is too small to avoid them.
            candidates = [c for c in range(pool.size) if c not in prev_classes]
            if len(candidates) < missing:
                candidates = [c for c in range(pool.size) if c not in class_set]
            picked = rng.choice(len(candidates), missing, replace=False)
            class_set.update(candidates[int(i)] for i in picked)

    D = config.feature_dim
    shift = config.context_sigma * rng.standard_normal(D)
    ordered = np.array(sorted(class_set), dtype=np.int64)
    classes = ordered[rng.integers(0, ordered.size, size=config.T)]
    noise = config.noise_sigma * rng.standard_normal((config.T, D))
    feats = pool.means[classes] + shift + noise
    mask = _label_mask(classes, n_labeled_for(config.label_fraction, config.T), rng)

    frames = [
        FeatureFrame(t_offset + k, env_index, feats[k], int(classes[k]), bool(mask[k]))
        for k in range(config.T)
    ]
    return Environment(env_index, frames, frozenset(class_set), shift)


def sample_episode(config: WorldConfig, episode_seed: int) -> Episode:
    config.validate()
    pool = pool_for(config)
    rng = make_rng(episode_seed)
    envs = []
    prev = None
    for i in range(config.N):
        env = sample_environment(pool, prev, config, rng, env_index=i, t_offset=i * config.T)
        envs.append(env)
        prev = env.class_set
    return Episode(envs, episode_seed, config.label_fraction)


# --- DBENCH1 text format -------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_episode(episode: Episode) -> str:
    episode.validate(check_label_count=False)
    D = episode.D
    lines = [
        f"{FORMAT_MAGIC} D={D} N={episode.N} T={episode.T} "
        f"rho={_fmt(episode.label_fraction)} seed={episode.seed}"
    ]
    for env in episode.environments:
        classes = ";".join(str(c) for c in sorted(env.class_set))
        shift = ",".join(_fmt(v) for v in env.context_shift)
        lines.append(f"#env {env.env_index} classes={classes} shift={shift}")
    for fr in episode.frames:
        if not np.all(np.isfinite(fr.features)):
            raise FormatError(f"frame {fr.t} has non-finite features")
        vals = ",".join(_fmt(v) for v in fr.features)
        lines.append(f"{fr.t},{fr.env_index},{fr.true_class},{int(fr.labeled)},{vals}")
    return "\n".join(lines) + "\n"


def write_episode(episode: Episode, path) -> None:
    Path(path).write_bytes(dumps_episode(episode).encode("utf-8"))


def _parse_header(line: str) -> dict:
    parts = line.split(" ")
    if not parts or parts[0] != FORMAT_MAGIC:
        raise FormatError(f"expected magic {FORMAT_MAGIC!r}", line=1, field="magic")
    want = {"D": int, "N": int, "T": int, "rho": float, "seed": int}
    got = {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise FormatError(f"malformed header token {tok!r}", line=1)
        key, val = tok.split("=", 1)
        if key not in want:
            raise FormatError(f"unknown header key {key!r}", line=1, field=key)
        try:
            got[key] = want[key](val)
        except ValueError:
            raise FormatError(f"cannot parse {val!r}", line=1, field=key) from None
    missing = [k for k in want if k not in got]
    if missing:
        raise FormatError(f"missing header keys {missing}", line=1)
    if got["D"] <= 0 or got["N"] <= 0 or got["T"] <= 0:
        raise FormatError("D, N and T must be positive", line=1)
    if not (0.0 <= got["rho"] <= 1.0):
        raise FormatError("rho outside [0, 1]", line=1, field="rho")
    return got


def _parse_float(tok: str, lineno: int, field: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise FormatError(f"cannot parse {tok!r}", line=lineno, field=field) from None
    if not math.isfinite(v):
        raise FormatError("non-finite value", line=lineno, field=field)
    return v


def loads_episode(text: str) -> Episode:
    if "\r" in text:
        raise FormatError("CR line endings are not allowed; use LF")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty file", line=1)
    hdr = _parse_header(lines[0])
    D, N, T = hdr["D"], hdr["N"], hdr["T"]

    meta = {}
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("#env "):
            try:
                _, idx, cls_tok, shift_tok = line.split(" ")
                i = int(idx)
                assert cls_tok.startswith("classes=") and shift_tok.startswith("shift=")
            except (ValueError, AssertionError):
                raise FormatError("malformed #env metadata", line=lineno) from None
            cls_body = cls_tok[len("classes="):]
            classes = frozenset(int(c) for c in cls_body.split(";")) if cls_body else frozenset()
            shift = [_parse_float(v, lineno, f"shift[{k}]") for k, v in enumerate(shift_tok[6:].split(","))]
            if len(shift) != D:
                raise FormatError(f"shift has {len(shift)} values, expected D={D}", line=lineno, field="shift")
            meta[i] = (classes, np.array(shift))
            continue
        if line.startswith("#"):
            continue
        rows.append((lineno, line))

    if len(rows) != N * T:
        raise FormatError(f"found {len(rows)} frame rows, expected N*T={N * T}")

    frames_by_env = [[] for _ in range(N)]
    for k, (lineno, line) in enumerate(rows):
        toks = line.split(",")
        if len(toks) != 4 + D:
            raise FormatError(f"row has {len(toks) - 4} feature values, expected D={D}", line=lineno, field="features")
        try:
            t, env_index, class_id, labeled = (int(v) for v in toks[:4])
        except ValueError:
            raise FormatError("integer columns malformed", line=lineno) from None
        if t != k:
            raise FormatError(f"frame index {t}, expected {k}", line=lineno, field="t")
        if env_index != k // T:
            raise FormatError(f"env_index {env_index}, expected {k // T}", line=lineno, field="env_index")
        if labeled not in (0, 1):
            raise FormatError("labeled must be 0 or 1", line=lineno, field="labeled")
        if class_id < 0:
            raise FormatError("negative class id", line=lineno, field="class_id")
        feats = np.array([_parse_float(v, lineno, f"f_{j}") for j, v in enumerate(toks[4:])])
        frames_by_env[env_index].append(FeatureFrame(t, env_index, feats, class_id, bool(labeled)))

    envs = []
    for i, frames in enumerate(frames_by_env):
        if i in meta:
            classes, shift = meta[i]
        else:
            classes, shift = frozenset(fr.true_class for fr in frames), np.zeros(D)
        try:
            envs.append(Environment(i, frames, classes, shift))
        except ValidationError as exc:
            raise FormatError(str(exc)) from None
    episode = Episode(envs, hdr["seed"], hdr["rho"])
    try:
        episode.validate()
    except ValidationError as exc:
        raise FormatError(str(exc)) from None
    return episode


def load_episode(path) -> Episode:
    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8: {exc}") from None
    return loads_episode(text)
