"""Domain types for the frame stream and the event iteration contract.

All types are immutable after construction. Feature arrays are stored
read-only so frames can be shared between threads and snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError

ClassId = int


def _frozen_array(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    t: int
    env_index: int
    features: np.ndarray
    true_class: ClassId
    labeled: bool

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features))
        if self.features.ndim != 1:
            raise ValidationError(f"frame {self.t}: features must be a vector")
        if self.true_class < 0:
            raise ValidationError(f"frame {self.t}: negative class id")

    def __eq__(self, other):
        if not isinstance(other, FeatureFrame):
            return NotImplemented
        return (
            self.t == other.t
            and self.env_index == other.env_index
            and self.true_class == other.true_class
            and self.labeled == other.labeled
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True, eq=False)
class Environment:
    env_index: int
    frames: tuple
    class_set: frozenset
    context_shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "class_set", frozenset(self.class_set))
        object.__setattr__(self, "context_shift", _frozen_array(self.context_shift))
        for fr in self.frames:
            if fr.true_class not in self.class_set:
                raise ValidationError(
                    f"env {self.env_index}: frame {fr.t} class {fr.true_class} not in class_set"
                )

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (
            self.env_index == other.env_index
            and self.class_set == other.class_set
            and self.frames == other.frames
            and np.array_equal(self.context_shift, other.context_shift)
        )

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def n_labeled(self) -> int:
        return sum(1 for fr in self.frames if fr.labeled)


@dataclass(frozen=True, eq=False)
class Episode:
    environments: tuple
    seed: int
    label_fraction: float

    def __post_init__(self):
        object.__setattr__(self, "environments", tuple(self.environments))

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.label_fraction == other.label_fraction
            and self.environments == other.environments
        )

    @property
    def N(self) -> int:
        return len(self.environments)

    @property
    def T(self) -> int:
        return self.environments[0].T if self.environments else 0

    @property
    def D(self) -> int:
        return self.environments[0].frames[0].features.shape[0]

    @property
    def frames(self) -> list:
        return [fr for env in self.environments for fr in env.frames]

    def feature_matrix(self) -> np.ndarray:
        return np.stack([fr.features for fr in self.frames])

    def validate(self, check_label_count: bool = True) -> None:
        """Raise ValidationError unless every structural invariant holds."""
        if not self.environments:
            raise ValidationError("episode has no environments")
        T = self.environments[0].T
        if T == 0:
            raise ValidationError("environment 0 has no frames")
        D = self.environments[0].frames[0].features.shape[0]
        expected_labels = round(self.label_fraction * T)
        t_expected = 0
        for i, env in enumerate(self.environments):
            if env.env_index != i:
                raise ValidationError(f"environment {i} carries env_index {env.env_index}")
            if env.T != T:
                raise ValidationError(f"environment {i} has {env.T} frames, expected T={T}")
            for fr in env.frames:
                if fr.t != t_expected:
                    raise ValidationError(f"frame index {fr.t} out of order, expected {t_expected}")
                if fr.env_index != i:
                    raise ValidationError(f"frame {fr.t} env_index {fr.env_index} inside environment {i}")
                if fr.features.shape != (D,):
                    raise ValidationError(f"frame {fr.t} has dimension {fr.features.shape}, expected {D}")
                t_expected += 1
            if check_label_count and env.n_labeled != expected_labels:
                raise ValidationError(
                    f"environment {i} has {env.n_labeled} labeled frames, expected {expected_labels}"
                )


@dataclass(frozen=True)
class StreamEvent:
    frame: FeatureFrame
    revealed_label: Optional[ClassId] = None

    def __post_init__(self):
        if self.frame.labeled:
            if self.revealed_label != self.frame.true_class:
                raise ValidationError(f"frame {self.frame.t}: revealed label must equal true class")
        elif self.revealed_label is not None:
            raise ValidationError(f"frame {self.frame.t}: unlabeled frame cannot reveal a label")


@dataclass(frozen=True)
class Prediction:
    scores: Mapping[ClassId, float] = field(default_factory=dict)
    argmax: Optional[ClassId] = None

    @classmethod
    def from_scores(cls, scores: Mapping[ClassId, float]) -> "Prediction":
        if not scores:
            return cls({}, None)
        # max score wins; ties go to the smallest class id
        best = min(scores, key=lambda c: (-scores[c], c))
        return cls(dict(scores), best)

    @classmethod
    def from_arrays(cls, class_ids: Sequence[int], values) -> "Prediction":
        return cls.from_scores({int(c): float(v) for c, v in zip(class_ids, values)})


def iterate_episode(episode: Episode, check_label_count: bool = True) -> Iterator[StreamEvent]:
    """Yield one event per frame in stream order (online batch size 1)."""
    episode.validate(check_label_count=check_label_count)
    for env in episode.environments:
        for fr in env.frames:
            yield StreamEvent(fr, fr.true_class if fr.labeled else None)


def seen_set_after(events: Sequence[StreamEvent], t: int, include_unlabeled: bool = False) -> set:
    """Classes named by at least one event strictly before index ``t``.

    By default only labeled events count; ``include_unlabeled`` switches to
    any occurrence of the class in the stream.
    """
    if t < 0 or t > len(events):
        raise IndexError(f"t={t} outside [0, {len(events)}]")
    seen = set()
    for ev in events[:t]:
        if ev.revealed_label is not None:
            seen.add(ev.revealed_label)
        elif include_unlabeled:
            seen.add(ev.frame.true_class)
    return seen
