"""Predict-then-update streaming loop and the two benchmark metrics.

Average Online Accuracy counts a frame only if its class was seen before
the frame arrived. Average Forgetting compares, for each earlier
environment j, the accuracy of the snapshot taken right after j with the
accuracy of later snapshots on the same frames.

Environment indices are 0-based throughout the API.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .stream import Episode, iterate_episode

FORGETTING_DENOMINATORS = ("default", "paper-literal")


@dataclass(frozen=True)
class EvalConfig:
    forgetting_denominator: str = "default"
    forgetting_labeled_only: bool = False
    seen_includes_unlabeled: bool = False
    debug: bool = False

    def validate(self):
        if self.forgetting_denominator not in FORGETTING_DENOMINATORS:
            raise ConfigError(
                f"forgetting_denominator must be one of {FORGETTING_DENOMINATORS}"
            )


@dataclass
class LogRow:
    t: int
    env_index: int
    true_class: int
    predicted_class: Optional[int]
    counted: bool
    correct: bool


@dataclass
class EpisodeResult:
    N: int
    online_correct: List[int]
    online_counted: List[int]
    C_correct: np.ndarray  # (N, N) int, -1 above the diagonal
    C_counted: np.ndarray
    log: List[LogRow] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def online(self) -> List[Optional[float]]:
        return [online_accuracy(self, i) for i in range(self.N)]

    @property
    def C(self) -> np.ndarray:
        """Accuracy matrix; NaN where undefined (j > i or empty denominator)."""
        out = np.full((self.N, self.N), np.nan)
        ok = self.C_counted > 0
        out[ok] = self.C_correct[ok] / self.C_counted[ok]
        return out


def _predict(learner, frame, debug):
    pred = learner.predict(frame)
    if debug:
        again = learner.predict(frame)
        if again != pred:
            raise ContractError(f"{type(learner).__name__}.predict changed state at t={frame.t}")
    return pred


def run_episode(learner, episode: Episode, config: EvalConfig = EvalConfig()) -> EpisodeResult:
    """Stream one episode through a freshly reset learner."""
    config.validate()
    N, T = episode.N, episode.T
    events = list(iterate_episode(episode))
    seen = set()
    correct = [0] * N
    counted = [0] * N
    Cc = np.full((N, N), -1, dtype=np.int64)
    Cn = np.full((N, N), -1, dtype=np.int64)
    log = []
    envs = episode.environments

    for ev in events:
        fr = ev.frame
        i = fr.env_index
        if fr.t % T == 0:
            learner.on_environment_start(i)
        pred = _predict(learner, fr, config.debug)
        is_counted = fr.true_class in seen
        is_correct = is_counted and pred.argmax == fr.true_class
        counted[i] += is_counted
        correct[i] += is_correct
        log.append(LogRow(fr.t, i, fr.true_class, pred.argmax, is_counted, is_correct))

        learner.update(ev)
        if ev.revealed_label is not None:
            seen.add(ev.revealed_label)
        elif config.seen_includes_unlabeled:
            seen.add(fr.true_class)

        if fr.t % T == T - 1:
            snap = learner.snapshot()
            for j in range(i + 1):
                frames = [
                    f for f in envs[j].frames
                    if f.true_class in seen and (f.labeled or not config.forgetting_labeled_only)
                ]
                preds = snap.predict_frames(frames)
                truth = np.array([f.true_class for f in frames], dtype=np.int64)
                Cc[i, j] = int(np.sum(preds == truth))
                Cn[i, j] = len(frames)

    return EpisodeResult(N, correct, counted, Cc, Cn, log, episode.seed)


def online_accuracy(result: EpisodeResult, i: int) -> Optional[float]:
    """Online accuracy on environment ``i``; None when no frame was countable."""
    if not 0 <= i < result.N:
        raise IndexError(f"environment {i} outside [0, {result.N})")
    if result.online_counted[i] == 0:
        return None
    return result.online_correct[i] / result.online_counted[i]


def _mean(values):
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return sum(vals) / len(vals) if vals else None


def average_online_accuracy(results: Sequence[EpisodeResult]):
    """Per-environment accuracy averaged over episodes, then over environments.

    Undefined per-episode entries are skipped. Returns (O_avg, [O_i]).
    """
    if not results:
        raise ValueError("need at least one episode")
    N = results[0].N
    per_env = []
    for i in range(N):
        o_i = _mean([online_accuracy(r, i) for r in results])
        if o_i is None:
            warnings.warn(f"online accuracy undefined for environment {i} in every episode")
        per_env.append(o_i)
    return _mean(per_env), per_env


@dataclass
class ForgettingMetrics:
    FFF: np.ndarray  # (N, N), NaN where undefined
    FF: List[Optional[float]]  # FF[0] is always None
    F_avg: Optional[float]


def forgetting_metrics(C, denominator: str = "default") -> ForgettingMetrics:
    """FFF[i,j] = C[j,j] - C[i,j]; FF[i] = mean_{j<i} FFF[i,j]; F_avg over i >= 1.

    ``default`` divides by the number of defined FF[i] for i >= 1 (N-1 when
    all are defined). ``paper-literal`` counts FF[0] as 0 and divides by N.
    """
    if denominator not in FORGETTING_DENOMINATORS:
        raise ConfigError(f"unknown forgetting denominator {denominator!r}")
    C = np.asarray(C, dtype=np.float64)
    N = C.shape[0]
    FFF = np.full((N, N), np.nan)
    FF: List[Optional[float]] = [None] * N
    for i in range(1, N):
        row = []
        for j in range(i):
            if not (math.isnan(C[j, j]) or math.isnan(C[i, j])):
                FFF[i, j] = C[j, j] - C[i, j]
                row.append(float(FFF[i, j]))
        FF[i] = sum(row) / len(row) if row else None
    defined = [v for v in FF[1:] if v is not None]
    if not defined:
        F_avg = None
    elif denominator == "default":
        F_avg = sum(defined) / len(defined)
    else:
        F_avg = (0.0 + sum(defined)) / (len(defined) + 1)
    return ForgettingMetrics(FFF, FF, F_avg)


@dataclass
class Stat:
    mean: Optional[float]
    std: Optional[float]
    per_episode: List[Optional[float]]

    def to_dict(self):
        return {"mean": self.mean, "std": self.std, "per_episode": self.per_episode}


def _stat(values, what) -> Stat:
    vals = [v for v in values if v is not None]
    if not vals:
        return Stat(None, None, list(values))
    mean = sum(vals) / len(vals)
    if len(vals) < 2:
        warnings.warn(f"{what}: fewer than two episodes, std omitted")
        std = None
    else:
        std = float(np.std(np.array(vals), ddof=1))
    return Stat(mean, std, list(values))


@dataclass
class MetricSummary:
    K: int
    o_avg: Stat
    f_avg: Stat
    f_avg_paper_literal: Stat
    online_curve: List[Optional[float]]
    forgetting_curve: List[Optional[float]]
    last_environment: dict


def episode_o_avg(result: EpisodeResult) -> Optional[float]:
    return _mean(result.online)


def aggregate(results: Sequence[EpisodeResult]) -> MetricSummary:
    """Mean and sample std (ddof=1) of episode-level metrics, plus pointwise curves.

    The O_avg mean is the environment-then-episode average; its std is over
    the episode-level averages.
    """
    if not results:
        raise ValueError("need at least one episode")
    N = results[0].N
    o_avg, curve = average_online_accuracy(results)
    o_stat = _stat([episode_o_avg(r) for r in results], "O_avg")
    o_stat = Stat(o_avg, o_stat.std, o_stat.per_episode)
    fm = [forgetting_metrics(r.C) for r in results]
    fl = [forgetting_metrics(r.C, "paper-literal") for r in results]
    if N > 1:
        f_stat = _stat([m.F_avg for m in fm], "F_avg")
        fl_stat = _stat([m.F_avg for m in fl], "F_avg")
    else:
        f_stat = Stat(None, None, [None] * len(results))
        fl_stat = Stat(None, None, [None] * len(results))
    ff_curve = [_mean([m.FF[i] for m in fm]) for i in range(N)]
    return MetricSummary(
        K=len(results),
        o_avg=o_stat,
        f_avg=f_stat,
        f_avg_paper_literal=fl_stat,
        online_curve=curve,
        forgetting_curve=ff_curve,
        last_environment={"online_accuracy": curve[-1], "forgetting": ff_curve[-1]},
    )


LOG_COLUMNS = ("t", "env_index", "true_class", "predicted_class", "counted", "correct")


def write_prediction_log(result: EpisodeResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in result.log:
            w.writerow([
                row.t, row.env_index, row.true_class,
                "" if row.predicted_class is None else row.predicted_class,
                int(row.counted), int(row.correct),
            ])
