"""Experiment orchestration: parameters, episode fan-out and summaries."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from . import __version__, kernels
from .config import RunConfig
from .diffcore import EmbeddingParams
from .errors import ConfigError
from .evaluator import EpisodeResult, aggregate, run_episode, write_prediction_log
from .learners import HEAD_LEARNERS, make_learner
from .objectives import initial_params, meta_train, pretrain
from .paramfile import dumps_params, load_params
from .world import sample_episode

log = logging.getLogger(__name__)

SCHEMA_ID = "driftbench.summary/1"
TIMESTAMP_FIELD = "created_at"


def resolve_threads(cli_value: Optional[int], config: RunConfig) -> int:
    if cli_value is not None:
        return cli_value
    env = os.environ.get("DRIFTBENCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DRIFTBENCH_THREADS={env!r} is not an integer") from None
    return config.threads


def train_params(config: RunConfig, callback=None) -> EmbeddingParams:
    """Pretrain (Base/LwF) or meta-train (prototype learners) on the train split."""
    name = config.learner.name
    if name in HEAD_LEARNERS:
        seeds = config.episode_seeds("train", config.pretrain.episodes)
        log.info("pretraining embedding on %d train episodes", len(seeds))
        return pretrain(config.world, config.learner, config.pretrain, seeds, callback=callback)
    seeds = config.episode_seeds("train", config.meta_train.budget)
    log.info("meta-training %s embedding for %d episodes", name, len(seeds))
    return meta_train(config.world, config.learner, config.meta_train, seeds, callback=callback)


def params_digest(params: EmbeddingParams) -> str:
    return hashlib.sha256(dumps_params(params).encode()).hexdigest()


def resolve_params(config: RunConfig, params_path=None, train: bool = False,
                   untrained: bool = False) -> tuple:
    """Return (params, source label) or raise with the command that makes them."""
    if params_path is not None:
        params, _ = load_params(params_path)
        source = "file"
    elif train:
        params = train_params(config)
        source = "pretrain" if config.learner.name in HEAD_LEARNERS else "meta-train"
    elif untrained:
        params = initial_params(config.world, config.learner)
        source = "init"
    else:
        if config.learner.name in HEAD_LEARNERS:
            hint = "run `driftbench pretrain --config ... --out params.txt` or pass --pretrain"
        else:
            hint = "run `driftbench meta-train --config ... --out params.txt` or pass --meta-train"
        raise ConfigError(f"learner {config.learner.name!r} needs embedding parameters: {hint}")
    if params.d_in != config.world.feature_dim:
        raise ConfigError(f"params expect D_in={params.d_in}, world has feature_dim={config.world.feature_dim}")
    return params, source


def _one_episode(config: RunConfig, params: EmbeddingParams, seed: int) -> EpisodeResult:
    episode = sample_episode(config.world, seed)
    learner = make_learner(config.learner, params)
    return run_episode(learner, episode, config.eval)


def run_episodes(config: RunConfig, params: EmbeddingParams, threads: int = 1,
                 seeds=None) -> List[EpisodeResult]:
    """Evaluate every episode with its own learner; results keep episode order."""
    seeds = config.episode_seeds() if seeds is None else list(seeds)
    if threads <= 1:
        return [_one_episode(config, params, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: _one_episode(config, params, s), seeds))


def _clean(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def build_summary(config: RunConfig, results: List[EpisodeResult], params_source: str,
                  params: EmbeddingParams) -> dict:
    agg = aggregate(results)
    metrics = {
        "o_avg": agg.o_avg.to_dict(),
        "online_curve": agg.online_curve,
        "forgetting_curve": agg.forgetting_curve,
        "last_environment": agg.last_environment,
    }
    # Upper bound resets every environment, so forgetting is not reported for it.
    if config.learner.name != "upper-bound":
        metrics["f_avg"] = agg.f_avg.to_dict()
        metrics["f_avg_paper_literal"] = agg.f_avg_paper_literal.to_dict()
    return _clean({
        "schema": SCHEMA_ID,
        "artifact_version": __version__,
        TIMESTAMP_FIELD: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "learner": config.learner.name,
        "seed": config.seed,
        "split": config.split,
        "episodes": len(results),
        "N": config.world.N,
        "T": config.world.T,
        "episode_seeds": [r.seed for r in results],
        "kernel_backend": kernels.BACKEND,
        "params": {"source": params_source, "sha256": params_digest(params)},
        "metrics": metrics,
        "config": config.echo(),
    })


def dumps_summary(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def write_run(out_dir, summary: dict, results: List[EpisodeResult]) -> Path:
    out = Path(out_dir)
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(dumps_summary(summary), encoding="utf-8")
    for k, r in enumerate(results):
        write_prediction_log(r, out / "episodes" / f"episode_{k:04d}.csv")
    return out / "summary.json"


def load_summary(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"summary not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
