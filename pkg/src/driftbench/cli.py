"""Command-line entry point: gen, pretrain, meta-train, run, plot, compare."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .errors import DriftBenchError
from .evaluator import run_episode
from .learners import HEAD_LEARNERS, LEARNER_NAMES, make_learner
from .paramfile import write_params
from .report import DIRECTIONS, METRICS, compare, plot
from .runner import (
    build_summary,
    load_summary,
    resolve_params,
    resolve_threads,
    run_episodes,
    train_params,
    write_run,
)
from .world import load_episode, sample_episode, write_episode

log = logging.getLogger("driftbench")


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--seed", type=int, help="run seed (overrides config)")
    p.add_argument("--episodes", type=int, help="number of episodes K (overrides config)")
    p.add_argument("--learner", choices=LEARNER_NAMES, help="learner name (overrides config)")
    p.add_argument("--out", help=out_help)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set world.N=2 (repeatable)")


def _config(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.episodes is not None:
        overrides.append(f"episodes={args.episodes}")
    if args.learner is not None:
        overrides.append(f'learner.name="{args.learner}"')
    if getattr(args, "split", None):
        overrides.append(f'split="{args.split}"')
    return load_config(args.config, overrides)


def cmd_gen(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, seed in enumerate(cfg.episode_seeds()):
        name = f"episode_{k:04d}.dbench"
        write_episode(sample_episode(cfg.world, seed), out / name)
        digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
        files.append({"file": name, "seed": seed, "sha256": digest})
    manifest = {
        "format": "DBENCH1",
        "split": cfg.split,
        "run_seed": cfg.seed,
        "world": cfg.world.to_dict(),
        "episodes": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(files)} episodes to {out}")
    return 0


def _train_cmd(args, head: bool) -> int:
    cfg = _config(args)
    if head and cfg.learner.name not in HEAD_LEARNERS:
        cfg = replace(cfg, learner=replace(cfg.learner, name="base"))
    if not head and cfg.learner.name in HEAD_LEARNERS:
        raise DriftBenchError(f"meta-train applies to prototype learners, not {cfg.learner.name!r}")
    if not args.out:
        raise DriftBenchError("--out PATH is required")
    params = train_params(cfg, callback=lambda k, v: log.debug("step %d loss %.6f", k, v))
    write_params(params, args.out, meta={"learner": cfg.learner.name, "seed": cfg.seed})
    print(f"wrote params to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    threads = resolve_threads(args.threads, cfg)
    params, source = resolve_params(
        cfg, args.params, train=args.meta_train or args.pretrain, untrained=args.untrained
    )
    if args.episode_dir:
        paths = sorted(Path(args.episode_dir).glob("*.dbench"))
        if not paths:
            raise DriftBenchError(f"no .dbench files in {args.episode_dir}")
        episodes = [load_episode(p) for p in paths]
        results = [run_episode(make_learner(cfg.learner, params), ep, cfg.eval) for ep in episodes]
    else:
        results = run_episodes(cfg, params, threads)
    summary = build_summary(cfg, results, source, params)
    path = write_run(args.out or cfg.output_dir, summary, results)
    m = summary["metrics"]
    line = f"{cfg.learner.name}: O_avg={m['o_avg']['mean']:.4f}"
    if "f_avg" in m:
        f = m["f_avg"]["mean"]
        line += " F_avg=" + ("undefined" if f is None else f"{f:.4f}")
    print(f"{line} -> {path}")
    return 0


def cmd_plot(args) -> int:
    if not args.summaries:
        raise DriftBenchError("plot needs at least one summary.json")
    summaries = [load_summary(p) for p in args.summaries]
    for path in plot(summaries, args.out):
        print(path)
    return 0


def cmd_compare(args) -> int:
    a, b = load_summary(args.summary_a), load_summary(args.summary_b)
    verdict = compare(a, b, args.metric, args.direction, args.margin)
    print(verdict.line())
    return 0 if verdict.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftbench", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write seeded episodes in DBENCH1 format plus a manifest")
    _common(p, "output directory")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="offline supervised embedding for base/lwf")
    _common(p, "params file to write")
    p.set_defaults(func=lambda a: _train_cmd(a, head=True))

    p = sub.add_parser("meta-train", help="episodic training of a prototype learner's embedding")
    _common(p, "params file to write")
    p.set_defaults(func=lambda a: _train_cmd(a, head=False))

    p = sub.add_parser("run", help="evaluate a learner over K episodes and write summary.json")
    _common(p, "output directory")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--threads", type=int, help="worker threads (env DRIFTBENCH_THREADS as fallback)")
    p.add_argument("--params", help="params file from pretrain/meta-train")
    p.add_argument("--meta-train", action="store_true", help="meta-train the embedding first")
    p.add_argument("--pretrain", action="store_true", help="pretrain the embedding first")
    p.add_argument("--untrained", action="store_true", help="use the initial embedding as is")
    p.add_argument("--episode-dir", help="evaluate DBENCH1 files from this directory instead of sampling")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plot", help="SVG/CSV charts from one or more summary.json files")
    p.add_argument("summaries", nargs="*")
    p.add_argument("--out", default="plots")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("compare", help="directional check between two summaries")
    p.add_argument("summary_a")
    p.add_argument("summary_b")
    p.add_argument("--metric", required=True, help=f"one of {', '.join(METRICS)}")
    p.add_argument("--direction", required=True, choices=DIRECTIONS)
    p.add_argument("--margin", type=float, default=0.5, help="margin in pooled-std units")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DriftBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
