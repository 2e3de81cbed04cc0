"""Command-line entry points: task generation, episode runs, benchmark
evaluation, dataset collection, policy serving and inspection rendering."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .assets import MIXES_BY_COUNT, load_task, sample_task, save_task
from .bench import collect_epsilon_greedy, evaluate, run_episode
from .config import BenchConfig, load_config
from .policy import Mode, make_value_function
from .render import ground_truth_opening, render
from .tensorio import export_dataset


def _load_bench_config(args) -> BenchConfig:
    cfg = BenchConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    if getattr(args, "lift_threshold", None) is not None:
        cfg.policy.lift_threshold = args.lift_threshold
    if getattr(args, "opening_iou", None) is not None:
        cfg.opening_iou = args.opening_iou
    return cfg


def _write_png(path: Path, array: np.ndarray):
    from PIL import Image
    Image.fromarray(array).save(path)


def _observation_pngs(obs, masks, outdir: Path, prefix: str):
    outdir.mkdir(parents=True, exist_ok=True)
    color = (np.clip(obs.color, 0.0, 1.0) * 255).astype(np.uint8)
    _write_png(outdir / f"{prefix}color.png", color)
    depth = obs.depth
    lo, hi = float(depth.min()), float(depth.max())
    norm = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
    _write_png(outdir / f"{prefix}depth.png", (norm * 255).astype(np.uint8))
    if masks is not None:
        _write_png(outdir / f"{prefix}opening_filled.png",
                   masks.filled_opening_mask.astype(np.uint8) * 255)
        _write_png(outdir / f"{prefix}opening_boundary.png",
                   masks.opening_boundary_mask.astype(np.uint8) * 255)
        _write_png(outdir / f"{prefix}bag_mask.png",
                   masks.bag_mask.astype(np.uint8) * 255)
    label = obs.label_map
    viz = ((label.astype(np.int64) + 1) * 47 % 255).astype(np.uint8)
    _write_png(outdir / f"{prefix}labels.png", viz)


def cmd_gen_tasks(args) -> int:
    if args.objects not in MIXES_BY_COUNT:
        print(f"error: --objects must be one of {sorted(MIXES_BY_COUNT)}", file=sys.stderr)
        return 1
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    mixes = MIXES_BY_COUNT[args.objects]
    for i in range(args.count):
        task_seed = int(rng.integers(0, 2 ** 62))
        n_rigid, n_cloth = mixes[int(rng.integers(len(mixes)))]
        task = sample_task(task_seed, n_rigid, n_cloth)
        save_task(task, outdir / f"task_{i:05d}.task")
    print(f"wrote {args.count} task specs to {outdir}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_bench_config(args)
    task = load_task(args.task)
    r_vf = make_value_function(args.rearrange, Mode.REARRANGE, cfg.policy)
    l_vf = make_value_function(args.lift, Mode.LIFT, cfg.policy)
    frame_dir = Path(args.render) if args.render else None
    try:
        trace, _ = run_episode(task, r_vf, l_vf, cfg, frame_dir=frame_dir)
    finally:
        r_vf.close()
        l_vf.close()
    if trace.failure:
        print(f"episode failed: {trace.failure}")
        return 1
    print(f"success={trace.success} length={trace.length} "
          f"fraction_inside={trace.fraction_inside:.3f}")
    for i, step in enumerate(trace.steps):
        print(f"  step {i}: reward={step.reward:+.4f} checksum={step.world_checksum[:12]}")
    print(f"  lift: score={trace.lift.score:.4f} label={trace.lift.label}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_bench_config(args)
    task_files = sorted(Path(args.tasks).glob("*.task"))
    if args.episodes is not None:
        task_files = task_files[:args.episodes]
    if not task_files:
        print(f"error: no .task files under {args.tasks}", file=sys.stderr)
        return 1
    tasks = [load_task(p) for p in task_files]
    report, _ = evaluate(tasks, args.rearrange, args.lift, cfg,
                         parallel=args.parallel)
    print(report.format_table())
    if args.report:
        report.to_csv(args.report)
        print(f"report written to {args.report}")
    return 0


def cmd_collect(args) -> int:
    cfg = _load_bench_config(args)
    task_files = sorted(Path(args.tasks).glob("*.task"))
    if args.episodes is not None:
        task_files = task_files[:args.episodes]
    if not task_files:
        print(f"error: no .task files under {args.tasks}", file=sys.stderr)
        return 1
    episodes = []
    for i, path in enumerate(task_files):
        task = load_task(path)
        r_vf = make_value_function(args.rearrange, Mode.REARRANGE, cfg.policy)
        l_vf = make_value_function(args.lift, Mode.LIFT, cfg.policy)
        try:
            trace, sample = collect_epsilon_greedy(task, r_vf, l_vf,
                                                   args.epsilon, args.seed + i, cfg)
        finally:
            r_vf.close()
            l_vf.close()
        if trace.failure:
            print(f"episode {i} failed: {trace.failure}", file=sys.stderr)
            continue
        sample.episode_id = i
        episodes.append(sample)
        print(f"episode {i}: steps={len(trace.steps)} success={trace.success}")
    export_dataset(episodes, args.out)
    print(f"dataset with {len(episodes)} episodes written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .protocol import serve_remote_policy
    bind = args.bind or os.environ.get("BAGBENCH_BIND")
    if not bind:
        print("error: --bind or BAGBENCH_BIND required", file=sys.stderr)
        return 1
    cfg = _load_bench_config(args)
    print(f"serving value function {args.vf!r} on {bind}")
    try:
        serve_remote_policy(bind, args.vf, cfg.policy)
    except KeyboardInterrupt:
        pass
    return 0


def cmd_render(args) -> int:
    from .assets import build_scene
    cfg = _load_bench_config(args)
    task = load_task(args.task)
    scene = build_scene(task, cfg.solver, cfg.render.bag_rgb)
    obs = render(scene.world, cfg.render)
    masks = ground_truth_opening(scene.world, scene.bag, cfg.render, obs)
    obs.filled_opening_mask = masks.filled_opening_mask
    _observation_pngs(obs, masks, Path(args.out), "")
    print(f"wrote inspection images to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bagbench",
        description="Heterogeneous bagging simulation benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tasks", help="sample task specs into a directory")
    p.add_argument("--objects", type=int, required=True, help="total object count (2-5)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("run", help="run one episode")
    p.add_argument("--task", required=True)
    p.add_argument("--rearrange", default="heuristic")
    p.add_argument("--lift", default="heuristic")
    p.add_argument("--render", default=None, help="directory for per-step PNGs")
    p.add_argument("--config", default=None)
    p.add_argument("--lift-threshold", type=float, default=None)
    p.add_argument("--opening-iou", type=float, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate policies over a task suite")
    p.add_argument("--tasks", required=True)
    p.add_argument("--rearrange", default="heuristic")
    p.add_argument("--lift", default="heuristic")
    p.add_argument("--report", default=None, help="CSV output path")
    p.add_argument("--opening-iou", type=float, default=None)
    p.add_argument("--lift-threshold", type=float, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("collect", help="epsilon-greedy labeled data collection")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--rearrange", default="heuristic")
    p.add_argument("--lift", default="heuristic")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("serve", help="serve a value function over the wire protocol")
    p.add_argument("--bind", default=None, help="host:port (or BAGBENCH_BIND)")
    p.add_argument("--vf", default="heuristic")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("render", help="write inspection PNGs for a task")
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surface errors with a clean exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
