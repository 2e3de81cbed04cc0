"""Episode runner, benchmark metrics and epsilon-greedy data collection."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assets import TaskInfeasibleError, TaskSpec, build_scene
from .config import BenchConfig, REARRANGE_ANGLES, REARRANGE_SCALES
from .masks import perturb_polygon
from .physics import SimulationDivergedError
from .policy import (Decision, DecisionKind, EpisodeState, LiftAction,
                     LiftInfeasibleError, Mode, RearrangeAction, ValueFunction,
                     fused_step, make_value_function, rearrange_reward)
from .primitives import LiftOutcome, execute_lift, execute_rearrange
from .render import MaskSet, Observation, ground_truth_opening, render
from .tensorio import EpisodeSample, StepSample


@dataclass
class StepRecord:
    obs_digest: str
    decision: str
    action: dict
    reward: float
    world_checksum: str


@dataclass
class LiftRecord:
    obs_digest: str
    decision: str
    action: dict
    score: float
    label: int
    per_object_inside: dict[int, bool]
    world_checksum: str


@dataclass
class EpisodeTrace:
    task: TaskSpec
    steps: list[StepRecord] = field(default_factory=list)
    lift: LiftRecord | None = None
    success: bool = False
    length: int = 0
    failure: str | None = None
    achieved_opening_iou: float = 1.0

    @property
    def fraction_inside(self) -> float:
        if self.lift is None or not self.lift.per_object_inside:
            return 0.0
        flags = list(self.lift.per_object_inside.values())
        return sum(flags) / len(flags)


def obs_digest(obs: Observation) -> str:
    h = hashlib.sha256()
    h.update(obs.color.tobytes())
    h.update(obs.depth.tobytes())
    h.update(obs.filled_opening_mask.tobytes())
    h.update(obs.label_map.tobytes())
    return h.hexdigest()


def _rearrange_action_dict(a: RearrangeAction) -> dict:
    return {"kind": "rearrange",
            "pick_r": a.pick_pixel[0], "pick_c": a.pick_pixel[1],
            "place_r": a.place_pixel[0], "place_c": a.place_pixel[1],
            "theta": a.theta, "scale_w": a.scale_w}


def _lift_action_dict(a: LiftAction) -> dict:
    return {"kind": "lift",
            "lift_r": a.lift_pixel[0], "lift_c": a.lift_pixel[1],
            "theta": a.theta,
            "l1_r": a.l1[0], "l1_c": a.l1[1], "l2_r": a.l2[0], "l2_c": a.l2[1]}


def _random_rearrange(obs: Observation, rng, config: BenchConfig) -> RearrangeAction | None:
    """Uniform pick over object pixels with uniform grid rotation and scale."""
    coords = np.argwhere(obs.label_map > 0)
    if coords.shape[0] == 0:
        return None
    pick = coords[int(rng.integers(coords.shape[0]))]
    theta = float(REARRANGE_ANGLES[int(rng.integers(len(REARRANGE_ANGLES)))])
    w = float(REARRANGE_SCALES[int(rng.integers(len(REARRANGE_SCALES)))])
    res = obs.resolution
    d = config.policy.d_base * w
    clamp = lambda v: min(max(v, 0.0), res - 1.0)
    return RearrangeAction(
        pick_pixel=(float(pick[0]), float(pick[1])),
        place_pixel=(clamp(pick[0] + d * math.cos(theta)),
                     clamp(pick[1] + d * math.sin(theta))),
        theta=theta, scale_w=w)


def run_episode(task: TaskSpec, rearrange_vf: ValueFunction, lift_vf: ValueFunction,
                config: BenchConfig | None = None, epsilon: float = 0.0,
                explore_seed: int = 0, keep_observations: bool = False,
                max_steps: int | None = None,
                frame_dir=None) -> tuple[EpisodeTrace, EpisodeSample | None]:
    """Run one seeded episode under the fused policy.

    With epsilon > 0, each rearrangement action is replaced by a random
    feasible pick with probability epsilon (the lift-versus-rearrange
    decision logic is unchanged). Fully deterministic given the task seed,
    value functions and explore seed."""
    config = config or BenchConfig()
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if max_steps is not None:
        import dataclasses
        config = dataclasses.replace(config)
        config.policy = dataclasses.replace(config.policy, max_steps=max_steps)
    trace = EpisodeTrace(task=task)
    sample = EpisodeSample(episode_id=0, seed=task.seed, n_rigid=task.n_rigid,
                           n_cloth=task.n_cloth, success=False) if keep_observations else None
    rng = np.random.default_rng(np.random.SeedSequence([task.seed, explore_seed, 0xE5]))
    try:
        scene = build_scene(task, config.solver, config.render.bag_rgb)
        world = scene.world
        obs0 = render(world, config.render)
        masks = ground_truth_opening(world, scene.bag, config.render, obs0)
        opening_poly_world = world.pos[scene.bag.rim_indices][:, :2].copy()
        if config.opening_iou is not None:
            poly, achieved = perturb_polygon(
                masks.rim_polygon_px, config.opening_iou, config.perturb_seed + task.seed,
                (config.render.resolution, config.render.resolution))
            from .masks import boundary_from_filled, fill_polygon
            filled = fill_polygon(poly, (config.render.resolution, config.render.resolution))
            masks = MaskSet(bag_mask=masks.bag_mask, filled_opening_mask=filled,
                            opening_boundary_mask=boundary_from_filled(filled),
                            object_masks=masks.object_masks, rim_polygon_px=poly)
            trace.achieved_opening_iou = achieved
        state = EpisodeState()
        while True:
            obs = render(world, config.render, opening_mask=masks.filled_opening_mask)
            digest = obs_digest(obs)
            if frame_dir is not None:
                from .cli import _observation_pngs
                _observation_pngs(obs, masks if not trace.steps else None,
                                  Path(frame_dir), f"step{len(trace.steps):03d}_")
            decision = fused_step(obs, masks, rearrange_vf, lift_vf, state,
                                  config.policy, config.render)
            if decision.kind is DecisionKind.REARRANGE:
                action = decision.rearrange
                if epsilon > 0.0 and rng.random() < epsilon:
                    action = _random_rearrange(obs, rng, config) or action
                pre = world.copy()
                world, grasped = execute_rearrange(world, action, obs,
                                                   config.policy, config.render)
                reward = rearrange_reward(pre, world, grasped, opening_poly_world)
                trace.steps.append(StepRecord(
                    obs_digest=digest, decision=decision.kind.value,
                    action=_rearrange_action_dict(action), reward=reward,
                    world_checksum=world.checksum()))
                if sample is not None:
                    meta = dict(_rearrange_action_dict(action))
                    meta["reward"] = reward
                    meta["grasped_body"] = -1 if grasped is None else grasped
                    sample.steps.append(StepSample(kind="rearrange", meta=meta,
                                                   observation=obs.policy_input()))
                state.step_count += 1
                continue
            outcome = execute_lift(world, decision.lift, obs,
                                   config.policy, config.render)
            trace.lift = LiftRecord(
                obs_digest=digest, decision=decision.kind.value,
                action=_lift_action_dict(decision.lift),
                score=decision.lift_score, label=int(outcome.success),
                per_object_inside=outcome.per_object_inside,
                world_checksum=world.checksum())
            trace.success = outcome.success
            trace.length = len(trace.steps) + 1
            if sample is not None:
                meta = dict(_lift_action_dict(decision.lift))
                meta["label"] = int(outcome.success)
                meta["score"] = decision.lift_score
                sample.steps.append(StepSample(kind="lift", meta=meta,
                                               observation=obs.policy_input()))
                sample.success = outcome.success
            break
    except (TaskInfeasibleError, LiftInfeasibleError, SimulationDivergedError) as exc:
        trace.failure = f"{type(exc).__name__}: {exc}"
        trace.success = False
        trace.length = len(trace.steps) + 1
    return trace, sample


def collect_epsilon_greedy(task: TaskSpec, rearrange_vf: ValueFunction,
                           lift_vf: ValueFunction, epsilon: float, seed: int,
                           config: BenchConfig | None = None
                           ) -> tuple[EpisodeTrace, EpisodeSample | None]:
    """Self-supervised episode collection: epsilon-greedy rearrangement with
    automatic reward labels and the terminal lift labeled as success 0/1."""
    return run_episode(task, rearrange_vf, lift_vf, config, epsilon=epsilon,
                       explore_seed=seed, keep_observations=True)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class BenchmarkReport:
    rows: dict[int, dict]           # object count -> metrics
    policy_rearrange: str = ""
    policy_lift: str = ""
    episodes: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["objects", "episodes", "sr", "avg_f", "avg_l",
                             "rearrange_vf", "lift_vf"])
            for count in sorted(self.rows):
                row = self.rows[count]
                writer.writerow([count, row["episodes"], f"{row['sr']:.4f}",
                                 f"{row['avg_f']:.4f}", f"{row['avg_l']:.4f}",
                                 self.policy_rearrange, self.policy_lift])

    def format_table(self) -> str:
        lines = [f"policies: rearrange={self.policy_rearrange} lift={self.policy_lift}",
                 f"{'objects':>8} {'episodes':>9} {'SR':>7} {'AvgF':>7} {'AvgL':>7}"]
        for count in sorted(self.rows):
            row = self.rows[count]
            lines.append(f"{count:>8} {row['episodes']:>9} {row['sr']:>7.3f} "
                         f"{row['avg_f']:>7.3f} {row['avg_l']:>7.3f}")
        return "\n".join(lines)


def summarize(traces: list[EpisodeTrace]) -> dict:
    n = len(traces)
    if n == 0:
        return {"episodes": 0, "sr": 0.0, "avg_f": 0.0, "avg_l": 0.0}
    return {
        "episodes": n,
        "sr": sum(t.success for t in traces) / n,
        "avg_f": sum(t.fraction_inside for t in traces) / n,
        "avg_l": sum(t.length for t in traces) / n,
    }


def _episode_worker(args) -> tuple[int, EpisodeTrace]:
    task, r_spec, l_spec, config, explore_seed, epsilon = args
    r_vf = make_value_function(r_spec, Mode.REARRANGE, config.policy)
    l_vf = make_value_function(l_spec, Mode.LIFT, config.policy)
    try:
        trace, _ = run_episode(task, r_vf, l_vf, config, epsilon=epsilon,
                               explore_seed=explore_seed)
    finally:
        r_vf.close()
        l_vf.close()
    return task.seed, trace


def evaluate(tasks: list[TaskSpec], rearrange_spec: str, lift_spec: str,
             config: BenchConfig | None = None, parallel: int = 1,
             epsilon: float = 0.0) -> tuple[BenchmarkReport, list[EpisodeTrace]]:
    """Run every task and aggregate SR / AvgF / AvgL per object count.

    Results are keyed by task seed so the reduction is order-independent."""
    if not tasks:
        raise ValueError("task suite is empty")
    config = config or BenchConfig()
    jobs = [(task, rearrange_spec, lift_spec, config, 0, epsilon) for task in tasks]
    results: dict[int, EpisodeTrace] = {}
    if parallel > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(parallel) as pool:
            for seed, trace in pool.imap_unordered(_episode_worker, jobs):
                results[seed] = trace
    else:
        for job in jobs:
            seed, trace = _episode_worker(job)
            results[seed] = trace
    traces = [results[task.seed] for task in tasks]
    by_count: dict[int, list[EpisodeTrace]] = {}
    for task, trace in zip(tasks, traces):
        by_count.setdefault(task.n_objects, []).append(trace)
    rows = {count: summarize(group) for count, group in sorted(by_count.items())}
    report = BenchmarkReport(rows=rows, policy_rearrange=rearrange_spec,
                             policy_lift=lift_spec, episodes=len(traces))
    return report, traces
