"""Pick-and-place, bi-manual lift and shake primitives over the particle world."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import PolicyConfig, RenderConfig
from .physics import BodyKind, World
from .policy import LiftAction, RearrangeAction
from .render import Observation, pixel_to_world


@dataclass
class LiftOutcome:
    success: bool
    per_object_inside: dict[int, bool] = field(default_factory=dict)
    grasped_bodies: tuple[int, ...] = ()
    reason: str = ""


def _depth_project(obs: Observation, pixel, render_cfg: RenderConfig) -> np.ndarray:
    """Pixel plus its depth value to a 3D workspace point."""
    res = obs.resolution
    pr = min(max(int(round(pixel[0])), 0), res - 1)
    pc = min(max(int(round(pixel[1])), 0), res - 1)
    xy = pixel_to_world(np.array([pixel[0], pixel[1]], dtype=float), render_cfg)
    z = render_cfg.camera_height - float(obs.depth[pr, pc])
    return np.array([xy[0], xy[1], z])


def _nearest(world: World, point: np.ndarray, radius: float,
             prefer_objects: bool) -> int | None:
    """Nearest particle in 3D; optionally prefer non-bag particles, matching a
    suction gripper that grabs the top object layer. Ties go to the lowest
    index."""
    d2 = np.einsum("ij,ij->i", world.pos - point, world.pos - point)
    r2 = radius * radius
    if prefer_objects:
        obj = world.kind != int(BodyKind.BAG)
        if np.any(obj):
            masked = np.where(obj, d2, np.inf)
            best = int(np.argmin(masked))
            if masked[best] <= r2:
                return best
    best = int(np.argmin(d2))
    if d2[best] <= r2:
        return best
    return None


def _move_attachment_linear(world: World, particle: int, target, speed: float):
    row = np.flatnonzero(world.attach_idx == particle)[0]
    start = world.attach_target[row].copy()
    target = np.asarray(target, dtype=float)
    dist = float(np.linalg.norm(target - start))
    steps = max(1, int(math.ceil(dist / (speed * world.solver.dt))))
    for s in range(1, steps + 1):
        world.move_attachment(particle, start + (target - start) * (s / steps))
        world.step()


def execute_rearrange(world: World, action: RearrangeAction, obs: Observation,
                      policy: PolicyConfig | None = None,
                      render_cfg: RenderConfig | None = None) -> tuple[World, int | None]:
    """Grasp at the depth-projected pick pixel, raise, translate over the
    place pixel, lower, release and settle. Returns the grasped body id, or
    None for a no-op pick on empty space."""
    policy = policy or PolicyConfig()
    render_cfg = render_cfg or RenderConfig()
    p_pick = _depth_project(obs, action.pick_pixel, render_cfg)
    idx = _nearest(world, p_pick, policy.grasp_radius, prefer_objects=True)
    if idx is None:
        return world, None
    grasped_body = int(world.body_id[idx])
    half = render_cfg.workspace / 2 - 0.01

    def clamp_xy(p):
        return np.array([min(max(p[0], -half), half),
                         min(max(p[1], -half), half), p[2]])

    world.attach(idx)
    start = world.pos[idx].copy()
    up = clamp_xy(np.array([start[0], start[1], start[2] + policy.raise_height]))
    place_xy = pixel_to_world(np.asarray(action.place_pixel, dtype=float), render_cfg)
    over = clamp_xy(np.array([place_xy[0], place_xy[1], up[2]]))
    down = clamp_xy(np.array([place_xy[0], place_xy[1], policy.lower_height]))
    _move_attachment_linear(world, idx, up, policy.move_speed)
    _move_attachment_linear(world, idx, over, policy.move_speed)
    _move_attachment_linear(world, idx, down, policy.move_speed)
    world.detach(idx)
    world.settle(policy.settle_after_action)
    return world, grasped_body


def object_inside_flags(world: World, ground_epsilon: float) -> dict[int, bool]:
    """Inside iff none of the body's particles touches the workspace surface."""
    flags: dict[int, bool] = {}
    for body in world.bodies():
        idx = world.body_particles(body)
        if world.kind[idx[0]] == int(BodyKind.BAG):
            continue
        flags[body] = bool(world.pos[idx][:, 2].min() >= ground_epsilon)
    return flags


def execute_lift(world: World, action: LiftAction, obs: Observation,
                 policy: PolicyConfig | None = None,
                 render_cfg: RenderConfig | None = None) -> LiftOutcome:
    """Attach at both depth-projected lift points, raise, shake, settle, then
    judge per-object success by ground contact."""
    policy = policy or PolicyConfig()
    render_cfg = render_cfg or RenderConfig()
    p1 = _depth_project(obs, action.l1, render_cfg)
    p2 = _depth_project(obs, action.l2, render_cfg)
    i1 = _nearest(world, p1, policy.grasp_radius, prefer_objects=False)
    i2 = _nearest(world, p2, policy.grasp_radius, prefer_objects=False)
    if i1 is None or i2 is None or i1 == i2:
        # nothing was lifted, so nothing is inside a lifted bag
        flags = {body: False for body in object_inside_flags(world, policy.ground_epsilon)}
        return LiftOutcome(success=all(flags.values()), per_object_inside=flags,
                           reason="no graspable particle at a lift point")
    grasped = (int(world.body_id[i1]), int(world.body_id[i2]))
    world.attach(i1)
    world.attach(i2)
    dt = world.solver.dt
    n_up = max(1, int(round(policy.lift_seconds / dt)))
    s1 = world.pos[i1].copy()
    s2 = world.pos[i2].copy()
    t1 = np.array([s1[0], s1[1], policy.lift_height])
    t2 = np.array([s2[0], s2[1], policy.lift_height])
    for s in range(1, n_up + 1):
        a = s / n_up
        world.move_attachment(i1, s1 + (t1 - s1) * a)
        world.move_attachment(i2, s2 + (t2 - s2) * a)
        world.step()
    n_shake = max(1, int(round(policy.shake_seconds / dt)))
    for s in range(1, n_shake + 1):
        dz = policy.shake_amplitude * math.sin(2.0 * math.pi * policy.shake_hz * s * dt)
        world.move_attachment(i1, t1 + [0.0, 0.0, dz])
        world.move_attachment(i2, t2 + [0.0, 0.0, dz])
        world.step()
    world.move_attachment(i1, t1)
    world.move_attachment(i2, t2)
    world.settle(policy.post_lift_settle)
    flags = object_inside_flags(world, policy.ground_epsilon)
    world.detach(i1)
    world.detach(i2)
    return LiftOutcome(success=all(flags.values()), per_object_inside=flags,
                       grasped_bodies=grasped)
