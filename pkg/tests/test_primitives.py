import numpy as np
import pytest

from bagbench.assets import build_bag, build_rigid, point_in_polygon, sample_task, build_scene
from bagbench.config import PolicyConfig, RenderConfig, SolverConfig
from bagbench.physics import BodyKind, World
from bagbench.policy import LiftAction, RearrangeAction
from bagbench.primitives import (execute_lift, execute_rearrange,
                                 object_inside_flags)
from bagbench.render import ground_truth_opening, render, world_to_pixel


@pytest.fixture(scope="module")
def lift_scene():
    """Bag with a small rigid sphere settled inside the bottom."""
    cfg = SolverConfig()
    rcfg = RenderConfig()
    w = World(cfg)
    bag = build_bag(w, 0.32, 0.9, rcfg.bag_rgb)
    w.settle(0.8)
    rigid = build_rigid(w, 1, "sphere", (0.05, 0.05, 0.05), (0.9, 0.2, 0.2),
                        (0.0, 0.0), 0.0)
    w.pos[rigid.indices] += [0, 0, 0.02]
    w.settle(0.8)
    return w, bag, rigid


def _diametral_action(world, bag, rcfg):
    rim_px = world_to_pixel(world.pos[bag.rim_indices][:, :2], rcfg)
    i0, i1 = 0, len(rim_px) // 2
    return LiftAction(lift_pixel=tuple((rim_px[i0] + rim_px[i1]) / 2), theta=0.0,
                      l1=(int(round(rim_px[i0][0])), int(round(rim_px[i0][1]))),
                      l2=(int(round(rim_px[i1][0])), int(round(rim_px[i1][1]))))


def test_lift_bags_settled_sphere(lift_scene):
    world, bag, rigid = lift_scene
    world = world.copy()
    rcfg = RenderConfig()
    obs = render(world, rcfg)
    outcome = execute_lift(world, _diametral_action(world, bag, rcfg), obs,
                           PolicyConfig(), rcfg)
    assert outcome.success
    assert outcome.per_object_inside == {1: True}
    assert world.pos[world.body_particles(1)][:, 2].min() > 0.1


def test_lift_success_is_conjunction_of_scan(lift_scene):
    world, bag, rigid = lift_scene
    world = world.copy()
    rcfg = RenderConfig()
    policy = PolicyConfig()
    obs = render(world, rcfg)
    outcome = execute_lift(world, _diametral_action(world, bag, rcfg), obs,
                           policy, rcfg)
    # independent brute-force particle scan of the post-lift world
    scan = {}
    for body in world.bodies():
        idx = world.body_particles(body)
        if world.kind[idx[0]] == int(BodyKind.BAG):
            continue
        scan[body] = bool(world.pos[idx][:, 2].min() >= policy.ground_epsilon)
    assert outcome.per_object_inside == scan
    assert outcome.success == all(scan.values())


def test_lift_empty_bag_vacuous_success():
    cfg = SolverConfig()
    rcfg = RenderConfig()
    w = World(cfg)
    bag = build_bag(w, 0.3, 0.9, rcfg.bag_rgb)
    w.settle(0.8)
    obs = render(w, rcfg)
    outcome = execute_lift(w, _diametral_action(w, bag, rcfg), obs,
                           PolicyConfig(), rcfg)
    assert outcome.success
    assert outcome.per_object_inside == {}


def test_lift_far_object_flagged_outside(lift_scene):
    world, bag, rigid = lift_scene
    world = world.copy()
    rcfg = RenderConfig()
    build_rigid(world, 7, "box", (0.05, 0.05, 0.05), (0.2, 0.9, 0.2), (0.35, 0.35), 0.0)
    world.settle(0.8)
    obs = render(world, rcfg)
    outcome = execute_lift(world, _diametral_action(world, bag, rcfg), obs,
                           PolicyConfig(), rcfg)
    assert outcome.per_object_inside[7] is False
    assert not outcome.success


def test_lift_no_graspable_particles_fails(lift_scene):
    world, bag, rigid = lift_scene
    world = world.copy()
    rcfg = RenderConfig()
    obs = render(world, rcfg)
    action = LiftAction(lift_pixel=(5.0, 5.0), theta=0.0, l1=(2, 2), l2=(2, 20))
    outcome = execute_lift(world, action, obs, PolicyConfig(), rcfg)
    assert not outcome.success
    assert outcome.per_object_inside == {1: False}
    assert outcome.success == all(outcome.per_object_inside.values())
    assert "no graspable" in outcome.reason


def test_rearrange_moves_rigid_into_opening(small_scene, scene_obs):
    scene = small_scene
    obs, masks = scene_obs
    world = scene.world.copy()
    rcfg = RenderConfig()
    rigid = scene.rigids[0]
    pick_px = world_to_pixel(world.pos[rigid.indices].mean(axis=0)[:2], rcfg)
    top = rigid.indices[int(np.argmax(world.pos[rigid.indices][:, 2]))]
    pick_px = world_to_pixel(world.pos[top][:2], rcfg)
    rr, cc = np.nonzero(masks.filled_opening_mask)
    place_px = (float(rr.mean()), float(cc.mean()))
    action = RearrangeAction(pick_pixel=(float(pick_px[0]), float(pick_px[1])),
                             place_pixel=place_px, theta=0.0, scale_w=1.0)
    world, grasped = execute_rearrange(world, action, obs, PolicyConfig(), rcfg)
    assert grasped == rigid.body_id
    centroid = world.pos[rigid.indices].mean(axis=0)
    rim_poly = world.pos[scene.bag.rim_indices][:, :2]
    assert bool(point_in_polygon(centroid[None, :2], rim_poly)[0])


def test_rearrange_background_pick_is_noop(small_scene, scene_obs):
    scene = small_scene
    obs, _ = scene_obs
    world = scene.world.copy()
    before = world.checksum()
    # corner of the workspace: empty floor
    action = RearrangeAction(pick_pixel=(3.0, 3.0), place_pixel=(112.0, 112.0),
                             theta=0.0, scale_w=1.0)
    world, grasped = execute_rearrange(world, action, obs, PolicyConfig(),
                                       RenderConfig())
    assert grasped is None
    assert world.checksum() == before


def test_rearrange_folds_cloth(small_scene, scene_obs):
    scene = small_scene
    obs, _ = scene_obs
    world = scene.world.copy()
    cloth = scene.cloths[0]
    pts = world.pos[cloth.indices]
    corner = cloth.indices[int(np.argmax(pts[:, 0] + pts[:, 1]))]
    far = cloth.indices[int(np.argmin(pts[:, 0] + pts[:, 1]))]
    rcfg = RenderConfig()
    pick_px = world_to_pixel(world.pos[corner][:2], rcfg)
    place_px = world_to_pixel(world.pos[far][:2], rcfg)

    def bbox_area(w):
        xy = w.pos[cloth.indices][:, :2]
        span = xy.max(axis=0) - xy.min(axis=0)
        return float(span[0] * span[1])

    before = bbox_area(world)
    action = RearrangeAction(pick_pixel=(float(pick_px[0]), float(pick_px[1])),
                             place_pixel=(float(place_px[0]), float(place_px[1])),
                             theta=0.0, scale_w=1.0)
    world, grasped = execute_rearrange(world, action, obs, PolicyConfig(), rcfg)
    assert grasped == cloth.body_id
    assert bbox_area(world) < before


def test_rearrange_keeps_grasp_inside_workspace(small_scene, scene_obs, monkeypatch):
    # a place pixel at the image corner must clamp the carried trajectory to
    # the workspace: every attachment target the primitive commands stays in
    # bounds (what happens after release is up to gravity)
    scene = small_scene
    obs, _ = scene_obs
    world = scene.world.copy()
    rcfg = RenderConfig()
    policy = PolicyConfig()
    cloth = scene.cloths[0]
    top = cloth.indices[int(np.argmax(world.pos[cloth.indices][:, 2]))]
    pick_px = world_to_pixel(world.pos[top][:2], rcfg)
    action = RearrangeAction(pick_pixel=(float(pick_px[0]), float(pick_px[1])),
                             place_pixel=(0.0, 223.0), theta=0.0, scale_w=2.75)
    targets = []
    original = World.move_attachment

    def spy(self, idx, target):
        targets.append(np.asarray(target, dtype=float).copy())
        return original(self, idx, target)

    monkeypatch.setattr(World, "move_attachment", spy)
    world, grasped = execute_rearrange(world, action, obs, policy, rcfg)
    assert grasped == cloth.body_id
    assert targets
    half = rcfg.workspace / 2
    assert max(abs(t[0]) for t in targets) <= half
    assert max(abs(t[1]) for t in targets) <= half
