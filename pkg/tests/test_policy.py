import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bagbench.assets import point_in_polygon
from bagbench.config import (LIFT_ANGLES, PolicyConfig, REARRANGE_ANGLES,
                             REARRANGE_SCALES, RenderConfig, SolverConfig)
from bagbench.masks import boundary_from_filled, fill_polygon
from bagbench.physics import BodyKind, World
from bagbench.policy import (ConstantVF, EpisodeState, DecisionKind,
                             HeuristicLiftVF, HeuristicRearrangeVF,
                             LiftInfeasibleError, Mode, RandomVF,
                             decode_lift, decode_pick, decode_rearrange,
                             encode_pick, fused_step, heuristic_lift,
                             heuristic_rearrange, make_transform_batch,
                             max_width_lift, rearrange_reward)
from bagbench.render import render
from tests.test_masks import circle_polygon


@pytest.fixture(scope="module")
def scene_batches(request):
    small_scene = request.getfixturevalue("small_scene")
    scene_obs = request.getfixturevalue("scene_obs")
    obs, masks = scene_obs
    return (make_transform_batch(obs, Mode.REARRANGE),
            make_transform_batch(obs, Mode.LIFT), obs, masks)


def test_batch_shapes_and_grids(scene_batches):
    rbatch, lbatch, _, _ = scene_batches
    assert rbatch.slices.shape == (96, 224, 224, 4)
    assert lbatch.slices.shape == (12, 224, 224, 4)
    assert np.array_equal(np.unique(rbatch.thetas), np.unique(REARRANGE_ANGLES))
    assert np.array_equal(np.unique(rbatch.scales), np.asarray(REARRANGE_SCALES))
    assert np.array_equal(lbatch.thetas, np.asarray(LIFT_ANGLES))
    # rotation-major, then scale
    assert rbatch.thetas[0] == rbatch.thetas[7]
    assert rbatch.scales[0] == 1.0 and rbatch.scales[7] == 2.75
    assert math.degrees(REARRANGE_ANGLES[0]) == -180.0
    assert math.degrees(LIFT_ANGLES[0]) == -90.0
    assert math.degrees(LIFT_ANGLES[-1]) == pytest.approx(75.0)


def test_identity_slice_is_bitwise_input(scene_batches):
    rbatch, lbatch, obs, _ = scene_batches
    base = obs.policy_input()
    assert np.array_equal(rbatch.slices[rbatch.identity_index()], base)
    assert np.array_equal(lbatch.slices[lbatch.identity_index()], base)


def test_decode_identity_slice(scene_batches):
    rbatch, _, _, _ = scene_batches
    policy = PolicyConfig()
    k = rbatch.identity_index()
    action = decode_rearrange((k, 60, 80), rbatch, policy)
    assert action.pick_pixel == pytest.approx((60.0, 80.0), abs=1e-9)
    assert action.place_pixel[0] == pytest.approx(60.0 + policy.d_base, abs=1e-9)
    assert action.place_pixel[1] == pytest.approx(80.0, abs=1e-9)
    assert action.theta == 0.0 and action.scale_w == 1.0


def test_decode_opposite_rotation(scene_batches):
    rbatch, _, _, _ = scene_batches
    policy = PolicyConfig()
    # slice 0 is theta = -180 deg, scale 1: place sits D_base behind the pick
    action = decode_rearrange((0, 112, 112), rbatch, policy)
    assert action.theta == pytest.approx(-math.pi)
    assert action.place_pixel[0] == pytest.approx(action.pick_pixel[0] - policy.d_base, abs=1e-6)
    assert action.place_pixel[1] == pytest.approx(action.pick_pixel[1], abs=1e-6)


def test_decode_encode_round_trip(scene_batches):
    rbatch, _, _, _ = scene_batches
    grid = np.linspace(40, 183, 16).astype(int)
    worst = 0.0
    for k in range(rbatch.t):
        for r in grid:
            for c in grid:
                pick = decode_pick((k, int(r), int(c)), rbatch)
                rr, cc = encode_pick(pick, k, rbatch)
                worst = max(worst, abs(rr - r), abs(cc - c))
    assert worst <= 1.0


def test_decode_lift_circle():
    rim = circle_polygon((112, 112), 50, n=96)
    filled = fill_polygon(rim, (224, 224))
    boundary = boundary_from_filled(filled)
    obs_dummy = np.zeros((224, 224), dtype=bool)
    batch_like = make_transform_batch.__wrapped__ if hasattr(make_transform_batch, "__wrapped__") else None
    from bagbench.policy import TransformBatch, slice_params
    thetas, scales = slice_params(Mode.LIFT)
    batch = TransformBatch(slices=np.zeros((12, 224, 224, 4), dtype=np.float32),
                           thetas=thetas, scales=scales, mode=Mode.LIFT)
    # theta = 0 slice (index 6): line through center along columns
    action = decode_lift((6, 112, 112), batch, boundary, obs_dummy)
    assert action is not None
    assert abs(action.l1[0] - 112) <= 1 and abs(action.l1[1] - 62) <= 2
    assert abs(action.l2[0] - 112) <= 1 and abs(action.l2[1] - 162) <= 2
    # line far outside the ring -> None
    assert decode_lift((6, 10, 10), batch, boundary, obs_dummy) is None


def test_decode_lift_separation_limits():
    rim = circle_polygon((112, 112), 8, n=48)   # 16 px diameter ~ 0.07 m < d_min
    filled = fill_polygon(rim, (224, 224))
    boundary = boundary_from_filled(filled)
    from bagbench.policy import TransformBatch, slice_params
    thetas, scales = slice_params(Mode.LIFT)
    batch = TransformBatch(slices=np.zeros((12, 224, 224, 4), dtype=np.float32),
                           thetas=thetas, scales=scales, mode=Mode.LIFT)
    assert decode_lift((6, 112, 112), batch, boundary,
                       np.zeros((224, 224), dtype=bool)) is None


def _reward_world(positions, radii, kinds):
    w = World(SolverConfig())
    for p, r, k in zip(positions, radii, kinds):
        w.add_particles([p], mass=1.0, radius=r,
                        body_id=0 if k == BodyKind.BAG else 1, kind=k)
    return w


def test_reward_formula_direct():
    poly = np.array([[-0.1, -0.1], [-0.1, 0.1], [0.1, 0.1], [0.1, -0.1]])
    r = (3.0 / (4.0 * np.pi)) ** (1 / 3)  # unit volume per particle
    pre = _reward_world([[0.5, 0.5, 0.0]], [r], [BodyKind.RIGID])
    post = _reward_world([[0.0, 0.0, 0.0]], [r], [BodyKind.RIGID])
    # vol_pre = 1, vol_post = 0 -> reward 1
    assert rearrange_reward(pre, post, 1, poly) == pytest.approx(1.0)
    assert rearrange_reward(post, pre, 1, poly) == pytest.approx(-1.0)


def test_reward_ratio_and_penalty():
    poly = np.array([[-0.1, -0.1], [-0.1, 0.1], [0.1, 0.1], [0.1, -0.1]])
    r1 = (3.0 / (4.0 * np.pi)) ** (1 / 3)
    r04 = (0.4 * 3.0 / (4.0 * np.pi)) ** (1 / 3)
    pre = _reward_world([[0.5, 0.5, 0.0]], [r1], [BodyKind.RIGID])
    post = _reward_world([[0.5, 0.5, 0.0]], [r04], [BodyKind.RIGID])
    assert rearrange_reward(pre, post, 1, poly) == pytest.approx(0.6)
    assert rearrange_reward(post, pre, 1, poly) == pytest.approx(-0.6)
    bag_world = _reward_world([[0.5, 0.5, 0.0]], [r1], [BodyKind.BAG])
    assert rearrange_reward(bag_world, bag_world, 0, poly) == -0.5
    empty = _reward_world([[0.0, 0.0, 0.0]], [r1], [BodyKind.RIGID])
    assert rearrange_reward(empty, empty, None, poly) == 0.0


@given(st.integers(0, 2 ** 31 - 1))
def test_reward_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    poly = np.array([[-0.1, -0.1], [-0.1, 0.1], [0.1, 0.1], [0.1, -0.1]])
    n = int(rng.integers(1, 12))
    pts_a = rng.uniform(-0.4, 0.4, (n, 3))
    pts_b = rng.uniform(-0.4, 0.4, (n, 3))
    radii = rng.uniform(0.005, 0.02, n)
    wa = World(SolverConfig())
    wa.add_particles(pts_a, mass=1.0, radius=radii, body_id=1, kind=BodyKind.RIGID)
    wb = World(SolverConfig())
    wb.add_particles(pts_b, mass=1.0, radius=radii, body_id=1, kind=BodyKind.RIGID)
    fwd = rearrange_reward(wa, wb, 1, poly)
    rev = rearrange_reward(wb, wa, 1, poly)
    assert fwd == pytest.approx(-rev, abs=1e-12)
    assert -1.0 <= fwd <= 1.0


def test_heuristic_rearrange_pick_outside_opening(scene_obs):
    obs, masks = scene_obs
    rng = np.random.default_rng(4)
    for _ in range(200):
        action = heuristic_rearrange(obs, masks, rng)
        if action is None:
            break
        pr, pc = int(round(action.pick_pixel[0])), int(round(action.pick_pixel[1]))
        assert not masks.filled_opening_mask[pr, pc]
        assert obs.label_map[pr, pc] > 0
        assert action.theta in set(REARRANGE_ANGLES)
        assert action.scale_w in set(REARRANGE_SCALES)


def test_heuristic_rearrange_none_when_all_inside(scene_obs):
    obs, masks = scene_obs
    blank = obs.label_map.copy()
    import dataclasses
    obs2 = dataclasses.replace(obs, label_map=np.where(masks.filled_opening_mask,
                                                       blank, -1))
    assert heuristic_rearrange(obs2, masks, np.random.default_rng(0)) is None


def test_heuristic_lift_on_boundary(scene_obs):
    obs, masks = scene_obs
    rng = np.random.default_rng(5)
    policy = PolicyConfig()
    for _ in range(50):
        action = heuristic_lift(masks.opening_boundary_mask, rng, policy,
                                obs.pixel_scale)
        assert masks.opening_boundary_mask[action.l1]
        assert masks.opening_boundary_mask[action.l2]
        sep = action.separation_px() * obs.pixel_scale
        assert policy.d_min <= sep <= policy.d_max


def test_heuristic_lift_single_pixel_errors():
    mask = np.zeros((224, 224), dtype=bool)
    mask[100, 100] = True
    with pytest.raises(LiftInfeasibleError):
        heuristic_lift(mask, np.random.default_rng(0))


def test_max_width_on_ellipse():
    rr, cc = np.meshgrid(np.arange(224), np.arange(224), indexing="ij")
    ellipse = (((rr - 112) / 60.0) ** 2 + ((cc - 112) / 30.0) ** 2) <= 1.0
    action = max_width_lift(ellipse)
    ends = sorted([action.l1, action.l2])
    assert abs(ends[0][0] - 52) <= 1 and abs(ends[1][0] - 172) <= 1
    assert abs(ends[0][1] - 112) <= 2 and abs(ends[1][1] - 112) <= 2


def test_heuristic_vf_scores_only_outside_objects(scene_batches):
    rbatch, lbatch, obs, masks = scene_batches
    vals = HeuristicRearrangeVF().evaluate(rbatch).values
    base = rbatch.slices[rbatch.identity_index()]
    identity_vals = vals[rbatch.identity_index()]
    nonzero = identity_vals > 0
    opening = base[..., 3] > 0.5
    rgbmax = base[..., :3].max(axis=2)
    assert not (nonzero & opening).any()
    assert bool(np.all(rgbmax[nonzero] >= 0.45))
    assert np.isfinite(vals).all()


def test_heuristic_lift_vf_below_threshold(scene_batches):
    _, lbatch, _, _ = scene_batches
    vals = HeuristicLiftVF().evaluate(lbatch).values
    assert vals.max() < 0.95
    assert (vals >= 0).all()


def test_random_vf_seed_deterministic(scene_batches):
    rbatch, _, _, _ = scene_batches
    a = RandomVF(9).evaluate(rbatch).values
    b = RandomVF(9).evaluate(rbatch).values
    assert np.array_equal(a, b)
    c = RandomVF(9)
    first = c.evaluate(rbatch).values
    second = c.evaluate(rbatch).values
    assert not np.array_equal(first, second)


def test_fused_threshold_boundaries(scene_obs):
    obs, masks = scene_obs
    r_vf = HeuristicRearrangeVF()
    l_vf = HeuristicLiftVF()
    low = PolicyConfig(lift_threshold=float("-inf"))
    d = fused_step(obs, masks, r_vf, l_vf, EpisodeState(), low)
    assert d.kind is DecisionKind.LIFT
    high = PolicyConfig(lift_threshold=float("inf"))
    d = fused_step(obs, masks, r_vf, l_vf, EpisodeState(), high)
    assert d.kind in (DecisionKind.REARRANGE, DecisionKind.LIFT_AT_BEST)
    assert d.kind is not DecisionKind.LIFT


def test_fused_step_budget_forces_lift(scene_obs):
    obs, masks = scene_obs
    state = EpisodeState(step_count=10)
    d = fused_step(obs, masks, HeuristicRearrangeVF(), HeuristicLiftVF(), state)
    assert d.kind is DecisionKind.LIFT_AT_BEST
    assert d.lift is not None


def test_fused_step_off_object_argmax_lifts(scene_obs):
    obs, masks = scene_obs
    d = fused_step(obs, masks, ConstantVF(0.5), HeuristicLiftVF(), EpisodeState())
    # constant rearrange map -> argmax at pixel (0,0) of slice 0: background
    assert d.kind is DecisionKind.LIFT_AT_BEST
