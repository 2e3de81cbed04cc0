import numpy as np
import pytest

from bagbench.assets import (ALLOWED_MIXES, BAG_DIM_RANGE, CLOTH_DIM_RANGE,
                             RIGID_DIM_RANGE, STIFFNESS_RANGE, TaskSpec,
                             build_scene, dump_task, parse_task,
                             point_in_polygon, sample_task)
from bagbench.masks import polygon_is_simple


def test_sample_ranges_over_many_seeds():
    for seed in range(250):
        task = sample_task(seed, 2, 3)
        assert BAG_DIM_RANGE[0] <= task.bag_dim <= BAG_DIM_RANGE[1]
        assert STIFFNESS_RANGE[0] <= task.bag_stiffness <= STIFFNESS_RANGE[1]
        for rp in task.rigids:
            assert all(RIGID_DIM_RANGE[0] <= d <= RIGID_DIM_RANGE[1] for d in rp.dims)
            h, s, v = rp.hsv
            assert 0.0 <= h <= 1.0 and 0.0 <= s <= 1.0 and 0.5 <= v <= 1.0
        for cp in task.cloths:
            assert CLOTH_DIM_RANGE[0] <= cp.width <= CLOTH_DIM_RANGE[1]
            assert CLOTH_DIM_RANGE[0] <= cp.height <= CLOTH_DIM_RANGE[1]
            assert cp.width >= task.bag_dim and cp.height >= task.bag_dim
            assert 0.5 <= cp.hsv[2] <= 1.0


def test_sampling_mean_near_midpoint():
    dims = [sample_task(seed, 1, 1).bag_dim for seed in range(2000)]
    mid = sum(BAG_DIM_RANGE) / 2
    assert abs(np.mean(dims) - mid) <= 0.02 * mid


def test_same_seed_identical_task():
    a = sample_task(123, 2, 2)
    b = sample_task(123, 2, 2)
    assert dump_task(a) == dump_task(b)


def test_invalid_mix_rejected():
    with pytest.raises(ValueError):
        sample_task(1, 4, 4)
    with pytest.raises(ValueError):
        sample_task(1, 0, 2)
    for mix in ALLOWED_MIXES:
        sample_task(1, *mix)


def test_task_file_round_trip_exact():
    task = sample_task(77, 3, 2)
    parsed = parse_task(dump_task(task))
    assert parsed == task


def test_parse_rejects_bad_version():
    text = dump_task(sample_task(1, 1, 1)).replace("version = 1", "version = 9")
    with pytest.raises(ValueError):
        parse_task(text)


def test_point_in_polygon_square():
    square = np.array([[0.0, 0.0], [0.0, 2.0], [2.0, 2.0], [2.0, 0.0]])
    pts = np.array([[1.0, 1.0], [3.0, 1.0], [-0.5, 0.5], [1.999, 1.999]])
    inside = point_in_polygon(pts, square)
    assert inside.tolist() == [True, False, False, True]


def test_build_scene_structure(small_scene):
    scene = small_scene
    world = scene.world
    task = scene.task
    assert len(world.bodies()) == task.n_rigid + task.n_cloth + 1
    rim_z = world.pos[scene.bag.rim_indices][:, 2]
    assert rim_z.min() >= 0.5 * scene.bag.wall_height
    assert rim_z.max() <= 1.1 * scene.bag.wall_height
    assert world.pos[:, 2].min() >= -world.solver.contact_tolerance
    rim_poly = world.pos[scene.bag.rim_indices][:, :2]
    assert polygon_is_simple(rim_poly)
    # no object may sit entirely inside the opening
    for asset in scene.rigids + scene.cloths:
        xy = world.pos[asset.indices][:, :2]
        assert not bool(np.all(point_in_polygon(xy, rim_poly)))


def test_build_scene_deterministic():
    task = sample_task(21, 1, 2)
    a = build_scene(task)
    b = build_scene(task)
    assert a.world.checksum() == b.world.checksum()
