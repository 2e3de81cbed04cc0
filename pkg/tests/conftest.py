import hypothesis
import numpy as np
import pytest

from bagbench.assets import build_bag, build_cloth, build_rigid, sample_task, build_scene
from bagbench.config import BenchConfig, RenderConfig, SolverConfig
from bagbench.physics import BodyKind, World
from bagbench.render import ground_truth_opening, render

hypothesis.settings.register_profile(
    "bagbench", max_examples=30, deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow])
hypothesis.settings.load_profile("bagbench")


def make_cloth_world(size=0.4, z=0.3, stiff=0.9, solver=None) -> World:
    w = World(solver or SolverConfig())
    build_cloth(w, 1, size, size, stiff, (0.8, 0.3, 0.3), (0.0, 0.0), 0.0, z)
    return w


@pytest.fixture(scope="session")
def small_scene():
    """One settled 1r1c scene shared by read-only tests."""
    task = sample_task(11, 1, 1)
    return build_scene(task)


@pytest.fixture(scope="session")
def scene_obs(small_scene):
    cfg = RenderConfig()
    obs = render(small_scene.world, cfg)
    masks = ground_truth_opening(small_scene.world, small_scene.bag, cfg, obs)
    obs.filled_opening_mask = masks.filled_opening_mask
    return obs, masks


@pytest.fixture()
def bench_config():
    return BenchConfig()
