import numpy as np
import pytest
from hypothesis import given, strategies as st

from bagbench.config import SolverConfig
from bagbench.physics import (BodyKind, InvalidGraspError, SimulationDivergedError,
                              World, nearest_particle)
from tests.conftest import make_cloth_world


def two_particle_world(**overrides):
    cfg = SolverConfig(gravity=(0, 0, 0), substeps=1, iterations=1, **overrides)
    w = World(cfg)
    w.add_particles([[0.0, 0.0, 1.0], [2.0, 0.0, 1.0]], mass=1.0, radius=0.01,
                    body_id=0, kind=BodyKind.RIGID)
    w.add_distance_constraints([0], [1], [1.0], [1.0])
    return w


def test_symmetric_projection_moves_both_halfway():
    w = two_particle_world()
    w.step(0.01)
    assert w.pos[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert w.pos[1, 0] == pytest.approx(1.5, abs=1e-12)


def test_free_fall_matches_semi_implicit_euler():
    cfg = SolverConfig()
    w = World(cfg)
    w.add_particles([[0.0, 0.0, 1.0]], mass=1.0, radius=0.01, body_id=0,
                    kind=BodyKind.RIGID)
    w.step(0.01)
    # independent oracle: hand-integrated semi-implicit Euler per substep
    z, v = 1.0, 0.0
    h = 0.01 / cfg.substeps
    for _ in range(cfg.substeps):
        v += -9.81 * h
        z += v * h
    assert w.pos[0, 2] == pytest.approx(z, abs=1e-14)
    assert 1.0 - w.pos[0, 2] == pytest.approx(9.81 * 0.01 ** 2, rel=0.5)


def test_ground_contact_keeps_particle_above_tolerance():
    w = World(SolverConfig())
    w.add_particles([[0.0, 0.0, 0.0]], mass=1.0, radius=0.01, body_id=0,
                    kind=BodyKind.RIGID)
    for _ in range(100):
        w.step()
        assert w.pos[0, 2] >= -w.solver.contact_tolerance


def test_cloth_drop_settles_on_floor():
    w = make_cloth_world(z=0.3)
    w, equilibrated = w.settle(3.0)
    assert equilibrated
    assert w.pos[:, 2].min() >= -w.solver.contact_tolerance
    assert w.pos[:, 2].max() <= 0.05


def test_cloth_settle_residual_within_two_percent():
    w = make_cloth_world(z=0.2)
    w, equilibrated = w.settle(3.0)
    assert equilibrated
    lengths = np.linalg.norm(w.pos[w.dist_ia] - w.pos[w.dist_ib], axis=1)
    assert (np.abs(lengths - w.dist_rest) / w.dist_rest).max() <= 0.02


def test_rigid_cube_rests_at_half_edge():
    w = World(SolverConfig())
    s = 0.016
    pts = np.stack(np.meshgrid(*[np.arange(4) * s] * 3, indexing="ij"),
                   axis=-1).reshape(-1, 3).astype(float)
    pts[:, 2] += 0.1
    idx = w.add_particles(pts, mass=0.3 / 64, radius=0.6 * s, body_id=0,
                          kind=BodyKind.RIGID)
    w.add_rigid_cluster(idx)
    w, equilibrated = w.settle(2.0)
    assert equilibrated
    edge = 3 * s
    assert w.pos[:, 2].mean() == pytest.approx(edge / 2, rel=0.10)


def test_rigid_cluster_preserves_pairwise_distances():
    w = World(SolverConfig())
    s = 0.016
    pts = np.stack(np.meshgrid(*[np.arange(3) * s] * 3, indexing="ij"),
                   axis=-1).reshape(-1, 3).astype(float)
    pts[:, 2] += 0.25
    rest = pts.copy()
    idx = w.add_particles(pts, mass=0.005, radius=0.6 * s, body_id=0,
                          kind=BodyKind.RIGID)
    w.add_rigid_cluster(idx)
    w.settle(2.0)
    # drag it around to exercise rotation extraction under load
    w.attach(0)
    for target in ([0.1, 0.0, 0.2], [0.1, 0.1, 0.05], [-0.05, 0.0, 0.1]):
        start = w.attach_target[0].copy()
        for a in np.linspace(0, 1, 40):
            w.move_attachment(0, start * (1 - a) + np.asarray(target) * a)
            w.step()
    w.detach(0)
    w.settle(1.0)
    d_rest = np.linalg.norm(rest[None, 0] - rest, axis=1)[1:]
    d_now = np.linalg.norm(w.pos[idx[0]] - w.pos[idx], axis=1)[1:]
    assert (np.abs(d_now - d_rest) / d_rest).max() <= 0.01


def test_settled_state_returns_after_one_check():
    w = make_cloth_world(z=0.05)
    w.settle(3.0)
    w2, equilibrated = w.settle(0.05)
    assert equilibrated


def test_momentum_conserved_without_constraints():
    rng = np.random.default_rng(3)
    w = World(SolverConfig(gravity=(0, 0, 0)))
    w.add_particles(rng.normal(size=(40, 3)) + [0, 0, 10], mass=rng.uniform(0.5, 2.0, 40),
                    radius=0.001, body_id=0, kind=BodyKind.CLOTH)
    w.vel = rng.normal(size=(40, 3)) * 0.05
    p0 = (w.mass[:, None] * w.vel).sum(axis=0)
    for _ in range(10):
        w.step()
        p1 = (w.mass[:, None] * w.vel).sum(axis=0)
        assert np.abs(p1 - p0).max() <= 1e-9 * np.abs(p0).max()
        p0 = p1


def test_step_is_bit_deterministic():
    w = make_cloth_world(z=0.1)
    w.settle(0.3)
    a, b = w.copy(), w.copy()
    for _ in range(20):
        a.step()
        b.step()
    assert a.checksum() == b.checksum()
    assert np.array_equal(a.pos, b.pos)
    assert np.array_equal(a.vel, b.vel)


def test_attach_tracks_moving_target_within_1mm():
    w = make_cloth_world(z=0.0)
    w.settle(1.0)
    w.attach(0)
    start = w.pos[0].copy()
    target = start + [0.0, 0.0, 0.1]
    for s in range(1, 51):
        w.move_attachment(0, start + (target - start) * (s / 50))
        w.step()
    assert abs(w.pos[0, 2] - target[2]) <= 1e-3


def test_detach_restores_dynamics():
    w = World(SolverConfig())
    w.add_particles([[0.0, 0.0, 0.5]], mass=1.0, radius=0.01, body_id=0,
                    kind=BodyKind.RIGID)
    w.attach(0)
    for _ in range(10):
        w.step()
    assert w.pos[0, 2] == pytest.approx(0.5, abs=1e-9)
    w.detach(0)
    for _ in range(20):
        w.step()
    assert w.pos[0, 2] < 0.5 - 1e-3


def test_attach_errors():
    w = two_particle_world()
    with pytest.raises(InvalidGraspError):
        w.attach(5)
    w.attach(0)
    with pytest.raises(InvalidGraspError):
        w.attach(0)
    w.detach(0)
    with pytest.raises(InvalidGraspError):
        w.detach(0)


def test_divergence_reports_particle():
    w = two_particle_world()
    w.pos[1, 0] = np.nan
    with pytest.raises(SimulationDivergedError, match="particle 1"):
        w.step(0.01)


def test_nearest_particle_exact_and_radius():
    w = two_particle_world()
    assert nearest_particle(w, [0.0, 0.0, 1.0], 0.01) == 0
    assert nearest_particle(w, [10.0, 0.0, 0.0], 0.5) is None
    # tie between 0 and 1 breaks to the lower index
    assert nearest_particle(w, [1.0, 0.0, 1.0], 5.0) == 0


def test_nearest_particle_kind_filter():
    w = World(SolverConfig())
    w.add_particles([[0.0, 0.0, 0.0]], mass=1.0, radius=0.01, body_id=0,
                    kind=BodyKind.BAG)
    w.add_particles([[0.02, 0.0, 0.0]], mass=1.0, radius=0.01, body_id=1,
                    kind=BodyKind.CLOTH)
    assert nearest_particle(w, [0.0, 0.0, 0.0], 0.1) == 0
    assert nearest_particle(w, [0.0, 0.0, 0.0], 0.1, BodyKind.CLOTH) == 1
    with pytest.raises(ValueError):
        nearest_particle(w, [0, 0, 0], 0.0)


def test_constraint_validation():
    w = two_particle_world()
    with pytest.raises(ValueError):
        w.add_distance_constraints([0], [0], [1.0], [1.0])
    with pytest.raises(ValueError):
        w.add_distance_constraints([0], [1], [0.0], [1.0])
    with pytest.raises(ValueError):
        w.add_distance_constraints([0], [1], [1.0], [1.5])
    with pytest.raises(ValueError):
        w.add_particles([[0, 0, 0]], mass=1.0, radius=0.0, body_id=0, kind=BodyKind.RIGID)


def test_no_penetration_in_contact_pile():
    rng = np.random.default_rng(5)
    w = World(SolverConfig())
    pts = rng.uniform(-0.03, 0.03, size=(60, 3))
    pts[:, 2] = rng.uniform(0.02, 0.15, size=60)
    w.add_particles(pts, mass=0.002, radius=0.008, body_id=0, kind=BodyKind.RIGID)
    for _ in range(150):
        w.step()
        assert w.pos[:, 2].min() >= -w.solver.contact_tolerance


@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_momentum_property_random_clouds(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    w = World(SolverConfig(gravity=(0, 0, 0)))
    w.add_particles(rng.normal(size=(n, 3)) * 5 + [0, 0, 50],
                    mass=rng.uniform(0.1, 3.0, n), radius=1e-4,
                    body_id=0, kind=BodyKind.CLOTH)
    w.vel = rng.normal(size=(n, 3)) * 0.1
    p0 = (w.mass[:, None] * w.vel).sum(axis=0)
    w.step()
    p1 = (w.mass[:, None] * w.vel).sum(axis=0)
    scale = max(np.abs(p0).max(), 1e-12)
    assert np.abs(p1 - p0).max() <= 1e-9 * scale
