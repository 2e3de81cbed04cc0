"""Parametric bag, cloth and rigid-object assets plus task sampling.

Tasks are fully determined by a ``TaskSpec``: sampling draws every random
quantity (dimensions, stiffness, colors, placements) from one seeded stream
in a fixed order, and scene construction replays pick-and-drop initialization
deterministically from the spec.
"""
from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .config import SolverConfig
from .physics import BodyKind, World

# Allowed (n_rigid, n_cloth) mixes: 2 to 5 objects total.
ALLOWED_MIXES = ((1, 1), (1, 2), (2, 1), (1, 3), (2, 2), (3, 1), (2, 3), (3, 2))
MIXES_BY_COUNT = {
    2: ((1, 1),),
    3: ((1, 2), (2, 1)),
    4: ((1, 3), (2, 2), (3, 1)),
    5: ((2, 3), (3, 2)),
}

BAG_DIM_RANGE = (0.25, 0.40)
CLOTH_DIM_RANGE = (0.20, 0.60)
STIFFNESS_RANGE = (0.85, 0.95)
RIGID_DIM_RANGE = (0.04, 0.10)
RIGID_SHAPES = ("box", "sphere", "cylinder", "ellipsoid")
RIGID_DENSITY = 400.0      # kg/m^3
CLOTH_GRID = 25            # particles per side, fixed resolution
MIN_PARTICLE_MASS = 1e-3   # keeps the settle energy test meaningful at 1e-6 J
CLOTH_PARTICLE_MASS = 5e-4

WORKSPACE_HALF = 0.5
RIGID_PLACE_HALF = 0.40
CLOTH_DROP_HALF = 0.28

BAG_BODY = 0


class TaskInfeasibleError(RuntimeError):
    pass


@dataclass
class RigidParams:
    shape: str
    dims: tuple[float, float, float]
    hsv: tuple[float, float, float]
    place: tuple[float, float, float]        # x, y, yaw


@dataclass
class ClothParams:
    width: float
    height: float
    stiffness: float
    hsv: tuple[float, float, float]
    spawn: tuple[float, float, float]        # x, y, yaw
    grasp_u: float                           # fraction mapped to a particle index
    drop: tuple[float, float, float]         # x, y, drop height


@dataclass
class TaskSpec:
    seed: int
    n_rigid: int
    n_cloth: int
    bag_dim: float
    bag_stiffness: float
    rigids: list[RigidParams] = field(default_factory=list)
    cloths: list[ClothParams] = field(default_factory=list)
    version: int = 1

    @property
    def n_objects(self) -> int:
        return self.n_rigid + self.n_cloth


@dataclass
class BagAsset:
    body_id: int
    dim: float                 # opening diameter
    radius: float
    wall_height: float
    indices: np.ndarray
    rim_indices: np.ndarray    # ordered ring around the opening


@dataclass
class ClothAsset:
    body_id: int
    width: float
    height: float
    indices: np.ndarray


@dataclass
class RigidAsset:
    body_id: int
    shape: str
    dims: tuple[float, float, float]
    indices: np.ndarray


@dataclass
class Scene:
    world: World
    task: TaskSpec
    bag: BagAsset
    rigids: list[RigidAsset]
    cloths: list[ClothAsset]

    @property
    def object_bodies(self) -> list[int]:
        return [a.body_id for a in self.rigids] + [a.body_id for a in self.cloths]


# ---------------------------------------------------------------------------
# sampling


def sample_task(seed: int, n_rigid: int, n_cloth: int) -> TaskSpec:
    """Sample one benchmark task; deterministic in the seed.

    Draw order is fixed: bag, then each rigid, then each cloth."""
    if (n_rigid, n_cloth) not in ALLOWED_MIXES:
        raise ValueError(f"unsupported object mix: ({n_rigid}, {n_cloth})")
    rng = np.random.default_rng(seed)
    bag_dim = float(rng.uniform(*BAG_DIM_RANGE))
    bag_stiff = float(rng.uniform(*STIFFNESS_RANGE))
    bag_r = bag_dim / 2
    rigids: list[RigidParams] = []
    placed: list[tuple[float, float, float]] = []  # x, y, clearance radius
    for _ in range(n_rigid):
        dims = tuple(float(v) for v in rng.uniform(*RIGID_DIM_RANGE, size=3))
        shape = RIGID_SHAPES[int(rng.integers(len(RIGID_SHAPES)))]
        hsv = _sample_hsv(rng)
        half_diag = 0.5 * math.sqrt(dims[0] ** 2 + dims[1] ** 2)
        x, y = _place_outside_bag(rng, bag_r, half_diag, placed)
        yaw = float(rng.uniform(0.0, 2.0 * math.pi))
        placed.append((x, y, half_diag))
        rigids.append(RigidParams(shape=shape, dims=dims, hsv=hsv, place=(x, y, yaw)))
    cloths: list[ClothParams] = []
    for _ in range(n_cloth):
        w = float(rng.uniform(*CLOTH_DIM_RANGE))
        h = float(rng.uniform(*CLOTH_DIM_RANGE))
        while w < bag_dim or h < bag_dim:  # cloths must exceed the opening
            w = float(rng.uniform(*CLOTH_DIM_RANGE))
            h = float(rng.uniform(*CLOTH_DIM_RANGE))
        stiff = float(rng.uniform(*STIFFNESS_RANGE))
        hsv = _sample_hsv(rng)
        spawn = (float(rng.uniform(-0.2, 0.2)), float(rng.uniform(-0.2, 0.2)),
                 float(rng.uniform(0.0, 2.0 * math.pi)))
        grasp_u = float(rng.random())
        drop = (float(rng.uniform(-CLOTH_DROP_HALF, CLOTH_DROP_HALF)),
                float(rng.uniform(-CLOTH_DROP_HALF, CLOTH_DROP_HALF)),
                float(rng.uniform(0.20, 0.35)))
        cloths.append(ClothParams(width=w, height=h, stiffness=stiff, hsv=hsv,
                                  spawn=spawn, grasp_u=grasp_u, drop=drop))
    return TaskSpec(seed=int(seed), n_rigid=n_rigid, n_cloth=n_cloth,
                    bag_dim=bag_dim, bag_stiffness=bag_stiff,
                    rigids=rigids, cloths=cloths)


def _sample_hsv(rng) -> tuple[float, float, float]:
    return (float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)),
            float(rng.uniform(0.5, 1.0)))


def _place_outside_bag(rng, bag_r, clearance, placed, tries=200):
    for _ in range(tries):
        x = float(rng.uniform(-RIGID_PLACE_HALF, RIGID_PLACE_HALF))
        y = float(rng.uniform(-RIGID_PLACE_HALF, RIGID_PLACE_HALF))
        if math.hypot(x, y) < bag_r + clearance + 0.03:
            continue
        if any(math.hypot(x - px, y - py) < clearance + pc + 0.02 for px, py, pc in placed):
            continue
        return x, y
    raise TaskInfeasibleError("could not place rigid object outside the bag")


# ---------------------------------------------------------------------------
# meshing


def _rotz(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def build_bag(world: World, dim: float, stiffness: float, rgb) -> BagAsset:
    """Radially symmetric pouch: Delaunay-triangulated disc bottom, a quad
    lattice wall, an open reinforced rim and interior stay constraints that
    keep the wall standing (stays are constraints, not particles, so objects
    pass them freely)."""
    radius = dim / 2
    wall_height = 0.30 * dim
    segments = max(24, int(round(2.0 * math.pi * radius / 0.028)))
    spacing = 2.0 * math.pi * radius / segments
    n_disc_rings = max(4, int(round(radius / spacing)))
    n_wall_rings = max(3, int(round(wall_height / spacing)))

    pts = [(0.0, 0.0)]
    ring_of = [0]
    for k in range(1, n_disc_rings + 1):
        r_k = radius * k / n_disc_rings
        n_k = max(6, int(round(segments * k / n_disc_rings)))
        if k == n_disc_rings:
            n_k = segments
        for j in range(n_k):
            ang = 2.0 * math.pi * j / n_k
            pts.append((r_k * math.cos(ang), r_k * math.sin(ang)))
            ring_of.append(k)
    disc = np.array(pts)
    n_disc = disc.shape[0]
    outer_start = n_disc - segments

    wall = []
    for k in range(1, n_wall_rings + 1):
        z = wall_height * k / n_wall_rings
        for j in range(segments):
            ang = 2.0 * math.pi * j / segments
            wall.append((radius * math.cos(ang), radius * math.sin(ang), z))
    positions = np.vstack([
        np.column_stack([disc, np.zeros(n_disc)]),
        np.array(wall),
    ])

    tri = Delaunay(disc)
    edges = set()
    for simplex in tri.simplices:
        for a, b in ((0, 1), (1, 2), (0, 2)):
            i, j = int(simplex[a]), int(simplex[b])
            edges.add((min(i, j), max(i, j)))
    ia = [e[0] for e in sorted(edges)]
    ib = [e[1] for e in sorted(edges)]

    def wall_idx(k, j):  # k = 0 is the disc outer ring
        if k == 0:
            return outer_start + j
        return n_disc + (k - 1) * segments + j

    hoops_a, hoops_b = [], []
    for k in range(1, n_wall_rings + 1):
        for j in range(segments):
            hoops_a.append(wall_idx(k, j))
            hoops_b.append(wall_idx(k, (j + 1) % segments))
    vert_a, vert_b, diag_a, diag_b = [], [], [], []
    for k in range(n_wall_rings):
        for j in range(segments):
            vert_a.append(wall_idx(k, j))
            vert_b.append(wall_idx(k + 1, j))
            diag_a.append(wall_idx(k, j))
            diag_b.append(wall_idx(k + 1, (j + 1) % segments))
            diag_a.append(wall_idx(k, (j + 1) % segments))
            diag_b.append(wall_idx(k + 1, j))
    rim = np.array([wall_idx(n_wall_rings, j) for j in range(segments)], dtype=np.int64)
    # hem: second-neighbor ring around the opening keeps the rim from curling
    hem_a = [wall_idx(n_wall_rings, j) for j in range(segments)]
    hem_b = [wall_idx(n_wall_rings, (j + 2) % segments) for j in range(segments)]
    bend_a, bend_b = [], []
    for k in range(n_wall_rings - 1):
        for j in range(segments):
            bend_a.append(wall_idx(k, j))
            bend_b.append(wall_idx(k + 2, j))
    # stays: brace each rim vertex to an interior bottom-ring anchor and to
    # the bottom center. Two anchors plus the rim hoop triangulate the wall
    # so it neither buckles under a dropped cloth nor tips outward.
    stay_a, stay_b = [], []
    anchor_ring = max(1, n_disc_rings - 2)
    ring_start = 1 + sum(max(6, int(round(segments * k / n_disc_rings)))
                         for k in range(1, anchor_ring))
    n_anchor = max(6, int(round(segments * anchor_ring / n_disc_rings)))
    mid_ring = max(1, n_wall_rings // 2)
    for j in range(segments):
        anchor = ring_start + int(round(j * n_anchor / segments)) % n_anchor
        stay_a.append(wall_idx(n_wall_rings, j))
        stay_b.append(anchor)
        stay_a.append(wall_idx(n_wall_rings, j))
        stay_b.append(0)  # bottom center
        stay_a.append(wall_idx(mid_ring, j))
        stay_b.append(anchor)

    local_edges = (list(zip(ia, ib)) + list(zip(hoops_a, hoops_b))
                   + list(zip(vert_a, vert_b)) + list(zip(diag_a, diag_b)))
    min_edge = np.full(positions.shape[0], np.inf)
    for a, b in local_edges:
        d = float(np.linalg.norm(positions[a] - positions[b]))
        min_edge[a] = min(min_edge[a], d)
        min_edge[b] = min(min_edge[b], d)
    radii = np.clip(0.45 * min_edge, 0.004, 0.45 * spacing)

    mass = max(MIN_PARTICLE_MASS, 0.30 / positions.shape[0])
    idx = world.add_particles(positions, mass=mass, radius=radii,
                              body_id=BAG_BODY, kind=BodyKind.BAG)
    world.body_rgb[BAG_BODY] = tuple(rgb)

    def glob(local):
        return idx[np.asarray(local, dtype=np.int64)]

    # stays are deliberately soft: they hold the wall up against slow loads
    # but let the bag cinch and damp when lifted and shaken
    for (aa, bb), k in (((ia, ib), stiffness),
                        ((hoops_a, hoops_b), stiffness),
                        ((vert_a, vert_b), stiffness),
                        ((diag_a, diag_b), stiffness),
                        ((hem_a, hem_b), stiffness),
                        ((stay_a, stay_b), 0.35 * stiffness)):
        aa = glob(aa)
        bb = glob(bb)
        rest = np.linalg.norm(world.pos[aa] - world.pos[bb], axis=1)
        world.add_distance_constraints(aa, bb, rest, k)
    if bend_a:
        aa = glob(bend_a)
        bb = glob(bend_b)
        rest = np.linalg.norm(world.pos[aa] - world.pos[bb], axis=1)
        world.add_distance_constraints(aa, bb, rest, min(1.0, 0.5 * stiffness), bending=True)

    return BagAsset(body_id=BAG_BODY, dim=dim, radius=radius,
                    wall_height=wall_height, indices=idx, rim_indices=glob(rim))


def build_cloth(world: World, body_id: int, width: float, height: float,
                stiffness: float, rgb, center, yaw: float, z: float) -> ClothAsset:
    n = CLOTH_GRID
    xs = np.linspace(-width / 2, width / 2, n)
    ys = np.linspace(-height / 2, height / 2, n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), np.zeros(n * n)], axis=1)
    pts = pts @ _rotz(yaw).T
    pts[:, 0] += center[0]
    pts[:, 1] += center[1]
    pts[:, 2] += z
    sx = width / (n - 1)
    sy = height / (n - 1)
    sd = math.hypot(sx, sy)
    r = 0.45 * min(sx, sy)
    idx = world.add_particles(pts, mass=CLOTH_PARTICLE_MASS, radius=r,
                              body_id=body_id, kind=BodyKind.CLOTH)
    world.body_rgb[body_id] = tuple(rgb)
    ids = idx.reshape(n, n)
    ia, ib, rest = [], [], []
    for i in range(n):
        for j in range(n):
            if i + 1 < n:
                ia.append(ids[i, j]); ib.append(ids[i + 1, j]); rest.append(sx)
            if j + 1 < n:
                ia.append(ids[i, j]); ib.append(ids[i, j + 1]); rest.append(sy)
            if i + 1 < n and j + 1 < n:
                # one shear diagonal per quad, alternating direction
                if (i + j) % 2 == 0:
                    ia.append(ids[i, j]); ib.append(ids[i + 1, j + 1])
                else:
                    ia.append(ids[i + 1, j]); ib.append(ids[i, j + 1])
                rest.append(sd)
    world.add_distance_constraints(ia, ib, rest, stiffness)
    ia2, ib2, rest2 = [], [], []
    for i in range(n):
        for j in range(n):
            if i + 2 < n:
                ia2.append(ids[i, j]); ib2.append(ids[i + 2, j]); rest2.append(2 * sx)
            if j + 2 < n:
                ia2.append(ids[i, j]); ib2.append(ids[i, j + 2]); rest2.append(2 * sy)
    world.add_distance_constraints(ia2, ib2, rest2, 0.1, bending=True)
    return ClothAsset(body_id=body_id, width=width, height=height, indices=idx)


def _rigid_lattice(shape: str, dims) -> np.ndarray:
    dx, dy, dz = dims
    min_dim = min(dims)
    max_dim = max(dims)
    spacing = max(min_dim / 3.0, max_dim / 6.0)
    counts = [max(2, int(round(d / spacing)) + 1) for d in dims]
    axes = [np.linspace(-d / 2, d / 2, c) for d, c in zip(dims, counts)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    if shape == "box":
        keep = np.ones(pts.shape[0], dtype=bool)
    elif shape == "sphere":
        # the first sampled dimension is the diameter on all axes
        rr = dx / 2
        axes = [np.linspace(-rr, rr, counts[0])] * 3
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        keep = np.einsum("ij,ij->i", pts, pts) <= rr * rr * 1.0001
    elif shape == "cylinder":
        rr = dx / 2
        keep = (pts[:, 0] ** 2 + pts[:, 1] ** 2) <= rr * rr * 1.0001
    elif shape == "ellipsoid":
        norm = (pts[:, 0] / (dx / 2)) ** 2 + (pts[:, 1] / (dy / 2)) ** 2 + (pts[:, 2] / (dz / 2)) ** 2
        keep = norm <= 1.0001
    else:
        raise ValueError(f"unknown rigid shape: {shape}")
    pts = pts[keep]
    if pts.shape[0] < 4 or np.linalg.matrix_rank(pts - pts.mean(axis=0)) < 3:
        # fall back to the degenerate-safe box lattice
        axes = [np.linspace(-d / 2, d / 2, 3) for d in dims]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    return pts, spacing


def _shape_volume(shape: str, dims) -> float:
    dx, dy, dz = dims
    if shape == "box":
        return dx * dy * dz
    if shape == "sphere":
        return 4.0 / 3.0 * math.pi * (dx / 2) ** 3
    if shape == "cylinder":
        return math.pi * (dx / 2) ** 2 * dz
    if shape == "ellipsoid":
        return 4.0 / 3.0 * math.pi * (dx / 2) * (dy / 2) * (dz / 2)
    raise ValueError(f"unknown rigid shape: {shape}")


def build_rigid(world: World, body_id: int, shape: str, dims, rgb,
                center, yaw: float) -> RigidAsset:
    pts, spacing = _rigid_lattice(shape, dims)
    pts = pts @ _rotz(yaw).T
    z0 = -pts[:, 2].min() + 0.45 * spacing + 0.002
    pts[:, 0] += center[0]
    pts[:, 1] += center[1]
    pts[:, 2] += z0
    mass = max(MIN_PARTICLE_MASS, RIGID_DENSITY * _shape_volume(shape, dims) / pts.shape[0])
    idx = world.add_particles(pts, mass=mass, radius=0.45 * spacing,
                              body_id=body_id, kind=BodyKind.RIGID)
    world.body_rgb[body_id] = tuple(rgb)
    world.add_rigid_cluster(idx)
    return RigidAsset(body_id=body_id, shape=shape, dims=tuple(dims), indices=idx)


# ---------------------------------------------------------------------------
# scene construction


def point_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test, vectorized over points."""
    points = np.atleast_2d(points)
    x = points[:, 0]
    y = points[:, 1]
    inside = np.zeros(points.shape[0], dtype=bool)
    px = poly[:, 0]
    py = poly[:, 1]
    n = poly.shape[0]
    for i in range(n):
        x1, y1 = px[i], py[i]
        x2, y2 = px[(i + 1) % n], py[(i + 1) % n]
        crosses = ((y1 > y) != (y2 > y))
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def _move_grasp(world: World, particle: int, target, speed: float = 1.5):
    start = world.attach_target[np.flatnonzero(world.attach_idx == particle)[0]].copy()
    target = np.asarray(target, dtype=float)
    dist = float(np.linalg.norm(target - start))
    steps = max(1, int(math.ceil(dist / (speed * world.solver.dt))))
    for s in range(1, steps + 1):
        world.move_attachment(particle, start + (target - start) * (s / steps))
        world.step()


def build_scene(task: TaskSpec, solver: SolverConfig | None = None,
                bag_rgb=(0.35, 0.28, 0.18)) -> Scene:
    """Construct and settle the full initial scene for a task.

    The bag settles opening-up first; rigids drop at their sampled spots;
    cloths are picked at a random particle, carried to their sampled pose and
    released. Objects that end up entirely inside the opening are re-dropped
    (at most 10 retries each) using a retry stream derived from the seed.
    """
    world = World(solver or SolverConfig())
    bag = build_bag(world, task.bag_dim, task.bag_stiffness, bag_rgb)
    world.settle(0.8)
    rim_poly = world.pos[bag.rim_indices][:, :2].copy()
    bag_rest = world.pos[bag.indices].copy()

    retry_rng = np.random.default_rng(np.random.SeedSequence([task.seed, 0xB1D]))

    rigids: list[RigidAsset] = []
    for i, rp in enumerate(task.rigids):
        body = 1 + i
        rigids.append(build_rigid(world, body, rp.shape, rp.dims,
                                  _hsv_to_rgb(rp.hsv), rp.place[:2], rp.place[2]))
    world.settle(0.5)

    cloths: list[ClothAsset] = []
    rim_ok = 0.5 * bag.wall_height

    def rim_healthy() -> bool:
        rim_z = world.pos[bag.rim_indices][:, 2]
        # crushed rims and rims riding up on a cloth fold both break the
        # opening-up premise
        return (float(rim_z.min()) >= rim_ok
                and float(rim_z.max()) <= 1.08 * bag.wall_height)

    def drop_cloth_checked(cloth: ClothAsset, grasp_u: float, drop):
        # a drop that pins the rim to the floor breaks the opening-up premise;
        # carry the cloth to a fresh spot over a restored bag and try again
        _pick_and_drop(world, cloth, grasp_u, drop)
        for attempt in range(11):
            if rim_healthy():
                return
            if attempt == 10:
                raise TaskInfeasibleError("cloth drops kept crushing the bag rim")
            _reset_bag(world, bag, bag_rest)
            grasp_u = float(retry_rng.random())
            drop = (float(retry_rng.uniform(-CLOTH_DROP_HALF, CLOTH_DROP_HALF)),
                    float(retry_rng.uniform(-CLOTH_DROP_HALF, CLOTH_DROP_HALF)),
                    float(retry_rng.uniform(0.20, 0.35)))
            _pick_and_drop(world, cloth, grasp_u, drop)

    for i, cp in enumerate(task.cloths):
        body = 1 + task.n_rigid + i
        cloth = build_cloth(world, body, cp.width, cp.height, cp.stiffness,
                            _hsv_to_rgb(cp.hsv), cp.spawn[:2], cp.spawn[2], cp.drop[2])
        drop_cloth_checked(cloth, cp.grasp_u, cp.drop)
        cloths.append(cloth)

    # enforce "not entirely inside the opening" per object
    for asset in rigids + cloths:
        for attempt in range(11):
            xy = world.pos[asset.indices][:, :2]
            if not bool(np.all(point_in_polygon(xy, rim_poly))):
                break
            if attempt == 10:
                raise TaskInfeasibleError(
                    f"object {asset.body_id} kept landing inside the opening")
            if isinstance(asset, RigidAsset):
                _redrop_rigid(world, asset, retry_rng, bag)
            else:
                grasp_u = float(retry_rng.random())
                drop = (float(retry_rng.uniform(-CLOTH_DROP_HALF, CLOTH_DROP_HALF)),
                        float(retry_rng.uniform(-CLOTH_DROP_HALF, CLOTH_DROP_HALF)),
                        float(retry_rng.uniform(0.20, 0.35)))
                drop_cloth_checked(asset, grasp_u, drop)
    if not rim_healthy():
        raise TaskInfeasibleError("bag rim collapsed during initialization")
    return Scene(world=world, task=task, bag=bag, rigids=rigids, cloths=cloths)


def _hsv_to_rgb(hsv) -> tuple[float, float, float]:
    return colorsys.hsv_to_rgb(*hsv)


def _pick_and_drop(world: World, cloth: ClothAsset, grasp_u: float, drop):
    g = int(cloth.indices[int(grasp_u * cloth.indices.shape[0])])
    world.attach(g)
    world.settle(0.4)
    _move_grasp(world, g, (drop[0], drop[1], drop[2]))
    world.detach(g)
    world.settle(1.0)


def _reset_bag(world: World, bag: BagAsset, rest_pos: np.ndarray):
    """Initialization-only recovery from a buckled wall: restore the settled
    bag pose in place. Interpenetration with whatever crushed it resolves in
    the following settle."""
    world.pos[bag.indices] = rest_pos
    world.vel[bag.indices] = 0.0


def _redrop_rigid(world: World, asset: RigidAsset, rng, bag: BagAsset):
    # lift the whole body and let it fall at a fresh spot off the bag
    half_diag = 0.5 * math.hypot(asset.dims[0], asset.dims[1])
    x, y = _place_outside_bag(rng, bag.radius, half_diag, [])
    cur = world.pos[asset.indices]
    rel = cur - cur.mean(axis=0)
    world.pos[asset.indices] = rel + [x, y, 0.05 - rel[:, 2].min()]
    world.vel[asset.indices] = 0.0
    world.settle(0.8)


# ---------------------------------------------------------------------------
# text serialization


def dump_task(task: TaskSpec) -> str:
    lines = [
        "# bagbench task",
        f"version = {task.version}",
        f"seed = {task.seed}",
        f"n_rigid = {task.n_rigid}",
        f"n_cloth = {task.n_cloth}",
        f"bag.dim = {task.bag_dim!r}",
        f"bag.stiffness = {task.bag_stiffness!r}",
    ]
    for i, rp in enumerate(task.rigids):
        lines.append(f"rigid.{i}.shape = {rp.shape}")
        lines.append(f"rigid.{i}.dims = {_fmt(rp.dims)}")
        lines.append(f"rigid.{i}.hsv = {_fmt(rp.hsv)}")
        lines.append(f"rigid.{i}.place = {_fmt(rp.place)}")
    for i, cp in enumerate(task.cloths):
        lines.append(f"cloth.{i}.size = {_fmt((cp.width, cp.height))}")
        lines.append(f"cloth.{i}.stiffness = {cp.stiffness!r}")
        lines.append(f"cloth.{i}.hsv = {_fmt(cp.hsv)}")
        lines.append(f"cloth.{i}.spawn = {_fmt(cp.spawn)}")
        lines.append(f"cloth.{i}.grasp_u = {cp.grasp_u!r}")
        lines.append(f"cloth.{i}.drop = {_fmt(cp.drop)}")
    return "\n".join(lines) + "\n"


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def parse_task(text: str) -> TaskSpec:
    kv: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad task line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        kv[key] = value
    version = int(kv.get("version", "1"))
    if version != 1:
        raise ValueError(f"unsupported task version: {version}")
    n_rigid = int(kv["n_rigid"])
    n_cloth = int(kv["n_cloth"])
    rigids = []
    for i in range(n_rigid):
        rigids.append(RigidParams(
            shape=kv[f"rigid.{i}.shape"],
            dims=_parse3(kv[f"rigid.{i}.dims"]),
            hsv=_parse3(kv[f"rigid.{i}.hsv"]),
            place=_parse3(kv[f"rigid.{i}.place"]),
        ))
    cloths = []
    for i in range(n_cloth):
        w, h = (float(v) for v in kv[f"cloth.{i}.size"].split())
        cloths.append(ClothParams(
            width=w, height=h,
            stiffness=float(kv[f"cloth.{i}.stiffness"]),
            hsv=_parse3(kv[f"cloth.{i}.hsv"]),
            spawn=_parse3(kv[f"cloth.{i}.spawn"]),
            grasp_u=float(kv[f"cloth.{i}.grasp_u"]),
            drop=_parse3(kv[f"cloth.{i}.drop"]),
        ))
    return TaskSpec(seed=int(kv["seed"]), n_rigid=n_rigid, n_cloth=n_cloth,
                    bag_dim=float(kv["bag.dim"]), bag_stiffness=float(kv["bag.stiffness"]),
                    rigids=rigids, cloths=cloths, version=version)


def _parse3(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split()]
    if len(parts) != 3:
        raise ValueError(f"expected 3 values, got {text!r}")
    return tuple(parts)


def load_task(path) -> TaskSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_task(fh.read())


def save_task(task: TaskSpec, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_task(task))
