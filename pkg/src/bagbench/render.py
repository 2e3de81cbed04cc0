"""Top-down orthographic particle-splat rasterizer and opening-mask capture.

Each particle is splatted as a z-buffered disk of its own radius. The label
map records the topmost body per pixel; depth is distance from a virtual
camera plane above the workspace.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .assets import BagAsset, Scene
from .config import RenderConfig
from .masks import MaskGeometryError, boundary_from_filled, fill_polygon, polygon_is_simple
from .physics import World


@dataclass
class Observation:
    color: np.ndarray                 # H x W x 3 float32, unit range
    depth: np.ndarray                 # H x W float32, meters from camera plane
    filled_opening_mask: np.ndarray   # H x W bool
    label_map: np.ndarray             # H x W int32, -1 background
    pixel_scale: float

    @property
    def resolution(self) -> int:
        return self.color.shape[0]

    def policy_input(self) -> np.ndarray:
        """RGB + filled opening mask, channels last, float32."""
        mask = self.filled_opening_mask.astype(np.float32)[..., None]
        return np.ascontiguousarray(np.concatenate([self.color, mask], axis=2))


@dataclass
class MaskSet:
    bag_mask: np.ndarray
    filled_opening_mask: np.ndarray
    opening_boundary_mask: np.ndarray
    object_masks: dict[int, np.ndarray] = field(default_factory=dict)
    rim_polygon_px: np.ndarray | None = None


def world_to_pixel(xy: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Map world (x, y) to float pixel (row, col); integers hit pixel centers."""
    xy = np.asarray(xy, dtype=float)
    ps = cfg.pixel_scale
    half = cfg.workspace / 2
    rows = (half - xy[..., 1]) / ps - 0.5
    cols = (xy[..., 0] + half) / ps - 0.5
    return np.stack([rows, cols], axis=-1)


def pixel_to_world(rc: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    rc = np.asarray(rc, dtype=float)
    ps = cfg.pixel_scale
    half = cfg.workspace / 2
    x = (rc[..., 1] + 0.5) * ps - half
    y = half - (rc[..., 0] + 0.5) * ps
    return np.stack([x, y], axis=-1)


@njit(cache=True)
def _splat(rows, cols, z, r_px, label, zbuf, labelbuf):
    h, w = zbuf.shape
    for i in range(rows.shape[0]):
        pr = rows[i]
        pc = cols[i]
        rr = r_px[i]
        lo_r = int(np.ceil(pr - rr))
        hi_r = int(np.floor(pr + rr))
        lo_c = int(np.ceil(pc - rr))
        hi_c = int(np.floor(pc + rr))
        if lo_r < 0:
            lo_r = 0
        if lo_c < 0:
            lo_c = 0
        if hi_r >= h:
            hi_r = h - 1
        if hi_c >= w:
            hi_c = w - 1
        for r in range(lo_r, hi_r + 1):
            for c in range(lo_c, hi_c + 1):
                dr = r - pr
                dc = c - pc
                # >= lets particles resting exactly on the ground paint over
                # the background; ties resolve to the highest particle index
                if dr * dr + dc * dc <= rr * rr and z[i] >= zbuf[r, c]:
                    zbuf[r, c] = z[i]
                    labelbuf[r, c] = label[i]


def render(world: World, cfg: RenderConfig | None = None,
           opening_mask: np.ndarray | None = None,
           bodies: list[int] | None = None) -> Observation:
    """Render the world top-down. ``opening_mask`` is the episode-constant
    filled opening channel; an all-false mask is used when absent. ``bodies``
    restricts splatting to the listed bodies (used for the pre-object bag
    capture)."""
    cfg = cfg or RenderConfig()
    res = cfg.resolution
    zbuf = np.zeros((res, res))          # ground plane at z = 0
    labelbuf = np.full((res, res), -1, dtype=np.int32)
    if world.n_particles:
        if bodies is None:
            sel = slice(None)
        else:
            sel = np.isin(world.body_id, np.asarray(bodies, dtype=np.int64))
        pos = world.pos[sel]
        rc = world_to_pixel(pos[:, :2], cfg)
        _splat(rc[:, 0], rc[:, 1], pos[:, 2],
               world.radius[sel] * (cfg.splat_scale / cfg.pixel_scale),
               world.body_id[sel].astype(np.int32), zbuf, labelbuf)
    color = np.empty((res, res, 3), dtype=np.float32)
    color[:] = np.asarray(cfg.background_rgb, dtype=np.float32)
    for body, rgb in sorted(world.body_rgb.items()):
        sel = labelbuf == body
        color[sel] = np.asarray(rgb, dtype=np.float32)
    depth = (cfg.camera_height - zbuf).astype(np.float32)
    if opening_mask is None:
        opening_mask = np.zeros((res, res), dtype=bool)
    return Observation(color=color, depth=depth,
                       filled_opening_mask=np.asarray(opening_mask, dtype=bool),
                       label_map=labelbuf, pixel_scale=cfg.pixel_scale)


def rim_pixel_polygon(world: World, bag: BagAsset, cfg: RenderConfig) -> np.ndarray:
    return world_to_pixel(world.pos[bag.rim_indices][:, :2], cfg)


def ground_truth_opening(world: World, bag: BagAsset,
                         cfg: RenderConfig | None = None,
                         obs: Observation | None = None) -> MaskSet:
    """Opening masks from the bag's rim ring; held constant for the episode.

    Raises MaskGeometryError when the projected rim self-intersects."""
    cfg = cfg or RenderConfig()
    poly = rim_pixel_polygon(world, bag, cfg)
    if not polygon_is_simple(poly):
        raise MaskGeometryError("projected rim ring self-intersects")
    filled = fill_polygon(poly, (cfg.resolution, cfg.resolution))
    if not filled.any():
        raise MaskGeometryError("projected rim ring encloses no pixels")
    boundary = boundary_from_filled(filled)
    # the bag mask is captured without objects, mirroring a bag-only capture
    # taken before anything is placed
    bag_obs = render(world, cfg, bodies=[bag.body_id])
    bag_mask = bag_obs.label_map == bag.body_id
    if obs is None:
        obs = render(world, cfg)
    object_masks = {}
    for body in sorted(world.body_rgb):
        if body != bag.body_id:
            object_masks[body] = obs.label_map == body
    return MaskSet(bag_mask=bag_mask, filled_opening_mask=filled,
                   opening_boundary_mask=boundary, object_masks=object_masks,
                   rim_polygon_px=poly)


def scene_mask_set(scene: Scene, cfg: RenderConfig | None = None,
                   obs: Observation | None = None) -> MaskSet:
    return ground_truth_opening(scene.world, scene.bag, cfg, obs)
