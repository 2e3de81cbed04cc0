"""Spatial-action-map machinery: observation transform batches, action
decoding, reward labeling, heuristic policies and the fused lift decision.

The heuristic value functions are specified down to the arithmetic expression
so that an out-of-process implementation speaking the wire protocol can
reproduce their value buffers bit for bit: all trig constants come from
math.cos/math.sin on the shared angle grids, every formula is written with a
fixed operand order, scores are integers plus a power-of-two fraction (always
exactly representable in float32), and ties resolve by maximum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from .assets import point_in_polygon
from .config import (LIFT_ANGLES, PolicyConfig, REARRANGE_ANGLES,
                     REARRANGE_SCALES, RenderConfig)
from .physics import BodyKind, World
from .render import MaskSet, Observation


class Mode(Enum):
    REARRANGE = "rearrange"
    LIFT = "lift"


OBJECT_COLOR_THRESHOLD = 0.45
SIZE_CAP = 16383          # component-size scores stay exact in float32
QUALITY_STEPS = 1024
IDENTITY_REARRANGE = 6 * len(REARRANGE_SCALES)   # theta = 0, scale = 1.0
IDENTITY_LIFT = 6                                # theta = 0


def slice_params(mode: Mode) -> tuple[np.ndarray, np.ndarray]:
    """Per-slice (theta, scale), rotation-major then scale."""
    if mode is Mode.REARRANGE:
        thetas = np.repeat(np.array(REARRANGE_ANGLES), len(REARRANGE_SCALES))
        scales = np.tile(np.array(REARRANGE_SCALES), len(REARRANGE_ANGLES))
    else:
        thetas = np.array(LIFT_ANGLES)
        scales = np.ones(len(LIFT_ANGLES))
    return thetas, scales


@dataclass
class TransformBatch:
    slices: np.ndarray     # t x H x W x 4 float32
    thetas: np.ndarray     # t
    scales: np.ndarray     # t
    mode: Mode

    @property
    def t(self) -> int:
        return self.slices.shape[0]

    @property
    def resolution(self) -> int:
        return self.slices.shape[1]

    def identity_index(self) -> int:
        return IDENTITY_REARRANGE if self.mode is Mode.REARRANGE else IDENTITY_LIFT


@dataclass
class ValueMapBatch:
    values: np.ndarray     # t x H x W float32
    mode: Mode


@dataclass
class RearrangeAction:
    pick_pixel: tuple[float, float]
    place_pixel: tuple[float, float]
    theta: float
    scale_w: float


@dataclass
class LiftAction:
    lift_pixel: tuple[float, float]
    theta: float
    l1: tuple[int, int]
    l2: tuple[int, int]

    def separation_px(self) -> float:
        dr = float(self.l2[0] - self.l1[0])
        dc = float(self.l2[1] - self.l1[1])
        return math.sqrt(dr * dr + dc * dc)


class LiftInfeasibleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# transforms

_GATHER_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _gather_maps(mode: Mode, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-slice nearest-neighbor source indices (flat) and validity masks."""
    key = (mode, res)
    if key in _GATHER_CACHE:
        return _GATHER_CACHE[key]
    thetas, scales = slice_params(mode)
    center = (res - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(res, dtype=float),
                             np.arange(res, dtype=float), indexing="ij")
    pr = rows - center
    pc = cols - center
    idx = np.empty((thetas.shape[0], res * res), dtype=np.int64)
    valid = np.empty((thetas.shape[0], res * res), dtype=bool)
    for k in range(thetas.shape[0]):
        cos_t = math.cos(thetas[k])
        sin_t = math.sin(thetas[k])
        s = scales[k]
        qr = center + (cos_t * pr + sin_t * pc) / s
        qc = center + (-sin_t * pr + cos_t * pc) / s
        ir = np.rint(qr).astype(np.int64)
        ic = np.rint(qc).astype(np.int64)
        ok = (ir >= 0) & (ir < res) & (ic >= 0) & (ic < res)
        flat = np.where(ok, ir * res + ic, 0)
        idx[k] = flat.ravel()
        valid[k] = ok.ravel()
    _GATHER_CACHE[key] = (idx, valid)
    return idx, valid


def make_transform_batch(obs: Observation, mode: Mode,
                         render_cfg: RenderConfig | None = None) -> TransformBatch:
    """Rotated (and scaled, for rearrangement) copies of the policy input.

    Nearest-neighbor sampling keeps the identity slice bitwise equal to the
    input; out-of-frame pixels take the background color and an empty mask."""
    render_cfg = render_cfg or RenderConfig()
    res = obs.resolution
    base = obs.policy_input().reshape(res * res, 4)
    background = np.array([*render_cfg.background_rgb, 0.0], dtype=np.float32)
    idx, valid = _gather_maps(mode, res)
    thetas, scales = slice_params(mode)
    t = thetas.shape[0]
    out = np.empty((t, res * res, 4), dtype=np.float32)
    for k in range(t):
        out[k] = base[idx[k]]
        out[k][~valid[k]] = background
    return TransformBatch(slices=out.reshape(t, res, res, 4),
                          thetas=thetas, scales=scales, mode=mode)


def decode_pick(argmax: tuple[int, int, int], batch: TransformBatch) -> tuple[float, float]:
    """Slice-frame pixel back to the original frame (float, unrounded)."""
    k, r, c = argmax
    res = batch.resolution
    center = (res - 1) / 2.0
    cos_t = math.cos(float(batch.thetas[k]))
    sin_t = math.sin(float(batch.thetas[k]))
    s = float(batch.scales[k])
    pr = r - center
    pc = c - center
    qr = center + (cos_t * pr + sin_t * pc) / s
    qc = center + (-sin_t * pr + cos_t * pc) / s
    return qr, qc


def encode_pick(pick: tuple[float, float], k: int, batch: TransformBatch) -> tuple[float, float]:
    """Original-frame pixel into slice k's frame (float, unrounded)."""
    res = batch.resolution
    center = (res - 1) / 2.0
    cos_t = math.cos(float(batch.thetas[k]))
    sin_t = math.sin(float(batch.thetas[k]))
    s = float(batch.scales[k])
    scos = s * cos_t
    ssin = s * sin_t
    qr = pick[0] - center
    qc = pick[1] - center
    return center + (scos * qr - ssin * qc), center + (ssin * qr + scos * qc)


def decode_rearrange(argmax: tuple[int, int, int], batch: TransformBatch,
                     policy: PolicyConfig | None = None) -> RearrangeAction:
    """Pick from the argmax pixel; place displaced by w * D_base along theta.

    The displacement convention follows (row, col) = w * D_base * (cos t, sin t)."""
    policy = policy or PolicyConfig()
    k = argmax[0]
    res = batch.resolution
    theta = float(batch.thetas[k])
    w = float(batch.scales[k])
    pick = decode_pick(argmax, batch)
    place_r = pick[0] + w * policy.d_base * math.cos(theta)
    place_c = pick[1] + w * policy.d_base * math.sin(theta)
    clamp = lambda v: min(max(v, 0.0), res - 1.0)
    return RearrangeAction(pick_pixel=(clamp(pick[0]), clamp(pick[1])),
                           place_pixel=(clamp(place_r), clamp(place_c)),
                           theta=theta, scale_w=w)


def boundary_pixels(boundary_mask: np.ndarray) -> np.ndarray:
    return np.argwhere(boundary_mask)


def decode_lift(argmax: tuple[int, int, int], batch: TransformBatch,
                boundary_mask: np.ndarray, object_mask: np.ndarray | None = None,
                policy: PolicyConfig | None = None,
                pixel_scale: float | None = None) -> LiftAction | None:
    """Lift points from the line through the decoded pixel with slope theta.

    The line direction is (row, col) = (sin t, cos t). Candidates are boundary
    pixels within a 2 px corridor around the line; the extreme pair along the
    line wins. None when fewer than two candidates exist, the separation
    violates the physical limits, or a lift point overlaps an object."""
    policy = policy or PolicyConfig()
    res = batch.resolution
    pixel_scale = pixel_scale if pixel_scale is not None else 1.0 / res
    k = argmax[0]
    theta = float(batch.thetas[k])
    q = decode_pick(argmax, batch)
    pts = boundary_pixels(boundary_mask)
    if pts.shape[0] < 2:
        return None
    sin_t = math.sin(theta)
    cos_t = math.cos(theta)
    t_vals = pts[:, 0] * sin_t + pts[:, 1] * cos_t
    n_vals = pts[:, 0] * cos_t - pts[:, 1] * sin_t
    n_q = q[0] * cos_t - q[1] * sin_t
    corridor = np.abs(n_vals - n_q) <= 2.0
    if np.count_nonzero(corridor) < 2:
        return None
    cand = np.flatnonzero(corridor)
    i1 = cand[int(np.argmin(t_vals[cand]))]
    i2 = cand[int(np.argmax(t_vals[cand]))]
    if i1 == i2:
        return None
    l1 = (int(pts[i1, 0]), int(pts[i1, 1]))
    l2 = (int(pts[i2, 0]), int(pts[i2, 1]))
    dr = float(l2[0] - l1[0])
    dc = float(l2[1] - l1[1])
    sep_m = math.sqrt(dr * dr + dc * dc) * pixel_scale
    if not (policy.d_min <= sep_m <= policy.d_max):
        return None
    if object_mask is not None and (object_mask[l1] or object_mask[l2]):
        return None
    return LiftAction(lift_pixel=q, theta=theta, l1=l1, l2=l2)


# ---------------------------------------------------------------------------
# reward


def particle_volumes(world: World) -> np.ndarray:
    return (4.0 / 3.0) * np.pi * world.radius ** 3


def outside_volume(world: World, opening_poly_world: np.ndarray) -> float:
    """Total particle-sphere volume of non-bag bodies whose planar projection
    falls outside the filled opening polygon (world coordinates)."""
    obj = world.kind != int(BodyKind.BAG)
    if not np.any(obj):
        return 0.0
    xy = world.pos[obj][:, :2]
    inside = point_in_polygon(xy, opening_poly_world)
    vols = particle_volumes(world)[obj]
    return float(vols[~inside].sum())


def rearrange_reward(world_pre: World, world_post: World, grasped_body: int | None,
                     opening_poly_world: np.ndarray) -> float:
    """Relative reduction of object volume outside the opening, or the flat
    bag-grasp penalty."""
    if grasped_body is not None and world_pre.body_kind(grasped_body) is BodyKind.BAG:
        return -0.5
    vol_pre = outside_volume(world_pre, opening_poly_world)
    vol_post = outside_volume(world_post, opening_poly_world)
    denom = max(vol_pre, vol_post)
    if denom <= 0.0:
        return 0.0
    return (vol_pre - vol_post) / denom


# ---------------------------------------------------------------------------
# value functions


class ValueFunction:
    """Maps a TransformBatch to dense per-pixel action values."""

    mode: Mode | None = None

    def evaluate(self, batch: TransformBatch) -> ValueMapBatch:
        raise NotImplementedError

    def close(self):
        pass


class ConstantVF(ValueFunction):
    def __init__(self, value: float):
        self.value = float(value)

    def evaluate(self, batch: TransformBatch) -> ValueMapBatch:
        shape = (batch.t, batch.resolution, batch.resolution)
        return ValueMapBatch(values=np.full(shape, self.value, dtype=np.float32),
                             mode=batch.mode)


class RandomVF(ValueFunction):
    """Seed-deterministic noise; consecutive evaluations advance the stream."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def evaluate(self, batch: TransformBatch) -> ValueMapBatch:
        shape = (batch.t, batch.resolution, batch.resolution)
        vals = self.rng.random(shape, dtype=np.float32)
        return ValueMapBatch(values=vals, mode=batch.mode)


def classify_objects(slice4: np.ndarray) -> np.ndarray:
    """Object pixels have max RGB >= 0.45; bag and floor colors stay below."""
    rgb = slice4[..., :3]
    return np.maximum(np.maximum(rgb[..., 0], rgb[..., 1]), rgb[..., 2]) >= np.float32(OBJECT_COLOR_THRESHOLD)


_EIGHT = np.ones((3, 3), dtype=bool)


class HeuristicRearrangeVF(ValueFunction):
    """Scores outside-the-opening object pixels by the pixel count of their
    component's outside part, plus a place-toward-centroid quality fraction.

    value = min(outside_component_size, 16383) + (1023 - min(1023, round(d))) / 1024
    where d is the pixel distance from the slice-decoded place point to the
    opening centroid. Values are exact in float32 by construction.
    """

    mode = Mode.REARRANGE

    def __init__(self, policy: PolicyConfig | None = None):
        self.policy = policy or PolicyConfig()

    def evaluate(self, batch: TransformBatch) -> ValueMapBatch:
        if batch.mode is not Mode.REARRANGE:
            raise ValueError("rearrange VF requires a rearrange batch")
        res = batch.resolution
        base = batch.slices[batch.identity_index()]
        opening = base[..., 3] > np.float32(0.5)
        objects = classify_objects(base)
        outside = objects & ~opening
        out = np.zeros((batch.t, res * res), dtype=np.float32)
        coords = np.argwhere(outside)
        if coords.shape[0]:
            labels, _ = ndimage.label(objects, structure=_EIGHT)
            counts = np.bincount(labels[outside], minlength=int(labels.max()) + 1)
            sizes = np.minimum(counts[labels[coords[:, 0], coords[:, 1]]], SIZE_CAP).astype(np.float64)
            if opening.any():
                rr, cc = np.nonzero(opening)
                cen_r = float(rr.sum()) / rr.shape[0]
                cen_c = float(cc.sum()) / cc.shape[0]
            else:
                cen_r = (res - 1) / 2.0
                cen_c = (res - 1) / 2.0
            center = (res - 1) / 2.0
            o_r = coords[:, 0].astype(np.float64)
            o_c = coords[:, 1].astype(np.float64)
            or_ = o_r - center
            oc_ = o_c - center
            for k in range(batch.t):
                cos_t = math.cos(float(batch.thetas[k]))
                sin_t = math.sin(float(batch.thetas[k]))
                s = float(batch.scales[k])
                scos = s * cos_t
                ssin = s * sin_t
                pr = np.rint(center + (scos * or_ - ssin * oc_)).astype(np.int64)
                pc = np.rint(center + (ssin * or_ + scos * oc_)).astype(np.int64)
                dpr = s * self.policy.d_base * cos_t
                dpc = s * self.policy.d_base * sin_t
                dr = (o_r + dpr) - cen_r
                dc = (o_c + dpc) - cen_c
                d = np.sqrt(dr * dr + dc * dc)
                quality = 1023.0 - np.minimum(np.rint(d), 1023.0)
                vals = (sizes + quality / QUALITY_STEPS).astype(np.float32)
                ok = (pr >= 0) & (pr < res) & (pc >= 0) & (pc < res)
                np.maximum.at(out[k], pr[ok] * res + pc[ok], vals[ok])
        return ValueMapBatch(values=out.reshape(batch.t, res, res), mode=batch.mode)


def _erode4(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_erosion(mask, border_value=0)


class HeuristicLiftVF(ValueFunction):
    """Scores boundary pixels by the separation of the lift pair their line
    induces: value = (1024 + min(1023, round(sep_px))) / 2048 when the pair is
    feasible, zero otherwise. The maximum attainable value stays far below
    the fused lift threshold, so heuristics never stop rearrangement early.
    """

    mode = Mode.LIFT

    def __init__(self, policy: PolicyConfig | None = None):
        self.policy = policy or PolicyConfig()

    def evaluate(self, batch: TransformBatch) -> ValueMapBatch:
        if batch.mode is not Mode.LIFT:
            raise ValueError("lift VF requires a lift batch")
        res = batch.resolution
        pixel_scale = 1.0 / res
        base = batch.slices[batch.identity_index()]
        opening = base[..., 3] > np.float32(0.5)
        objects = classify_objects(base)
        out = np.zeros((batch.t, res * res), dtype=np.float32)
        boundary = opening & ~_erode4(opening)
        pts = np.argwhere(boundary)
        if pts.shape[0] >= 2:
            center = (res - 1) / 2.0
            b_r = pts[:, 0].astype(np.float64)
            b_c = pts[:, 1].astype(np.float64)
            obj_at = objects[pts[:, 0], pts[:, 1]]
            for k in range(batch.t):
                theta = float(batch.thetas[k])
                cos_t = math.cos(theta)
                sin_t = math.sin(theta)
                t_vals = b_r * sin_t + b_c * cos_t
                n_vals = b_r * cos_t - b_c * sin_t
                # corridor membership for every boundary pixel at once
                within = np.abs(n_vals[None, :] - n_vals[:, None]) <= 2.0
                t_masked_min = np.where(within, t_vals[None, :], np.inf)
                t_masked_max = np.where(within, t_vals[None, :], -np.inf)
                i1 = np.argmin(t_masked_min, axis=1)
                i2 = np.argmax(t_masked_max, axis=1)
                dr = b_r[i2] - b_r[i1]
                dc = b_c[i2] - b_c[i1]
                sep_px = np.sqrt(dr * dr + dc * dc)
                feasible = ((i1 != i2)
                            & (sep_px * pixel_scale >= self.policy.d_min)
                            & (sep_px * pixel_scale <= self.policy.d_max)
                            & ~obj_at[i1] & ~obj_at[i2])
                vals = ((1024.0 + np.minimum(np.rint(sep_px), 1023.0)) / 2048.0).astype(np.float32)
                pr = np.rint(center + (cos_t * (b_r - center) - sin_t * (b_c - center))).astype(np.int64)
                pc = np.rint(center + (sin_t * (b_r - center) + cos_t * (b_c - center))).astype(np.int64)
                ok = feasible & (pr >= 0) & (pr < res) & (pc >= 0) & (pc < res)
                np.maximum.at(out[k], pr[ok] * res + pc[ok], vals[ok])
        return ValueMapBatch(values=out.reshape(batch.t, res, res), mode=batch.mode)


def make_value_function(spec: str, mode: Mode,
                        policy: PolicyConfig | None = None) -> ValueFunction:
    """CLI string to value function: heuristic | random:<seed> | constant:<v>
    | remote:<host:port>."""
    if spec == "heuristic":
        return HeuristicRearrangeVF(policy) if mode is Mode.REARRANGE else HeuristicLiftVF(policy)
    if spec.startswith("random:"):
        return RandomVF(int(spec.split(":", 1)[1]))
    if spec.startswith("constant:"):
        return ConstantVF(float(spec.split(":", 1)[1]))
    if spec.startswith("remote:"):
        from .protocol import RemoteVF
        return RemoteVF(spec.split(":", 1)[1], mode)
    raise ValueError(f"unknown value function spec: {spec!r}")


# ---------------------------------------------------------------------------
# direct heuristics


def heuristic_rearrange(obs: Observation, masks: MaskSet, rng,
                        policy: PolicyConfig | None = None) -> RearrangeAction | None:
    """Random pick on object pixels outside the filled opening; place at the
    opening centroid. None when no such pixel exists."""
    policy = policy or PolicyConfig()
    objects = obs.label_map > 0
    region = objects & ~masks.filled_opening_mask
    coords = np.argwhere(region)
    if coords.shape[0] == 0:
        return None
    pick = coords[int(rng.integers(coords.shape[0]))]
    rr, cc = np.nonzero(masks.filled_opening_mask)
    if rr.shape[0] == 0:
        return None
    place = (float(rr.mean()), float(cc.mean()))
    dr = place[0] - float(pick[0])
    dc = place[1] - float(pick[1])
    theta = math.atan2(dc, dr)
    grid = np.asarray(REARRANGE_ANGLES)
    snapped = float(grid[int(np.argmin(np.abs(_wrap_angle(grid - theta))))])
    w_grid = np.asarray(REARRANGE_SCALES)
    w = float(w_grid[int(np.argmin(np.abs(w_grid - math.hypot(dr, dc) / policy.d_base)))])
    return RearrangeAction(pick_pixel=(float(pick[0]), float(pick[1])),
                           place_pixel=place, theta=snapped, scale_w=w)


def _wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def heuristic_lift(boundary_mask: np.ndarray, rng,
                   policy: PolicyConfig | None = None,
                   pixel_scale: float | None = None) -> LiftAction:
    """Random boundary pixel pair with separation within the physical limits."""
    policy = policy or PolicyConfig()
    pts = boundary_pixels(boundary_mask)
    if pts.shape[0] < 2:
        raise LiftInfeasibleError("boundary has fewer than two pixels")
    pixel_scale = pixel_scale if pixel_scale is not None else 1.0 / boundary_mask.shape[0]
    for _ in range(1000):
        i, j = rng.integers(pts.shape[0], size=2)
        if i == j:
            continue
        dr = float(pts[j, 0] - pts[i, 0])
        dc = float(pts[j, 1] - pts[i, 1])
        sep = math.hypot(dr, dc) * pixel_scale
        if policy.d_min <= sep <= policy.d_max:
            return _pair_to_lift(pts[i], pts[j])
    raise LiftInfeasibleError("no feasible boundary pair found")


def max_width_lift(mask: np.ndarray, policy: PolicyConfig | None = None) -> LiftAction:
    """Farthest pixel pair of a mask (maximum-width strategy)."""
    pts = np.argwhere(mask)
    if pts.shape[0] < 2:
        raise LiftInfeasibleError("mask has fewer than two pixels")
    try:
        from scipy.spatial import ConvexHull
        hull = pts[ConvexHull(pts.astype(float)).vertices]
    except Exception:
        hull = pts
    best = (0.0, 0, 1)
    for i in range(hull.shape[0]):
        d = hull[i + 1:] - hull[i]
        if d.shape[0] == 0:
            continue
        d2 = np.einsum("ij,ij->i", d, d)
        j = int(np.argmax(d2))
        if d2[j] > best[0]:
            best = (float(d2[j]), i, i + 1 + j)
    return _pair_to_lift(hull[best[1]], hull[best[2]])


def _pair_to_lift(p1, p2) -> LiftAction:
    dr = float(p2[0] - p1[0])
    dc = float(p2[1] - p1[1])
    theta = math.atan2(dr, dc)
    if theta > math.pi / 2:
        theta -= math.pi
    elif theta <= -math.pi / 2:
        theta += math.pi
    mid = ((float(p1[0]) + float(p2[0])) / 2.0, (float(p1[1]) + float(p2[1])) / 2.0)
    return LiftAction(lift_pixel=mid, theta=theta,
                      l1=(int(p1[0]), int(p1[1])), l2=(int(p2[0]), int(p2[1])))


# ---------------------------------------------------------------------------
# fused decision logic


class DecisionKind(Enum):
    LIFT = "lift"
    REARRANGE = "rearrange"
    LIFT_AT_BEST = "lift_at_best"


@dataclass
class Decision:
    kind: DecisionKind
    rearrange: RearrangeAction | None = None
    lift: LiftAction | None = None
    lift_score: float = float("-inf")


@dataclass
class EpisodeState:
    step_count: int = 0
    best_lift_score: float = float("-inf")
    best_lift_action: LiftAction | None = None

    def record_lift(self, score: float, action: LiftAction | None):
        if action is not None and score > self.best_lift_score:
            self.best_lift_score = score
            self.best_lift_action = action


def best_feasible_lift(values: ValueMapBatch, batch: TransformBatch,
                       masks: MaskSet, obs: Observation,
                       policy: PolicyConfig) -> tuple[float, LiftAction | None]:
    """Highest-value candidate whose decoded lift action is feasible."""
    res = batch.resolution
    flat = values.values.reshape(-1)
    object_mask = obs.label_map > 0
    order = np.argsort(-flat, kind="stable")[:policy.lift_candidates]
    for flat_idx in order:
        v = float(flat[flat_idx])
        if v <= 0.0:
            break
        k = int(flat_idx // (res * res))
        rem = int(flat_idx % (res * res))
        action = decode_lift((k, rem // res, rem % res), batch,
                             masks.opening_boundary_mask, object_mask,
                             policy, obs.pixel_scale)
        if action is not None:
            return v, action
    return float("-inf"), None


def fused_step(obs: Observation, masks: MaskSet, rearrange_vf: ValueFunction,
               lift_vf: ValueFunction, state: EpisodeState,
               policy: PolicyConfig | None = None,
               render_cfg: RenderConfig | None = None) -> Decision:
    """One fused-policy decision.

    Lift immediately when the best feasible lift score beats the threshold;
    otherwise rearrange, unless the rearrangement argmax is off-object or the
    interaction budget is exhausted, in which case lift at the best lift seen
    so far."""
    policy = policy or PolicyConfig()
    lift_batch = make_transform_batch(obs, Mode.LIFT, render_cfg)
    lift_vals = lift_vf.evaluate(lift_batch)
    score, lift_action = best_feasible_lift(lift_vals, lift_batch, masks, obs, policy)
    # a remembered best lift whose grasp points have since been covered by an
    # object would grab that object; drop it before recording this step
    if state.best_lift_action is not None:
        prev = state.best_lift_action
        if obs.label_map[prev.l1] > 0 or obs.label_map[prev.l2] > 0:
            state.best_lift_score = float("-inf")
            state.best_lift_action = None
    state.record_lift(score, lift_action)
    if score > policy.lift_threshold:
        return Decision(kind=DecisionKind.LIFT, lift=lift_action, lift_score=score)
    if state.step_count >= policy.max_steps:
        return _lift_at_best(state, masks, policy)
    batch = make_transform_batch(obs, Mode.REARRANGE, render_cfg)
    vals = rearrange_vf.evaluate(batch).values
    flat_idx = int(np.argmax(vals))
    res = batch.resolution
    k, rem = divmod(flat_idx, res * res)
    argmax = (k, rem // res, rem % res)
    action = decode_rearrange(argmax, batch, policy)
    pr = int(round(action.pick_pixel[0]))
    pc = int(round(action.pick_pixel[1]))
    on_object = obs.label_map[min(max(pr, 0), res - 1), min(max(pc, 0), res - 1)] > 0
    if not on_object:
        return _lift_at_best(state, masks, policy)
    return Decision(kind=DecisionKind.REARRANGE, rearrange=action, lift_score=score)


def _lift_at_best(state: EpisodeState, masks: MaskSet, policy: PolicyConfig) -> Decision:
    action = state.best_lift_action
    if action is None:
        # no feasible lift was ever scored; fall back to the widest bag grasp
        action = max_width_lift(masks.bag_mask, policy)
    return Decision(kind=DecisionKind.LIFT_AT_BEST, lift=action,
                    lift_score=state.best_lift_score)
