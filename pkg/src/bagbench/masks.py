"""Mask geometry: polygon rasterization, boundary extraction, IoU and the
opening-perturbation ablation.

Masks are boolean H x W arrays. Polygons are (n, 2) float arrays in pixel
coordinates (row, col) where integer values land on pixel centers.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage


class MaskGeometryError(ValueError):
    pass


_EIGHT = np.ones((3, 3), dtype=bool)


def fill_polygon(poly: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Even-odd scanline fill of a closed polygon over pixel centers."""
    poly = np.asarray(poly, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise MaskGeometryError("polygon needs at least 3 (row, col) vertices")
    h, w = shape
    out = np.zeros(shape, dtype=bool)
    y1 = poly[:, 0]
    x1 = poly[:, 1]
    y2 = np.roll(y1, -1)
    x2 = np.roll(x1, -1)
    r_lo = max(0, int(np.ceil(poly[:, 0].min())))
    r_hi = min(h - 1, int(np.floor(poly[:, 0].max())))
    for r in range(r_lo, r_hi + 1):
        # half-open span convention handles scanlines through vertices
        crosses = (y1 <= r) != (y2 <= r)
        if not np.any(crosses):
            continue
        xs = x1[crosses] + (r - y1[crosses]) * (x2[crosses] - x1[crosses]) / (y2[crosses] - y1[crosses])
        xs.sort()
        for i in range(0, xs.shape[0] - 1, 2):
            c_lo = max(0, int(np.ceil(xs[i])))
            c_hi = min(w - 1, int(np.floor(xs[i + 1])))
            if c_hi >= c_lo:
                out[r, c_lo:c_hi + 1] = True
    return out


def boundary_from_filled(filled: np.ndarray) -> np.ndarray:
    """1-px 8-connected closed contour of a single filled component."""
    filled = np.asarray(filled, dtype=bool)
    if not filled.any():
        raise MaskGeometryError("empty mask has no boundary")
    _, n_comp = ndimage.label(filled, structure=_EIGHT)
    if n_comp != 1:
        raise MaskGeometryError(f"expected one connected component, found {n_comp}")
    interior = ndimage.binary_erosion(filled, border_value=0)
    return filled & ~interior


def fill_from_boundary(boundary: np.ndarray) -> np.ndarray:
    """Region enclosed by a closed boundary contour, boundary included."""
    return ndimage.binary_fill_holes(np.asarray(boundary, dtype=bool))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MaskGeometryError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def polygon_is_simple(poly: np.ndarray) -> bool:
    """True when no two non-adjacent edges intersect."""
    poly = np.asarray(poly, dtype=float)
    n = poly.shape[0]
    segs = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_cross(*segs[i], *segs[j]):
                return False
    return True


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def perturb_polygon(poly: np.ndarray, target_iou: float, seed: int,
                    shape: tuple[int, int], tolerance: float = 0.01,
                    max_iters: int = 100) -> tuple[np.ndarray, float]:
    """Deform a rim polygon until its filled mask hits a target IoU.

    Random vertices get random displacement directions; each selected vertex
    drags its ring neighborhood with Gaussian falloff. One amplitude scalar
    scales the whole displacement field and is bracketed, then bisected,
    until the filled-mask IoU against the unperturbed mask lands within
    ``tolerance`` of the target. Deterministic in the seed.
    """
    if not 0.0 < target_iou <= 1.0:
        raise MaskGeometryError("target IoU must be in (0, 1]")
    poly = np.asarray(poly, dtype=float)
    reference = fill_polygon(poly, shape)
    if target_iou >= 1.0 - 1e-12:
        return poly.copy(), 1.0
    n = poly.shape[0]
    rng = np.random.default_rng(seed)
    n_sel = max(3, n // 6)
    selected = rng.choice(n, size=n_sel, replace=False)
    directions = rng.normal(size=(n_sel, 2))
    sigma = n / 12.0
    field = np.zeros((n, 2))
    ring_pos = np.arange(n)
    for s, d in zip(selected, directions):
        dist = np.minimum(np.abs(ring_pos - s), n - np.abs(ring_pos - s))
        field += np.exp(-0.5 * (dist / sigma) ** 2)[:, None] * d

    def achieved(amp: float) -> float:
        return iou(fill_polygon(poly + amp * field, shape), reference)

    lo, hi = 0.0, 1.0
    it = 0
    while achieved(hi) > target_iou:
        hi *= 2.0
        it += 1
        if it >= max_iters:
            raise MaskGeometryError(f"cannot reach IoU {target_iou} by perturbation")
    while it < max_iters:
        mid = 0.5 * (lo + hi)
        got = achieved(mid)
        if abs(got - target_iou) <= tolerance:
            return poly + mid * field, got
        if got > target_iou:
            lo = mid
        else:
            hi = mid
        it += 1
    raise MaskGeometryError(
        f"perturbation search did not converge to IoU {target_iou} in {max_iters} iterations")
