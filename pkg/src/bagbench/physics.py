"""Particle world with position-based-dynamics constraint projection.

Bags, cloths and rigid objects share one particle representation. Each step
predicts positions with semi-implicit Euler, then runs sequential
Gauss-Seidel sweeps over distance constraints, bending constraints, ground
contact, particle-particle contacts and shape-matched rigid clusters, then
recovers velocities from the position delta. Sweep order is fixed and all
kernels are sequential, so stepping is bit-deterministic run to run.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit

from .config import SolverConfig


class BodyKind(IntEnum):
    BAG = 0
    CLOTH = 1
    RIGID = 2


class SimulationDivergedError(RuntimeError):
    pass


class InvalidGraspError(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernels

_HALF_STENCIL = np.array([
    # lexicographically-positive cell offsets plus the home cell; every
    # unordered cell pair is visited exactly once
    (0, 0, 0),
    (1, 0, 0),
    (-1, 1, 0), (0, 1, 0), (1, 1, 0),
    (-1, -1, 1), (0, -1, 1), (1, -1, 1),
    (-1, 0, 1), (0, 0, 1), (1, 0, 1),
    (-1, 1, 1), (0, 1, 1), (1, 1, 1),
], dtype=np.int64)


@njit(cache=True, fastmath=True)
def _find_pairs(pos, radius, margin, excl_start, excl_nbr, cell_size, stencil, pa, pb):
    """Uniform-grid broad phase over a sorted sparse cell index. Excluded
    neighbors (constrained or same-cluster pairs) come as a CSR adjacency
    keyed by the lower particle index. Returns the number of candidate pairs,
    or -1 if the output arrays are too small (caller grows and retries)."""
    n = pos.shape[0]
    bias = np.int64(1) << 20
    cid = np.empty(n, dtype=np.int64)
    cx = np.empty(n, dtype=np.int64)
    cy = np.empty(n, dtype=np.int64)
    cz = np.empty(n, dtype=np.int64)
    for i in range(n):
        cx[i] = np.int64(np.floor(pos[i, 0] / cell_size)) + bias
        cy[i] = np.int64(np.floor(pos[i, 1] / cell_size)) + bias
        cz[i] = np.int64(np.floor(pos[i, 2] / cell_size)) + bias
        cid[i] = (cx[i] << np.int64(42)) | (cy[i] << np.int64(21)) | cz[i]
    order = np.argsort(cid, kind="mergesort")
    sorted_cid = cid[order]
    cap = pa.shape[0]
    count = 0
    for oi in range(n):
        i = order[oi]
        for s in range(stencil.shape[0]):
            home = s == 0
            key = (((cx[i] + stencil[s, 0]) << np.int64(42))
                   | ((cy[i] + stencil[s, 1]) << np.int64(21))
                   | (cz[i] + stencil[s, 2]))
            t = np.searchsorted(sorted_cid, key, side="left")
            while t < n and sorted_cid[t] == key:
                j = order[t]
                t += 1
                if home and j <= i:
                    continue
                ddx = pos[i, 0] - pos[j, 0]
                ddy = pos[i, 1] - pos[j, 1]
                ddz = pos[i, 2] - pos[j, 2]
                reach = radius[i] + radius[j] + margin
                if ddx * ddx + ddy * ddy + ddz * ddz >= reach * reach:
                    continue
                a = i if i < j else j
                b = j if i < j else i
                elo = excl_start[a]
                ehi = excl_start[a + 1]
                skip = False
                while elo < ehi:
                    mid = (elo + ehi) // 2
                    v = excl_nbr[mid]
                    if v == b:
                        skip = True
                        break
                    if v < b:
                        elo = mid + 1
                    else:
                        ehi = mid
                if skip:
                    continue
                if count >= cap:
                    return -1
                pa[count] = a
                pb[count] = b
                count += 1
    return count


@njit(cache=True, fastmath=True)
def _project_distance(pos, inv_mass, ia, ib, rest, k_iter):
    for c in range(ia.shape[0]):
        a = ia[c]
        b = ib[c]
        wa = inv_mass[a]
        wb = inv_mass[b]
        wsum = wa + wb
        if wsum <= 0.0:
            continue
        dx = pos[a, 0] - pos[b, 0]
        dy = pos[a, 1] - pos[b, 1]
        dz = pos[a, 2] - pos[b, 2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        if d < 1e-12:
            continue
        s = k_iter[c] * (d - rest[c]) / (d * wsum)
        pos[a, 0] -= wa * s * dx
        pos[a, 1] -= wa * s * dy
        pos[a, 2] -= wa * s * dz
        pos[b, 0] += wb * s * dx
        pos[b, 1] += wb * s * dy
        pos[b, 2] += wb * s * dz


@njit(cache=True, fastmath=True)
def _project_ground(pos, prev, inv_mass, ground_z, friction):
    for i in range(pos.shape[0]):
        if inv_mass[i] <= 0.0:
            continue
        pen = ground_z - pos[i, 2]
        if pen <= 0.0:
            continue
        pos[i, 2] = ground_z
        # positional Coulomb friction against the tangential slide this step
        tx = pos[i, 0] - prev[i, 0]
        ty = pos[i, 1] - prev[i, 1]
        tlen = np.sqrt(tx * tx + ty * ty)
        if tlen > 1e-12:
            scale = friction * pen / tlen
            if scale > 1.0:
                scale = 1.0
            pos[i, 0] -= tx * scale
            pos[i, 1] -= ty * scale


@njit(cache=True, fastmath=True)
def _project_contacts(pos, prev, inv_mass, radius, pa, pb, n_pairs, friction):
    for c in range(n_pairs):
        a = pa[c]
        b = pb[c]
        wa = inv_mass[a]
        wb = inv_mass[b]
        wsum = wa + wb
        if wsum <= 0.0:
            continue
        dx = pos[a, 0] - pos[b, 0]
        dy = pos[a, 1] - pos[b, 1]
        dz = pos[a, 2] - pos[b, 2]
        d2 = dx * dx + dy * dy + dz * dz
        rsum = radius[a] + radius[b]
        if d2 >= rsum * rsum or d2 < 1e-18:
            continue
        d = np.sqrt(d2)
        pen = rsum - d
        nx = dx / d
        ny = dy / d
        nz = dz / d
        s = pen / wsum
        pos[a, 0] += wa * s * nx
        pos[a, 1] += wa * s * ny
        pos[a, 2] += wa * s * nz
        pos[b, 0] -= wb * s * nx
        pos[b, 1] -= wb * s * ny
        pos[b, 2] -= wb * s * nz
        # damp relative tangential slide at the contact
        rx = (pos[a, 0] - prev[a, 0]) - (pos[b, 0] - prev[b, 0])
        ry = (pos[a, 1] - prev[a, 1]) - (pos[b, 1] - prev[b, 1])
        rz = (pos[a, 2] - prev[a, 2]) - (pos[b, 2] - prev[b, 2])
        rn = rx * nx + ry * ny + rz * nz
        tx = rx - rn * nx
        ty = ry - rn * ny
        tz = rz - rn * nz
        tlen = np.sqrt(tx * tx + ty * ty + tz * tz)
        if tlen > 1e-12:
            scale = friction * pen / tlen
            if scale > 1.0:
                scale = 1.0
            fa = scale * wa / wsum
            fb = scale * wb / wsum
            pos[a, 0] -= tx * fa
            pos[a, 1] -= ty * fa
            pos[a, 2] -= tz * fa
            pos[b, 0] += tx * fb
            pos[b, 1] += ty * fb
            pos[b, 2] += tz * fb


@njit(cache=True, fastmath=True)
def _shape_match(pos, inv_mass, cl_start, cl_idx, rest_rel, quats):
    """Pull each rigid cluster onto the best-fit rigid transform of its rest
    shape. Rotation extraction is the warm-started iterative polar method, so
    no per-sweep SVD is needed."""
    n_clusters = cl_start.shape[0] - 1
    for c in range(n_clusters):
        lo = cl_start[c]
        hi = cl_start[c + 1]
        m = hi - lo
        cx = 0.0
        cy = 0.0
        cz = 0.0
        for s in range(lo, hi):
            i = cl_idx[s]
            cx += pos[i, 0]
            cy += pos[i, 1]
            cz += pos[i, 2]
        cx /= m
        cy /= m
        cz /= m
        a00 = 0.0
        a01 = 0.0
        a02 = 0.0
        a10 = 0.0
        a11 = 0.0
        a12 = 0.0
        a20 = 0.0
        a21 = 0.0
        a22 = 0.0
        for s in range(lo, hi):
            i = cl_idx[s]
            px = pos[i, 0] - cx
            py = pos[i, 1] - cy
            pz = pos[i, 2] - cz
            rx = rest_rel[s, 0]
            ry = rest_rel[s, 1]
            rz = rest_rel[s, 2]
            a00 += px * rx
            a01 += px * ry
            a02 += px * rz
            a10 += py * rx
            a11 += py * ry
            a12 += py * rz
            a20 += pz * rx
            a21 += pz * ry
            a22 += pz * rz
        qw = quats[c, 0]
        qx = quats[c, 1]
        qy = quats[c, 2]
        qz = quats[c, 3]
        for _ in range(12):
            r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
            r01 = 2.0 * (qx * qy - qw * qz)
            r02 = 2.0 * (qx * qz + qw * qy)
            r10 = 2.0 * (qx * qy + qw * qz)
            r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
            r12 = 2.0 * (qy * qz - qw * qx)
            r20 = 2.0 * (qx * qz - qw * qy)
            r21 = 2.0 * (qy * qz + qw * qx)
            r22 = 1.0 - 2.0 * (qx * qx + qy * qy)
            # omega = sum cross(R_col_i, A_col_i) / |sum dot(R_col_i, A_col_i)|
            ox = (r10 * a20 - r20 * a10) + (r11 * a21 - r21 * a11) + (r12 * a22 - r22 * a12)
            oy = (r20 * a00 - r00 * a20) + (r21 * a01 - r01 * a21) + (r22 * a02 - r02 * a22)
            oz = (r00 * a10 - r10 * a00) + (r01 * a11 - r11 * a01) + (r02 * a12 - r12 * a02)
            denom = abs(r00 * a00 + r10 * a10 + r20 * a20
                        + r01 * a01 + r11 * a11 + r21 * a21
                        + r02 * a02 + r12 * a12 + r22 * a22) + 1e-9
            ox /= denom
            oy /= denom
            oz /= denom
            w = np.sqrt(ox * ox + oy * oy + oz * oz)
            if w < 1e-9:
                break
            half = 0.5 * w
            sh = np.sin(half) / w
            ch = np.cos(half)
            nw = ch * qw - sh * (ox * qx + oy * qy + oz * qz)
            nx_ = ch * qx + sh * (ox * qw + oy * qz - oz * qy)
            ny_ = ch * qy + sh * (oy * qw + oz * qx - ox * qz)
            nz_ = ch * qz + sh * (oz * qw + ox * qy - oy * qx)
            norm = np.sqrt(nw * nw + nx_ * nx_ + ny_ * ny_ + nz_ * nz_)
            qw = nw / norm
            qx = nx_ / norm
            qy = ny_ / norm
            qz = nz_ / norm
        quats[c, 0] = qw
        quats[c, 1] = qx
        quats[c, 2] = qy
        quats[c, 3] = qz
        r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
        r01 = 2.0 * (qx * qy - qw * qz)
        r02 = 2.0 * (qx * qz + qw * qy)
        r10 = 2.0 * (qx * qy + qw * qz)
        r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
        r12 = 2.0 * (qy * qz - qw * qx)
        r20 = 2.0 * (qx * qz - qw * qy)
        r21 = 2.0 * (qy * qz + qw * qx)
        r22 = 1.0 - 2.0 * (qx * qx + qy * qy)
        for s in range(lo, hi):
            i = cl_idx[s]
            if inv_mass[i] <= 0.0:
                continue  # a grasped particle anchors the cluster instead
            rx = rest_rel[s, 0]
            ry = rest_rel[s, 1]
            rz = rest_rel[s, 2]
            pos[i, 0] = cx + r00 * rx + r01 * ry + r02 * rz
            pos[i, 1] = cy + r10 * rx + r11 * ry + r12 * rz
            pos[i, 2] = cz + r20 * rx + r21 * ry + r22 * rz


@njit(cache=True, fastmath=True)
def _solve_substep(pos, prev, inv_mass, radius,
                   dist_ia, dist_ib, dist_rest, dist_k,
                   bend_ia, bend_ib, bend_rest, bend_k,
                   pa, pb, n_pairs,
                   cl_start, cl_idx, cl_rest, quats,
                   att_idx, att_target,
                   iterations, friction):
    """One substep's full Gauss-Seidel pass sequence; order is part of the
    determinism contract. Ground contact runs after pair contacts and shape
    matching so stacked piles cannot leave particles pressed below the floor
    at the end of a sweep."""
    for _ in range(iterations):
        _project_distance(pos, inv_mass, dist_ia, dist_ib, dist_rest, dist_k)
        _project_distance(pos, inv_mass, bend_ia, bend_ib, bend_rest, bend_k)
        if n_pairs > 0:
            _project_contacts(pos, prev, inv_mass, radius, pa, pb, n_pairs, friction)
        if cl_start.shape[0] > 1:
            _shape_match(pos, inv_mass, cl_start, cl_idx, cl_rest, quats)
        _project_ground(pos, prev, inv_mass, 0.0, friction)
        for a in range(att_idx.shape[0]):
            i = att_idx[a]
            pos[i, 0] = att_target[a, 0]
            pos[i, 1] = att_target[a, 1]
            pos[i, 2] = att_target[a, 2]


# ---------------------------------------------------------------------------
# world


@dataclass
class RigidCluster:
    indices: np.ndarray     # particle indices, int64
    rest_rel: np.ndarray    # rest positions relative to centroid, (k, 3)

    def rotation(self, quat: np.ndarray) -> np.ndarray:
        w, x, y, z = quat
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])


class World:
    """Mutable particle world. One episode runner owns it exclusively."""

    def __init__(self, solver: SolverConfig | None = None):
        self.solver = solver or SolverConfig()
        self.pos = np.zeros((0, 3))
        self.vel = np.zeros((0, 3))
        self.mass = np.zeros(0)
        self.inv_mass = np.zeros(0)
        self.radius = np.zeros(0)
        self.body_id = np.zeros(0, dtype=np.int64)
        self.kind = np.zeros(0, dtype=np.int64)
        self.dist_ia = np.zeros(0, dtype=np.int64)
        self.dist_ib = np.zeros(0, dtype=np.int64)
        self.dist_rest = np.zeros(0)
        self.dist_k = np.zeros(0)
        self.bend_ia = np.zeros(0, dtype=np.int64)
        self.bend_ib = np.zeros(0, dtype=np.int64)
        self.bend_rest = np.zeros(0)
        self.bend_k = np.zeros(0)
        self.clusters: list[RigidCluster] = []
        self.cluster_quats = np.zeros((0, 4))
        self.attach_idx = np.zeros(0, dtype=np.int64)
        self.attach_target = np.zeros((0, 3))
        self.body_rgb: dict[int, tuple[float, float, float]] = {}
        self._finalized = False

    # -- construction -------------------------------------------------------

    def add_particles(self, pos, mass, radius, body_id, kind: BodyKind) -> np.ndarray:
        pos = np.asarray(pos, dtype=float).reshape(-1, 3)
        n = pos.shape[0]
        start = self.pos.shape[0]
        self.pos = np.vstack([self.pos, pos])
        self.vel = np.vstack([self.vel, np.zeros((n, 3))])
        mass = np.broadcast_to(np.asarray(mass, dtype=float), (n,))
        radius = np.broadcast_to(np.asarray(radius, dtype=float), (n,))
        if np.any(radius <= 0):
            raise ValueError("particle radius must be positive")
        if np.any(mass <= 0):
            raise ValueError("particle mass must be positive")
        self.mass = np.concatenate([self.mass, mass])
        self.inv_mass = np.concatenate([self.inv_mass, 1.0 / mass])
        self.radius = np.concatenate([self.radius, radius])
        self.body_id = np.concatenate([self.body_id, np.full(n, body_id, dtype=np.int64)])
        self.kind = np.concatenate([self.kind, np.full(n, int(kind), dtype=np.int64)])
        self._finalized = False
        return np.arange(start, start + n, dtype=np.int64)

    def add_distance_constraints(self, ia, ib, rest, stiffness, bending=False):
        ia = np.asarray(ia, dtype=np.int64)
        ib = np.asarray(ib, dtype=np.int64)
        rest = np.broadcast_to(np.asarray(rest, dtype=float), ia.shape).copy()
        k = np.broadcast_to(np.asarray(stiffness, dtype=float), ia.shape).copy()
        if np.any(ia == ib):
            raise ValueError("distance constraint endpoints must differ")
        if np.any(rest <= 0):
            raise ValueError("rest length must be positive")
        if np.any((k <= 0) | (k > 1)):
            raise ValueError("stiffness must be in (0, 1]")
        if bending:
            self.bend_ia = np.concatenate([self.bend_ia, ia])
            self.bend_ib = np.concatenate([self.bend_ib, ib])
            self.bend_rest = np.concatenate([self.bend_rest, rest])
            self.bend_k = np.concatenate([self.bend_k, k])
        else:
            self.dist_ia = np.concatenate([self.dist_ia, ia])
            self.dist_ib = np.concatenate([self.dist_ib, ib])
            self.dist_rest = np.concatenate([self.dist_rest, rest])
            self.dist_k = np.concatenate([self.dist_k, k])
        self._finalized = False

    def add_rigid_cluster(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.shape[0] < 4:
            raise ValueError("rigid cluster needs at least 4 particles")
        rel = self.pos[indices] - self.pos[indices].mean(axis=0)
        if np.linalg.matrix_rank(rel) < 3:
            raise ValueError("rigid cluster particles must be non-coplanar")
        self.clusters.append(RigidCluster(indices=indices, rest_rel=rel))
        self.cluster_quats = np.vstack([self.cluster_quats, [1.0, 0.0, 0.0, 0.0]])
        self._finalized = False

    def finalize(self):
        """Precompute per-sweep stiffness, contact exclusions and broad-phase
        buffers. Called automatically by the first step."""
        n = self.pos.shape[0]
        it = self.solver.iterations
        self._dist_k_iter = 1.0 - (1.0 - self.dist_k) ** (1.0 / it)
        self._bend_k_iter = 1.0 - (1.0 - self.bend_k) ** (1.0 / it)
        neighbors: list[set[int]] = [set() for _ in range(n)]
        for ia, ib in ((self.dist_ia, self.dist_ib), (self.bend_ia, self.bend_ib)):
            lo = np.minimum(ia, ib)
            hi = np.maximum(ia, ib)
            for a, b in zip(lo.tolist(), hi.tolist()):
                neighbors[a].add(b)
        for cl in self.clusters:
            idx = np.sort(cl.indices).tolist()
            for ii, a in enumerate(idx):
                neighbors[a].update(idx[ii + 1:])
        counts = [len(s) for s in neighbors]
        self._excl_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._excl_nbr = (np.concatenate([sorted(s) for s in neighbors if s])
                          if any(counts) else np.zeros(0, dtype=np.int64)).astype(np.int64)
        if self.clusters:
            self._cl_start = np.cumsum([0] + [c.indices.shape[0] for c in self.clusters]).astype(np.int64)
            self._cl_idx = np.concatenate([c.indices for c in self.clusters])
            self._cl_rest = np.concatenate([c.rest_rel for c in self.clusters])
        else:
            self._cl_start = np.zeros(1, dtype=np.int64)
            self._cl_idx = np.zeros(0, dtype=np.int64)
            self._cl_rest = np.zeros((0, 3))
        max_r = float(self.radius.max()) if n else 0.01
        self._cell_size = 2.0 * max_r + self.solver.contact_margin
        self._pair_cap = max(1024, 16 * n)
        self._pa = np.zeros(self._pair_cap, dtype=np.int64)
        self._pb = np.zeros(self._pair_cap, dtype=np.int64)
        self._finalized = True

    # -- bookkeeping ---------------------------------------------------------

    @property
    def n_particles(self) -> int:
        return self.pos.shape[0]

    def bodies(self) -> list[int]:
        return sorted(set(self.body_id.tolist()))

    def body_particles(self, body: int) -> np.ndarray:
        return np.flatnonzero(self.body_id == body)

    def body_kind(self, body: int) -> BodyKind:
        idx = self.body_particles(body)
        if idx.size == 0:
            raise KeyError(f"no such body: {body}")
        return BodyKind(int(self.kind[idx[0]]))

    def copy(self) -> "World":
        w = World(self.solver)
        for name in ("pos", "vel", "mass", "inv_mass", "radius", "body_id", "kind",
                     "dist_ia", "dist_ib", "dist_rest", "dist_k",
                     "bend_ia", "bend_ib", "bend_rest", "bend_k",
                     "cluster_quats", "attach_idx", "attach_target"):
            setattr(w, name, getattr(self, name).copy())
        w.clusters = [RigidCluster(c.indices.copy(), c.rest_rel.copy()) for c in self.clusters]
        w.body_rgb = dict(self.body_rgb)
        w._finalized = False
        return w

    def checksum(self) -> str:
        q = np.round(self.pos / 1e-7).astype(np.int64)
        return hashlib.sha256(q.tobytes()).hexdigest()

    # -- attachments ---------------------------------------------------------

    def attach(self, index: int, target=None):
        index = int(index)
        if index < 0 or index >= self.n_particles:
            raise InvalidGraspError(f"no such particle: {index}")
        if index in self.attach_idx:
            raise InvalidGraspError(f"particle {index} is already attached")
        target = self.pos[index].copy() if target is None else np.asarray(target, dtype=float)
        self.attach_idx = np.append(self.attach_idx, index)
        self.attach_target = np.vstack([self.attach_target, target.reshape(1, 3)])
        self.inv_mass[index] = 0.0
        return self

    def detach(self, index: int):
        index = int(index)
        where = np.flatnonzero(self.attach_idx == index)
        if where.size == 0:
            raise InvalidGraspError(f"particle {index} is not attached")
        keep = np.ones(self.attach_idx.shape[0], dtype=bool)
        keep[where] = False
        self.attach_idx = self.attach_idx[keep]
        self.attach_target = self.attach_target[keep]
        self.inv_mass[index] = 1.0 / self.mass[index]
        return self

    def move_attachment(self, index: int, target):
        where = np.flatnonzero(self.attach_idx == index)
        if where.size == 0:
            raise InvalidGraspError(f"particle {index} is not attached")
        self.attach_target[where[0]] = np.asarray(target, dtype=float)

    # -- stepping ------------------------------------------------------------

    def step(self, dt: float | None = None) -> "World":
        cfg = self.solver
        dt = cfg.dt if dt is None else float(dt)
        if dt <= 0:
            raise ValueError("dt must be positive")
        if not self._finalized:
            self.finalize()
        h = dt / cfg.substeps
        g = np.asarray(cfg.gravity)
        n_pairs = 0
        for sub in range(cfg.substeps):
            free = self.inv_mass > 0
            self.vel[free] += g * h
            if cfg.velocity_damping != 1.0:
                self.vel *= cfg.velocity_damping
            prev = self.pos.copy()
            self.pos[free] += self.vel[free] * h
            if self.attach_idx.size:
                self.pos[self.attach_idx] = self.attach_target
            # contact candidates found once per step; the margin covers the
            # remaining substeps' drift
            if sub == 0 and self.n_particles > 1:
                n_pairs = _find_pairs(self.pos, self.radius, cfg.contact_margin,
                                      self._excl_start, self._excl_nbr,
                                      self._cell_size, _HALF_STENCIL, self._pa, self._pb)
                while n_pairs < 0:
                    self._pair_cap *= 2
                    self._pa = np.zeros(self._pair_cap, dtype=np.int64)
                    self._pb = np.zeros(self._pair_cap, dtype=np.int64)
                    n_pairs = _find_pairs(self.pos, self.radius, cfg.contact_margin,
                                          self._excl_start, self._excl_nbr,
                                          self._cell_size, _HALF_STENCIL, self._pa, self._pb)
            _solve_substep(self.pos, prev, self.inv_mass, self.radius,
                           self.dist_ia, self.dist_ib, self.dist_rest, self._dist_k_iter,
                           self.bend_ia, self.bend_ib, self.bend_rest, self._bend_k_iter,
                           self._pa, self._pb, n_pairs,
                           self._cl_start, self._cl_idx, self._cl_rest, self.cluster_quats,
                           self.attach_idx, self.attach_target,
                           cfg.iterations, cfg.friction)
            self.vel = (self.pos - prev) / h
        if not np.isfinite(self.pos).all():
            bad = int(np.flatnonzero(~np.isfinite(self.pos).all(axis=1))[0])
            raise SimulationDivergedError(f"non-finite position for particle {bad}")
        return self

    def max_kinetic_energy(self) -> float:
        free = self.inv_mass > 0
        if not np.any(free):
            return 0.0
        ke = 0.5 * self.mass[free] * np.einsum("ij,ij->i", self.vel[free], self.vel[free])
        return float(ke.max())

    def settle(self, max_time: float) -> tuple["World", bool]:
        # The energy check runs after each step (never before the first), so a
        # body released at rest still falls instead of counting as settled.
        cfg = self.solver
        steps = max(1, int(round(max_time / cfg.dt)))
        for _ in range(steps):
            self.step()
            if self.max_kinetic_energy() < cfg.energy_epsilon:
                return self, True
        return self, False


def nearest_particle(world: World, point, radius: float, kind_filter: BodyKind | None = None):
    """Index of the nearest particle within *radius* of *point*, or None.

    Ties break toward the lowest index."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if world.n_particles == 0:
        return None
    point = np.asarray(point, dtype=float)
    d2 = np.einsum("ij,ij->i", world.pos - point, world.pos - point)
    if kind_filter is not None:
        d2 = np.where(world.kind == int(kind_filter), d2, np.inf)
    best = int(np.argmin(d2))
    if d2[best] > radius * radius:
        return None
    return best


def step(world: World, dt: float) -> World:
    return world.step(dt)


def settle(world: World, max_time: float) -> tuple[World, bool]:
    return world.settle(max_time)
