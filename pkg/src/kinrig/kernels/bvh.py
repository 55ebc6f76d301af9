"""Bounding volume hierarchy over triangles with ray and segment queries.

The tree is binary, split at the median centroid along the longest axis of
each node's bounds, with at most ``LEAF_SIZE`` triangles per leaf. Queries
return crossing counts for rays (used for parity inside tests) and any-hit
flags for segments. The numpy path skips the tree and tests every
triangle; it exists to cross-check the traversal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import njit, numba_active

LEAF_SIZE = 8
EPS = 1e-9


@dataclass(frozen=True)
class BVH:
    tri: np.ndarray          # (F, 3, 3) triangle corners in tree order
    order: np.ndarray        # tree slot -> original face index
    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)


def build_bvh(vertices: np.ndarray, faces: np.ndarray, leaf_size: int = LEAF_SIZE) -> BVH:
    tri = np.asarray(vertices, dtype=np.float64)[np.asarray(faces, dtype=np.int64)]
    cent = tri.mean(1)
    lo_t = tri.min(1)
    hi_t = tri.max(1)
    order = np.arange(len(tri))
    bmin, bmax, left, right, start, count = [], [], [], [], [], []

    def new_node(idx_lo, idx_hi):
        ids = order[idx_lo:idx_hi]
        bmin.append(lo_t[ids].min(0))
        bmax.append(hi_t[ids].max(0))
        left.append(-1)
        right.append(-1)
        start.append(idx_lo)
        count.append(idx_hi - idx_lo)
        return len(left) - 1

    if len(tri) == 0:
        return BVH(tri, order, np.zeros((0, 3)), np.zeros((0, 3)), *(np.zeros(0, np.int64) for _ in range(4)))
    stack = [(new_node(0, len(tri)), 0, len(tri))]
    while stack:
        node, lo, hi = stack.pop()
        if hi - lo <= leaf_size:
            continue
        ids = order[lo:hi]
        extent = cent[ids].max(0) - cent[ids].min(0)
        axis = int(np.argmax(extent))
        mid = (hi - lo) // 2
        part = np.argsort(cent[ids, axis], kind="stable")
        order[lo:hi] = ids[part]
        l_node = new_node(lo, lo + mid)
        r_node = new_node(lo + mid, hi)
        left[node], right[node] = l_node, r_node
        count[node] = 0
        stack.append((l_node, lo, lo + mid))
        stack.append((r_node, lo + mid, hi))
    as_i = lambda x: np.asarray(x, dtype=np.int64)
    return BVH(np.ascontiguousarray(tri[order]), order, np.asarray(bmin), np.asarray(bmax),
               as_i(left), as_i(right), as_i(start), as_i(count))


@njit(cache=True)
def _box_hit(o, inv, tmax, lo, hi):
    t0 = 0.0
    t1 = tmax
    for k in range(3):
        a = (lo[k] - o[k]) * inv[k]
        b = (hi[k] - o[k]) * inv[k]
        if a > b:
            a, b = b, a
        if a > t0:
            t0 = a
        if b < t1:
            t1 = b
        if t0 > t1 + 1e-12:
            return False
    return True


@njit(cache=True)
def _tri_hit(o, d, tri, eps):
    """Moller-Trumbore. Returns (t, status): status 0 miss, 1 hit, 2 degenerate."""
    ax, ay, az = tri[0, 0], tri[0, 1], tri[0, 2]
    e1x, e1y, e1z = tri[1, 0] - ax, tri[1, 1] - ay, tri[1, 2] - az
    e2x, e2y, e2z = tri[2, 0] - ax, tri[2, 1] - ay, tri[2, 2] - az
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    scale = abs(e1x) + abs(e1y) + abs(e1z) + abs(e2x) + abs(e2y) + abs(e2z)
    if abs(det) <= eps * scale * scale:
        return 0.0, 0
    inv = 1.0 / det
    tx, ty, tz = o[0] - ax, o[1] - ay, o[2] - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -eps or u > 1.0 + eps:
        return 0.0, 0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -eps or u + v > 1.0 + eps:
        return 0.0, 0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if u < eps or v < eps or u + v > 1.0 - eps:
        return t, 2
    return t, 1


@njit(cache=True)
def _ray_counts_nb(points, direction, tri, bmin, bmax, left, right, start, count, eps):
    n = points.shape[0]
    hits = np.zeros(n, dtype=np.int64)
    degenerate = np.zeros(n, dtype=np.bool_)
    inv = np.empty(3)
    for k in range(3):
        inv[k] = 1.0 / direction[k] if direction[k] != 0.0 else 1e300
    stack = np.empty(128, dtype=np.int64)
    for q in range(n):
        o = points[q]
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _box_hit(o, inv, 1e300, bmin[node], bmax[node]):
                continue
            if count[node] > 0:
                for s in range(start[node], start[node] + count[node]):
                    t, status = _tri_hit(o, direction, tri[s], eps)
                    if status == 0:
                        continue
                    if abs(t) <= eps * 1e3:
                        degenerate[q] = True
                    elif t > 0.0:
                        if status == 2:
                            degenerate[q] = True
                        else:
                            hits[q] += 1
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
    return hits, degenerate


@njit(cache=True)
def _segment_hits_nb(p0, p1, tri, bmin, bmax, left, right, start, count, eps):
    n = p0.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    d = np.empty(3)
    inv = np.empty(3)
    stack = np.empty(128, dtype=np.int64)
    for q in range(n):
        for k in range(3):
            d[k] = p1[q, k] - p0[q, k]
            inv[k] = 1.0 / d[k] if d[k] != 0.0 else 1e300
        o = p0[q]
        sp = 0
        stack[sp] = 0
        sp += 1
        found = False
        while sp > 0 and not found:
            sp -= 1
            node = stack[sp]
            if not _box_hit(o, inv, 1.0, bmin[node], bmax[node]):
                continue
            if count[node] > 0:
                for s in range(start[node], start[node] + count[node]):
                    t, status = _tri_hit(o, d, tri[s], eps)
                    if status != 0 and t > eps and t < 1.0 - eps:
                        found = True
                        break
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
        out[q] = found
    return out


def _mt_np(o, d, tri, eps):
    """Vectorized Moller-Trumbore for queries (Q,3) x triangles (F,3,3) -> (t, status) (Q,F)."""
    a = tri[:, 0][None]
    e1 = (tri[:, 1] - tri[:, 0])[None]
    e2 = (tri[:, 2] - tri[:, 0])[None]
    d = np.broadcast_to(d, o.shape)[:, None, :]
    p = np.cross(d, e2)
    det = (e1 * p).sum(-1)
    scale = np.abs(e1).sum(-1) + np.abs(e2).sum(-1)
    valid = np.abs(det) > eps * scale * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)
        tv = o[:, None, :] - a
        u = (tv * p).sum(-1) * inv
        q = np.cross(tv, e1)
        v = (d * q).sum(-1) * inv
        t = (e2 * q).sum(-1) * inv
    hit = valid & (u >= -eps) & (u <= 1 + eps) & (v >= -eps) & (u + v <= 1 + eps)
    edge = hit & ((u < eps) | (v < eps) | (u + v > 1 - eps))
    status = np.where(hit, np.where(edge, 2, 1), 0)
    return t, status


def _ray_counts_np(points, direction, tri, eps, chunk=256):
    n = len(points)
    hits = np.zeros(n, dtype=np.int64)
    degenerate = np.zeros(n, dtype=bool)
    for s in range(0, n, chunk):
        t, status = _mt_np(points[s:s + chunk], direction, tri, eps)
        near = (status > 0) & (np.abs(t) <= eps * 1e3)
        ahead = (status > 0) & (t > 0) & ~near
        hits[s:s + chunk] = (ahead & (status == 1)).sum(1)
        degenerate[s:s + chunk] = near.any(1) | (ahead & (status == 2)).any(1)
    return hits, degenerate


def _segment_hits_np(p0, p1, tri, eps, chunk=256):
    out = np.zeros(len(p0), dtype=bool)
    for s in range(0, len(p0), chunk):
        o = p0[s:s + chunk]
        d = p1[s:s + chunk] - o
        t, status = _mt_np(o, d, tri, eps)
        out[s:s + chunk] = ((status > 0) & (t > eps) & (t < 1 - eps)).any(1)
    return out


def ray_crossings(bvh: BVH, points: np.ndarray, direction: np.ndarray, eps: float = EPS):
    """Crossing counts of rays ``p + t*direction, t > 0`` and degenerate-hit flags."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    d = np.ascontiguousarray(direction, dtype=np.float64)
    if len(bvh.tri) == 0:
        return np.zeros(len(pts), np.int64), np.zeros(len(pts), bool)
    if numba_active():
        return _ray_counts_nb(pts, d, bvh.tri, bvh.bmin, bvh.bmax, bvh.left, bvh.right,
                              bvh.start, bvh.count, eps)
    return _ray_counts_np(pts, d, bvh.tri, eps)


def segment_hits(bvh: BVH, p0: np.ndarray, p1: np.ndarray, eps: float = EPS) -> np.ndarray:
    """True where the open segment ``p0 -> p1`` crosses any triangle."""
    a = np.ascontiguousarray(p0, dtype=np.float64).reshape(-1, 3)
    b = np.ascontiguousarray(p1, dtype=np.float64).reshape(-1, 3)
    if len(bvh.tri) == 0:
        return np.zeros(len(a), bool)
    if numba_active():
        return _segment_hits_nb(a, b, bvh.tri, bvh.bmin, bvh.bmax, bvh.left, bvh.right,
                                bvh.start, bvh.count, eps)
    return _segment_hits_np(a, b, bvh.tri, eps)
