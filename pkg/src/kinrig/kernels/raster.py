"""Z-buffer rasterization of triangles in camera coordinates.

Pixels are sampled at integer coordinates. Depth at a pixel is the exact
intersection of its viewing ray with the triangle plane, so back-projected
pixels lie on the source triangle to rounding error. Triangles facing away
from the camera are culled.
"""
from __future__ import annotations

import math

import numpy as np

from ._backend import njit, numba_active


@njit(cache=True)
def _raster_nb(cam_pts, faces, fx, fy, cx, cy, width, height, depth, face_id):
    for f in range(faces.shape[0]):
        a = cam_pts[faces[f, 0]]
        b = cam_pts[faces[f, 1]]
        c = cam_pts[faces[f, 2]]
        if a[2] <= 0.0 or b[2] <= 0.0 or c[2] <= 0.0:
            continue
        e1x, e1y, e1z = b[0] - a[0], b[1] - a[1], b[2] - a[2]
        e2x, e2y, e2z = c[0] - a[0], c[1] - a[1], c[2] - a[2]
        nx = e1y * e2z - e1z * e2y
        ny = e1z * e2x - e1x * e2z
        nz = e1x * e2y - e1y * e2x
        nd = nx * a[0] + ny * a[1] + nz * a[2]
        if nd >= 0.0:
            continue
        ua = fx * a[0] / a[2] + cx
        va = fy * a[1] / a[2] + cy
        ub = fx * b[0] / b[2] + cx
        vb = fy * b[1] / b[2] + cy
        uc = fx * c[0] / c[2] + cx
        vc = fy * c[1] / c[2] + cy
        area = (ub - ua) * (vc - va) - (vb - va) * (uc - ua)
        if area == 0.0:
            continue
        x0 = max(int(math.ceil(min(ua, min(ub, uc)))), 0)
        x1 = min(int(math.floor(max(ua, max(ub, uc)))), width - 1)
        y0 = max(int(math.ceil(min(va, min(vb, vc)))), 0)
        y1 = min(int(math.floor(max(va, max(vb, vc)))), height - 1)
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                w0 = ((ub - x) * (vc - y) - (vb - y) * (uc - x)) / area
                w1 = ((uc - x) * (va - y) - (vc - y) * (ua - x)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                rx = (x - cx) / fx
                ry = (y - cy) / fy
                den = nx * rx + ny * ry + nz
                if den == 0.0:
                    continue
                z = nd / den
                if z > 0.0 and z < depth[y, x]:
                    depth[y, x] = z
                    face_id[y, x] = f


def _raster_np(cam_pts, faces, fx, fy, cx, cy, width, height, depth, face_id):
    p = cam_pts[faces]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    n = np.cross(b - a, c - a)
    nd = (n * a).sum(1)
    ok = (p[:, :, 2] > 0).all(1) & (nd < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * p[:, :, 0] / p[:, :, 2] + cx
        v = fy * p[:, :, 1] / p[:, :, 2] + cy
    area = (u[:, 1] - u[:, 0]) * (v[:, 2] - v[:, 0]) - (v[:, 1] - v[:, 0]) * (u[:, 2] - u[:, 0])
    ok &= area != 0
    for f in np.flatnonzero(ok):
        ua, ub, uc = u[f]
        va, vb, vc = v[f]
        x0 = max(int(math.ceil(min(ua, ub, uc))), 0)
        x1 = min(int(math.floor(max(ua, ub, uc))), width - 1)
        y0 = max(int(math.ceil(min(va, vb, vc))), 0)
        y1 = min(int(math.floor(max(va, vb, vc))), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        xs = xs.astype(np.float64)
        ys = ys.astype(np.float64)
        w0 = ((ub - xs) * (vc - ys) - (vb - ys) * (uc - xs)) / area[f]
        w1 = ((uc - xs) * (va - ys) - (vc - ys) * (ua - xs)) / area[f]
        w2 = 1.0 - w0 - w1
        den = n[f, 0] * (xs - cx) / fx + n[f, 1] * (ys - cy) / fy + n[f, 2]
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0) & (den != 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = nd[f] / den
        iy = ys[inside].astype(np.int64)
        ix = xs[inside].astype(np.int64)
        zz = z[inside]
        better = (zz > 0) & (zz < depth[iy, ix])
        depth[iy[better], ix[better]] = zz[better]
        face_id[iy[better], ix[better]] = f


def rasterize(cam_pts: np.ndarray, faces: np.ndarray, fx: float, fy: float, cx: float, cy: float,
              width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(depth, face_id)``; background pixels hold ``inf`` and ``-1``."""
    depth = np.full((height, width), np.inf)
    face_id = np.full((height, width), -1, dtype=np.int64)
    pts = np.ascontiguousarray(cam_pts, dtype=np.float64)
    tri = np.ascontiguousarray(faces, dtype=np.int64)
    impl = _raster_nb if numba_active() else _raster_np
    impl(pts, tri, float(fx), float(fy), float(cx), float(cy), int(width), int(height), depth, face_id)
    return depth, face_id
