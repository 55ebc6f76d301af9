"""Pairwise trajectory distance kernels.

For every pair of sampled trajectories, the largest change over a window of
``dt`` frames of (a) the Euclidean distance between the two vertices and
(b) the angle between their normals, taken with atan2 so that nearly
parallel normals keep full precision.
"""
from __future__ import annotations

import math

import numpy as np

from ._backend import njit, numba_active


@njit(cache=True)
def _pairs_nb(pos, nrm, dt):
    T = pos.shape[0]
    s = pos.shape[1]
    dv = np.zeros((s, s))
    dn = np.zeros((s, s))
    dist = np.empty(T)
    ang = np.empty(T)
    for i in range(s):
        for j in range(i + 1, s):
            for t in range(T):
                dx = pos[t, i, 0] - pos[t, j, 0]
                dy = pos[t, i, 1] - pos[t, j, 1]
                dz = pos[t, i, 2] - pos[t, j, 2]
                dist[t] = math.sqrt(dx * dx + dy * dy + dz * dz)
                ax, ay, az = nrm[t, i, 0], nrm[t, i, 1], nrm[t, i, 2]
                bx, by, bz = nrm[t, j, 0], nrm[t, j, 1], nrm[t, j, 2]
                cx = ay * bz - az * by
                cy = az * bx - ax * bz
                cz = ax * by - ay * bx
                ang[t] = math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), ax * bx + ay * by + az * bz)
            mv = 0.0
            mn = 0.0
            for t in range(dt, T):
                a = abs(dist[t] - dist[t - dt])
                if a > mv:
                    mv = a
                b = abs(ang[t] - ang[t - dt])
                if b > mn:
                    mn = b
            dv[i, j] = mv
            dv[j, i] = mv
            dn[i, j] = mn
            dn[j, i] = mn
    return dv, dn


def _pairs_np(pos, nrm, dt):
    T, s, _ = pos.shape
    dv = np.zeros((s, s))
    dn = np.zeros((s, s))
    for i in range(s - 1):
        diff = pos[:, i:i + 1, :] - pos[:, i + 1:, :]
        dist = np.sqrt((diff * diff).sum(2))
        a, b = np.broadcast_arrays(nrm[:, i:i + 1, :], nrm[:, i + 1:, :])
        ang = np.arctan2(np.linalg.norm(np.cross(a, b), axis=2), (a * b).sum(2))
        if dt < T:
            mv = np.abs(dist[dt:] - dist[:-dt]).max(0)
            mn = np.abs(ang[dt:] - ang[:-dt]).max(0)
        else:
            mv = np.zeros(s - i - 1)
            mn = np.zeros(s - i - 1)
        dv[i, i + 1:] = mv
        dv[i + 1:, i] = mv
        dn[i, i + 1:] = mn
        dn[i + 1:, i] = mn
    return dv, dn


def pairwise_changes(positions: np.ndarray, normals: np.ndarray, dt: int) -> tuple[np.ndarray, np.ndarray]:
    """``(d_v, d_n)`` matrices for trajectories shaped ``(T, s, 3)``."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    nrm = np.ascontiguousarray(normals, dtype=np.float64)
    if numba_active():
        return _pairs_nb(pos, nrm, int(dt))
    return _pairs_np(pos, nrm, int(dt))
