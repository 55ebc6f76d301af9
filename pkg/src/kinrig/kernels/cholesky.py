"""Envelope (variable-band) Cholesky factorization.

The factor is stored row by row: row ``i`` holds columns ``first[i]..i``
contiguously at ``ptr[i]``. Under a bandwidth-reducing ordering the fill of
a Cholesky factor stays inside this envelope, so no symbolic fill analysis
beyond ``first`` is needed.

The numba path runs the row-oriented (bordering) algorithm directly on the
envelope. The numpy path copies the envelope into LAPACK lower band storage
and calls the blocked banded routines, which win when the envelope fills most
of the band.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from ._backend import njit, numba_active


@njit(cache=True, fastmath=True)
def _dot(vals, a, b, lo, hi):
    """sum_k vals[a + k] * vals[b + k] for k in [lo, hi), four running sums."""
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    k = lo
    while k + 4 <= hi:
        s0 += vals[a + k] * vals[b + k]
        s1 += vals[a + k + 1] * vals[b + k + 1]
        s2 += vals[a + k + 2] * vals[b + k + 2]
        s3 += vals[a + k + 3] * vals[b + k + 3]
        k += 4
    while k < hi:
        s0 += vals[a + k] * vals[b + k]
        k += 1
    return (s0 + s1) + (s2 + s3)


@njit(cache=True, fastmath=True)
def _factor_nb(vals, ptr, first, tol):
    n = first.shape[0]
    for i in range(n):
        fi = first[i]
        oi = ptr[i] - fi                 # vals[oi + k] is entry (i, k)
        for j in range(fi, i):
            oj = ptr[j] - first[j]
            k0 = fi if fi > first[j] else first[j]
            s = _dot(vals, oi, oj, k0, j)
            vals[oi + j] = (vals[oi + j] - s) / vals[oj + j]
        s = _dot(vals, oi, oi, fi, i)
        d = vals[oi + i] - s
        if not d > tol:
            return i
        vals[oi + i] = math.sqrt(d)
    return -1


@njit(cache=True, fastmath=True)
def _solve_nb(vals, ptr, first, rhs):
    n = first.shape[0]
    x = rhs.copy()
    for c in range(x.shape[1]):
        for i in range(n):
            fi = first[i]
            pi = ptr[i]
            s = x[i, c]
            for k in range(fi, i):
                s -= vals[pi + k - fi] * x[k, c]
            x[i, c] = s / vals[pi + i - fi]
        for i in range(n - 1, -1, -1):
            fi = first[i]
            pi = ptr[i]
            xi = x[i, c] / vals[pi + i - fi]
            x[i, c] = xi
            for k in range(fi, i):
                x[k, c] -= vals[pi + k - fi] * xi
    return x


def _to_band(vals, ptr, first):
    n = first.shape[0]
    width = int((np.arange(n) - first).max()) if n else 0
    band = np.zeros((width + 1, n))
    rows = np.repeat(np.arange(n), np.diff(ptr))
    cols = np.concatenate([np.arange(f, i + 1) for i, f in enumerate(first)]) if n else np.zeros(0, int)
    band[rows - cols, cols] = vals
    return band


def factor(vals: np.ndarray, ptr: np.ndarray, first: np.ndarray, tol: float):
    """Factor the envelope in place (numba) or return a band factor (numpy).

    Returns ``(factor_data, failed_row)`` with ``failed_row == -1`` on success.
    """
    if numba_active():
        data = vals.copy()
        failed = _factor_nb(data, ptr, first, tol)
        return ("envelope", data), int(failed)
    band = _to_band(vals, ptr, first)
    try:
        lower = cholesky_banded(band, lower=True, check_finite=False)
    except LinAlgError as exc:
        row = int(str(exc).split()[0]) - 1 if str(exc)[:1].isdigit() else 0
        return None, max(row, 0)
    pivots = lower[0] ** 2
    bad = np.flatnonzero(~(pivots > tol))
    if bad.size:
        return None, int(bad[0])
    return ("band", lower), -1


def solve(factor_data, ptr: np.ndarray, first: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    kind, data = factor_data
    rhs2 = np.ascontiguousarray(rhs.reshape(rhs.shape[0], -1), dtype=np.float64)
    if kind == "envelope":
        out = _solve_nb(data, ptr, first, rhs2)
    else:
        out = cho_solve_banded((data, True), rhs2, check_finite=False)
    return out.reshape(rhs.shape)
