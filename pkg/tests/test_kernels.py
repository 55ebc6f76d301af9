"""The numba kernels and their numpy fallbacks must agree."""
import numpy as np
import pytest
import scipy.sparse as sp

from kinrig import linalg, synth
from kinrig.kernels import _backend
from kinrig.kernels._backend import get_backend, set_backend, use_backend
from kinrig.kernels.bvh import build_bvh, ray_crossings, segment_hits
from kinrig.kernels.raster import rasterize
from kinrig.kernels.trajectories import pairwise_changes

needs_numba = pytest.mark.skipif(not _backend.HAS_NUMBA, reason="numba not installed")


def both(fn):
    with use_backend("numpy"):
        a = fn()
    with use_backend("numba"):
        b = fn()
    return a, b


def test_use_backend_restores():
    before = get_backend()
    with use_backend("numpy"):
        assert get_backend() == "numpy"
    assert get_backend() == before
    with pytest.raises(ValueError):
        set_backend("fortran")


@needs_numba
def test_ray_and_segment_parity(star_gt):
    m = star_gt.mesh
    bvh = build_bvh(m.vertices, m.faces)
    rng = np.random.default_rng(0)
    p = rng.uniform(m.vertices.min(0) - 5, m.vertices.max(0) + 5, (400, 3))
    d = np.array([0.3, -0.5, 0.81])
    (ha, ba), (hb, bb) = both(lambda: ray_crossings(bvh, p, d))
    assert np.array_equal(ha, hb) and np.array_equal(ba, bb)
    q = rng.uniform(m.vertices.min(0), m.vertices.max(0), (400, 3))
    sa, sb = both(lambda: segment_hits(bvh, p, q))
    assert np.array_equal(sa, sb) and sa.any() and not sa.all()


@needs_numba
def test_raster_parity(lamp_gt):
    cam = synth.default_camera()
    pc = cam.to_camera(lamp_gt.mesh.vertices)
    (da, fa), (db, fb) = both(lambda: rasterize(pc, lamp_gt.mesh.faces, cam.fx, cam.fy, cam.cx, cam.cy,
                                                cam.width, cam.height))
    assert np.array_equal(np.isfinite(da), np.isfinite(db))
    ok = np.isfinite(da)
    assert np.abs(da[ok] - db[ok]).max() <= 1e-9
    # face ids may differ only where two faces tie in depth
    diff = fa != fb
    assert diff.mean() < 1e-3


@needs_numba
def test_trajectory_parity():
    rng = np.random.default_rng(2)
    pos = rng.standard_normal((12, 30, 3)) * 20
    nrm = rng.standard_normal((12, 30, 3))
    nrm /= np.linalg.norm(nrm, axis=2, keepdims=True)
    (va, na), (vb, nb) = both(lambda: pairwise_changes(pos, nrm, 3))
    assert np.abs(va - vb).max() <= 1e-12 * max(va.max(), 1)
    assert np.abs(na - nb).max() <= 1e-12
    assert np.array_equal(va, va.T) and np.all(np.diag(va) == 0)


@needs_numba
def test_cholesky_parity():
    rng = np.random.default_rng(3)
    J = sp.random(300, 150, density=0.05, random_state=rng, format="csr") + sp.eye(300, 150)
    A = (J.T @ J).tocsr()
    b = rng.standard_normal(150)
    xa, xb = both(lambda: linalg.cholesky_solve(A, b))
    assert np.abs(xa - xb).max() <= 1e-10 * np.abs(xa).max()
    assert np.linalg.norm(A @ xa - b) <= 1e-9 * np.linalg.norm(b)
