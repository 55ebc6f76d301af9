import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from kinrig import motion_seg, synth
from kinrig.mesh import build_halfedge, vertex_normals
from kinrig.motion_seg import (
    DegenerateAffinity, Segmentation, UnreachableVertex, affinity, compute_dt, normalized_laplacian,
    propagate_labels, spectral_segment, trajectory_distance,
)
from kinrig.tracking import TrajectorySet


def static(n=5, T=6):
    rng = np.random.default_rng(0)
    p = np.repeat(rng.standard_normal((1, n, 3)), T, 0)
    nrm = np.repeat(np.tile([0.0, 0.0, 1.0], (1, n, 1)), T, 0)
    return TrajectorySet(p, nrm)


@pytest.fixture(scope="module")
def hinge_traj():
    gt = synth.make_pipe()
    seq = np.array(synth.animate(gt, [synth.Curve.linear(0.0, 60.0, 30)], 30))
    nrm = np.array([vertex_normals(p, gt.mesh.faces) for p in seq])
    return gt, TrajectorySet(seq, nrm)


def test_dt_static_clamps_to_one():
    assert compute_dt(static()) == 1


def test_dt_single_jump():
    tr = static(T=20)
    p = tr.positions.copy()
    p[5:, 2] += [3.0, 0, 0]
    tr = TrajectorySet(p, tr.normals)
    assert compute_dt(tr, "normalized") == min(2 * 3, 19)
    assert compute_dt(tr, "raw") == 6
    assert compute_dt(tr, "fixed:4") == 4


def test_dt_doubles_with_displacement():
    rng = np.random.default_rng(1)
    p = np.cumsum(rng.uniform(0.5, 1.0, (40, 10, 3)), axis=0)
    nrm = np.tile([0.0, 0.0, 1.0], (40, 10, 1))
    a = compute_dt(TrajectorySet(p, nrm), "raw")
    b = compute_dt(TrajectorySet(2 * p, nrm), "raw")
    # rounding happens after doubling, so the two can differ by one frame
    assert abs(b - min(2 * a, 39)) <= 1


def test_dt_bad_mode():
    with pytest.raises(ValueError):
        compute_dt(static(), "weekly")


def test_distance_identical_pair():
    tr = static()
    assert trajectory_distance(tr, 2, 2, 1) == (0.0, 0.0, 0.0)


def test_distance_two_point_separation():
    p = np.zeros((3, 2, 3))
    p[:, 1, 0] = [10.0, 15.0, 15.0]
    nrm = np.tile([0.0, 0.0, 1.0], (3, 2, 1))
    dv, dn, d = trajectory_distance(TrajectorySet(p, nrm), 0, 1, 1)
    assert (dv, dn, d) == (5.0, 0.0, 5.0)


def test_distance_rigid_body_zero():
    rng = np.random.default_rng(2)
    pts = rng.standard_normal((8, 3)) * 50
    nrm = rng.standard_normal((8, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    R = Rotation.random(12, random_state=3).as_matrix()
    t = rng.standard_normal((12, 3)) * 100
    P = np.einsum("tij,nj->tni", R, pts) + t[:, None]
    N = np.einsum("tij,nj->tni", R, nrm)
    tr = TrajectorySet(P, N)
    for i, j in [(0, 1), (3, 7)]:
        dv, dn, d = trajectory_distance(tr, i, j, 3)
        assert dv <= 1e-9 and dn <= 1e-6 and d <= 1e-6


def test_affinity_values():
    assert motion_seg.affinity_from_distance(np.array([[0.0, 10.0], [10.0, 0.0]]))[0, 1] == \
        pytest.approx(np.exp(-1.0), abs=1e-15)
    assert np.exp(-1.0) == pytest.approx(0.3679, abs=1e-4)


def test_affinity_invariants(hinge_traj):
    _, tr = hinge_traj
    aff = affinity(tr, 200, seed=5)
    A = aff.A
    assert aff.size == 200 and np.all(np.diff(aff.samples) > 0)
    assert np.array_equal(A, A.T)
    assert np.all(np.diag(A) == 1.0)
    assert np.all(A > 0) and np.all(A <= 1)


def test_sampling_caps_at_vertex_count(hinge_traj):
    _, tr = hinge_traj
    assert affinity(tr, 10 ** 6).size == tr.n_vertices


def block_affinity(sizes, eps=1e-12):
    n = sum(sizes)
    A = np.full((n, n), eps)
    start = 0
    truth = np.empty(n, dtype=int)
    for b, s in enumerate(sizes):
        A[start:start + s, start:start + s] = 1.0
        truth[start:start + s] = b
        start += s
    return A, truth


def same_partition(a, b):
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


@pytest.mark.parametrize("sizes", [(6, 9), (4, 5, 7), (3, 4, 5, 6, 7)])
def test_block_diagonal_recovery(sizes):
    A, truth = block_affinity(sizes)
    res = spectral_segment(A, 0.7, seed=0)
    assert res.k == len(sizes)
    assert np.count_nonzero(res.eigenvalues < 0.1) == len(sizes)
    assert same_partition(res.labels, truth)
    dense = np.linalg.eigvalsh(normalized_laplacian(A))
    assert np.allclose(res.eigenvalues, dense, atol=1e-10)


def test_complete_graph_single_cluster():
    A = np.ones((10, 10))
    for thr in (0.1, 0.5, 0.9):
        res = spectral_segment(A, thr)
        assert res.k == 1 and len(set(res.labels)) == 1
    # with unit self-affinity the matrix is I - 11^T / n: one zero, the rest exactly 1
    w = spectral_segment(A).eigenvalues
    assert abs(w[0]) <= 1e-12 and np.allclose(w[1:], 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_spectrum_range_and_threshold_monotone(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0, 40, (25, 25))
    A = motion_seg.affinity_from_distance(0.5 * (d + d.T))
    ks = [spectral_segment(A, t, seed=0).k for t in (0.2, 0.4, 0.7, 0.98, 1.5)]
    assert ks == sorted(ks)
    w = spectral_segment(A).eigenvalues
    assert w[0] >= -1e-9 and w[-1] <= 2 + 1e-9


def test_zero_degree_rejected():
    with pytest.raises(DegenerateAffinity):
        normalized_laplacian(np.zeros((3, 3)))


def test_threshold_range():
    with pytest.raises(ValueError):
        spectral_segment(np.ones((3, 3)), 2.5)


def test_hinge_purity_and_recovery(hinge_traj):
    gt, tr = hinge_traj
    aff = affinity(tr, 1000, seed=0)
    lab = gt.labels[aff.samples]
    hard = gt.weights[aff.samples].max(1) == 1.0        # outside the blend band
    A = aff.A[np.ix_(hard, hard)]
    lh = lab[hard]
    same = lh[:, None] == lh[None]
    assert A[same].min() >= A[~same].max()
    res = spectral_segment(aff, 0.7, seed=0)
    assert res.k == 2
    assert same_partition(res.labels, lab)


def test_determinism(hinge_traj):
    gt, tr = hinge_traj
    a = motion_seg.segment(tr, gt.mesh)[0]
    b = motion_seg.segment(tr, gt.mesh)[0]
    assert np.array_equal(a.labels, b.labels) and a.k == b.k


def path_mesh(n):
    """A strip of 2n vertices whose edge graph is essentially a ladder."""
    top = np.c_[np.arange(n), np.zeros(n), np.zeros(n)]
    bot = top + [0.0, 1e-3, 0.0]
    f = []
    for i in range(n - 1):
        f += [[i, i + 1, n + i], [i + 1, n + i + 1, n + i]]
    return build_halfedge(np.vstack([top, bot]), f)


def test_propagation_identity_and_single():
    m = path_mesh(6)
    labs = np.arange(12) % 3
    seg = propagate_labels(m, labs, np.arange(12))
    assert same_partition(seg.labels, labs)
    seg = propagate_labels(m, np.array([0]), np.array([4]))
    assert seg.k == 1 and np.all(seg.labels == 0)


def test_propagation_path_midpoint():
    # 20-vertex path graph, sources at both ends, exact tie in the middle
    n = 21
    edges = np.c_[np.arange(n - 1), np.arange(1, n)]
    lab, _ = motion_seg.propagate_on_graph(n, edges, np.ones(n - 1), np.array([0, n - 1]),
                                           np.array([0, 1]))
    assert lab[:11].tolist() == [0] * 11 and lab[11:].tolist() == [1] * 10
    n = 20
    edges = np.c_[np.arange(n - 1), np.arange(1, n)]
    lab, _ = motion_seg.propagate_on_graph(n, edges, np.ones(n - 1), np.array([0, n - 1]),
                                           np.array([0, 1]))
    assert lab.tolist() == [0] * 10 + [1] * 10


def test_unreachable_component():
    v = np.r_[np.eye(3), np.eye(3) + 5]
    m = build_halfedge(v, [[0, 1, 2], [3, 4, 5]])
    with pytest.raises(UnreachableVertex):
        propagate_labels(m, np.array([0]), np.array([0]))


def test_segmentation_file(tmp_path):
    seg = Segmentation(np.array([0, 1, 1, 0]), 2)
    seg.save(tmp_path / "s.txt")
    assert (tmp_path / "s.txt").read_text().splitlines()[0] == "k 2"
    back = Segmentation.load(tmp_path / "s.txt")
    assert np.array_equal(back.labels, seg.labels) and back.k == 2
    (tmp_path / "bad.txt").write_text("k 1\n0\n3\n")
    with pytest.raises(ValueError):
        Segmentation.load(tmp_path / "bad.txt")


def test_affinity_dump(tmp_path, hinge_traj):
    _, tr = hinge_traj
    aff = affinity(tr, 30)
    aff.save(tmp_path / "a.bin")
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:4] == b"AFFN" and len(raw) == 8 + 30 * 30 * 8
    assert np.array_equal(motion_seg.AffinityMatrix.load_matrix(tmp_path / "a.bin"), aff.A)
