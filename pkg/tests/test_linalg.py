import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from kinrig import linalg


def random_system(rng, n, m=None, density=0.1):
    m = m or 2 * n
    J = sp.random(m, n, density=density, random_state=rng, format="csr")
    J = sp.vstack([J, sp.identity(n) * 0.1]).tocsr()     # full column rank
    b = rng.standard_normal(J.shape[0])
    return J, b


def test_identity_block():
    s = linalg.LeastSquaresSystem(3)
    s.add(sp.identity(3), [1, 2, 3])
    assert np.allclose(linalg.solve_normal_equations(s), [1, 2, 3], atol=1e-14)


def test_two_blocks_average():
    s = linalg.LeastSquaresSystem(3)
    s.add(sp.identity(3), np.zeros(3))
    s.add(sp.identity(3), [2, 2, 2])
    assert np.allclose(linalg.solve_normal_equations(s), 1, atol=1e-14)


def test_dense_oracle_50x30():
    rng = np.random.default_rng(7)
    J = sp.random(50, 30, density=0.3, random_state=rng, format="csr") + sp.eye(50, 30)
    b = rng.standard_normal(50)
    s = linalg.LeastSquaresSystem(30)
    s.add(J, b)
    x = linalg.solve_normal_equations(s)
    ref = np.linalg.pinv(J.toarray()) @ b
    assert np.abs(x - ref).max() <= 1e-8


def test_weighted_blocks_match_dense():
    rng = np.random.default_rng(11)
    n = 40
    s = linalg.LeastSquaresSystem(n)
    rows, rhs = [], []
    for w in (1.0, 0.25, 3.0):
        J, b = random_system(rng, n)
        s.add(J, b, w)
        rows.append(np.sqrt(w) * J.toarray())
        rhs.append(np.sqrt(w) * b)
    x = linalg.solve_normal_equations(s)
    ref = np.linalg.pinv(np.vstack(rows)) @ np.concatenate(rhs)
    assert np.abs(x - ref).max() <= 1e-8 * max(np.abs(ref).max(), 1)
    A, g = s.normal_equations()
    assert np.linalg.norm(A @ x - g) <= 1e-8 * np.linalg.norm(g)


def test_underdetermined_raises():
    s = linalg.LeastSquaresSystem(3)
    s.add(sp.csr_matrix(([1.0], ([0], [0])), shape=(1, 3)), [1.0])
    with pytest.raises(linalg.NotPositiveDefinite):
        linalg.solve_normal_equations(s)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        linalg.ResidualBlock(sp.identity(2), np.zeros(2), -1.0)


def test_column_mismatch_rejected():
    s = linalg.LeastSquaresSystem(3)
    with pytest.raises(ValueError):
        s.add(sp.identity(2), np.zeros(2))


def test_reused_analysis_and_envelope_check():
    A = sp.diags([np.full(9, -1.0), np.full(10, 4.0), np.full(9, -1.0)], [-1, 0, 1], format="csr")
    chol = linalg.SparseCholesky(A)
    x1 = chol.factorize(A).solve(np.ones(10))
    x2 = chol.factorize(2 * A).solve(np.ones(10))
    assert np.allclose(x1, 2 * x2)
    far = A.tolil()
    far[0, 9] = far[9, 0] = 0.5
    with pytest.raises(ValueError):
        linalg.SparseCholesky(A).factorize(far.tocsr())


def test_solve_before_factorize():
    with pytest.raises(linalg.LinAlgError):
        linalg.SparseCholesky(sp.identity(3)).solve(np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 120), st.integers(0, 2 ** 31 - 1))
def test_cholesky_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    J, b = random_system(rng, n)
    A = (J.T @ J).tocsr()
    g = J.T @ b
    x = linalg.cholesky_solve(A, g)
    ref = np.linalg.solve(A.toarray(), g)
    assert np.linalg.norm(x - ref) <= 1e-8 * max(np.linalg.norm(ref), 1e-300)


def test_eigen_diagonal():
    w, v = linalg.symmetric_eigen(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(w, [1, 2, 3])
    assert np.allclose(np.abs(v), np.eye(3)[:, [1, 2, 0]])


def test_eigen_swap():
    w, _ = linalg.symmetric_eigen([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(w, [-1, 1], atol=1e-15)


def test_eigen_reconstruction():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((100, 100))
    a = a + a.T
    w, v = linalg.symmetric_eigen(a)
    assert np.all(np.diff(w) >= 0)
    assert np.abs(v @ np.diag(w) @ v.T - a).max() <= 1e-7 * np.abs(a).max()
    assert np.abs(v.T @ v - np.eye(100)).max() <= 1e-8
    assert np.abs(a @ v - v * w).max() <= 1e-7 * np.linalg.norm(a, 2)


def test_eigen_rejects_asymmetric():
    with pytest.raises(ValueError):
        linalg.symmetric_eigen([[0.0, 1.0], [0.0, 0.0]])


def test_kmeans_single_cluster():
    assert np.array_equal(linalg.kmeans(np.random.default_rng(0).random((9, 2)), 1), np.zeros(9))


def test_kmeans_separated_groups():
    rng = np.random.default_rng(2)
    x = np.vstack([rng.normal(0, 0.1, (20, 3)), rng.normal(100, 0.1, (20, 3))])
    lab = linalg.kmeans(x, 2, seed=4)
    assert len(set(lab[:20])) == 1 and len(set(lab[20:])) == 1 and lab[0] != lab[-1]


def exhaustive_optimum(x, k):
    best = np.inf
    for assign in itertools.product(range(k), repeat=len(x)):
        a = np.array(assign)
        if len(set(assign)) < k:
            continue
        best = min(best, linalg.kmeans_objective(x, a, k))
    return best


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_not_below_exhaustive_optimum(seed):
    x = np.random.default_rng(seed).random((8, 2))
    opt = exhaustive_optimum(x, 3)
    lab = linalg.kmeans(x, 3, seed=seed)
    assert linalg.kmeans_objective(x, lab, 3) >= opt - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_kmeans_contract(k, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((40, 3))
    x[:10] = x[0]                                # duplicates exercise the empty-cluster path
    lab, hist = linalg.kmeans(x, k, seed=seed, return_history=True)
    assert lab.min() >= 0 and lab.max() < k
    assert np.all(np.bincount(lab, minlength=k) > 0)
    assert np.all(np.diff(hist) <= 1e-9 * max(hist[0], 1))
    assert np.array_equal(lab, linalg.kmeans(x, k, seed=seed))
