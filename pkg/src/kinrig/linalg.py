"""Sparse normal-equation solves, dense symmetric eigenproblems and k-means."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .kernels import cholesky as _chol


class LinAlgError(Exception):
    pass


class NotPositiveDefinite(LinAlgError):
    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"matrix is not positive definite (pivot at row {row})")


class NoConvergence(LinAlgError):
    pass


@dataclass(eq=False)
class ResidualBlock:
    """One weighted term ``weight * ||J x - b||^2`` of a least-squares objective."""

    J: sp.csr_matrix
    b: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.J = sp.csr_matrix(self.J)
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        if self.J.shape[0] != self.b.shape[0]:
            raise ValueError("row count of J does not match b")
        if self.weight < 0:
            raise ValueError("block weights must be non-negative")

    @cached_property
    def gram(self) -> sp.csr_matrix:
        return (self.J.T @ self.J).tocsr()

    @cached_property
    def moment(self) -> np.ndarray:
        return self.J.T @ self.b

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.J @ x - self.b


@dataclass(eq=False)
class LeastSquaresSystem:
    n_cols: int
    blocks: list[ResidualBlock] = field(default_factory=list)

    def add(self, J, b=None, weight: float = 1.0) -> ResidualBlock:
        block = J if isinstance(J, ResidualBlock) else ResidualBlock(J, b, weight)
        if block.J.shape[1] != self.n_cols:
            raise ValueError(f"block has {block.J.shape[1]} columns, system has {self.n_cols}")
        self.blocks.append(block)
        return block

    def normal_equations(self) -> tuple[sp.csr_matrix, np.ndarray]:
        A = sp.csr_matrix((self.n_cols, self.n_cols))
        rhs = np.zeros(self.n_cols)
        for blk in self.blocks:
            if blk.weight == 0 or blk.J.shape[0] == 0:
                continue
            A = A + blk.weight * blk.gram
            rhs += blk.weight * blk.moment
        return A.tocsr(), rhs

    def objective(self, x: np.ndarray) -> float:
        return float(sum(blk.weight * np.dot(r, r) for blk in self.blocks
                         for r in [blk.residual(x)]))


class SparseCholesky:
    """Cholesky factorization of a sparse SPD matrix with an RCM ordering.

    The symbolic part (ordering and envelope) is computed from a sparsity
    pattern once; any matrix whose pattern fits inside it can then be
    factored repeatedly, which is how the tracker reuses one analysis for
    every outer iteration of every frame.
    """

    def __init__(self, pattern):
        pattern = sp.csr_matrix(pattern)
        n = pattern.shape[0]
        if pattern.shape != (n, n):
            raise ValueError("pattern must be square")
        pattern = pattern.copy()
        pattern.data = np.ones_like(pattern.data)   # structural: explicit zeros count
        sym = (pattern + pattern.T).tocsr()
        sym.setdiag(1.0)
        self.n = n
        self.perm = np.asarray(reverse_cuthill_mckee(sym, symmetric_mode=True), dtype=np.int64)
        self.iperm = np.empty(n, dtype=np.int64)
        self.iperm[self.perm] = np.arange(n)
        coo = sym.tocoo()
        r = self.iperm[coo.row]
        c = self.iperm[coo.col]
        lower = c <= r
        first = np.arange(n, dtype=np.int64)
        np.minimum.at(first, r[lower], c[lower])
        self.first = first
        self.ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.arange(n) - first + 1, out=self.ptr[1:])
        self._factor = None

    @property
    def envelope_size(self) -> int:
        return int(self.ptr[-1])

    def factorize(self, A) -> "SparseCholesky":
        A = sp.coo_matrix(A)
        if A.shape != (self.n, self.n):
            raise ValueError("matrix shape does not match the analysed pattern")
        r = self.iperm[A.row]
        c = self.iperm[A.col]
        keep = c <= r
        r, c, v = r[keep], c[keep], A.data[keep]
        if np.any(c < self.first[r]):
            raise ValueError("matrix has entries outside the analysed envelope")
        vals = np.zeros(self.envelope_size)
        np.add.at(vals, self.ptr[r] + c - self.first[r], v)
        diag = A.diagonal()
        tol = 1e-12 * max(float(np.abs(diag).max()) if diag.size else 0.0, 1e-300)
        fac, failed = _chol.factor(vals, self.ptr, self.first, tol)
        if failed >= 0:
            self._factor = None
            raise NotPositiveDefinite(int(self.perm[failed]))
        self._factor = fac
        return self

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._factor is None:
            raise LinAlgError("factorize() must succeed before solve()")
        b = np.asarray(b, dtype=np.float64)
        y = _chol.solve(self._factor, self.ptr, self.first, b[self.perm])
        return y[self.iperm]


def cholesky_solve(A, b: np.ndarray) -> np.ndarray:
    return SparseCholesky(A).factorize(A).solve(b)


def solve_normal_equations(system: LeastSquaresSystem,
                           factorization: SparseCholesky | None = None) -> np.ndarray:
    """Minimize ``sum_k w_k ||J_k x - b_k||^2`` through the normal equations.

    Raises NotPositiveDefinite when the stacked system does not determine x.
    """
    A, rhs = system.normal_equations()
    chol = factorization if factorization is not None else SparseCholesky(A)
    return chol.factorize(A).solve(rhs)


def symmetric_eigen(a, symmetry_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(float(np.abs(a).max()) if a.size else 0.0, 1.0)
    if a.size and float(np.abs(a - a.T).max()) > symmetry_tol * scale:
        raise ValueError("matrix is not symmetric")
    sym = 0.5 * (a + a.T)
    try:
        w, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return w, v


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(free.size)])
        chosen.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(1))
    return x[chosen].copy()


def kmeans_objective(x: np.ndarray, labels: np.ndarray, k: int) -> float:
    total = 0.0
    for c in range(k):
        members = x[labels == c]
        if len(members):
            total += float(((members - members.mean(0)) ** 2).sum())
    return total


def kmeans(rows, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-9,
           return_history: bool = False):
    """Seeded k-means++ / Lloyd clustering of the rows of a matrix.

    Every cluster in the result is non-empty. With ``return_history`` the
    within-cluster sum of squares after each iteration is returned as well.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if k == 1:
        labels = np.zeros(n, dtype=np.int64)
        return (labels, [kmeans_objective(x, labels, 1)]) if return_history else labels

    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k, rng)
    history = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        labels = np.argmin(d, axis=1)
        _fill_empty(x, labels, d, k)
        new = np.vstack([x[labels == c].mean(0) for c in range(k)])
        shift = float(np.sqrt(((new - centers) ** 2).sum(1)).max())
        centers = new
        history.append(kmeans_objective(x, labels, k))
        if shift <= tol:
            break
    return (labels, history) if return_history else labels


def _fill_empty(x, labels, d, k):
    # Move the point worst served by its own center into each empty cluster.
    for c in range(k):
        if np.any(labels == c):
            continue
        counts = np.bincount(labels, minlength=k)
        own = d[np.arange(len(x)), labels]
        own = np.where(counts[labels] > 1, own, -1.0)
        labels[int(np.argmax(own))] = c
