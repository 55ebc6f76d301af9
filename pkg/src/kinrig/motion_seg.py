"""Rigid-part segmentation from vertex trajectories.

Pairs of trajectories on the same rigid part keep their distance and the
angle between their normals. The largest change of either quantity over a
time window ``dt`` gives a distance between trajectories, which becomes an
affinity; spectral clustering of a seeded sample of trajectories then
picks the number of parts from the spectrum and labels the samples, and
labels spread to every other vertex along mesh geodesics.
"""
from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from .kernels.trajectories import pairwise_changes
from .mesh import Mesh
from .tracking import TrajectorySet

DEFAULT_LAMBDA = 0.1
DEFAULT_SAMPLES = 1000
# exp(-lambda d) underflows for very distant pairs; keep every affinity positive
MIN_AFFINITY = np.finfo(np.float64).tiny


class SegmentationError(Exception):
    pass


class DegenerateAffinity(SegmentationError):
    pass


class UnreachableVertex(SegmentationError):
    pass


# ------------------------------------------------------------ time interval

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def frame_displacements(traj: TrajectorySet) -> np.ndarray:
    """(T-1, n) per-frame displacement length of every vertex."""
    return np.linalg.norm(np.diff(traj.positions, axis=0), axis=2)


def compute_dt(traj: TrajectorySet, mode: str = "normalized") -> int:
    """Window length in frames, proportional to the largest per-frame motion.

    ``normalized`` divides twice the largest displacement by the median
    per-frame displacement (1 mm when the median vanishes), ``raw`` reads the
    millimetre value directly as a frame count, and ``fixed:<n>`` forces
    ``n``. The result is clamped to ``[1, T-1]``.
    """
    T = traj.n_frames
    if T < 2:
        raise ValueError("need at least two frames")
    mode = str(mode)
    if mode.startswith("fixed:"):
        dt = int(mode.split(":", 1)[1])
    else:
        disp = frame_displacements(traj)
        peak = float(disp.max()) if disp.size else 0.0
        if mode == "raw":
            dt = _round_half_up(2.0 * peak)
        elif mode == "normalized":
            med = float(np.median(disp)) if disp.size else 0.0
            unit = med if med > 1e-9 else 1.0
            dt = _round_half_up(2.0 * peak / unit)
        else:
            raise ValueError(f"unknown dt mode {mode!r}")
    return int(min(max(dt, 1), T - 1))


# ------------------------------------------------------------ distances

def trajectory_distance(traj: TrajectorySet, i: int, j: int, dt: int) -> tuple[float, float, float]:
    """``(d_v, d_n, d)`` for one pair of vertices."""
    pos = traj.positions[:, [i, j]]
    nrm = traj.normals[:, [i, j]]
    dv, dn = pairwise_changes(pos, nrm, dt)
    a, b = float(dv[0, 1]), float(dn[0, 1])
    return a, b, (1.0 + b) * a


def distance_matrices(traj: TrajectorySet, samples: np.ndarray, dt: int):
    """``(d_v, d_n, d)`` over all pairs of the sampled trajectories."""
    idx = np.asarray(samples, dtype=np.int64)
    dv, dn = pairwise_changes(traj.positions[:, idx], traj.normals[:, idx], dt)
    return dv, dn, (1.0 + dn) * dv


@dataclass(frozen=True)
class AffinityMatrix:
    A: np.ndarray
    samples: np.ndarray       # sample -> vertex index, ascending
    dt: int
    lam: float

    @property
    def size(self) -> int:
        return len(self.samples)

    def save(self, path) -> None:
        s = self.size
        with open(path, "wb") as fh:
            fh.write(b"AFFN" + struct.pack("<I", s))
            fh.write(np.ascontiguousarray(self.A, dtype="<f8").tobytes())

    @staticmethod
    def load_matrix(path) -> np.ndarray:
        data = Path(path).read_bytes()
        if data[:4] != b"AFFN":
            raise ValueError(f"{path}: not an affinity file")
        (s,) = struct.unpack("<I", data[4:8])
        return np.frombuffer(data, dtype="<f8", offset=8, count=s * s).reshape(s, s).copy()


def sample_vertices(n: int, sample_count: int, seed: int = 0,
                    areas: np.ndarray | None = None) -> np.ndarray:
    """Sorted vertex sample drawn without replacement (area-weighted if given)."""
    s = min(int(sample_count), n)
    if s == n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    p = None
    if areas is not None:
        p = np.asarray(areas, dtype=np.float64)
        p = p / p.sum()
    return np.sort(rng.choice(n, size=s, replace=False, p=p))


def affinity_from_distance(d: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    A = np.exp(-lam * d)
    np.maximum(A, MIN_AFFINITY, out=A)
    np.fill_diagonal(A, 1.0)
    return A


def affinity(traj: TrajectorySet, sample_count: int = DEFAULT_SAMPLES, lam: float = DEFAULT_LAMBDA,
             seed: int = 0, dt: int | None = None, dt_mode: str = "normalized",
             areas: np.ndarray | None = None) -> AffinityMatrix:
    samples = sample_vertices(traj.n_vertices, sample_count, seed, areas)
    if dt is None:
        dt = compute_dt(traj, dt_mode)
    _, _, d = distance_matrices(traj, samples, dt)
    return AffinityMatrix(affinity_from_distance(d, lam), samples, int(dt), float(lam))


# ------------------------------------------------------------ spectral clustering

def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    deg = A.sum(1)
    if np.any(~(deg > 0)):
        raise DegenerateAffinity(f"row {int(np.flatnonzero(~(deg > 0))[0])} has zero degree")
    s = 1.0 / np.sqrt(deg)
    Lap = s[:, None] * (np.diag(deg) - A) * s[None, :]
    return 0.5 * (Lap + Lap.T)


@dataclass(frozen=True)
class SpectralResult:
    labels: np.ndarray
    k: int
    eigenvalues: np.ndarray


def spectral_segment(A, lambda_thresh: float = 0.7, seed: int = 0) -> SpectralResult:
    """Cluster count from eigenvalues below ``lambda_thresh``, then k-means."""
    if not 0 < lambda_thresh < 2:
        raise ValueError("lambda_thresh must lie in (0, 2)")
    A = A.A if isinstance(A, AffinityMatrix) else np.asarray(A, dtype=np.float64)
    w, V = linalg.symmetric_eigen(normalized_laplacian(A))
    k = max(int(np.count_nonzero(w < lambda_thresh)), 1)
    labels = linalg.kmeans(V[:, :k], k, seed=seed)
    return SpectralResult(labels, k, w)


# ------------------------------------------------------------ label propagation

def propagate_on_graph(n: int, edges: np.ndarray, lengths: np.ndarray, sources: np.ndarray,
                       source_labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Multi-source Dijkstra; returns ``(labels, owning source rank)``.

    A vertex takes the label of the source with the smallest path length;
    equal lengths go to the source listed first.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lengths = np.asarray(lengths, dtype=np.float64)
    order = np.argsort(np.r_[edges[:, 0], edges[:, 1]], kind="stable")
    nbr = np.r_[edges[:, 1], edges[:, 0]][order]
    wts = np.r_[lengths, lengths][order]
    ptr = np.searchsorted(np.r_[edges[:, 0], edges[:, 1]][order], np.arange(n + 1))
    dist = np.full(n, np.inf)
    owner = np.full(n, -1, dtype=np.int64)
    heap = []
    for rank, v in enumerate(np.asarray(sources, dtype=np.int64)):
        if (0.0, rank) < (dist[v], owner[v] if owner[v] >= 0 else np.inf):
            dist[v] = 0.0
            owner[v] = rank
        heap.append((0.0, rank, int(v)))
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    while heap:
        d, rank, v = heapq.heappop(heap)
        if done[v] or (d, rank) != (dist[v], owner[v]):
            continue
        done[v] = True
        for k in range(ptr[v], ptr[v + 1]):
            u = nbr[k]
            nd = d + wts[k]
            if nd < dist[u] or (nd == dist[u] and rank < owner[u]):
                dist[u] = nd
                owner[u] = rank
                heapq.heappush(heap, (nd, rank, int(u)))
    labels = np.full(n, -1, dtype=np.int64)
    reached = owner >= 0
    labels[reached] = np.asarray(source_labels, dtype=np.int64)[owner[reached]]
    return labels, owner


@dataclass(frozen=True)
class Segmentation:
    labels: np.ndarray
    k: int
    eigenvalues: np.ndarray = np.zeros(0)

    def save(self, path) -> None:
        lines = [f"k {self.k}"] + [str(int(x)) for x in self.labels]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Segmentation":
        text = Path(path).read_text().split()
        if len(text) < 2 or text[0] != "k":
            raise ValueError(f"{path}: not a segmentation file")
        labels = np.asarray([int(x) for x in text[2:]], dtype=np.int64)
        k = int(text[1])
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"{path}: label outside [0, {k})")
        return cls(labels, k)


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber labels in order of first appearance."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(len(order))
    return remap[labels]


def propagate_labels(mesh: Mesh, sample_labels: np.ndarray, samples: np.ndarray,
                     eigenvalues: np.ndarray | None = None) -> Segmentation:
    e = mesh.edges
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    labels, owner = propagate_on_graph(mesh.n_vertices, e, lengths, samples, sample_labels)
    if np.any(owner < 0):
        v = int(np.flatnonzero(owner < 0)[0])
        raise UnreachableVertex(f"vertex {v} lies in a component without samples")
    labels = canonical_labels(labels)
    return Segmentation(labels, int(labels.max()) + 1,
                        np.zeros(0) if eigenvalues is None else np.asarray(eigenvalues))


@dataclass(frozen=True)
class SegmentConfig:
    lambda_thresh: float = 0.7
    lam: float = DEFAULT_LAMBDA
    sample_count: int = DEFAULT_SAMPLES
    seed: int = 0
    dt_mode: str = "normalized"


def segment(traj: TrajectorySet, mesh: Mesh, cfg: SegmentConfig = SegmentConfig()):
    """Full segmentation; returns ``(Segmentation, AffinityMatrix)``."""
    aff = affinity(traj, cfg.sample_count, cfg.lam, cfg.seed, dt_mode=cfg.dt_mode)
    res = spectral_segment(aff, cfg.lambda_thresh, cfg.seed)
    return propagate_labels(mesh, res.labels, aff.samples, res.eigenvalues), aff
