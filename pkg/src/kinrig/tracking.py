"""Deformable template tracking against single-view depth frames.

Each frame minimizes a Laplacian smoothness term plus gamma-weighted data
terms: closest-point pulls for visible vertices and silhouette-ray
(Plücker) constraints for depth discontinuities. Given correspondences the
objective is quadratic in the vertex positions, so every outer iteration
is one exact sparse least-squares solve.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import linalg
from .kernels.raster import rasterize
from .mesh import Mesh, cotangent_laplacian, vertex_normals, voronoi_areas


class TrackingError(Exception):
    pass


SolveFailed = linalg.LinAlgError


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(3), np.zeros((3, 1))]))

    def __post_init__(self):
        pose = np.asarray(self.pose, dtype=np.float64).reshape(3, 4)
        object.__setattr__(self, "pose", pose)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        R = pose[:, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("camera pose rotation is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:, :3]

    @property
    def center(self) -> np.ndarray:
        return self.pose[:, 3]

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.center

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates ``(N, 2)`` and camera depth ``(N,)``."""
        pc = self.to_camera(points).reshape(-1, 3)
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.fx * pc[:, 0] / z + self.cx, self.fy * pc[:, 1] / z + self.cy], 1)
        return uv, z

    def ray_direction(self, pixels: np.ndarray) -> np.ndarray:
        px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        dc = np.stack([(px[:, 0] - self.cx) / self.fx, (px[:, 1] - self.cy) / self.fy,
                       np.ones(len(px))], 1)
        dc /= np.linalg.norm(dc, axis=1, keepdims=True)
        return dc @ self.rotation.T

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "pose": [float(x) for x in self.pose.ravel()]}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]),
                       np.asarray(d.get("pose", np.hstack([np.eye(3), np.zeros((3, 1))]).ravel()),
                                  dtype=np.float64))
        except KeyError as exc:
            raise ValueError(f"camera description lacks {exc.args[0]!r}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Camera":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if p.shape != n.shape:
            raise ValueError("points and normals differ in count")
        if not np.isfinite(p).all():
            raise ValueError("point cloud has non-finite coordinates")
        if len(n) and np.abs(np.linalg.norm(n, axis=1) - 1.0).max() > 1e-6:
            raise ValueError("point cloud normals must have unit length")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PluckerLine:
    d: np.ndarray
    m: np.ndarray

    def distance(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.cross(p, self.d) - self.m, axis=-1)


@dataclass(frozen=True)
class TrackerConfig:
    gamma_def: float = 0.005
    max_normal_angle: float = 45.0
    max_corr_dist: float = 10.0
    outer_iterations: int = 15
    occlusion_test: bool = True
    depth_tolerance: float = 5.0

    def __post_init__(self):
        if self.gamma_def < 0 or self.max_normal_angle <= 0 or self.max_corr_dist <= 0:
            raise ValueError("tracker thresholds must be positive")
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be at least 1")


@dataclass(frozen=True)
class PointMatches:
    vertices: np.ndarray   # (m,) vertex ids
    points: np.ndarray     # (m, 3) matched cloud points

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class RimMatches:
    vertices: np.ndarray   # (m,)
    d: np.ndarray          # (m, 3) unit directions
    m: np.ndarray          # (m, 3) moments

    def __len__(self) -> int:
        return len(self.vertices)


# ------------------------------------------------------------ correspondences

def nearest_lowest_index(tree: cKDTree, queries: np.ndarray, k: int = 4):
    """Nearest neighbors with exact distance ties resolved to the lowest index."""
    k = min(k, tree.n)
    dist, idx = tree.query(queries, k=k)
    if k == 1:
        return dist, idx
    best = dist[:, :1]
    cand = np.where(dist == best, idx, np.iinfo(np.int64).max)
    return dist[:, 0], cand.min(1)


def visible_vertices(mesh: Mesh, cam: Camera, occlusion: bool = True,
                     depth_tolerance: float = 5.0) -> np.ndarray:
    """Boolean mask of camera-facing vertices, optionally depth-buffer tested."""
    pos = mesh.vertices
    view = pos - cam.center
    facing = (mesh.normals * view).sum(1) < 0
    uv, z = cam.project(pos)
    ix = np.rint(uv[:, 0])
    iy = np.rint(uv[:, 1])
    inside = (z > 0) & (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
    vis = facing & inside
    if not occlusion or not vis.any():
        return vis
    # rasterize only the image window the mesh can cover
    ok = z > 0
    x0 = max(int(np.floor(uv[ok, 0].min())) - 2, 0)
    y0 = max(int(np.floor(uv[ok, 1].min())) - 2, 0)
    x1 = min(int(np.ceil(uv[ok, 0].max())) + 3, cam.width)
    y1 = min(int(np.ceil(uv[ok, 1].max())) + 3, cam.height)
    depth, _ = rasterize(cam.to_camera(pos), mesh.faces, cam.fx, cam.fy, cam.cx - x0, cam.cy - y0,
                         x1 - x0, y1 - y0)
    # deepest finite sample of the 3x3 neighborhood; a vertex on the silhouette
    # always has its own surface in at least one neighbor
    padded = np.pad(np.where(np.isfinite(depth), depth, -np.inf), 1, constant_values=-np.inf)
    H, W = depth.shape
    deepest = np.full(depth.shape, -np.inf)
    for dy in range(3):
        for dx in range(3):
            np.maximum(deepest, padded[dy:dy + H, dx:dx + W], out=deepest)
    iy = iy - y0
    ix = ix - x0
    ids = np.flatnonzero(vis)
    ref = deepest[iy[ids].astype(np.int64), ix[ids].astype(np.int64)]
    occluded = np.isfinite(ref) & (z[ids] > ref + depth_tolerance)
    vis[ids[occluded]] = False
    return vis


def find_point_correspondences(mesh: Mesh, cloud: PointCloud, cam: Camera,
                               cfg: TrackerConfig = TrackerConfig(),
                               tree: cKDTree | None = None) -> PointMatches:
    """Closest cloud point for every visible vertex, gated by normal angle and distance."""
    empty = PointMatches(np.zeros(0, np.int64), np.zeros((0, 3)))
    if len(cloud) == 0:
        return empty
    vis = np.flatnonzero(visible_vertices(mesh, cam, cfg.occlusion_test, cfg.depth_tolerance))
    if vis.size == 0:
        return empty
    tree = tree if tree is not None else cKDTree(cloud.points)
    dist, idx = nearest_lowest_index(tree, mesh.vertices[vis])
    cos_gate = np.cos(np.radians(cfg.max_normal_angle))
    ok = (dist <= cfg.max_corr_dist) & \
         ((mesh.normals[vis] * cloud.normals[idx]).sum(1) >= cos_gate - 1e-12)
    return PointMatches(vis[ok], cloud.points[idx[ok]])


def pixel_to_plucker(pixel, cam: Camera) -> PluckerLine:
    lines = pixels_to_plucker(np.asarray(pixel, dtype=np.float64).reshape(1, 2), cam)
    return PluckerLine(lines[0][0], lines[1][0])


def pixels_to_plucker(pixels: np.ndarray, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    d = cam.ray_direction(pixels)
    m = np.cross(np.broadcast_to(cam.center, d.shape), d)
    return d, m


def find_rim_correspondences(pixels: np.ndarray, mesh: Mesh, cam: Camera) -> RimMatches:
    """Pair each discontinuity pixel with the vertex whose projection is nearest."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(px) == 0 or mesh.n_vertices == 0:
        return RimMatches(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 3)))
    uv, _ = cam.project(mesh.vertices)
    _, idx = nearest_lowest_index(cKDTree(uv), px)
    d, m = pixels_to_plucker(px, cam)
    return RimMatches(np.asarray(idx, dtype=np.int64), d, m)


# ------------------------------------------------------------ system assembly

def _skew(d: np.ndarray) -> np.ndarray:
    s = np.zeros((len(d), 3, 3))
    s[:, 0, 1], s[:, 0, 2] = -d[:, 2], d[:, 1]
    s[:, 1, 0], s[:, 1, 2] = d[:, 2], -d[:, 0]
    s[:, 2, 0], s[:, 2, 1] = -d[:, 1], d[:, 0]
    return s


def smoothness_block(L: sp.csr_matrix, prev_positions: np.ndarray) -> linalg.ResidualBlock:
    J = sp.kron(L, sp.identity(3), format="csr")
    return linalg.ResidualBlock(J, J @ np.asarray(prev_positions, dtype=np.float64).ravel(), 1.0)


def point_block(n: int, matches: PointMatches, gamma: float) -> linalg.ResidualBlock:
    m = len(matches)
    cols = (3 * matches.vertices[:, None] + np.arange(3)).ravel()
    J = sp.csr_matrix((np.ones(3 * m), (np.arange(3 * m), cols)), shape=(3 * m, 3 * n))
    return linalg.ResidualBlock(J, matches.points.ravel(), gamma)


def rim_block(n: int, matches: RimMatches, gamma: float) -> linalg.ResidualBlock:
    """Rows realizing ``V x d`` (= ``-[d]x V``) for each matched vertex, target ``m``."""
    m = len(matches)
    blocks = -_skew(matches.d)
    rows = np.repeat(np.arange(3 * m), 3)
    cols = (3 * np.repeat(matches.vertices, 9) + np.tile(np.arange(3), 3 * m))
    J = sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(3 * m, 3 * n))
    return linalg.ResidualBlock(J, matches.m.ravel(), gamma)


def assemble_system(mesh: Mesh, prev: Mesh, L: sp.csr_matrix, points: PointMatches,
                    rims: RimMatches, cfg: TrackerConfig,
                    smooth: linalg.ResidualBlock | None = None) -> linalg.LeastSquaresSystem:
    n = prev.n_vertices
    system = linalg.LeastSquaresSystem(3 * n)
    system.add(smooth if smooth is not None else smoothness_block(L, prev.vertices))
    if len(points):
        system.add(point_block(n, points, cfg.gamma_def))
    if len(rims):
        system.add(rim_block(n, rims, cfg.gamma_def))
    return system


def system_pattern(L: sp.csr_matrix) -> sp.csr_matrix:
    """Sparsity pattern that covers every tracking normal matrix for this mesh."""
    P = sp.csr_matrix(L, copy=True)
    P.data = np.ones_like(P.data)
    P = (P.T @ P + sp.identity(L.shape[0])).tocsr()
    P.data[:] = 1.0
    return sp.kron(P, np.ones((3, 3)), format="csr")


# ------------------------------------------------------------ frame tracking

@dataclass
class FrameReport:
    objectives: list[float] = field(default_factory=list)
    point_counts: list[int] = field(default_factory=list)
    rim_counts: list[int] = field(default_factory=list)


class _Solver:
    """Caches the smoothness gram and the symbolic factorization for one mesh."""

    def __init__(self, n: int, L: sp.csr_matrix):
        self.chol = linalg.SparseCholesky(system_pattern(L))
        self.n = n

    def solve(self, system: linalg.LeastSquaresSystem) -> np.ndarray:
        return linalg.solve_normal_equations(system, self.chol)


def tracking_laplacian(mesh: Mesh) -> sp.csr_matrix:
    """Cotangent Laplacian rescaled by the mean of ``2 |A_i|``.

    The area-normalized operator has units of 1/mm^2, which would give the
    smoothness energy units of 1/mm^2 while the data terms carry mm^2. The
    rescaling makes the smoothness energy a squared length too, so gamma_def
    is dimensionless and its value does not depend on mesh resolution.
    """
    L = cotangent_laplacian(mesh)
    return (2.0 * float(voronoi_areas(mesh).mean())) * L


def track_frame(prev: Mesh, cloud: PointCloud, disc_pixels, cam: Camera,
                cfg: TrackerConfig = TrackerConfig(), report: FrameReport | None = None,
                _solver: _Solver | None = None) -> Mesh:
    """Deform ``prev`` toward one observed frame."""
    L = tracking_laplacian(prev)
    smooth = smoothness_block(L, prev.vertices)
    solver = _solver if _solver is not None else _Solver(prev.n_vertices, L)
    tree = cKDTree(cloud.points) if len(cloud) else None
    pixels = np.asarray(disc_pixels, dtype=np.float64).reshape(-1, 2)
    current = prev
    for _ in range(cfg.outer_iterations):
        pts = find_point_correspondences(current, cloud, cam, cfg, tree)
        rims = find_rim_correspondences(pixels, current, cam)
        if cfg.gamma_def == 0 or (len(pts) == 0 and len(rims) == 0):
            # smoothness alone is minimized exactly by prev
            x = prev.vertices.ravel().copy()
            system = assemble_system(current, prev, L, pts, rims, cfg, smooth)
        else:
            system = assemble_system(current, prev, L, pts, rims, cfg, smooth)
            x = solver.solve(system)
        if report is not None:
            report.objectives.append(system.objective(x))
            report.point_counts.append(len(pts))
            report.rim_counts.append(len(rims))
        current = prev.with_positions(x.reshape(-1, 3))
    return current


def frame_objective(mesh: Mesh, prev: Mesh, cloud: PointCloud, disc_pixels, cam: Camera,
                    cfg: TrackerConfig) -> float:
    """Tracking energy of ``mesh`` with correspondences recomputed on it."""
    L = tracking_laplacian(prev)
    pts = find_point_correspondences(mesh, cloud, cam, cfg)
    rims = find_rim_correspondences(disc_pixels, mesh, cam)
    return assemble_system(mesh, prev, L, pts, rims, cfg).objective(mesh.vertices.ravel())


# ------------------------------------------------------------ trajectories

TRAJ_MAGIC = b"TRAJ"


@dataclass(frozen=True)
class TrajectorySet:
    positions: np.ndarray   # (T, n, 3)
    normals: np.ndarray     # (T, n, 3)

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        q = np.asarray(self.normals, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape != q.shape:
            raise ValueError("trajectories must be (T, n, 3) positions and normals")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "normals", q)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[1]

    def save(self, path) -> None:
        T, n, _ = self.positions.shape
        body = np.concatenate([self.positions, self.normals], axis=2).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(TRAJ_MAGIC + struct.pack("<II", T, n))
            fh.write(body.tobytes())

    @classmethod
    def load(cls, path) -> "TrajectorySet":
        data = Path(path).read_bytes()
        if data[:4] != TRAJ_MAGIC or len(data) < 12:
            raise ValueError(f"{path}: not a trajectory file")
        T, n = struct.unpack("<II", data[4:12])
        if len(data) != 12 + T * n * 48:
            raise ValueError(f"{path}: truncated trajectory file")
        body = np.frombuffer(data, dtype="<f8", offset=12).reshape(T, n, 6)
        return cls(body[:, :, :3].copy(), body[:, :, 3:].copy())


def track_sequence(template: Mesh, frames, cam: Camera, cfg: TrackerConfig = TrackerConfig(),
                   progress=None) -> TrajectorySet:
    """Track every frame after the first; frame 0 of the result is the template.

    ``frames`` is a sequence of ``(PointCloud, pixels)``. The first frame is
    taken to show the template's rest pose, so the output has one entry per
    input frame.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise TrackingError("tracking needs at least two frames")
    n = template.n_vertices
    pos = np.empty((len(frames), n, 3))
    nrm = np.empty((len(frames), n, 3))
    pos[0] = template.vertices
    nrm[0] = template.normals
    solver = _Solver(n, cotangent_laplacian(template))
    current = template
    for t in range(1, len(frames)):
        cloud, pixels = frames[t]
        current = track_frame(current, cloud, pixels, cam, cfg, _solver=solver)
        pos[t] = current.vertices
        nrm[t] = vertex_normals(current.vertices, current.faces)
        if progress is not None:
            progress(t, len(frames))
    return TrajectorySet(pos, nrm)
