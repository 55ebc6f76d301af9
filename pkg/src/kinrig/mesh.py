"""Halfedge triangle meshes and the cotangent Laplacian.

Halfedge ``h`` belongs to face ``h // 3`` and runs from corner ``h % 3`` to
the next corner of that face, so ``next`` and ``prev`` are arithmetic and
only ``twin`` needs a table. A halfedge without a twin lies on a boundary.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

COT_CLAMP = 1.0 / np.tan(np.radians(1.0))


class MeshError(Exception):
    pass


class NonManifoldEdge(MeshError):
    pass


class DegenerateFace(MeshError):
    pass


class InconsistentOrientation(MeshError):
    pass


class DegenerateGeometry(MeshError):
    pass


class NotWatertight(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    twin: np.ndarray
    vertex_halfedge: np.ndarray
    normals: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    # halfedge arithmetic
    @cached_property
    def origin(self) -> np.ndarray:
        return self.faces.reshape(-1)

    @cached_property
    def target(self) -> np.ndarray:
        return self.faces[:, [1, 2, 0]].reshape(-1)

    @staticmethod
    def next(h):
        return h - h % 3 + (h + 1) % 3

    @staticmethod
    def prev(h):
        return h - h % 3 + (h + 2) % 3

    @cached_property
    def boundary_halfedges(self) -> np.ndarray:
        return np.flatnonzero(self.twin < 0)

    @property
    def is_watertight(self) -> bool:
        return self.boundary_halfedges.size == 0

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edges ``(i, j)`` with ``i < j``, each listed once."""
        a, b = self.origin, self.target
        keep = (self.twin < 0) | (a < b)
        e = np.stack([np.minimum(a, b), np.maximum(a, b)], 1)[keep]
        return e[np.lexsort((e[:, 1], e[:, 0]))]

    @property
    def euler_characteristic(self) -> int:
        used = np.unique(self.faces).size
        return used - len(self.edges) + self.n_faces

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        return sp.csr_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))

    @cached_property
    def face_areas(self) -> np.ndarray:
        return face_areas(self.vertices, self.faces)

    def vertex_faces(self, v: int) -> list[int]:
        """Faces around ``v`` by halfedge rotation, in fan order."""
        h0 = int(self.vertex_halfedge[v])
        if h0 < 0:
            return []
        # rotate backwards to the start of the fan on boundary vertices
        h = h0
        while True:
            t = self.twin[h]
            if t < 0:
                break
            h = self.next(int(t))
            if h == h0:
                break
        start = h
        out = []
        while True:
            out.append(h // 3)
            t = self.twin[self.prev(h)]
            if t < 0:
                break
            h = int(t)
            if h == start:
                break
        return out

    def with_positions(self, positions: np.ndarray) -> "Mesh":
        positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
        if positions.shape != self.vertices.shape:
            raise ValueError("position array does not match vertex count")
        positions.setflags(write=False)
        return dataclasses.replace(self, vertices=positions,
                                   normals=vertex_normals(positions, self.faces))

    def flipped(self) -> "Mesh":
        return build_halfedge(self.vertices, self.faces[:, ::-1])


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    if len(faces) == 0:
        return np.zeros(0)
    p = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals; isolated vertices get a zero vector."""
    n = np.zeros((len(vertices), 3))
    if len(faces):
        p = vertices[faces]
        fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        for k in range(3):
            np.add.at(n, faces[:, k], fn)
    length = np.linalg.norm(n, axis=1)
    ok = length > 0
    n[ok] /= length[ok, None]
    n.setflags(write=False)
    return n


def build_halfedge(vertices, faces) -> Mesh:
    v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    nv = len(v)
    if f.size and (f.min() < 0 or f.max() >= nv):
        raise IndexError("face references a vertex that does not exist")
    bad = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if bad.any():
        raise DegenerateFace(f"face {int(np.flatnonzero(bad)[0])} repeats a vertex index")

    origin = f.reshape(-1)
    target = f[:, [1, 2, 0]].reshape(-1)
    und = np.minimum(origin, target) * nv + np.maximum(origin, target)
    _, inv, counts = np.unique(und, return_inverse=True, return_counts=True)
    if counts.size and counts.max() > 2:
        h = int(np.flatnonzero(counts[inv] > 2)[0])
        raise NonManifoldEdge(f"edge ({origin[h]}, {target[h]}) has more than two incident faces")

    directed = origin * nv + target
    order = np.argsort(directed, kind="stable")
    sorted_keys = directed[order]
    dup = np.flatnonzero(sorted_keys[1:] == sorted_keys[:-1])
    if dup.size:
        h = int(order[dup[0]])
        raise InconsistentOrientation(
            f"faces {h // 3} and {int(order[dup[0] + 1]) // 3} traverse edge "
            f"({origin[h]}, {target[h]}) in the same direction")
    reverse = target * nv + origin
    pos = np.searchsorted(sorted_keys, reverse)
    pos = np.minimum(pos, len(sorted_keys) - 1) if len(sorted_keys) else pos
    twin = np.full(len(origin), -1, dtype=np.int64)
    if len(sorted_keys):
        hit = sorted_keys[pos] == reverse
        twin[hit] = order[pos[hit]]

    vh = np.full(nv, -1, dtype=np.int64)
    vh[origin[::-1]] = np.arange(len(origin))[::-1]
    normals = vertex_normals(v, f)
    for arr in (v, f, twin, vh):
        arr.setflags(write=False)
    return Mesh(v, f, twin, vh, normals)


def voronoi_areas(mesh: Mesh, positions: np.ndarray | None = None) -> np.ndarray:
    """Half the summed area of the triangles around each vertex."""
    pos = mesh.vertices if positions is None else positions
    area = face_areas(pos, mesh.faces)
    out = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(out, mesh.faces[:, k], area)
    return 0.5 * out


def voronoi_area(mesh: Mesh, i: int) -> float:
    return float(voronoi_areas(mesh)[i])


def cotangent_weights(mesh: Mesh, positions: np.ndarray | None = None) -> sp.csr_matrix:
    """Symmetric matrix K with K_ij = cot(alpha_ij) + cot(beta_ij) on edges.

    Cotangents are clamped to +-cot(1 deg). The stored pattern is exactly the
    edge set even where a weight happens to be zero.
    """
    pos = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    f = mesh.faces
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    p = pos[f]
    for k in range(3):
        a = p[:, k]
        b = p[:, (k + 1) % 3]
        c = p[:, (k + 2) % 3]
        e1, e2 = b - a, c - a
        dot = (e1 * e2).sum(1)
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = dot / cross
        cot = np.where(cross > 0, cot, np.sign(dot) * COT_CLAMP)
        cot = np.clip(cot, -COT_CLAMP, COT_CLAMP)
        i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        rows += [i, j]
        cols += [j, i]
        vals += [cot, cot]
    if not rows:
        return sp.csr_matrix((n, n))
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    K.sort_indices()
    return K


def cotangent_laplacian(mesh: Mesh, positions: np.ndarray | None = None,
                        normalize: bool = True) -> sp.csr_matrix:
    """Cotangent Laplacian with L_ii = sum_k w_ik and L_ij = -w_ij.

    With ``normalize`` the weights are ``(cot a + cot b) / (2 |A_i|)`` where
    ``|A_i|`` is half the one-ring area; otherwise the raw cotangent sums are
    used. Either way ``L @ 1 == 0`` row by row.
    """
    K = cotangent_weights(mesh, positions)
    n = mesh.n_vertices
    if normalize:
        area = voronoi_areas(mesh, positions)
        has_ring = np.diff(K.indptr) > 0
        if np.any(has_ring & ~(area > 0)):
            v = int(np.flatnonzero(has_ring & ~(area > 0))[0])
            raise DegenerateGeometry(f"vertex {v} has zero one-ring area")
        scale = np.where(area > 0, 0.5 / np.where(area > 0, area, 1.0), 0.0)
        K = K.tocoo()
        K.data = K.data * scale[K.row]
    K = sp.coo_matrix(K)
    rowsum = np.bincount(K.row, weights=K.data, minlength=n)
    diag = np.arange(n)
    # coo -> csr keeps explicit zeros, so the pattern stays adjacency + diagonal
    L = sp.coo_matrix((np.r_[-K.data, rowsum], (np.r_[K.row, diag], np.r_[K.col, diag])),
                      shape=(n, n)).tocsr()
    L.sort_indices()
    return L


def enclosed_volume(positions: np.ndarray, faces: np.ndarray) -> float:
    """Signed volume by the tetrahedron sum; positive for outward faces."""
    p = positions[faces]
    return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)


def connected_components(mesh: Mesh) -> tuple[int, np.ndarray]:
    from scipy.sparse.csgraph import connected_components as cc
    return cc(mesh.adjacency, directed=False)


# ---------------------------------------------------------------- file I/O

def load_mesh(path) -> Mesh:
    from . import fileio
    vertices, faces = fileio.read_mesh_arrays(path)
    return build_halfedge(vertices, faces)


def save_mesh(mesh: Mesh, path, binary: bool = False) -> None:
    from . import fileio
    fileio.write_mesh_arrays(path, mesh.vertices, mesh.faces, binary=binary)
