"""Curve skeletons by Laplacian contraction and edge collapse.

The surface is shrunk by repeatedly solving a least-squares system that
pushes every vertex's cotangent Laplacian toward zero while an attraction
term holds it near its previous position. Contracted tubes end up as thin
needles along their axes; collapsing the shortest face edges until no face
is left then yields a graph whose nodes remember which surface vertices
they absorbed.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import minimum_spanning_tree

from . import linalg
from .mesh import Mesh, NotWatertight, cotangent_laplacian, enclosed_volume, voronoi_areas


@dataclass(frozen=True)
class ContractionConfig:
    laplacian_growth: float = 2.0        # W_L multiplier per iteration
    attraction: float = 1.0              # initial W_H
    initial_laplacian: float = 1.0       # W_L at the first iteration
    max_iterations: int = 10
    volume_ratio_stop: float = 1e-4
    collapse_edge_length: float | None = None   # None: twice the mean input edge length

    def __post_init__(self):
        for name in ("laplacian_growth", "attraction", "initial_laplacian", "volume_ratio_stop"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.collapse_edge_length is not None and not self.collapse_edge_length > 0:
            raise ValueError("collapse_edge_length must be positive")


# ------------------------------------------------------------ contraction

def contract(mesh: Mesh, cfg: ContractionConfig = ContractionConfig(),
             volumes: list | None = None) -> np.ndarray:
    """Contracted vertex positions.

    Each iteration solves ``[W_L L; W_H] V' = [0; W_H V]`` in the least-squares
    sense, with L rebuilt on the current positions. ``W_L`` grows
    geometrically and each vertex's ``W_H`` follows the square root of its
    one-ring area shrinkage. If ``volumes`` is given, the enclosed volume
    before the first and after every iteration is appended to it.
    """
    if not mesh.is_watertight:
        raise NotWatertight("contraction needs a closed mesh")
    V = np.array(mesh.vertices, dtype=np.float64)
    n = len(V)
    area0 = voronoi_areas(mesh, V)
    vol0 = abs(enclosed_volume(V, mesh.faces))
    if volumes is not None:
        volumes.append(vol0)
    wl = cfg.initial_laplacian
    ring = (mesh.adjacency + sp.identity(n, format="csr")).tocsr()
    ring.data[:] = 1.0
    # L^T L lives on the two-ring; analyse that pattern once
    chol = linalg.SparseCholesky(ring @ ring)
    for _ in range(cfg.max_iterations):
        L = cotangent_laplacian(mesh, V, normalize=False)
        area = voronoi_areas(mesh, V)
        wh = cfg.attraction * np.sqrt(area0 / np.maximum(area, 1e-12 * area0))
        A = (wl * wl) * (L.T @ L) + sp.diags(wh * wh)
        chol.factorize(A.tocsr())
        V = chol.solve((wh * wh)[:, None] * V)
        vol = abs(enclosed_volume(V, mesh.faces))
        if volumes is not None:
            volumes.append(vol)
        wl *= cfg.laplacian_growth
        if vol <= cfg.volume_ratio_stop * vol0:
            break
    return V


# ------------------------------------------------------------ skeleton graph

@dataclass(frozen=True, eq=False)
class CurveSkeleton:
    nodes: np.ndarray          # (m, 3)
    edges: np.ndarray          # (e, 2), a < b, sorted
    vertex_map: np.ndarray     # surface vertex -> node

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.reshape(-1), minlength=self.n_nodes)

    @cached_property
    def neighbors(self) -> list[list[int]]:
        nb = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            nb[a].append(int(b))
            nb[b].append(int(a))
        return [sorted(x) for x in nb]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]], axis=1)

    def edge_index(self, a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        hit = np.flatnonzero((self.edges[:, 0] == key[0]) & (self.edges[:, 1] == key[1]))
        if hit.size == 0:
            raise KeyError(f"no edge between nodes {a} and {b}")
        return int(hit[0])

    @property
    def is_tree(self) -> bool:
        if self.n_nodes == 0:
            return False
        return len(self.edges) == self.n_nodes - 1 and _n_components(self.n_nodes, self.edges) == 1

    def node_labels(self, vertex_labels: np.ndarray) -> np.ndarray:
        """Majority label of the surface vertices mapped to each node (ties to the smaller label)."""
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        vertex_labels = np.asarray(vertex_labels, dtype=np.int64)
        for node in range(self.n_nodes):
            owned = vertex_labels[self.vertex_map == node]
            if owned.size:
                counts = np.bincount(owned)
                out[node] = int(np.argmax(counts))
        return out

    def save(self, path) -> None:
        lines = [f"n {self.n_nodes}"]
        lines += [f"{x!r} {y!r} {z!r}" for x, y, z in self.nodes.tolist()]
        lines.append(f"e {len(self.edges)}")
        lines += [f"{a} {b}" for a, b in self.edges.tolist()]
        lines.append("map")
        lines += [str(int(k)) for k in self.vertex_map]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "CurveSkeleton":
        lines = Path(path).read_text().splitlines()
        try:
            head, m = lines[0].split()
            if head != "n":
                raise ValueError
            m = int(m)
            nodes = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + m]]).reshape(m, 3)
            head, e = lines[1 + m].split()
            if head != "e":
                raise ValueError
            e = int(e)
            edges = np.array([[int(t) for t in ln.split()] for ln in lines[2 + m:2 + m + e]],
                             dtype=np.int64).reshape(e, 2)
            if lines[2 + m + e].strip() != "map":
                raise ValueError
            vmap = np.array([int(t) for t in lines[3 + m + e:] if t.strip()], dtype=np.int64)
        except (ValueError, IndexError):
            raise ValueError(f"{path}: malformed skeleton file") from None
        return cls(nodes, edges, vmap)


def _n_components(n: int, edges: np.ndarray) -> int:
    from scipy.sparse.csgraph import connected_components
    if n == 0:
        return 0
    g = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    return connected_components(g, directed=False)[0]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a


def _greedy_collapse(positions: np.ndarray, faces: np.ndarray, edges: np.ndarray):
    """Shortest-face-edge collapse until no triangle survives.

    Returns ``(vertex -> root vertex, surviving edges as root pairs)``.
    """
    n = len(positions)
    uf = _UnionFind(n)
    members = {i: [i] for i in range(n)}
    sums = positions.copy()
    counts = np.ones(n)
    # adjacency sets and per-edge face counts keyed on root pairs
    nbr = [set() for _ in range(n)]
    for a, b in edges:
        nbr[a].add(int(b))
        nbr[b].add(int(a))
    face_sets: dict[int, tuple[int, int, int]] = {k: tuple(int(x) for x in f) for k, f in enumerate(faces)}
    faces_of = [set() for _ in range(n)]
    for k, f in face_sets.items():
        for v in f:
            faces_of[v].add(k)

    def key(a, b):
        return (a, b) if a < b else (b, a)

    def edge_faces(a, b):
        return faces_of[a] & faces_of[b]

    def length(a, b):
        return float(np.linalg.norm(sums[a] / counts[a] - sums[b] / counts[b]))

    heap = []
    for a, b in edges:
        heapq.heappush(heap, (length(a, b), int(a), int(b)))
    alive = len(face_sets)
    while alive and heap:
        d, a, b = heapq.heappop(heap)
        if uf.find(a) != a or uf.find(b) != b or b not in nbr[a]:
            continue
        if abs(d - length(a, b)) > 1e-12 * max(1.0, d):
            continue
        if not edge_faces(a, b):
            continue
        # merge b into a
        uf.parent[b] = a
        members[a].extend(members.pop(b))
        sums[a] += sums[b]
        counts[a] += counts[b]
        for f in list(faces_of[b]):
            tri = tuple(a if v == b else v for v in face_sets[f])
            faces_of[b].discard(f)
            if len(set(tri)) < 3:
                for v in set(tri):
                    faces_of[v].discard(f)
                del face_sets[f]
                alive -= 1
            else:
                face_sets[f] = tri
                faces_of[a].add(f)
        for c in nbr[b]:
            nbr[c].discard(b)
            if c != a:
                nbr[c].add(a)
                nbr[a].add(c)
        nbr[b].clear()
        nbr[a].discard(a)
        for c in nbr[a]:
            heapq.heappush(heap, (length(a, c), a, c) if a < c else (length(a, c), c, a))
    roots = np.array([uf.find(i) for i in range(n)], dtype=np.int64)
    out_edges = sorted({key(a, c) for a in range(n) if uf.find(a) == a for c in nbr[a]})
    return roots, np.asarray(out_edges, dtype=np.int64).reshape(-1, 2), sums, counts


def collapse_to_graph(mesh: Mesh, contracted: np.ndarray,
                      cfg: ContractionConfig = ContractionConfig()) -> CurveSkeleton:
    """Collapse the contracted mesh into a curve skeleton.

    After the greedy collapse, genus-0 inputs are reduced to a spanning tree
    (shortest edges kept) and side branches shorter than the collapse length
    are folded into the junction they hang from.
    """
    pos = np.asarray(contracted, dtype=np.float64)
    roots, edges, sums, counts = _greedy_collapse(pos, mesh.faces, mesh.edges)
    keep = np.unique(roots)
    index = np.full(len(pos), -1, dtype=np.int64)
    index[keep] = np.arange(len(keep))
    nodes = sums[keep] / counts[keep, None]
    vmap = index[roots]
    edges = index[edges] if len(edges) else edges
    if mesh.euler_characteristic == 2 and len(edges):
        edges = _spanning_tree(nodes, edges)
    sk = CurveSkeleton(nodes, _sorted_edges(edges), vmap)
    limit = cfg.collapse_edge_length
    if limit is None:
        e = mesh.edges
        limit = 2.0 * float(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).mean())
    return prune_spurs(sk, pos, limit)


def _sorted_edges(edges) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)
    return e[e[:, 0] != e[:, 1]]


def _spanning_tree(nodes: np.ndarray, edges: np.ndarray) -> np.ndarray:
    m = len(nodes)
    w = np.linalg.norm(nodes[edges[:, 0]] - nodes[edges[:, 1]], axis=1)
    # csgraph drops zero weights; shift so coincident nodes stay connected
    g = sp.coo_matrix((w + 1e-9, (edges[:, 0], edges[:, 1])), shape=(m, m)).tocsr()
    t = minimum_spanning_tree(g).tocoo()
    return np.stack([t.row, t.col], 1)


def _merge_nodes(sk: CurveSkeleton, contracted: np.ndarray, into: dict[int, int]) -> CurveSkeleton:
    """Relabel nodes by ``into`` (absorbed -> keeper), recomputing centroids."""
    m = sk.n_nodes
    target = np.arange(m)
    for k, v in into.items():
        target[k] = v
    keep = np.unique(target)
    index = np.full(m, -1, dtype=np.int64)
    index[keep] = np.arange(len(keep))
    vmap = index[target[sk.vertex_map]]
    nodes = np.zeros((len(keep), 3))
    np.add.at(nodes, vmap, contracted)
    nodes /= np.bincount(vmap, minlength=len(keep))[:, None]
    edges = _sorted_edges(index[target[sk.edges]])
    return CurveSkeleton(nodes, edges, vmap)


def prune_spurs(sk: CurveSkeleton, contracted: np.ndarray, min_length: float) -> CurveSkeleton:
    """Fold endpoint branches shorter than ``min_length`` into their junction."""
    while True:
        deg = sk.degree
        into = {}
        best = None
        for start in np.flatnonzero(deg == 1):
            path = [int(start)]
            prev, cur = -1, int(start)
            total = 0.0
            while True:
                nxt = [x for x in sk.neighbors[cur] if x != prev]
                if len(nxt) != 1:
                    break
                total += float(np.linalg.norm(sk.nodes[nxt[0]] - sk.nodes[cur]))
                prev, cur = cur, nxt[0]
                if deg[cur] != 2:
                    break
                path.append(cur)
            if deg[cur] >= 3 and total < min_length:
                if best is None or total < best[0]:
                    best = (total, path, cur)
        if best is None:
            return sk
        _, path, junction = best
        for p in path:
            into[p] = junction
        sk = _merge_nodes(sk, contracted, into)


def skeletonize(mesh: Mesh, cfg: ContractionConfig = ContractionConfig()) -> CurveSkeleton:
    return collapse_to_graph(mesh, contract(mesh, cfg), cfg)


# ------------------------------------------------------------ queries

def classify_nodes(sk: CurveSkeleton) -> tuple[np.ndarray, np.ndarray]:
    """``(endpoints, junctions)``: nodes of degree 1 and of degree at least 3."""
    deg = sk.degree
    return np.flatnonzero(deg == 1), np.flatnonzero(deg >= 3)


@dataclass(frozen=True)
class SkeletonPoint:
    point: np.ndarray
    edge: int            # -1 when the skeleton has no edges
    t: float             # fraction along edge (a -> b)
    node: int = -1       # set when the skeleton is a single node
    distance: float = 0.0

    def arc_length(self, sk: CurveSkeleton) -> float:
        return 0.0 if self.edge < 0 else self.t * float(sk.edge_lengths[self.edge])


def closest_skeleton_point(sk: CurveSkeleton, p) -> SkeletonPoint:
    p = np.asarray(p, dtype=np.float64)
    if sk.n_nodes == 0:
        raise ValueError("empty skeleton")
    if len(sk.edges) == 0:
        d = np.linalg.norm(sk.nodes - p, axis=1)
        k = int(np.argmin(d))
        return SkeletonPoint(sk.nodes[k].copy(), -1, 0.0, k, float(d[k]))
    a = sk.nodes[sk.edges[:, 0]]
    b = sk.nodes[sk.edges[:, 1]]
    ab = b - a
    ll = (ab * ab).sum(1)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(ll > 0, ((p - a) * ab).sum(1) / np.where(ll > 0, ll, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    q = a + t[:, None] * ab
    d = np.linalg.norm(q - p, axis=1)
    k = int(np.argmin(d))
    return SkeletonPoint(q[k].copy(), k, float(t[k]), -1, float(d[k]))
