"""From segmented mesh and curve skeleton to a skinned rig.

Motion joints sit where neighbouring segments meet: the centroid of the
shared boundary vertices, projected onto the skeleton. Auxiliary joints mark
skeleton ends and branch points; consecutive joints along the skeleton are
joined by bones, redundant end bones inside one segment are dropped, bones
that leave the surface are split at the skeleton midpoint, and bone-heat
diffusion supplies the skinning weights.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import linalg
from .kernels.bvh import BVH, build_bvh, ray_crossings, segment_hits
from .mesh import Mesh, NotWatertight, cotangent_weights, face_areas, voronoi_areas
from .skeleton import CurveSkeleton, SkeletonPoint, closest_skeleton_point

MOTION, AUXILIARY, VIRTUAL = "motion", "auxiliary", "virtual"
KINDS = (MOTION, AUXILIARY, VIRTUAL)
MAX_REFINE_ROUNDS = 8
BONE_SAMPLES = 20
VISIBILITY_SAMPLES = 8
WEIGHT_EPS = 1e-6


class RigError(Exception):
    pass


class CyclicSkeleton(RigError):
    pass


class RefinementDiverged(RigError):
    pass


@dataclass(frozen=True, eq=False)
class Joint:
    position: np.ndarray
    parent: int
    kind: str
    anchor: tuple[int, float]        # (skeleton edge, fraction along it)
    label: int = -1                  # attributed motion segment, -1 if none
    segments: tuple[int, ...] = ()   # label pair of a motion joint

    @property
    def dof(self) -> int:
        return 3 if self.kind == MOTION else 0


# ------------------------------------------------------------ inside test

_RAY_SEED = 0x5EED


def _ray_directions():
    rng = np.random.default_rng(_RAY_SEED)
    while True:
        d = rng.normal(size=3)
        yield d / np.linalg.norm(d)


class InsideTester:
    """Ray-parity point-in-mesh predicate over a prebuilt BVH."""

    def __init__(self, mesh: Mesh, bvh: BVH | None = None):
        if not mesh.is_watertight:
            raise NotWatertight("inside test needs a closed mesh")
        self.mesh = mesh
        self.bvh = bvh if bvh is not None else build_bvh(mesh.vertices, mesh.faces)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.zeros(len(pts), dtype=bool)
        pending = np.arange(len(pts))
        for attempt, d in enumerate(_ray_directions()):
            hits, bad = ray_crossings(self.bvh, pts[pending], d)
            out[pending[~bad]] = hits[~bad] % 2 == 1
            pending = pending[bad]
            if pending.size == 0 or attempt > 64:
                break
        return out

    def segments_inside(self, p0, p1, samples: int = BONE_SAMPLES) -> np.ndarray:
        """True where all ``samples`` interior points of each segment lie inside."""
        a = np.asarray(p0, dtype=np.float64).reshape(-1, 3)
        b = np.asarray(p1, dtype=np.float64).reshape(-1, 3)
        t = np.arange(1, samples + 1) / (samples + 1)
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        return self(pts.reshape(-1, 3)).reshape(len(a), samples).all(1)


def inside_test(mesh: Mesh, p) -> bool | np.ndarray:
    """Ray-parity inside test; scalar for one point, boolean array for many."""
    pts = np.asarray(p, dtype=np.float64)
    res = InsideTester(mesh)(pts)
    return bool(res[0]) if pts.ndim == 1 else res


# ------------------------------------------------------------ joints

def segment_boundaries(mesh: Mesh, labels) -> dict[tuple[int, int], np.ndarray]:
    """Vertices on edges whose endpoints carry two different labels, per label pair."""
    labels = np.asarray(labels, dtype=np.int64)
    e = mesh.edges
    la, lb = labels[e[:, 0]], labels[e[:, 1]]
    cut = la != lb
    out: dict[tuple[int, int], set] = {}
    for (i, j), a, b in zip(e[cut].tolist(), la[cut].tolist(), lb[cut].tolist()):
        key = (min(a, b), max(a, b))
        out.setdefault(key, set()).update((i, j))
    return {k: np.array(sorted(v), dtype=np.int64) for k, v in sorted(out.items())}


@dataclass(frozen=True)
class MotionJoint:
    segments: tuple[int, int]
    centroid: np.ndarray
    anchor: SkeletonPoint

    @property
    def position(self) -> np.ndarray:
        return self.anchor.point


def localize_joints(mesh: Mesh, boundaries: dict, sk: CurveSkeleton) -> list[MotionJoint]:
    out = []
    for pair, verts in boundaries.items():
        c = mesh.vertices[verts].mean(0)
        out.append(MotionJoint(tuple(pair), c, closest_skeleton_point(sk, c)))
    return out


def segment_areas(mesh: Mesh, labels) -> np.ndarray:
    """Surface area per label, each triangle split evenly over its corners."""
    labels = np.asarray(labels, dtype=np.int64)
    area = face_areas(mesh.vertices, mesh.faces) / 3.0
    return np.bincount(labels[mesh.faces].reshape(-1), weights=np.repeat(area, 3),
                       minlength=int(labels.max()) + 1)


def _node_anchor(sk: CurveSkeleton, node: int) -> tuple[int, float]:
    hit = np.flatnonzero((sk.edges[:, 0] == node) | (sk.edges[:, 1] == node))
    if hit.size == 0:
        return (-1, 0.0)
    e = int(hit[0])
    return (e, 0.0 if sk.edges[e, 0] == node else 1.0)


def _anchor_point(sk: CurveSkeleton, anchor) -> np.ndarray:
    e, t = anchor
    if e < 0:
        return sk.nodes[0].copy()
    a, b = sk.nodes[sk.edges[e]]
    return a + t * (b - a)


def _anchor_label(sk: CurveSkeleton, node_labels, anchor) -> int:
    e, t = anchor
    if e < 0:
        return int(node_labels[0])
    return int(node_labels[sk.edges[e, 0] if t < 0.5 else sk.edges[e, 1]])


def _order(joints: list[Joint], bones: list[tuple[int, int]], root: int) -> list[Joint]:
    """Breadth-first relabelling from ``root``; neighbours visited in index order."""
    nb = [[] for _ in joints]
    for a, b in bones:
        nb[a].append(b)
        nb[b].append(a)
    order, parent = [root], {root: -1}
    q = deque([root])
    while q:
        j = q.popleft()
        for c in sorted(nb[j]):
            if c not in parent:
                parent[c] = j
                order.append(c)
                q.append(c)
    if len(order) != len(joints):
        raise RigError("joint graph is disconnected")
    new = {old: k for k, old in enumerate(order)}
    return [replace(joints[old], parent=new[parent[old]] if parent[old] >= 0 else -1)
            for old in order]


def bones_of(joints: list[Joint]) -> list[tuple[int, int]]:
    return [(j.parent, k) for k, j in enumerate(joints) if j.parent >= 0]


def _choose_root(joints: list[Joint], areas: np.ndarray | None) -> int:
    if areas is None or len(areas) == 0:
        return 0
    best = int(np.argmax(areas))
    for k, j in enumerate(joints):
        if j.kind != MOTION and j.label == best:
            return k
    for k, j in enumerate(joints):
        if best in j.segments:
            return k
    return 0


def build_topology(sk: CurveSkeleton, motion: list[MotionJoint], node_labels,
                   areas: np.ndarray | None = None) -> list[Joint]:
    """Joints at skeleton ends, branches and motion sites, chained along the skeleton.

    The root is a non-motion joint attributed to the segment with the largest
    ``areas`` entry; the list is returned in breadth-first order from it.
    """
    if sk.n_nodes == 0:
        raise RigError("empty skeleton")
    m = sk.n_nodes
    if len(sk.edges) != m - 1 or not sk.is_tree:
        raise CyclicSkeleton("skeleton is not a tree")
    node_labels = np.asarray(node_labels, dtype=np.int64)
    deg = sk.degree
    key_nodes = [v for v in range(m) if deg[v] != 2]
    joints: list[Joint] = []
    joint_at_node: dict[int, int] = {}
    for v in key_nodes:
        joint_at_node[v] = len(joints)
        joints.append(Joint(sk.nodes[v].copy(), -1, AUXILIARY, _node_anchor(sk, v), int(node_labels[v])))
    # motion joints hang on edges; one that lands on a key node takes its place
    on_edge: dict[int, list[tuple[float, int]]] = {}
    for mj in motion:
        e, t = mj.anchor.edge, mj.anchor.t
        anchor = (e, t)
        node = None
        if e < 0:
            node = mj.anchor.node
        elif t <= 0.0 or t >= 1.0:
            node = int(sk.edges[e, 0] if t <= 0.0 else sk.edges[e, 1])
        jm = Joint(mj.position.copy(), -1, MOTION, anchor, -1, tuple(mj.segments))
        if node is not None and node in joint_at_node and joints[joint_at_node[node]].kind == AUXILIARY:
            joints[joint_at_node[node]] = replace(jm, anchor=_node_anchor(sk, node))
            continue
        if node is not None and node not in joint_at_node:
            joint_at_node[node] = len(joints)
            joints.append(replace(jm, anchor=_node_anchor(sk, node)))
            continue
        if node is not None:
            raise RigError(f"two motion joints project onto skeleton node {node}")
        on_edge.setdefault(e, []).append((t, len(joints)))
        joints.append(jm)
    # augmented graph: skeleton nodes plus motion joints spliced into their edges
    link = [[] for _ in range(m + len(joints))]
    for e, (a, b) in enumerate(sk.edges.tolist()):
        seq = [a] + [m + j for _, j in sorted(on_edge.get(e, []))] + [b]
        for x, y in zip(seq[:-1], seq[1:]):
            link[x].append(y)
            link[y].append(x)
    joint_of = {v: j for v, j in joint_at_node.items()}
    for lists in on_edge.values():
        for _, j in lists:
            joint_of[m + j] = j
    bones = set()
    for start, j0 in joint_of.items():
        for nxt in link[start]:
            prev, cur = start, nxt
            while cur not in joint_of:
                prev, cur = cur, next(x for x in link[cur] if x != prev)
            j1 = joint_of[cur]
            if j1 != j0:
                bones.add((min(j0, j1), max(j0, j1)))
    if len(joints) == 1:
        return [replace(joints[0], parent=-1)]
    return _order(joints, sorted(bones), _choose_root(joints, areas))


def prune_redundant(joints: list[Joint]) -> list[Joint]:
    """Drop end bones joining two auxiliary joints of the same segment, to a fixpoint.

    A bone is only dropped while at least one other bone remains.
    """
    joints = list(joints)
    root = next(k for k, j in enumerate(joints) if j.parent < 0)
    while True:
        bones = bones_of(joints)
        if len(bones) <= 1:
            return joints
        deg = np.zeros(len(joints), dtype=np.int64)
        for a, b in bones:
            deg[a] += 1
            deg[b] += 1
        drop = None
        for a, b in bones:
            for end, other in ((b, a), (a, b)):
                je, jo = joints[end], joints[other]
                if (deg[end] == 1 and je.kind == AUXILIARY and jo.kind == AUXILIARY
                        and je.label == jo.label and je.label >= 0):
                    drop = (end, other)
                    break
            if drop:
                break
        if drop is None:
            return joints
        end, other = drop
        if end == root:
            root = other
        keep = [k for k in range(len(joints)) if k != end]
        remap = {old: new for new, old in enumerate(keep)}
        rest_bones = [(remap[a], remap[b]) for a, b in bones if end not in (a, b)]
        joints = _order([joints[k] for k in keep], rest_bones, remap[root])
        root = 0


# ------------------------------------------------------------ collision refinement

def _tree_path(sk: CurveSkeleton, src: int, dst: int) -> list[int]:
    prev = {src: -1}
    q = deque([src])
    while q:
        v = q.popleft()
        if v == dst:
            break
        for u in sk.neighbors[v]:
            if u not in prev:
                prev[u] = v
                q.append(u)
    if dst not in prev:
        raise RigError("skeleton anchors are disconnected")
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    return path[::-1]


def skeleton_path(sk: CurveSkeleton, a: tuple[int, float], b: tuple[int, float]):
    """Polyline between two anchors along the skeleton.

    Returns ``(points, steps)`` where step k describes the piece from point k
    to point k+1 as ``(edge, t_start, t_end)`` on a single skeleton edge.
    """
    ea, ta = a
    eb, tb = b
    pa, pb = _anchor_point(sk, a), _anchor_point(sk, b)
    if ea < 0 or eb < 0 or ea == eb:
        e = ea if ea >= 0 else eb
        return np.stack([pa, pb]), [(e, ta if ea == e else tb, tb if eb == e else ta)]
    best = None
    for sa in (0, 1):
        for sb in (0, 1):
            path = _tree_path(sk, int(sk.edges[ea, sa]), int(sk.edges[eb, sb]))
            pts = np.asarray([pa] + [sk.nodes[v] for v in path] + [pb])
            length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
            if best is None or length < best[0] - 1e-12:
                best = (length, pts, path, sa, sb)
    _, pts, path, sa, sb = best
    steps = [(ea, ta, float(sa))]
    for u, v in zip(path[:-1], path[1:]):
        e = sk.edge_index(u, v)
        forward = sk.edges[e, 0] == u
        steps.append((e, 0.0 if forward else 1.0, 1.0 if forward else 0.0))
    steps.append((eb, float(sb), tb))
    return pts, steps


def skeleton_midpoint(sk: CurveSkeleton, a: tuple[int, float], b: tuple[int, float]):
    """Arc-length midpoint of the skeleton path between two anchors: ``(point, anchor)``."""
    pts, steps = skeleton_path(sk, a, b)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    half = 0.5 * seg.sum()
    acc = 0.0
    for k, s in enumerate(seg):
        if acc + s >= half or k == len(seg) - 1:
            r = 0.0 if s <= 0 else min(max((half - acc) / s, 0.0), 1.0)
            e, t0, t1 = steps[k]
            return pts[k] + r * (pts[k + 1] - pts[k]), (e, t0 + r * (t1 - t0))
        acc += s
    raise AssertionError("unreachable")


def colliding_bones(joints: list[Joint], tester: InsideTester) -> list[int]:
    """Child indices of bones that cross the surface or run outside it."""
    bones = bones_of(joints)
    if not bones:
        return []
    p0 = np.array([joints[a].position for a, _ in bones])
    p1 = np.array([joints[b].position for _, b in bones])
    crosses = segment_hits(tester.bvh, p0, p1)
    mid_in = tester(0.5 * (p0 + p1))
    bad = crosses | ~mid_in
    return [b for (_, b), x in zip(bones, bad) if x]


def refine_collisions(joints: list[Joint], mesh: Mesh, sk: CurveSkeleton, node_labels=None,
                      max_rounds: int = MAX_REFINE_ROUNDS,
                      tester: InsideTester | None = None) -> tuple[list[Joint], int]:
    """Split colliding bones at the skeleton midpoint until none collide.

    Returns the refined joints and the number of rounds that inserted joints.
    """
    tester = tester or InsideTester(mesh)
    labels = None if node_labels is None else np.asarray(node_labels)
    joints = list(joints)
    for rounds in range(max_rounds + 1):
        bad = colliding_bones(joints, tester)
        if not bad:
            return joints, rounds
        if rounds == max_rounds:
            break
        bones = bones_of(joints)
        new_bones = [bn for bn in bones if bn[1] not in bad]
        for child in bad:
            parent = joints[child].parent
            pos, anchor = skeleton_midpoint(sk, joints[parent].anchor, joints[child].anchor)
            label = -1 if labels is None else _anchor_label(sk, labels, anchor)
            k = len(joints)
            joints.append(Joint(np.asarray(pos, dtype=np.float64), -1, VIRTUAL, anchor, label))
            new_bones += [(parent, k), (k, child)]
        root = next(k for k, j in enumerate(joints) if j.parent < 0)
        joints = _order(joints, new_bones, root)
    raise RefinementDiverged(f"bones still collide after {max_rounds} rounds")


# ------------------------------------------------------------ skinning weights

def _point_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray):
    ab = b - a
    ll = float(ab @ ab)
    t = np.zeros(len(p)) if ll == 0 else np.clip(((p - a) @ ab) / ll, 0.0, 1.0)
    q = a + t[:, None] * ab
    return q, np.linalg.norm(p - q, axis=1)


def nearest_visible_bone(mesh: Mesh, joints: list[Joint], tester: InsideTester | None = None):
    """Per vertex: index into ``bones_of(joints)`` of the nearest visible bone (-1 if none) and its distance."""
    tester = tester or InsideTester(mesh)
    bones = bones_of(joints)
    V = mesh.vertices
    n, B = len(V), len(bones)
    dist = np.empty((n, B))
    foot = np.empty((n, B, 3))
    for k, (a, b) in enumerate(bones):
        foot[:, k], dist[:, k] = _point_segment(V, joints[a].position, joints[b].position)
    order = np.argsort(dist, axis=1, kind="stable")
    best = np.full(n, -1, dtype=np.int64)
    best_d = np.full(n, np.inf)
    pending = np.arange(n)
    for rank in range(B):
        if pending.size == 0:
            break
        cand = order[pending, rank]
        vis = tester.segments_inside(V[pending], foot[pending, cand], VISIBILITY_SAMPLES)
        hit = pending[vis]
        best[hit] = cand[vis]
        best_d[hit] = dist[hit, cand[vis]]
        pending = pending[~vis]
    return best, best_d


def bone_heat_weights(mesh: Mesh, joints: list[Joint], tester: InsideTester | None = None,
                      c: float = 1.0) -> np.ndarray:
    """(n, J) skinning weights; column j belongs to the bone ending at joint j.

    Solves ``(L + H) w_b = H p_b`` per bone with the area-normalised
    cotangent Laplacian L (positive semidefinite convention), scaled by the
    vertex areas so that the matrix is symmetric.
    """
    bones = bones_of(joints)
    n, J = mesh.n_vertices, len(joints)
    if not bones:
        raise RigError("rig has no bones")
    W = np.zeros((n, J))
    if len(bones) == 1:
        W[:, bones[0][1]] = 1.0
        return W
    best, d = nearest_visible_bone(mesh, joints, tester)
    H = np.zeros(n)
    vis = best >= 0
    H[vis] = c / np.maximum(d[vis], 1e-9) ** 2
    K = cotangent_weights(mesh)
    Kl = sp.diags(np.asarray(K.sum(1)).ravel()) - K          # raw cotangent Laplacian
    M = 2.0 * voronoi_areas(mesh)                           # L = M^-1 (Kl / 1) with the 1/2 folded in
    A = (0.5 * Kl + sp.diags(0.5 * M * H)).tocsr()
    chol = linalg.SparseCholesky(A).factorize(A)
    P = np.zeros((n, len(bones)))
    P[np.flatnonzero(vis), best[vis]] = 1.0
    sol = chol.solve((0.5 * M * H)[:, None] * P)
    sol = np.where(sol > WEIGHT_EPS, sol, 0.0)
    s = sol.sum(1)
    empty = s <= 0
    if np.any(empty):
        # fall back to the nearest bone where diffusion left nothing
        V = mesh.vertices
        near = np.stack([_point_segment(V[empty], joints[a].position, joints[b].position)[1]
                         for a, b in bones], 1)
        sol[np.flatnonzero(empty), np.argmin(near, 1)] = 1.0
        s = sol.sum(1)
    sol /= s[:, None]
    for k, (_, child) in enumerate(bones):
        W[:, child] = sol[:, k]
    return W


# ------------------------------------------------------------ rig

@dataclass(frozen=True, eq=False)
class Rig:
    mesh: Mesh
    joints: list[Joint]
    weights: np.ndarray            # (n, J); column j is the bone ending at joint j

    @property
    def bones(self) -> list[tuple[int, int]]:
        return bones_of(self.joints)

    @property
    def motion_joints(self) -> list[int]:
        return [k for k, j in enumerate(self.joints) if j.kind == MOTION]

    @property
    def positions(self) -> np.ndarray:
        return np.array([j.position for j in self.joints]).reshape(-1, 3)

    @cached_property
    def used_bones(self) -> np.ndarray:
        """Weight columns that are nonzero somewhere."""
        return np.flatnonzero(self.weights.any(0))

    def check(self, tester: InsideTester | None = None) -> list[str]:
        """Invariant violations as messages (empty when the rig is valid)."""
        problems = []
        roots = [k for k, j in enumerate(self.joints) if j.parent < 0]
        if len(roots) != 1:
            problems.append(f"{len(roots)} roots")
        if any(j.parent >= k for k, j in enumerate(self.joints)):
            problems.append("parent index not below child index")
        W = self.weights
        if np.any(W < 0):
            problems.append("negative weights")
        if np.any(np.abs(W.sum(1) - 1.0) > 1e-6):
            problems.append("weight rows do not sum to one")
        tester = tester or InsideTester(self.mesh)
        if not tester(self.positions).all():
            problems.append("joint outside the mesh")
        bones = self.bones
        if bones:
            p0 = np.array([self.joints[a].position for a, _ in bones])
            p1 = np.array([self.joints[b].position for _, b in bones])
            if not tester.segments_inside(p0, p1).all():
                problems.append("bone leaves the mesh")
        return problems

    def save(self, path, mesh_path: str | None = None) -> None:
        lines = ["RIG1"]
        if mesh_path is not None:
            lines.append(f"mesh {mesh_path}")
        for k, j in enumerate(self.joints):
            x, y, z = (float(v) for v in j.position)
            lines.append(f"j {k} {j.parent} {j.kind} {x!r} {y!r} {z!r}")
        for v, row in enumerate(self.weights):
            nz = np.flatnonzero(row)
            lines.append("w " + str(v) + "".join(f" {b}:{float(row[b])!r}" for b in nz))
        Path(path).write_text("\n".join(lines) + "\n")


def load_rig(path, mesh: Mesh | None = None) -> tuple[Rig, str | None]:
    """Read a rig file; the mesh is loaded from its ``mesh`` line unless given."""
    from .mesh import load_mesh
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "RIG1":
        raise ValueError(f"{path}: not a rig file")
    mesh_path = None
    joints, wlines = [], []
    for no, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if not parts:
            continue
        try:
            if parts[0] == "mesh":
                mesh_path = ln.split(None, 1)[1]
            elif parts[0] == "j":
                k, parent, kind = int(parts[1]), int(parts[2]), parts[3]
                if k != len(joints) or kind not in KINDS:
                    raise ValueError
                joints.append(Joint(np.array([float(x) for x in parts[4:7]]), parent, kind, (-1, 0.0)))
            elif parts[0] == "w":
                wlines.append((int(parts[1]), [(int(a), float(b)) for a, b in
                                               (tok.split(":") for tok in parts[2:])]))
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{no}: malformed line") from None
    if mesh is None:
        if mesh_path is None:
            raise ValueError(f"{path}: no mesh reference")
        mp = Path(mesh_path)
        mesh = load_mesh(mp if mp.is_absolute() else path.parent / mp)
    W = np.zeros((mesh.n_vertices, len(joints)))
    for v, entries in wlines:
        for b, w in entries:
            W[v, b] = w
    return Rig(mesh, joints, W), mesh_path


# ------------------------------------------------------------ pipeline

@dataclass(frozen=True)
class RigReport:
    motion_joints: int
    refine_rounds: int
    pruned: int
    segments: int


def build_rig(mesh: Mesh, labels, sk: CurveSkeleton) -> tuple[Rig, RigReport]:
    """Rig ``mesh`` from per-vertex segment labels and its curve skeleton."""
    labels = np.asarray(labels, dtype=np.int64)
    tester = InsideTester(mesh)
    node_labels = sk.node_labels(labels)
    bounds = segment_boundaries(mesh, labels)
    motion = localize_joints(mesh, bounds, sk)
    joints = build_topology(sk, motion, node_labels, segment_areas(mesh, labels))
    pruned = prune_redundant(joints)
    refined, rounds = refine_collisions(pruned, mesh, sk, node_labels, tester=tester)
    W = bone_heat_weights(mesh, refined, tester)
    rig = Rig(mesh, refined, W)
    return rig, RigReport(len(motion), rounds, len(joints) - len(pruned), int(labels.max()) + 1)
