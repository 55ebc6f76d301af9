"""Synthetic articulated objects with ground truth.

Objects are tubes swept along planar centerlines (with hemispherical end
caps), optionally joined by a convex hub. Each object carries its true
joints, a part label per vertex and the per-vertex blend weights used to
animate it, so every later stage can be scored against known answers.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.transform import Rotation

from . import fileio
from .kernels.raster import rasterize
from .mesh import Mesh, build_halfedge, enclosed_volume
from .tracking import Camera, PointCloud

BLEND_BAND = 5.0


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def default_camera(width: int = 640, height: int = 480, f: float = 570.0) -> Camera:
    return Camera(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


# ------------------------------------------------------------ primitive specs

@dataclass(frozen=True)
class PipeSpec:
    length: float = 300.0
    radius: float = 20.0
    joint_fractions: tuple[float, ...] = (0.5,)
    segments_around: int = 20
    origin: tuple[float, float, float] = (-150.0, 0.0, 700.0)

    def __post_init__(self):
        fr = tuple(float(f) for f in self.joint_fractions)
        if any(not 0 < f < 1 for f in fr) or list(fr) != sorted(fr):
            raise ValueError("joint fractions must be sorted and strictly inside (0, 1)")
        if self.length <= 2 * self.radius or self.radius <= 0:
            raise ValueError("pipe must be longer than its diameter")
        object.__setattr__(self, "joint_fractions", fr)


@dataclass(frozen=True)
class StarSpec:
    arms: int = 3
    arm_length: float = 100.0
    radius: float = 15.0
    segments_around: int = 16
    center: tuple[float, float, float] = (0.0, 0.0, 700.0)


@dataclass(frozen=True)
class LampSpec:
    """Three straight segments joined at filleted corners, lying in the x-y plane."""
    lengths: tuple[float, float, float] = (140.0, 120.0, 100.0)
    bend_degrees: tuple[float, float] = (70.0, -70.0)
    radius: float = 15.0
    fillet: float = 30.0
    segments_around: int = 16
    origin: tuple[float, float, float] = (-120.0, 40.0, 700.0)


@dataclass
class GroundTruth:
    mesh: Mesh
    joints: np.ndarray          # (J, 3)
    axes: np.ndarray            # (J, 3) unit bending axes
    joint_parent: np.ndarray    # part moved relative to
    joint_child: np.ndarray     # part moved by the joint
    part_parent: np.ndarray     # (P,) parent part, -1 for the root part
    weights: np.ndarray         # (n, P) blend weights, rows sum to 1
    labels: np.ndarray          # (n,) hard part labels
    name: str = "object"

    @property
    def n_parts(self) -> int:
        return len(self.part_parent)

    @property
    def n_joints(self) -> int:
        return len(self.joints)


# ------------------------------------------------------------ centerlines

@dataclass
class Centerline:
    points: np.ndarray      # dense samples
    s: np.ndarray           # arc length of each sample
    normal: np.ndarray      # normal of the curve's plane
    corners: list[float] = field(default_factory=list)   # arc length of corner midpoints

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def at(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        p = np.stack([np.interp(s, self.s, self.points[:, k]) for k in range(3)], 1)
        h = 0.25
        a = np.stack([np.interp(np.clip(s + h, 0, self.length), self.s, self.points[:, k])
                      for k in range(3)], 1)
        b = np.stack([np.interp(np.clip(s - h, 0, self.length), self.s, self.points[:, k])
                      for k in range(3)], 1)
        t = a - b
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        return p, t


def filleted_polyline(corners: np.ndarray, fillet: float, normal=(0.0, 0.0, 1.0),
                      step: float = 0.25) -> Centerline:
    """Dense planar centerline through ``corners`` with circular fillets."""
    P = np.asarray(corners, dtype=np.float64)
    pieces = [P[:1]]
    corner_mid = []
    for i in range(1, len(P) - 1):
        a = P[i] - P[i - 1]
        a /= np.linalg.norm(a)
        b = P[i + 1] - P[i]
        b /= np.linalg.norm(b)
        theta = math.acos(float(np.clip(a @ b, -1, 1)))
        if theta < 1e-9:
            continue
        t = fillet * math.tan(theta / 2)
        start = P[i] - a * t
        n_in = b - (a @ b) * a
        n_in /= np.linalg.norm(n_in)
        c = start + fillet * n_in
        phi = np.linspace(0.0, theta, max(int(math.ceil(fillet * theta / step)), 2) + 1)
        arc = c + fillet * (np.cos(phi)[:, None] * -n_in + np.sin(phi)[:, None] * a)
        pieces.append(arc)
        corner_mid.append(len(np.concatenate(pieces)) - len(arc) + len(arc) // 2)
    pieces.append(P[-1:])
    raw = np.concatenate(pieces)
    # resample every straight run densely
    dense = [raw[:1]]
    for p, q in zip(raw[:-1], raw[1:]):
        m = max(int(math.ceil(np.linalg.norm(q - p) / step)), 1)
        dense.append(p + (q - p) * (np.arange(1, m + 1) / m)[:, None])
    # corner midpoints are measured on the raw sequence; map them to arc length
    raw_s = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(raw, axis=0), axis=1))]
    pts = np.concatenate(dense)
    keep = np.r_[True, np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12]
    pts = pts[keep]
    s = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]
    return Centerline(pts, s, np.asarray(normal, dtype=np.float64),
                      [float(raw_s[k]) for k in corner_mid])


def straight_centerline(origin, direction, length: float, normal=(0.0, 0.0, 1.0)) -> Centerline:
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return Centerline(np.stack([o, o + length * d]), np.array([0.0, length]),
                      np.asarray(normal, dtype=np.float64))


# ------------------------------------------------------------ tube sweeps

def _ring_stations(length: float, radius: float, spacing: float, cap_start: bool = True,
                   cap_end: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Arc-length stations and ring radii, with hemispherical caps where requested."""
    n_cap = max(int(round(0.5 * math.pi * radius / spacing)), 2)
    phi = np.linspace(0.0, 0.5 * math.pi, n_cap + 1)[1:]
    cap_s = radius * (1.0 - np.cos(phi))
    cap_r = radius * np.sin(phi)
    body_a = radius if cap_start else 0.0
    body_b = length - radius if cap_end else length
    m = max(int(round((body_b - body_a) / spacing)), 1)
    if m % 2:
        m += 1
    body = np.linspace(body_a, body_b, m + 1)
    s_parts, r_parts = [], []
    if cap_start:
        s_parts.append(cap_s[:-1])
        r_parts.append(cap_r[:-1])
    s_parts.append(body)
    r_parts.append(np.full(len(body), radius))
    if cap_end:
        s_parts.append((length - cap_s[:-1])[::-1])
        r_parts.append(cap_r[:-1][::-1])
    return np.concatenate(s_parts), np.concatenate(r_parts)


def _rings(center: Centerline, stations: np.ndarray, radii: np.ndarray, n_around: int):
    p, t = center.at(stations)
    u = np.broadcast_to(center.normal, t.shape)
    u = u - (u * t).sum(1, keepdims=True) * t
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    w = np.cross(t, u)
    ang = 2 * np.pi * np.arange(n_around) / n_around
    ring = (p[:, None, :] + radii[:, None, None] *
            (np.cos(ang)[None, :, None] * u[:, None, :] + np.sin(ang)[None, :, None] * w[:, None, :]))
    return ring


def _quad_strip(first_ring: int, n_rings: int, n_around: int, flip_from: int | None = None):
    faces = []
    for k in range(n_rings - 1):
        a0 = first_ring + k * n_around
        b0 = a0 + n_around
        mirror = flip_from is not None and k >= flip_from
        for j in range(n_around):
            j1 = (j + 1) % n_around
            if not mirror:
                faces.append((a0 + j, a0 + j1, b0 + j1))
                faces.append((a0 + j, b0 + j1, b0 + j))
            else:
                faces.append((a0 + j, a0 + j1, b0 + j))
                faces.append((a0 + j1, b0 + j1, b0 + j))
    return faces


def _fan(center: int, ring_start: int, n_around: int, reverse: bool):
    out = []
    for j in range(n_around):
        j1 = (j + 1) % n_around
        out.append((center, ring_start + j1, ring_start + j) if not reverse
                   else (center, ring_start + j, ring_start + j1))
    return out


def _orient_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return faces if enclosed_volume(vertices, faces) > 0 else faces[:, ::-1].copy()


def sweep_tube(center: Centerline, radius: float, n_around: int = 16, spacing: float | None = None,
               mirror: bool = True):
    """Closed tube along ``center`` with hemispherical caps.

    Returns ``(vertices, faces, arc_length_per_vertex)``. With ``mirror`` the
    diagonal of each quad flips past the middle so that a straight tube is
    symmetric about its mid-plane.
    """
    spacing = spacing or 2 * math.pi * radius / n_around
    st, rr = _ring_stations(center.length, radius, spacing)
    rings = _rings(center, st, rr, n_around)
    nr = len(st)
    verts = np.concatenate([center.points[:1], rings.reshape(-1, 3), center.points[-1:]])
    arc = np.r_[0.0, np.repeat(st, n_around), center.length]
    faces = _fan(0, 1, n_around, reverse=False)
    faces += _quad_strip(1, nr, n_around, flip_from=(nr - 1) // 2 if mirror else None)
    faces += _fan(len(verts) - 1, 1 + (nr - 1) * n_around, n_around, reverse=True)
    f = _orient_outward(verts, np.asarray(faces, dtype=np.int64))
    return verts, f, arc


# ------------------------------------------------------------ ground truth

def _blend_weights(arc: np.ndarray, cuts: list[float], band: float = BLEND_BAND):
    """Chain weights and axial-region labels for parts split at the given arc lengths.

    A cross-section lying exactly on a cut belongs to the part after it.
    """
    P = len(cuts) + 1
    w = np.zeros((len(arc), P))
    labels = np.searchsorted(np.asarray(cuts), arc, side="right")
    w[np.arange(len(arc)), labels] = 1.0
    half = 0.5 * band
    for j, c in enumerate(cuts):
        near = np.abs(arc - c) < half
        a = (arc[near] - (c - half)) / band
        w[near] = 0.0
        w[near, j] = 1.0 - a
        w[near, j + 1] = a
    return w, labels


def make_pipe(spec: PipeSpec = PipeSpec()) -> GroundTruth:
    center = straight_centerline(spec.origin, (1.0, 0.0, 0.0), spec.length)
    v, f, arc = sweep_tube(center, spec.radius, spec.segments_around)
    cuts = [fr * spec.length for fr in spec.joint_fractions]
    w, labels = _blend_weights(arc, cuts)
    joints, _ = center.at(np.asarray(cuts))
    J = len(cuts)
    return GroundTruth(build_halfedge(v, f), joints, np.tile([0.0, 0.0, 1.0], (J, 1)),
                       np.arange(J), np.arange(1, J + 1), np.arange(-1, J),
                       w, labels, name="pipe")


def make_lamp(spec: LampSpec = LampSpec()) -> GroundTruth:
    o = np.asarray(spec.origin, dtype=np.float64)
    heading = 0.0
    corners = [o]
    for k, seg in enumerate(spec.lengths):
        d = np.array([math.cos(heading), math.sin(heading), 0.0])
        corners.append(corners[-1] + seg * d)
        if k < len(spec.bend_degrees):
            heading += math.radians(spec.bend_degrees[k])
    center = filleted_polyline(np.asarray(corners), spec.fillet)
    v, f, arc = sweep_tube(center, spec.radius, spec.segments_around, mirror=False)
    cuts = list(center.corners)
    w, labels = _blend_weights(arc, cuts)
    joints, _ = center.at(np.asarray(cuts))
    J = len(cuts)
    return GroundTruth(build_halfedge(v, f), joints, np.tile([0.0, 0.0, 1.0], (J, 1)),
                       np.arange(J), np.arange(1, J + 1), np.arange(-1, J),
                       w, labels, name="lamp")


def make_l_pipe(leg: float = 150.0, radius: float = 15.0, fillet: float = 25.0,
                segments_around: int = 16, origin=(-60.0, -60.0, 700.0)) -> GroundTruth:
    """Rigid L-shaped tube; a straight chord between its ends leaves the surface."""
    o = np.asarray(origin, dtype=np.float64)
    center = filleted_polyline(np.stack([o + [0, leg, 0], o, o + [leg, 0, 0]]), fillet)
    v, f, arc = sweep_tube(center, radius, segments_around, mirror=False)
    n = len(v)
    return GroundTruth(build_halfedge(v, f), np.zeros((0, 3)), np.zeros((0, 3)),
                       np.zeros(0, np.int64), np.zeros(0, np.int64), np.array([-1]),
                       np.ones((n, 1)), np.zeros(n, np.int64), name="lpipe")


def make_star(spec: StarSpec = StarSpec()) -> GroundTruth:
    """Planar star: straight arms fused to a convex hub.

    Part 0 is the hub; part ``a + 1`` is arm ``a``. Each arm's joint sits on
    its axis at twice the tube radius from the center.
    """
    R = spec.radius
    n_around = spec.segments_around
    c0 = np.asarray(spec.center, dtype=np.float64)
    hub_r = 1.25 * R
    spacing = 2 * math.pi * R / n_around
    verts = []
    faces = []
    arcs = []
    ring_ids = []
    dirs = []
    for a in range(spec.arms):
        ang = 2 * math.pi * a / spec.arms
        d = np.array([math.cos(ang), math.sin(ang), 0.0])
        dirs.append(d)
        arm_len = spec.arm_length - hub_r
        center = straight_centerline(c0 + hub_r * d, d, arm_len)
        st, rr = _ring_stations(arm_len, R, spacing, cap_start=False)
        rings = _rings(center, st, rr, n_around)
        base = len(np.concatenate(verts)) if verts else 0
        nr = len(st)
        verts.append(rings.reshape(-1, 3))
        verts.append(center.points[-1:])
        arcs.append(np.r_[np.repeat(st + hub_r, n_around), spec.arm_length])
        faces += _quad_strip(base, nr, n_around)
        faces += _fan(base + nr * n_around, base + (nr - 1) * n_around, n_around, reverse=True)
        ring_ids.append(np.arange(base, base + n_around))
    v = np.concatenate(verts)
    # hub: convex hull of the innermost rings minus the facets that close each ring
    hub_ids = np.concatenate(ring_ids)
    hull = ConvexHull(v[hub_ids])
    if len(hull.vertices) != len(hub_ids):
        raise ValueError("hub rings are not in convex position")
    ring_of = np.repeat(np.arange(spec.arms), n_around)
    hub_faces = []
    centroid = v[hub_ids].mean(0)
    for tri in hull.simplices:
        if len(set(ring_of[tri])) == 1:
            continue
        g = hub_ids[tri]
        nrm = np.cross(v[g[1]] - v[g[0]], v[g[2]] - v[g[0]])
        if nrm @ (v[g].mean(0) - centroid) < 0:
            g = g[::-1]
        hub_faces.append(tuple(int(x) for x in g))
    f = np.asarray(faces, dtype=np.int64)
    f = np.concatenate([f, np.asarray(hub_faces, dtype=np.int64)])
    arc = np.concatenate(arcs)
    arm_of = np.concatenate([np.full(len(a), k) for k, a in enumerate(arcs)])
    J = spec.arms
    joints = np.stack([c0 + 2 * R * d for d in dirs])
    w = np.zeros((len(v), J + 1))
    labels = np.zeros(len(v), dtype=np.int64)
    for k in range(J):
        sel = np.flatnonzero(arm_of == k)
        wk, lk = _blend_weights(arc[sel], [2 * R])
        w[sel, 0] = wk[:, 0]
        w[sel, k + 1] = wk[:, 1]
        labels[sel] = np.where(lk == 1, k + 1, 0)
    axes = np.tile([0.0, 0.0, 1.0], (J, 1))
    return GroundTruth(build_halfedge(v, f), joints, axes, np.zeros(J, np.int64),
                       np.arange(1, J + 1), np.r_[-1, np.zeros(J, np.int64)],
                       w, labels, name="star")


# ------------------------------------------------------------ animation

def part_transforms(gt: GroundTruth, angles_deg: np.ndarray) -> np.ndarray:
    """(P, 3, 4) rigid transforms of every part for one set of joint angles."""
    P = gt.n_parts
    T = np.zeros((P, 3, 4))
    T[:, :, :3] = np.eye(3)
    angles = np.asarray(angles_deg, dtype=np.float64).reshape(-1)
    for j in np.argsort(gt.joint_child):
        parent, child = gt.joint_parent[j], gt.joint_child[j]
        Rj = Rotation.from_rotvec(np.radians(angles[j]) * gt.axes[j]).as_matrix()
        c = gt.joints[j]
        local = np.hstack([Rj, (c - Rj @ c)[:, None]])
        Tp = T[parent]
        T[child, :, :3] = Tp[:, :3] @ local[:, :3]
        T[child, :, 3] = Tp[:, :3] @ local[:, 3] + Tp[:, 3]
    return T


def pose_vertices(gt: GroundTruth, angles_deg) -> np.ndarray:
    T = part_transforms(gt, angles_deg)
    v = gt.mesh.vertices
    moved = np.einsum("pij,nj->npi", T[:, :, :3], v) + T[None, :, :, 3]
    return np.einsum("np,npi->ni", gt.weights, moved)


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear keyframes ``(frame, degrees)``, held constant outside."""
    keys: tuple[tuple[float, float], ...]

    def __call__(self, t):
        k = np.asarray(sorted(self.keys), dtype=np.float64)
        return np.interp(t, k[:, 0], k[:, 1])

    @classmethod
    def linear(cls, start_deg: float, end_deg: float, frames: int) -> "Curve":
        return cls(((0.0, float(start_deg)), (float(frames - 1), float(end_deg))))


def animate(gt: GroundTruth, curves, n_frames: int) -> list[np.ndarray]:
    """Vertex positions per frame; frame 0 uses the curves' values at 0."""
    curves = list(curves)
    if len(curves) != gt.n_joints:
        raise ValueError(f"need {gt.n_joints} curves, got {len(curves)}")
    return [pose_vertices(gt, [c(t) for c in curves]) for t in range(n_frames)]


# ------------------------------------------------------------ rendering

@dataclass
class Render:
    depth: np.ndarray
    cloud: PointCloud
    discontinuities: np.ndarray
    pixels: np.ndarray      # (m, 2) pixel of every cloud point


def render_depth(mesh_or_vertices, cam: Camera, faces: np.ndarray | None = None,
                 jump: float = 15.0) -> Render:
    """Z-buffer depth image, back-projected cloud and discontinuity pixels."""
    if isinstance(mesh_or_vertices, Mesh):
        verts, faces = mesh_or_vertices.vertices, mesh_or_vertices.faces
    else:
        verts = np.asarray(mesh_or_vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    pc = cam.to_camera(verts)
    depth, fid = rasterize(pc, faces, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
    valid = np.isfinite(depth)
    ys, xs = np.nonzero(valid)
    z = depth[ys, xs]
    pts_c = np.stack([(xs - cam.cx) / cam.fx * z, (ys - cam.cy) / cam.fy * z, z], 1)
    tri = verts[faces[fid[ys, xs]]]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    cloud = PointCloud(cam.to_world(pts_c), nrm)
    disc = discontinuity_pixels(depth, jump)
    return Render(depth, cloud, disc, np.stack([xs, ys], 1).astype(np.float64))


def discontinuity_pixels(depth: np.ndarray, jump: float = 15.0) -> np.ndarray:
    """Valid pixels next to background or whose 8-neighborhood depth range exceeds ``jump``."""
    valid = np.isfinite(depth)
    H, W = depth.shape
    dz = np.where(valid, depth, np.nan)
    pad = np.pad(dz, 1, constant_values=np.nan)
    hi = np.full(depth.shape, -np.inf)
    lo = np.full(depth.shape, np.inf)
    border = np.zeros(depth.shape, dtype=bool)
    for dy in range(3):
        for dx in range(3):
            win = pad[dy:dy + H, dx:dx + W]
            border |= np.isnan(win)
            hi = np.fmax(hi, win)
            lo = np.fmin(lo, win)
    flag = valid & (border | (hi - lo > jump))
    ys, xs = np.nonzero(flag)
    return np.stack([xs, ys], 1).astype(np.float64)


def add_noise(cloud: PointCloud, sigma: float, seed: int = 0) -> PointCloud:
    if sigma < 0:
        raise ValueError("noise level must be non-negative")
    if sigma == 0:
        return cloud
    rng = np.random.default_rng(seed)
    offs = rng.normal(0.0, sigma, len(cloud))
    return PointCloud(cloud.points + offs[:, None] * cloud.normals, cloud.normals)


# ------------------------------------------------------------ scenarios

@dataclass
class Scenario:
    object: str = "pipe"
    params: dict = field(default_factory=dict)
    frames: int = 60
    curves: dict = field(default_factory=dict)     # joint -> Curve
    noise: float = 0.0
    seed: int = 0
    targets: list = field(default_factory=list)    # list of per-joint angle lists
    camera: dict = field(default_factory=dict)

    def ground_truth(self) -> GroundTruth:
        return make_object(self.object, **self.params)

    def camera_model(self) -> Camera:
        cam = default_camera()
        d = cam.to_dict()
        d.update(self.camera)
        return Camera.from_dict(d)

    def curve_list(self, gt: GroundTruth) -> list[Curve]:
        return [self.curves.get(j, Curve(((0.0, 0.0),))) for j in range(gt.n_joints)]


def make_object(kind: str, **params) -> GroundTruth:
    if kind == "pipe":
        if "joint_fractions" in params:
            params["joint_fractions"] = tuple(params["joint_fractions"])
        return make_pipe(PipeSpec(**params))
    if kind == "star":
        return make_star(StarSpec(**params))
    if kind == "lamp":
        return make_lamp(LampSpec(**params))
    if kind == "lpipe":
        return make_l_pipe(**params)
    raise ValueError(f"unknown object kind {kind!r}")


_INT_PARAMS = {"segments_around", "arms"}


def _numbers(text: str, line: int) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ScenarioError(f"expected numbers, got {text!r}", line) from None


def parse_scenario(text: str) -> Scenario:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys: ``object``, ``frames``, ``noise``, ``seed``, ``target`` (repeatable,
    one angle per joint), ``camera.<field>``, ``curve <joint>`` with
    ``frame:deg`` keyframes, and any object parameter (``length``,
    ``radius``, ``joint_fractions``, ...).
    """
    sc = Scenario()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, value = (x.strip() for x in line.split("=", 1))
        if key == "object":
            sc.object = value
        elif key == "frames":
            try:
                sc.frames = int(value)
            except ValueError:
                raise ScenarioError(f"frame count must be an integer, got {value!r}", no) from None
        elif key == "noise":
            sc.noise = _numbers(value, no)[0]
        elif key == "seed":
            sc.seed = int(_numbers(value, no)[0])
        elif key == "target":
            sc.targets.append(_numbers(value, no))
        elif key.startswith("camera."):
            field_name = key.split(".", 1)[1]
            vals = _numbers(value, no)
            sc.camera[field_name] = vals if field_name == "pose" else vals[0]
        elif key.startswith("curve"):
            parts = key.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise ScenarioError("curve key must be 'curve <joint index>'", no)
            keys = []
            for item in value.split():
                if ":" not in item:
                    raise ScenarioError(f"keyframe {item!r} is not 'frame:degrees'", no)
                a, b = item.split(":", 1)
                keys.append(tuple(_numbers(f"{a} {b}", no)))
            if not keys:
                raise ScenarioError("curve has no keyframes", no)
            sc.curves[int(parts[1])] = Curve(tuple(keys))
        else:
            vals = _numbers(value, no)
            if key == "joint_fractions":
                sc.params[key] = tuple(vals)
            elif key in ("lengths", "bend_degrees", "origin", "center"):
                sc.params[key] = tuple(vals)
            elif key in _INT_PARAMS:
                sc.params[key] = int(vals[0])
            else:
                sc.params[key] = vals[0]
    if sc.frames < 2:
        raise ScenarioError(f"scenario needs at least 2 frames, got {sc.frames}")
    if sc.object not in ("pipe", "star", "lamp", "lpipe"):
        raise ScenarioError(f"unknown object kind {sc.object!r}")
    return sc


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def pipe_scenario(joint_fraction: float = 0.5, frames: int = 60, end_deg: float = 60.0,
                  noise: float = 0.5, seed: int = 0, targets=(15.0, 30.0, 45.0, 60.0)) -> Scenario:
    return Scenario("pipe", {"length": 300.0, "radius": 20.0,
                             "joint_fractions": (joint_fraction,)}, frames,
                    {0: Curve.linear(0.0, end_deg, frames)}, noise, seed,
                    [[t] for t in targets])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_dataset(sc: Scenario, out_dir) -> dict:
    """Render a scenario into ``out_dir`` and return its manifest."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "targets").mkdir(exist_ok=True)
    gt = sc.ground_truth()
    cam = sc.camera_model()
    cam.save(out / "camera.json")
    fileio.write_mesh_arrays(out / "template.ply", gt.mesh.vertices, gt.mesh.faces)
    seq = animate(gt, sc.curve_list(gt), sc.frames)
    for t, pos in enumerate(seq):
        r = render_depth(pos, cam, gt.mesh.faces)
        cloud = add_noise(r.cloud, sc.noise, seed=sc.seed * 100003 + t)
        fileio.write_point_cloud(out / "frames" / f"{t:04d}.ply", cloud.points, cloud.normals,
                                 binary=True)
        fileio.write_pixels(out / "frames" / f"{t:04d}.disc", r.discontinuities)
    for k, angles in enumerate(sc.targets):
        if len(angles) != gt.n_joints:
            raise ScenarioError(f"target {k} has {len(angles)} angles for {gt.n_joints} joints")
        fileio.write_mesh_arrays(out / "targets" / f"{k:02d}.ply", pose_vertices(gt, angles),
                                 gt.mesh.faces)
    truth = {"object": sc.object, "joints": gt.joints.tolist(), "axes": gt.axes.tolist(),
             "joint_parent": gt.joint_parent.tolist(), "joint_child": gt.joint_child.tolist(),
             "part_parent": gt.part_parent.tolist(), "labels": gt.labels.tolist(),
             "targets": [list(map(float, a)) for a in sc.targets]}
    (out / "gt.json").write_text(json.dumps(truth) + "\n")
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {"frames": sc.frames, "seed": sc.seed, "noise": sc.noise,
                "files": {str(p.relative_to(out)): file_digest(p) for p in files}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_frames(dataset_dir):
    """``(PointCloud, pixels)`` per frame of a dataset directory, in order."""
    frame_dir = Path(dataset_dir) / "frames"
    out = []
    for ply in sorted(frame_dir.glob("*.ply")):
        pts, nrm = fileio.read_point_cloud(ply)
        disc = ply.with_suffix(".disc")
        px = fileio.read_pixels(disc) if disc.exists() else np.zeros((0, 2))
        out.append((PointCloud(pts, nrm), px))
    return out
