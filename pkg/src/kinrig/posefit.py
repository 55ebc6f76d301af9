"""Linear blend skinning and articulated registration of a rig to a scan."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .mesh import vertex_normals
from .rigging import Rig

ROT_STEP = 1e-5      # rad, central differences
TRANS_STEP = 1e-3    # mm


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray           # (3, 3) global
    translation: np.ndarray        # (3,)
    joint_rotations: np.ndarray    # (J, 3) axis-angle; zero rows for 0-DoF joints

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3) or np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
            raise ValueError("global rotation is not orthonormal")
        if not (np.all(np.isfinite(self.translation)) and np.all(np.isfinite(self.joint_rotations))):
            raise ValueError("pose has non-finite entries")

    @classmethod
    def identity(cls, n_joints: int) -> "Pose":
        return cls(np.eye(3), np.zeros(3), np.zeros((n_joints, 3)))

    def joint_angle(self, j: int) -> float:
        """Rotation angle of joint ``j`` in degrees."""
        return float(np.degrees(np.linalg.norm(self.joint_rotations[j])))

    def save(self, path) -> None:
        M = np.hstack([self.rotation, self.translation[:, None]])
        lines = ["POSE1"] + [" ".join(repr(float(x)) for x in row) for row in M]
        lines += [f"r {j} " + " ".join(repr(float(x)) for x in r)
                  for j, r in enumerate(self.joint_rotations) if np.any(r != 0)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path, n_joints: int) -> "Pose":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "POSE1":
            raise ValueError(f"{path}: not a pose file")
        try:
            M = np.array([[float(x) for x in ln.split()] for ln in lines[1:4]])
            if M.shape != (3, 4):
                raise ValueError
            rots = np.zeros((n_joints, 3))
            for ln in lines[4:]:
                parts = ln.split()
                if parts[0] != "r" or len(parts) != 5:
                    raise ValueError
                rots[int(parts[1])] = [float(x) for x in parts[2:]]
        except (ValueError, IndexError):
            raise ValueError(f"{path}: malformed pose file") from None
        return cls(M[:, :3], M[:, 3], rots)


def _about(R: np.ndarray, p: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p - R @ p
    return T


def joint_frames(rig: Rig, pose: Pose) -> np.ndarray:
    """(J, 4, 4) world transforms of every joint frame."""
    J = len(rig.joints)
    G = np.empty((J, 4, 4))
    glob = np.eye(4)
    glob[:3, :3] = pose.rotation
    glob[:3, 3] = pose.translation
    mats = Rotation.from_rotvec(pose.joint_rotations).as_matrix() if J else np.zeros((0, 3, 3))
    for j, jt in enumerate(rig.joints):
        local = _about(mats[j], jt.position) if jt.dof else np.eye(4)
        G[j] = (glob if jt.parent < 0 else G[jt.parent]) @ local
    return G


def bone_transforms(rig: Rig, pose: Pose) -> np.ndarray:
    """(J, 4, 4): the transform applied to the bone ending at each joint (root: global)."""
    G = joint_frames(rig, pose)
    out = np.empty_like(G)
    for j, jt in enumerate(rig.joints):
        if jt.parent < 0:
            out[j] = np.eye(4)
            out[j, :3, :3] = pose.rotation
            out[j, :3, 3] = pose.translation
        else:
            out[j] = G[jt.parent]
    return out


def lbs_deform(rig: Rig, pose: Pose) -> np.ndarray:
    """Vertices blended over bone transforms: ``v' = sum_b w_b(v) T_b v``."""
    T = bone_transforms(rig, pose)
    V = rig.mesh.vertices
    W = rig.weights
    out = np.zeros_like(V)
    for b in rig.used_bones:
        out += W[:, b:b + 1] * (V @ T[b, :3, :3].T + T[b, :3, 3])
    return out


# ------------------------------------------------------------ alignment error

def alignment_error(a, b, squared: bool = False) -> float:
    """Symmetric closest-point error between two point sets.

    The mean of squared nearest-neighbour distances taken in both directions;
    the square root of it (in mm) unless ``squared``.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("alignment error needs two non-empty sets")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    ms = (float(np.sum(da ** 2)) + float(np.sum(db ** 2))) / (len(a) + len(b))
    return ms if squared else float(np.sqrt(ms))


# ------------------------------------------------------------ fitting

@dataclass(frozen=True)
class FitConfig:
    outer_iterations: int = 30
    inner_iterations: int = 10
    damping: float = 1e-3
    max_halvings: int = 12
    tolerance: float = 1e-10        # relative error change treated as stagnation
    metric: str = "point"           # "point" or "plane" (needs target normals)
    restart_angles: tuple[float, ...] = (45.0,)   # degrees; () fits from init only
    tangent_weight: float | None = 0.1  # coarse-stage weight of in-surface residuals; None skips it

    def __post_init__(self):
        if self.metric not in ("point", "plane"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.tangent_weight is not None and not 0.0 <= self.tangent_weight < 1.0:
            raise ValueError("tangent_weight must lie in [0, 1)")


@dataclass
class FitResult:
    pose: Pose
    error: float                       # printed convention, mm
    history: list[float] = field(default_factory=list)   # error after every outer iteration

    @property
    def squared_error(self) -> float:
        return self.error ** 2


class _Params:
    """Pose <-> flat parameter vector over the rig's motion joints."""

    def __init__(self, rig: Rig):
        self.n_joints = len(rig.joints)
        self.motion = [k for k, j in enumerate(rig.joints) if j.dof]
        self.size = 6 + 3 * len(self.motion)
        self.steps = np.r_[np.full(3, ROT_STEP), np.full(3, TRANS_STEP),
                           np.full(3 * len(self.motion), ROT_STEP)]

    def to_vector(self, pose: Pose) -> np.ndarray:
        rv = Rotation.from_matrix(pose.rotation).as_rotvec()
        return np.r_[rv, pose.translation, pose.joint_rotations[self.motion].reshape(-1)]

    def to_pose(self, x: np.ndarray) -> Pose:
        R = Rotation.from_rotvec(x[:3]).as_matrix()
        rots = np.zeros((self.n_joints, 3))
        rots[self.motion] = x[6:].reshape(-1, 3)
        return Pose(R, x[3:6].copy(), rots)


def _start_poses(rig: Rig, init: Pose, angles) -> list[Pose]:
    """``init`` plus single-joint perturbations about the mesh's principal axes.

    Closest-point fitting of an articulated model has local minima where a
    part slides along itself; restarting each motion joint from a few
    rotations about the principal directions of the rest mesh covers the
    common bends without depending on the world frame.
    """
    V = rig.mesh.vertices
    _, _, axes = np.linalg.svd(V - V.mean(0), full_matrices=False)
    starts = [init]
    for j, jt in enumerate(rig.joints):
        if not jt.dof:
            continue
        base = Rotation.from_rotvec(init.joint_rotations[j])
        for axis in axes:
            for a in angles:
                for sgn in (1.0, -1.0):
                    rots = init.joint_rotations.copy()
                    turn = Rotation.from_rotvec(sgn * np.radians(a) * axis)
                    rots[j] = (turn * base).as_rotvec()
                    starts.append(Pose(init.rotation, init.translation, rots))
    return starts


def fit_pose(rig: Rig, target, init: Pose | None = None, cfg: FitConfig = FitConfig(),
             target_normals=None) -> FitResult:
    """Articulated ICP: closest points both ways, damped Gauss-Newton on the pose.

    Every outer iteration fixes correspondences and runs damped Gauss-Newton
    with a central-difference Jacobian; the new pose is accepted only if the
    true error (with fresh correspondences) does not grow, halving the step
    toward the previous pose otherwise. The best pose seen is returned.

    Each start first runs a coarse pass whose residuals keep only
    ``cfg.tangent_weight`` of their component along the model surface, so
    that matches between staggered vertex samples do not hold a part in
    place while it slides along itself; plain closest-point residuals then
    polish the result. Both passes obey the same acceptance rule.

    With ``cfg.restart_angles`` the fit is repeated from perturbed joint
    rotations and the lowest final error wins.
    """
    T = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(T) == 0:
        raise ValueError("empty target")
    if cfg.metric == "plane" and target_normals is None:
        raise ValueError("point-to-plane fitting needs target normals")
    Tn = None if target_normals is None else np.asarray(target_normals, dtype=np.float64).reshape(-1, 3)
    par = _Params(rig)
    init = init or Pose.identity(len(rig.joints))
    tree_t = cKDTree(T)
    n_a = rig.mesh.n_vertices

    def model(xv):
        return lbs_deform(rig, par.to_pose(xv))

    def true_error(xv):
        return alignment_error(model(xv), T, squared=True)

    def residuals(xv, idx_t, idx_m, Nm=None):
        M = model(xv)
        r1 = M - T[idx_t]
        r2 = T - M[idx_m]
        if Nm is not None:
            # shrink the in-surface part of both residual sets, measured on the model normals
            s = cfg.tangent_weight - 1.0
            r1 = r1 + s * (r1 - (r1 * Nm).sum(1, keepdims=True) * Nm)
            N2 = Nm[idx_m]
            r2 = r2 + s * (r2 - (r2 * N2).sum(1, keepdims=True) * N2)
        if cfg.metric == "plane":
            r1 = (r1 * Tn[idx_t]).sum(1, keepdims=True)
        return np.r_[r1.reshape(-1), r2.reshape(-1)] / np.sqrt(n_a + len(T))

    def jacobian(xv, idx_t, idx_m, Nm):
        cols = []
        for k in range(par.size):
            h = par.steps[k]
            xp, xm = xv.copy(), xv.copy()
            xp[k] += h
            xm[k] -= h
            cols.append((residuals(xp, idx_t, idx_m, Nm) - residuals(xm, idx_t, idx_m, Nm)) / (2 * h))
        return np.stack(cols, 1)

    def icp(x, outer, coarse=False):
        best_x, best_e = x.copy(), true_error(x)
        history = [best_e]
        for _ in range(outer):
            lam = cfg.damping
            M = model(x)
            _, idx_t = tree_t.query(M)
            _, idx_m = cKDTree(M).query(T)
            Nm = vertex_normals(M, rig.mesh.faces) if coarse else None
            y = x.copy()
            r = residuals(y, idx_t, idx_m, Nm)
            f = float(r @ r)
            for _ in range(cfg.inner_iterations):
                Jm = jacobian(y, idx_t, idx_m, Nm)
                g = Jm.T @ r
                Hm = Jm.T @ Jm
                improved = False
                while lam < 1e12:
                    step = np.linalg.solve(Hm + lam * np.diag(np.diag(Hm) + 1e-12), -g)
                    rn = residuals(y + step, idx_t, idx_m, Nm)
                    fn = float(rn @ rn)
                    if fn < f:
                        y, r, f = y + step, rn, fn
                        lam = max(lam * 0.5, 1e-12)
                        improved = True
                        break
                    lam *= 10.0
                if not improved or np.linalg.norm(step) < 1e-12:
                    break
            # accept only non-increasing true error; halve toward x otherwise
            e_new = true_error(y)
            d = y - x
            halvings = 0
            while e_new > best_e and halvings < cfg.max_halvings:
                d *= 0.5
                e_new = true_error(x + d)
                halvings += 1
            if e_new > best_e:
                break
            x = x + d
            stalled = best_e - e_new <= cfg.tolerance * max(best_e, 1e-30)
            best_x, best_e = x.copy(), e_new
            history.append(best_e)
            if stalled:
                break
        return best_x, best_e, history

    def fit_from(x):
        history = []
        if cfg.tangent_weight is not None:
            # vertex samples alias sliding along the surface; damp that first
            x, _, history = icp(x, cfg.outer_iterations, coarse=True)
        x, e, rest = icp(x, cfg.outer_iterations)
        return x, e, history + rest[1:] if history else rest

    starts = [init]
    if cfg.restart_angles and par.motion:
        starts = _start_poses(rig, init, cfg.restart_angles)
    runs = [fit_from(par.to_vector(s)) for s in starts]
    # ties go to the earliest start, so the unperturbed init wins them
    best_x, best_e, history = min(runs, key=lambda run: run[1])
    e0 = runs[0][2][0]
    if history[0] < e0:
        history.insert(0, e0)
    return FitResult(par.to_pose(best_x), float(np.sqrt(best_e)), [float(np.sqrt(h)) for h in history])
