"""Stage orchestration shared by the command line and the acceptance suite.

Each stage reads and writes plain files so a run can resume from whatever
artifacts already exist. Configuration is a flat ``key = value`` text;
every stage records the full configuration and the hashes of its inputs in
a manifest beside its output.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import motion_seg, posefit, rigging, skeleton, synth, tracking
from .mesh import Mesh, load_mesh
from .tracking import Camera, TrajectorySet


@dataclass(frozen=True)
class PipelineConfig:
    gamma_def: float = 0.005
    lam: float = motion_seg.DEFAULT_LAMBDA
    lambda_thresh: float = 0.7
    sample_count: int = motion_seg.DEFAULT_SAMPLES
    seed: int = 0
    dt_mode: str = "normalized"
    # tracker
    max_normal_angle: float = 45.0
    max_corr_dist: float = 10.0
    outer_iterations: int = 15
    occlusion_test: bool = True
    depth_tolerance: float = 5.0
    # contraction
    laplacian_growth: float = 2.0
    attraction: float = 1.0
    initial_laplacian: float = 1.0
    contraction_iterations: int = 10
    volume_ratio_stop: float = 1e-4
    collapse_edge_length: float = 0.0          # 0: twice the mean edge length
    # pose fitting
    fit_iterations: int = 30
    # parameter sweep (empty: the single values above)
    gamma_grid: tuple = ()
    lambda_grid: tuple = ()
    workers: int = 1

    def tracker(self) -> tracking.TrackerConfig:
        return tracking.TrackerConfig(self.gamma_def, self.max_normal_angle, self.max_corr_dist,
                                      self.outer_iterations, self.occlusion_test, self.depth_tolerance)

    def segmenter(self) -> motion_seg.SegmentConfig:
        return motion_seg.SegmentConfig(self.lambda_thresh, self.lam, self.sample_count, self.seed,
                                        self.dt_mode)

    def contraction(self) -> skeleton.ContractionConfig:
        return skeleton.ContractionConfig(self.laplacian_growth, self.attraction, self.initial_laplacian,
                                          self.contraction_iterations, self.volume_ratio_stop,
                                          self.collapse_edge_length or None)

    def fitter(self) -> posefit.FitConfig:
        return posefit.FitConfig(outer_iterations=self.fit_iterations)

    def gammas(self) -> tuple:
        return tuple(self.gamma_grid) or (self.gamma_def,)

    def thresholds(self) -> tuple:
        return tuple(self.lambda_grid) or (self.lambda_thresh,)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            else:
                v = repr(v) if isinstance(v, float) else str(v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    def as_dict(self) -> dict:
        return {f.name: (list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple)
                         else getattr(self, f.name)) for f in fields(self)}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


_FIELDS = {f.name: f for f in fields(PipelineConfig)}
_ALIASES = {"gamma": "gamma_def", "lambda": "lam", "lambda_affinity": "lam", "samples": "sample_count"}


def _convert(name: str, raw, line: int | None = None):
    default = getattr(PipelineConfig(), name)
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return s in ("true", "1", "yes")
        if isinstance(default, tuple):
            if isinstance(raw, (list, tuple)):
                return tuple(float(x) for x in raw)
            return tuple(float(x) for x in str(raw).replace(",", " ").split())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        value = str(raw).strip()
        if name == "dt_mode":
            _check_dt_mode(value)
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {raw!r} for {name}", line) from None


def _check_dt_mode(mode: str) -> None:
    if mode in ("normalized", "raw"):
        return
    if mode.startswith("fixed:") and mode[6:].isdigit() and int(mode[6:]) >= 1:
        return
    raise ValueError(mode)


def parse_config(text: str, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """``key = value`` lines over ``base``; ``#`` starts a comment."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        # a run manifest doubles as a configuration file
        data = json.loads(text)
        return with_overrides(base, data.get("config", data))
    values = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, value = (x.strip() for x in line.split("=", 1))
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", no)
        values[key] = _convert(key, value, no)
    return dataclasses.replace(base, **values)


def load_config(path, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    return parse_config(Path(path).read_text(), base)


def with_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    values = {}
    for k, v in overrides.items():
        if v is None:
            continue
        key = _ALIASES.get(k, k)
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {k!r}")
        values[key] = _convert(key, v)
    return dataclasses.replace(cfg, **values)


# ------------------------------------------------------------ manifests

def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, stage: str, cfg: PipelineConfig, inputs: dict, outputs: dict | None = None) -> dict:
    data = {"stage": stage, "config": cfg.as_dict(),
            "inputs": {k: {"path": str(p), "sha256": digest(p)} for k, p in sorted(inputs.items())}}
    if outputs:
        data["outputs"] = {k: {"path": str(p), "sha256": digest(p)} for k, p in sorted(outputs.items())}
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    return data


def _manifest_matches(path, stage: str, cfg: PipelineConfig, inputs: dict, keys: tuple) -> bool:
    """True if a previous manifest used the same inputs and the same values of ``keys``."""
    p = Path(path)
    if not p.exists():
        return False
    try:
        old = json.loads(p.read_text())
    except json.JSONDecodeError:
        return False
    if old.get("stage") != stage:
        return False
    now = cfg.as_dict()
    if any(old.get("config", {}).get(k) != now[k] for k in keys):
        return False
    old_in = old.get("inputs", {})
    for k, path_k in inputs.items():
        if old_in.get(k, {}).get("sha256") != digest(path_k):
            return False
    for k, rec in old.get("outputs", {}).items():
        if not Path(rec["path"]).exists() or digest(rec["path"]) != rec["sha256"]:
            return False
    return True


# ------------------------------------------------------------ stages

TRACK_KEYS = ("gamma_def", "max_normal_angle", "max_corr_dist", "outer_iterations",
              "occlusion_test", "depth_tolerance")
SEGMENT_KEYS = ("lam", "lambda_thresh", "sample_count", "seed", "dt_mode")
RIG_KEYS = ("laplacian_growth", "attraction", "initial_laplacian", "contraction_iterations",
            "volume_ratio_stop", "collapse_edge_length")


def load_dataset(dataset) -> tuple[Mesh, Camera, list]:
    d = Path(dataset)
    cam_path = d / "camera.json"
    if not cam_path.exists():
        raise FileNotFoundError(f"{cam_path}: camera file missing")
    mesh = load_mesh(d / "template.ply")
    frames = synth.load_frames(d)
    if len(frames) < 2:
        raise ValueError(f"{d}: need at least 2 frames, found {len(frames)}")
    return mesh, Camera.load(cam_path), frames


def track(dataset, cfg: PipelineConfig, progress=None) -> TrajectorySet:
    mesh, cam, frames = load_dataset(dataset)
    return tracking.track_sequence(mesh, frames, cam, cfg.tracker(), progress=progress)


def segment(traj: TrajectorySet, mesh: Mesh, cfg: PipelineConfig):
    return motion_seg.segment(traj, mesh, cfg.segmenter())


def rig(mesh: Mesh, labels, cfg: PipelineConfig):
    sk = skeleton.skeletonize(mesh, cfg.contraction())
    r, report = rigging.build_rig(mesh, labels, sk)
    return r, report, sk


def fit_targets(r: rigging.Rig, targets: list[np.ndarray], cfg: PipelineConfig) -> list[posefit.FitResult]:
    return [posefit.fit_pose(r, t, cfg=cfg.fitter()) for t in targets]


def dataset_targets(dataset) -> list[np.ndarray]:
    from .fileio import read_mesh_arrays
    return [read_mesh_arrays(p)[0] for p in sorted((Path(dataset) / "targets").glob("*.ply"))]


def _fmt_key(x: float) -> str:
    return repr(float(x)).replace(".", "p")


@dataclass
class CellResult:
    gamma: float
    lambda_thresh: float
    k: int
    motion_joints: int
    errors: list[float]

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors)) if self.errors else float("nan")


def _track_cached(dataset: Path, out: Path, cfg: PipelineConfig, log) -> Path:
    path = out / f"track_g{_fmt_key(cfg.gamma_def)}.traj"
    man = path.with_suffix(".manifest.json")
    inputs = {"template": dataset / "template.ply", "camera": dataset / "camera.json",
              "dataset_manifest": dataset / "manifest.json"}
    inputs = {k: v for k, v in inputs.items() if v.exists()}
    if path.exists() and _manifest_matches(man, "track", cfg, inputs, TRACK_KEYS):
        log(f"reuse {path.name}")
        return path
    log(f"track gamma_def={cfg.gamma_def}")
    traj = track(dataset, cfg)
    traj.save(path)
    write_manifest(man, "track", cfg, inputs, {"trajectories": path})
    return path


def _cell(dataset: Path, out: Path, cfg: PipelineConfig, traj_path: Path, log) -> CellResult:
    tag = f"g{_fmt_key(cfg.gamma_def)}_t{_fmt_key(cfg.lambda_thresh)}"
    seg_path = out / f"seg_{tag}.txt"
    rig_path = out / f"rig_{tag}.rig"
    fit_path = out / f"fit_{tag}.json"
    mesh_path = dataset / "template.ply"
    mesh = load_mesh(mesh_path)
    seg_man = seg_path.with_suffix(".manifest.json")
    if seg_path.exists() and _manifest_matches(seg_man, "segment", cfg, {"trajectories": traj_path}, SEGMENT_KEYS):
        seg = motion_seg.Segmentation.load(seg_path)
    else:
        traj = TrajectorySet.load(traj_path)
        seg, _ = segment(traj, mesh, cfg)
        seg.save(seg_path)
        write_manifest(seg_man, "segment", cfg, {"trajectories": traj_path}, {"segmentation": seg_path})
    rig_man = rig_path.with_suffix(".manifest.json")
    rig_inputs = {"mesh": mesh_path, "segmentation": seg_path}
    if rig_path.exists() and _manifest_matches(rig_man, "rig", cfg, rig_inputs, RIG_KEYS):
        r, _ = rigging.load_rig(rig_path, mesh)
    else:
        r, _, _ = rig(mesh, seg.labels, cfg)
        r.save(rig_path, mesh_path=os.path.relpath(mesh_path.resolve(), rig_path.parent.resolve()))
        write_manifest(rig_man, "rig", cfg, rig_inputs, {"rig": rig_path})
    targets = dataset_targets(dataset)
    if fit_path.exists() and _manifest_matches(fit_path.with_suffix(".manifest.json"), "fit", cfg,
                                               {"rig": rig_path}, ("fit_iterations",)):
        errors = json.loads(fit_path.read_text())["errors"]
    else:
        errors = [res.error for res in fit_targets(r, targets, cfg)]
        fit_path.write_text(json.dumps({"errors": errors}) + "\n")
        write_manifest(fit_path.with_suffix(".manifest.json"), "fit", cfg, {"rig": rig_path},
                       {"errors": fit_path})
    log(f"cell gamma_def={cfg.gamma_def} lambda_thresh={cfg.lambda_thresh}: k={seg.k} "
        f"joints={len(r.motion_joints)} error={np.mean(errors) if errors else float('nan'):.3f}")
    return CellResult(cfg.gamma_def, cfg.lambda_thresh, seg.k, len(r.motion_joints), errors)


def _quiet(_msg) -> None:
    pass


def _row(dataset: Path, out: Path, cfg: PipelineConfig, log) -> list[CellResult]:
    traj_path = _track_cached(dataset, out, cfg, log)
    return [_cell(dataset, out, dataclasses.replace(cfg, lambda_thresh=t), traj_path, log)
            for t in cfg.thresholds()]


def _row_job(args) -> list[CellResult]:
    return _row(*args, _quiet)


def run_pipeline(dataset, out_dir, cfg: PipelineConfig = PipelineConfig(), log=print) -> list[CellResult]:
    """Track, segment, rig and fit over the (gamma_def, lambda_thresh) grid.

    Rows for different ``gamma_def`` are independent and run in a process
    pool when ``cfg.workers > 1``.
    """
    dataset = Path(dataset)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    load_dataset(dataset)   # fail early on a broken dataset
    log = log or _quiet
    row_cfgs = [dataclasses.replace(cfg, gamma_def=g) for g in cfg.gammas()]
    if cfg.workers > 1 and len(row_cfgs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_row_job, [(dataset, out, c) for c in row_cfgs]))
    else:
        rows = [_row(dataset, out, c, log) for c in row_cfgs]
    cells = [c for row in rows for c in row]
    (out / "table.txt").write_text(format_table(cells))
    (out / "table.csv").write_text(format_csv(cells))
    write_manifest(out / "manifest.json", "pipeline", cfg,
                   {k: dataset / k for k in ("template.ply", "camera.json") if (dataset / k).exists()},
                   {"table": out / "table.csv"})
    return cells


def format_table(cells: list[CellResult]) -> str:
    """Mean alignment error (mm) with gamma_def down the rows and lambda_thresh across."""
    gammas = sorted({c.gamma for c in cells})
    thr = sorted({c.lambda_thresh for c in cells})
    by = {(c.gamma, c.lambda_thresh): c for c in cells}
    head = "gamma_def \\ lambda_thresh"
    w0 = max(len(head), 10)
    lines = [head.ljust(w0) + "".join(f"{t:>9.2f}" for t in thr)]
    for g in gammas:
        row = f"{g:<{w0}g}"
        for t in thr:
            c = by.get((g, t))
            row += f"{c.mean_error:>9.2f}" if c else " " * 9
        lines.append(row)
    return "\n".join(lines) + "\n"


def format_csv(cells: list[CellResult]) -> str:
    lines = ["gamma_def,lambda_thresh,k,motion_joints,mean_error_mm,errors_mm"]
    for c in sorted(cells, key=lambda c: (c.gamma, c.lambda_thresh)):
        lines.append(f"{c.gamma!r},{c.lambda_thresh!r},{c.k},{c.motion_joints},{c.mean_error:.6f},"
                     + " ".join(f"{e:.6f}" for e in c.errors))
    return "\n".join(lines) + "\n"
