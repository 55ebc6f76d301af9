"""Command line: ``kinrig synth | track | segment | rig | fit | pipeline``.

Exit status is 0 on success, 1 for usage errors, 2 for bad or missing input
data and 3 when a numerical step fails.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio, linalg, motion_seg, pipeline, posefit, rigging, synth, tracking
from .mesh import MeshError, load_mesh

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("kinrig")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="key = value file (or a previous run manifest)")
    g.add_argument("--gamma-def", type=float, help="data-term weight of the tracker")
    g.add_argument("--lambda-affinity", type=float, help="affinity decay")
    g.add_argument("--samples", type=int, help="number of sampled trajectories")
    g.add_argument("--seed", type=int)
    g.add_argument("--dt-mode", help="normalized, raw or fixed:<n>")


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig()
    if getattr(args, "config", None) is not None:
        cfg = pipeline.load_config(args.config, cfg)
    overrides = {"gamma_def": args.gamma_def, "lam": args.lambda_affinity,
                 "sample_count": args.samples, "seed": args.seed, "dt_mode": args.dt_mode}
    thr = getattr(args, "lambda_thresh", None)
    if isinstance(thr, list):
        if len(thr) == 1:
            overrides["lambda_thresh"] = thr[0]
    elif thr is not None:
        overrides["lambda_thresh"] = thr
    for name in ("gamma_grid", "lambda_grid", "workers"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    return pipeline.with_overrides(cfg, overrides)


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# ------------------------------------------------------------ subcommands

def cmd_synth(args) -> int:
    sc = synth.load_scenario(args.scenario)
    if args.seed is not None:
        sc.seed = args.seed
    manifest = synth.write_dataset(sc, args.out)
    log.info("wrote %d frames and %d targets to %s", sc.frames, len(sc.targets), args.out)
    return EXIT_OK if manifest else EXIT_DATA


def cmd_track(args) -> int:
    cfg = _config(args)
    ds = Path(args.dataset)

    def progress(t, T):
        log.info("frame %d/%d", t, T - 1)

    traj = pipeline.track(ds, cfg, progress=progress)
    traj.save(args.out)
    pipeline.write_manifest(_manifest_path(args.out), "track", cfg,
                            {k: ds / k for k in ("template.ply", "camera.json")}, {"trajectories": args.out})
    log.info("tracked %d frames of %d vertices (gamma_def=%g)", traj.n_frames, traj.n_vertices, cfg.gamma_def)
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _config(args)
    traj = tracking.TrajectorySet.load(args.trajectories)
    mesh = load_mesh(args.mesh)
    if traj.n_vertices != mesh.n_vertices:
        raise ValueError(f"trajectories have {traj.n_vertices} vertices, mesh has {mesh.n_vertices}")
    thresholds = args.lambda_thresh or [cfg.lambda_thresh]
    aff = motion_seg.affinity(traj, cfg.sample_count, cfg.lam, cfg.seed, dt_mode=cfg.dt_mode,
                              areas=None)
    if args.affinity:
        aff.save(args.affinity)
    rows = []
    for thr in thresholds:
        res = motion_seg.spectral_segment(aff, thr, cfg.seed)
        seg = motion_seg.propagate_labels(mesh, res.labels, aff.samples, res.eigenvalues)
        out = args.out if len(thresholds) == 1 else args.out.with_name(
            f"{args.out.stem}_t{thr:g}{args.out.suffix}")
        seg.save(out)
        pipeline.write_manifest(_manifest_path(out), "segment",
                                pipeline.with_overrides(cfg, {"lambda_thresh": thr}),
                                {"trajectories": args.trajectories, "mesh": args.mesh}, {"segmentation": out})
        rows.append((thr, seg.k))
    print(f"dt = {aff.dt}")
    print("lambda_thresh  k")
    for thr, k in rows:
        print(f"{thr:>13.2f}  {k}")
    return EXIT_OK


def cmd_rig(args) -> int:
    cfg = _config(args)
    mesh = load_mesh(args.mesh)
    seg = motion_seg.Segmentation.load(args.segmentation)
    if len(seg.labels) != mesh.n_vertices:
        raise ValueError(f"segmentation has {len(seg.labels)} labels, mesh has {mesh.n_vertices} vertices")
    r, report, sk = pipeline.rig(mesh, seg.labels, cfg)
    r.save(args.out, mesh_path=os.path.relpath(Path(args.mesh).resolve(), Path(args.out).resolve().parent))
    if args.skeleton:
        sk.save(args.skeleton)
    pipeline.write_manifest(_manifest_path(args.out), "rig", cfg,
                            {"mesh": args.mesh, "segmentation": args.segmentation}, {"rig": args.out})
    print(f"joints {len(r.joints)}  motion {report.motion_joints}  bones {len(r.bones)}  "
          f"refine rounds {report.refine_rounds}  pruned {report.pruned}")
    return EXIT_OK


def _read_points(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        ply = fileio.read_ply(path)
        v = ply["vertex"]
        return np.stack([v["x"], v["y"], v["z"]], 1).astype(np.float64)
    return fileio.read_mesh_arrays(path)[0]


def cmd_fit(args) -> int:
    cfg = _config(args)
    r, _ = rigging.load_rig(args.rig)
    target = _read_points(args.target)
    res = posefit.fit_pose(r, target, cfg=cfg.fitter())
    res.pose.save(args.out)
    lines = ["iteration  error_mm"] + [f"{k:>9d}  {e:.6f}" for k, e in enumerate(res.history)]
    lines.append(f"final error {res.error:.6f} mm (mean squared {res.squared_error:.6f} mm^2)")
    for j in r.motion_joints:
        lines.append(f"joint {j} angle {res.pose.joint_angle(j):.3f} deg")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    report = args.report or args.out.with_name(args.out.name + ".report.txt")
    Path(report).write_text(text)
    Path(report).with_suffix(".csv").write_text(
        "iteration,error_mm\n" + "".join(f"{k},{e!r}\n" for k, e in enumerate(res.history)))
    pipeline.write_manifest(_manifest_path(args.out), "fit", cfg, {"rig": args.rig, "target": args.target},
                            {"pose": args.out})
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    cells = pipeline.run_pipeline(args.dataset, args.out, cfg, log=log.info)
    print(pipeline.format_table(cells), end="")
    return EXIT_OK


# ------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kinrig", description="Rig articulated objects from depth sequences.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("synth", help="render a synthetic dataset from a scenario file")
    s.add_argument("scenario", type=Path)
    s.add_argument("-o", "--out", type=Path, required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("track", help="deformable tracking of a dataset")
    s.add_argument("dataset", type=Path)
    s.add_argument("-o", "--out", type=Path, required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("segment", help="spectral motion segmentation of trajectories")
    s.add_argument("trajectories", type=Path)
    s.add_argument("--mesh", type=Path, required=True)
    s.add_argument("-o", "--out", type=Path, required=True)
    s.add_argument("--lambda-thresh", type=float, nargs="+")
    s.add_argument("--affinity", type=Path, help="also write the affinity matrix")
    _add_config_flags(s)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("rig", help="build a rig from a mesh and its segmentation")
    s.add_argument("mesh", type=Path)
    s.add_argument("segmentation", type=Path)
    s.add_argument("-o", "--out", type=Path, required=True)
    s.add_argument("--skeleton", type=Path, help="also write the curve skeleton")
    _add_config_flags(s)
    s.set_defaults(func=cmd_rig)

    s = sub.add_parser("fit", help="fit a rig to a target mesh or point cloud")
    s.add_argument("rig", type=Path)
    s.add_argument("target", type=Path)
    s.add_argument("-o", "--out", type=Path, required=True)
    s.add_argument("--report", type=Path)
    _add_config_flags(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("pipeline", help="full run with a (gamma_def, lambda_thresh) sweep")
    s.add_argument("dataset", type=Path)
    s.add_argument("-o", "--out", type=Path, required=True)
    s.add_argument("--lambda-thresh", type=float)
    s.add_argument("--gamma-grid", type=_floats)
    s.add_argument("--lambda-grid", type=_floats)
    s.add_argument("--workers", type=int)
    _add_config_flags(s)
    s.set_defaults(func=cmd_pipeline)
    return p


_DATA_ERRORS = (FileNotFoundError, IsADirectoryError, fileio.ParseError, synth.ScenarioError,
                pipeline.ConfigError, MeshError, motion_seg.UnreachableVertex, rigging.CyclicSkeleton,
                tracking.TrackingError, ValueError, KeyError, OSError)
_NUMERIC_ERRORS = (linalg.LinAlgError, motion_seg.DegenerateAffinity, rigging.RefinementDiverged,
                   FloatingPointError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"kinrig: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"kinrig: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (rigging.RigError, motion_seg.SegmentationError) as exc:
        print(f"kinrig: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
