import json
import shutil

import numpy as np
import pytest

from kinrig import cli, motion_seg, rigging
from kinrig.mesh import load_mesh
from kinrig.tracking import TrajectorySet

SCENARIO = """
object = pipe
joint_fractions = 0.5
frames = 4
noise = 0.5
seed = 3
curve 0 = 0:0 3:20
target = 10
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scene.txt").write_text(SCENARIO)
    assert cli.main(["synth", str(d / "scene.txt"), "-o", str(d / "ds")]) == 0
    return d


@pytest.fixture(scope="module")
def tracked(workdir):
    out = workdir / "t.traj"
    assert cli.main(["track", str(workdir / "ds"), "-o", str(out)]) == 0
    return out


def test_usage_errors(capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["teleport"]) == cli.EXIT_USAGE
    assert cli.main(["synth"]) == cli.EXIT_USAGE
    assert cli.main(["--help"]) == cli.EXIT_OK
    assert "synth" in capsys.readouterr().out


def test_synth_is_deterministic(workdir):
    assert cli.main(["synth", str(workdir / "scene.txt"), "-o", str(workdir / "ds2")]) == 0
    a = json.loads((workdir / "ds" / "manifest.json").read_text())
    b = json.loads((workdir / "ds2" / "manifest.json").read_text())
    assert a == b and len(a["files"]) == 4 + 4 + 4
    assert cli.main(["synth", str(workdir / "scene.txt"), "-o", str(workdir / "ds3"), "--seed", "4"]) == 0
    c = json.loads((workdir / "ds3" / "manifest.json").read_text())
    assert c["files"]["frames/0001.ply"] != a["files"]["frames/0001.ply"]


def test_synth_bad_scenario(tmp_path, capsys):
    (tmp_path / "s.txt").write_text("object = pipe\nframes = 0\n")
    assert cli.main(["synth", str(tmp_path / "s.txt"), "-o", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert "at least 2 frames" in capsys.readouterr().err
    assert cli.main(["synth", str(tmp_path / "missing.txt"), "-o", str(tmp_path / "o")]) == cli.EXIT_DATA


def test_track_output_and_manifest(workdir, tracked):
    traj = TrajectorySet.load(tracked)
    assert traj.n_frames == 4
    man = json.loads(tracked.with_name(tracked.name + ".manifest.json").read_text())
    assert man["stage"] == "track" and man["config"]["gamma_def"] == 0.005
    assert set(man["inputs"]) == {"template.ply", "camera.json"}
    assert len(man["outputs"]["trajectories"]["sha256"]) == 64


def test_track_missing_camera(workdir, tmp_path, capsys):
    shutil.copytree(workdir / "ds", tmp_path / "ds")
    (tmp_path / "ds" / "camera.json").unlink()
    assert cli.main(["track", str(tmp_path / "ds"), "-o", str(tmp_path / "t.traj")]) == cli.EXIT_DATA
    assert "camera" in capsys.readouterr().err


def test_segment_sweep(workdir, tracked, capsys):
    out = workdir / "seg.txt"
    code = cli.main(["segment", str(tracked), "--mesh", str(workdir / "ds" / "template.ply"),
                     "-o", str(out), "--lambda-thresh", "0.4", "0.7", "0.98", "--affinity", str(workdir / "a.bin")])
    assert code == 0
    text = capsys.readouterr().out
    ks = [int(line.split()[1]) for line in text.splitlines()[2:]]
    assert len(ks) == 3 and ks == sorted(ks)
    for t, k in zip(("0.4", "0.7", "0.98"), ks):
        seg = motion_seg.Segmentation.load(workdir / f"seg_t{t}.txt")
        assert seg.k == k
    assert (workdir / "a.bin").read_bytes()[:4] == b"AFFN"


def test_segment_mesh_mismatch(workdir, tracked, tmp_path):
    (tmp_path / "tri.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    assert cli.main(["segment", str(tracked), "--mesh", str(tmp_path / "tri.obj"),
                     "-o", str(tmp_path / "s.txt")]) == cli.EXIT_DATA


def test_rig_single_segment_and_fit(workdir, capsys):
    mesh = workdir / "ds" / "template.ply"
    n = load_mesh(mesh).n_vertices
    motion_seg.Segmentation(np.zeros(n, dtype=np.int64), 1).save(workdir / "one.txt")
    rig_path = workdir / "one.rig"
    assert cli.main(["rig", str(mesh), str(workdir / "one.txt"), "-o", str(rig_path),
                     "--skeleton", str(workdir / "one.sk")]) == 0
    assert "motion 0" in capsys.readouterr().out
    r, ref = rigging.load_rig(rig_path)                 # mesh found through the relative reference
    assert r.motion_joints == [] and len(r.bones) >= 1 and ref is not None
    pose = workdir / "p.pose"
    assert cli.main(["fit", str(rig_path), str(mesh), "-o", str(pose)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("iteration  error_mm") and "final error" in out
    report = (workdir / "p.pose.report.txt").read_text()
    assert report == out
    assert (workdir / "p.pose.report.csv").read_text().startswith("iteration,error_mm\n")
    assert float(out.split("final error ")[1].split()[0]) <= 1e-6


def test_rig_label_count_mismatch(workdir, tmp_path):
    motion_seg.Segmentation(np.zeros(5, dtype=np.int64), 1).save(tmp_path / "s.txt")
    assert cli.main(["rig", str(workdir / "ds" / "template.ply"), str(tmp_path / "s.txt"),
                     "-o", str(tmp_path / "r.rig")]) == cli.EXIT_DATA


def test_pipeline_reuses_tracking(workdir, capsys):
    out = workdir / "run"
    assert cli.main(["pipeline", str(workdir / "ds"), "-o", str(out)]) == 0
    first = capsys.readouterr().out
    assert first.startswith("gamma_def")
    csv = (out / "table.csv").read_text().splitlines()
    assert len(csv) == 2 and csv[1].startswith("0.005,0.7,")
    stamp = (out / "track_g0p005.traj").stat().st_mtime_ns
    assert cli.main(["pipeline", str(workdir / "ds"), "-o", str(out)]) == 0
    assert capsys.readouterr().out == first
    assert (out / "track_g0p005.traj").stat().st_mtime_ns == stamp
    man = json.loads((out / "manifest.json").read_text())
    assert man["stage"] == "pipeline" and "table" in man["outputs"]


def test_config_file_and_bad_key(workdir, tmp_path):
    (tmp_path / "c.txt").write_text("gamma_def = 0.01\nwobble = 3\n")
    assert cli.main(["track", str(workdir / "ds"), "-o", str(tmp_path / "t.traj"),
                     "--config", str(tmp_path / "c.txt")]) == cli.EXIT_DATA
