import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from kinrig import synth
from kinrig.mesh import enclosed_volume
from kinrig.synth import Curve, ScenarioError, add_noise, default_camera, parse_scenario, render_depth
from kinrig.tracking import PointCloud

from conftest import cylinder, sphere


def test_pipe_joint_positions():
    gt = synth.make_pipe()
    assert gt.n_joints == 1 and gt.n_parts == 2
    assert np.allclose(gt.joints[0], [0.0, 0.0, 700.0])          # 150 mm from the start cap
    assert set(gt.labels.tolist()) == {0, 1}
    gt = synth.make_pipe(synth.PipeSpec(joint_fractions=(0.75,)))
    assert np.allclose(gt.joints[0], [75.0, 0.0, 700.0])         # 225 mm from the start cap


def test_pipe_spec_validation():
    with pytest.raises(ValueError):
        synth.PipeSpec(joint_fractions=(0.7, 0.3))
    with pytest.raises(ValueError):
        synth.PipeSpec(joint_fractions=(1.0,))


@pytest.mark.parametrize("make", [synth.make_pipe, synth.make_star, synth.make_lamp, synth.make_l_pipe])
def test_objects_watertight_genus_zero(make):
    gt = make()
    m = gt.mesh
    assert m.is_watertight and m.euler_characteristic == 2
    assert enclosed_volume(m.vertices, m.faces) > 0


def test_star_joints_at_hub(star_gt):
    assert star_gt.n_joints == 3 and star_gt.n_parts == 4
    c = np.array([0.0, 0.0, 700.0])
    assert np.allclose(np.linalg.norm(star_gt.joints - c, axis=1), 30.0)
    assert np.all(star_gt.part_parent[1:] == 0)


@pytest.mark.parametrize("name", ["pipe_gt", "star_gt", "lamp_gt"])
def test_labels_partition_and_band(request, name):
    gt = request.getfixturevalue(name)
    assert np.array_equal(np.unique(gt.labels), np.arange(gt.n_parts))
    assert np.allclose(gt.weights.sum(1), 1, atol=1e-12) and gt.weights.min() >= 0
    # the label carries the largest weight; exact ties on a cut go to the far part
    assert np.all(gt.weights[np.arange(len(gt.labels)), gt.labels] == gt.weights.max(1))


def test_pipe_blend_band_width(pipe_gt):
    soft = pipe_gt.weights.max(1) < 1.0
    x = pipe_gt.mesh.vertices[soft, 0]
    assert soft.any() and np.ptp(x) <= synth.BLEND_BAND


def test_zero_curves_constant(pipe_gt):
    seq = synth.animate(pipe_gt, [Curve(((0.0, 0.0),))], 5)
    assert all(np.array_equal(f, seq[0]) for f in seq)
    assert np.abs(seq[0] - pipe_gt.mesh.vertices).max() <= 1e-12 * 700


def test_animate_needs_one_curve_per_joint(pipe_gt):
    with pytest.raises(ValueError):
        synth.animate(pipe_gt, [], 3)


def test_end_cap_traces_arc(pipe_gt):
    seq = synth.animate(pipe_gt, [Curve.linear(0.0, 60.0, 60)], 60)
    cap = pipe_gt.mesh.vertices[:, 0] > 140.0
    c = pipe_gt.joints[0]
    r = np.array([np.linalg.norm(f[cap].mean(0) - c) for f in seq])
    assert np.abs(r / r[0] - 1).max() < 0.01
    ends = seq[-1][cap].mean(0) - c, seq[0][cap].mean(0) - c
    ang = np.degrees(np.arctan2(np.cross(ends[1], ends[0])[2], ends[0] @ ends[1]))
    assert ang == pytest.approx(60.0, abs=1e-9)


def test_two_joint_forward_kinematics():
    gt = synth.make_pipe(synth.PipeSpec(joint_fractions=(1 / 3, 2 / 3)))
    a, b = 25.0, -40.0
    out = synth.pose_vertices(gt, [a, b])
    far = gt.weights[:, 2] == 1.0
    z = np.array([0, 0, 1.0])
    Ra = Rotation.from_rotvec(np.radians(a) * z).as_matrix()
    Rb = Rotation.from_rotvec(np.radians(b) * z).as_matrix()
    j0, j1 = gt.joints
    v = gt.mesh.vertices[far]
    fk = ((v - j1) @ Rb.T + j1 - j0) @ Ra.T + j0
    assert np.abs(out[far] - fk).max() <= 1e-9


def front_triangle():
    v = np.array([[-50.0, -50, 500], [0, 50, 500], [50, -50, 500]])
    return v, np.array([[0, 1, 2]])


def test_render_triangle_plane():
    cam = default_camera()
    v, f = front_triangle()
    r = render_depth(v, cam, f)
    assert len(r.cloud) > 1000
    assert np.abs(r.cloud.points[:, 2] - 500.0).max() <= 1e-6
    assert np.allclose(r.cloud.normals, [0, 0, -1])


def test_render_reprojection_and_facing(pipe_gt):
    cam = default_camera()
    r = render_depth(pipe_gt.mesh, cam)
    uv, z = cam.project(r.cloud.points)
    assert np.abs(uv - r.pixels).max() <= 0.5
    view = r.cloud.points - cam.center
    assert np.all((r.cloud.normals * view).sum(1) < 0)
    # only the near half of the tube is visible
    assert r.cloud.points[:, 2].max() <= 700.0 + 1e-6


def test_sphere_silhouette_flagged():
    cam = default_camera()
    r = render_depth(sphere(400, radius=60.0, center=(0.0, 0.0, 600.0)), cam)
    valid = np.isfinite(r.depth)
    pad = np.pad(~valid, 1, constant_values=True)
    H, W = valid.shape
    near_bg = np.zeros_like(valid)
    for dy in range(3):
        for dx in range(3):
            near_bg |= pad[dy:dy + H, dx:dx + W]
    ring = valid & near_bg
    flagged = np.zeros_like(valid)
    flagged[r.discontinuities[:, 1].astype(int), r.discontinuities[:, 0].astype(int)] = True
    assert ring.any() and np.all(flagged[ring])


def test_occlusion_jump_band():
    cam = default_camera()
    m, _ = cylinder(length=200.0, radius=20.0, origin=(-100.0, 0.0, 600.0))
    back = np.array([[-2000.0, -2000, 900], [2000, -2000, 900], [2000, 2000, 900], [-2000, 2000, 900]])
    v = np.vstack([m.vertices, back])
    n = m.n_vertices
    f = np.vstack([m.faces, [[n, n + 2, n + 1], [n, n + 3, n + 2]]])
    r = render_depth(v, cam, f)
    assert np.isfinite(r.depth).all()                       # the plane fills the view
    d = r.depth
    xs, ys = r.discontinuities[:, 0].astype(int), r.discontinuities[:, 1].astype(int)
    H, W = d.shape
    inner = (xs > 0) & (xs < W - 1) & (ys > 0) & (ys < H - 1)   # the frame border counts as background
    xs, ys = xs[inner], ys[inner]
    assert len(xs) > 0
    pad = np.pad(d, 1, mode="edge")
    for x, y in zip(xs, ys):
        win = pad[y:y + 3, x:x + 3]
        assert win.min() < 700 and win.max() > 850
    # every cylinder pixel touching the plane is in the band
    near, far = d < 700, d > 850
    touch = np.zeros_like(near)
    padf = np.pad(far, 1)
    for dy in range(3):
        for dx in range(3):
            touch |= padf[dy:dy + H, dx:dx + W]
    flagged = np.zeros_like(near)
    flagged[ys, xs] = True
    assert np.all(flagged[near & touch])


def test_noise_identity_and_statistics():
    rng = np.random.default_rng(0)
    n = rng.standard_normal((20000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    cloud = PointCloud(rng.uniform(-100, 100, (20000, 3)), n)
    assert add_noise(cloud, 0.0, seed=3) is cloud
    noisy = add_noise(cloud, 1.0, seed=3)
    d = ((noisy.points - cloud.points) * n).sum(1)
    assert 0.9 <= d.std() <= 1.1
    assert np.allclose(noisy.points - cloud.points, d[:, None] * n, atol=1e-9)
    assert np.array_equal(add_noise(cloud, 1.0, seed=3).points, noisy.points)
    assert not np.array_equal(add_noise(cloud, 1.0, seed=4).points, noisy.points)
    with pytest.raises(ValueError):
        add_noise(cloud, -1.0)


SCENARIO = """
# pipe with a hinge at 3/4
object = pipe
length = 300
radius = 20
joint_fractions = 0.75
frames = 4
noise = 0.5
seed = 7
curve 0 = 0:0 3:30
target = 15
target = 30
camera.fx = 600
"""


def test_parse_scenario():
    sc = parse_scenario(SCENARIO)
    assert sc.object == "pipe" and sc.frames == 4 and sc.seed == 7 and sc.noise == 0.5
    assert sc.params["joint_fractions"] == (0.75,)
    assert sc.curves[0](np.array([0, 1.5, 3, 9])).tolist() == [0, 15, 30, 30]
    assert sc.targets == [[15.0], [30.0]]
    assert sc.camera_model().fx == 600.0
    assert np.allclose(sc.ground_truth().joints[0], [75, 0, 700])


@pytest.mark.parametrize("text,line", [
    ("object = pipe\nframes = many\n", 2),
    ("object = pipe\n\nlength 300\n", 3),
    ("curve 0 = 0:0 5\n", 1),
    ("curve x = 0:0\n", 1),
    ("radius = wide\n", 1),
])
def test_scenario_errors_carry_line(text, line):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    assert err.value.line == line and f"line {line}" in str(err.value)


def test_scenario_global_errors():
    with pytest.raises(ScenarioError):
        parse_scenario("frames = 1\n")
    with pytest.raises(ScenarioError):
        parse_scenario("object = teapot\n")


def test_dataset_round_trip(tmp_path):
    sc = parse_scenario(SCENARIO)
    man = synth.write_dataset(sc, tmp_path / "ds")
    frames = synth.load_frames(tmp_path / "ds")
    assert len(frames) == 4 and man["frames"] == 4
    assert all(len(c) > 100 and len(px) > 0 for c, px in frames)
    assert sorted((tmp_path / "ds" / "targets").iterdir())[-1].name == "01.ply"
    for rel, digest in man["files"].items():
        assert synth.file_digest(tmp_path / "ds" / rel) == digest
    bad = parse_scenario(SCENARIO + "target = 1 2\n")
    with pytest.raises(ScenarioError):
        synth.write_dataset(bad, tmp_path / "bad")
