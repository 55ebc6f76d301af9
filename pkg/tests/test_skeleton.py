import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinrig import rigging, synth
from kinrig.mesh import NotWatertight, build_halfedge
from kinrig.skeleton import (
    ContractionConfig, CurveSkeleton, classify_nodes, closest_skeleton_point, collapse_to_graph,
    contract, prune_spurs, skeletonize,
)

from conftest import cylinder, sphere, tetrahedron


@pytest.fixture(scope="module")
def skeletons(pipe_gt, star_gt, lamp_gt):
    return {gt.name: (gt, skeletonize(gt.mesh)) for gt in (pipe_gt, star_gt, lamp_gt)}


def test_sphere_contracts_to_a_point():
    m = sphere(300, radius=40.0)
    V = contract(m)
    diag0 = np.linalg.norm(np.ptp(m.vertices, 0))
    assert np.linalg.norm(np.ptp(V, 0)) <= 0.1 * diag0


def test_cylinder_contracts_to_axis():
    m, _ = cylinder(length=300.0, radius=20.0, origin=(0.0, 0.0, 0.0))
    V = contract(m)
    radial = np.linalg.norm(V[:, 1:], axis=1)
    assert radial.max() <= 0.05 * 20.0


def test_volume_decreases_every_iteration():
    m, _ = cylinder()
    vols = []
    contract(m, volumes=vols)
    assert len(vols) >= 2
    assert np.all(np.diff(vols) < 0)


def test_strong_attraction_keeps_positions():
    m = sphere(100, radius=10.0)
    moved = []
    for ratio in (1.0, 100.0, 1e4):
        V = contract(m, ContractionConfig(attraction=ratio, max_iterations=1))
        moved.append(np.abs(V - m.vertices).max())
    assert moved[0] > moved[1] > moved[2]
    assert moved[2] <= 1e-3


def test_open_mesh_rejected():
    m = build_halfedge([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(NotWatertight):
        contract(m)


def test_config_validation():
    with pytest.raises(ValueError):
        ContractionConfig(attraction=0)
    with pytest.raises(ValueError):
        ContractionConfig(max_iterations=0)


def test_tetrahedron_collapses_completely():
    m = tetrahedron()
    sk = collapse_to_graph(m, contract(m))
    assert sk.n_nodes <= 2
    assert len(sk.vertex_map) == 4 and sk.vertex_map.min() >= 0


def degree_histogram(sk):
    return np.bincount(sk.degree)


def test_cylinder_is_a_path():
    m, _ = cylinder(length=300.0)
    sk = skeletonize(m)
    deg = sk.degree
    assert sk.is_tree
    assert np.count_nonzero(deg == 1) == 2
    assert np.all((deg == 1) | (deg == 2))


def test_star_topology(skeletons):
    _, sk = skeletons["star"]
    ends, junctions = classify_nodes(sk)
    assert sk.is_tree
    assert len(ends) == 3 and len(junctions) == 1 and sk.degree[junctions[0]] == 3


@pytest.mark.parametrize("name", ["pipe", "star", "lamp"])
def test_skeleton_invariants(skeletons, name):
    gt, sk = skeletons[name]
    assert sk.is_tree
    assert len(sk.vertex_map) == gt.mesh.n_vertices
    # every node owns at least one surface vertex
    assert np.array_equal(np.unique(sk.vertex_map), np.arange(sk.n_nodes))
    assert np.all(sk.edges[:, 0] < sk.edges[:, 1])
    assert len(np.unique(sk.edges, axis=0)) == len(sk.edges)
    inside = rigging.InsideTester(gt.mesh)(sk.nodes)
    assert inside.mean() >= 0.95


def test_classify_path_and_cycle():
    path = CurveSkeleton(np.random.default_rng(0).random((5, 3)),
                         np.array([[0, 1], [1, 2], [2, 3], [3, 4]]), np.arange(5))
    e, j = classify_nodes(path)
    assert len(e) == 2 and len(j) == 0
    ring = CurveSkeleton(np.random.default_rng(0).random((4, 3)),
                         np.array([[0, 1], [1, 2], [2, 3], [0, 3]]), np.arange(4))
    e, j = classify_nodes(ring)
    assert len(e) == 0 and len(j) == 0 and not ring.is_tree


def test_spur_pruning():
    # a T whose short stem is folded into the junction
    nodes = np.array([[0, 0, 0], [10, 0, 0], [20, 0, 0], [10, 1, 0.0]])
    sk = CurveSkeleton(nodes, np.array([[0, 1], [1, 2], [1, 3]]), np.array([0, 1, 2, 3]))
    out = prune_spurs(sk, nodes, 2.0)
    assert out.n_nodes == 3 and len(out.edges) == 2
    assert out.vertex_map[3] == out.vertex_map[1]
    assert prune_spurs(sk, nodes, 0.5).n_nodes == 4


def test_closest_point_on_node_and_segment():
    sk = CurveSkeleton(np.array([[0, 0, 0], [10, 0, 0], [10, 10, 0.0]]),
                       np.array([[0, 1], [1, 2]]), np.arange(3))
    hit = closest_skeleton_point(sk, [10, 0, 0])
    assert hit.distance == 0.0 and np.allclose(hit.point, [10, 0, 0])
    hit = closest_skeleton_point(sk, [4, 3, 0])
    assert hit.edge == 0 and np.allclose(hit.point, [4, 0, 0]) and hit.distance == pytest.approx(3)
    assert hit.arc_length(sk) == pytest.approx(4)
    # equidistant from both edges: the lower index wins
    assert closest_skeleton_point(sk, [10, 0, 5]).edge == 0


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[st.floats(-50, 50)] * 3))
def test_closest_point_dense_oracle(p):
    rng = np.random.default_rng(1)
    nodes = rng.uniform(-30, 30, (6, 3))
    edges = np.array([[0, 1], [1, 2], [2, 3], [1, 4], [4, 5]])
    sk = CurveSkeleton(nodes, edges, np.arange(6))
    s = np.linspace(0, 1, 4001)[:, None]
    dense = np.concatenate([nodes[a] + s * (nodes[b] - nodes[a]) for a, b in edges])
    ref = np.linalg.norm(dense - np.asarray(p), axis=1).min()
    got = closest_skeleton_point(sk, p).distance
    assert got <= ref + 1e-9
    seg = max(np.linalg.norm(nodes[b] - nodes[a]) for a, b in edges) / 4000
    assert ref - got <= seg


def test_single_node_skeleton():
    sk = CurveSkeleton(np.array([[1.0, 2.0, 3.0]]), np.zeros((0, 2), dtype=np.int64), np.zeros(4, int))
    hit = closest_skeleton_point(sk, [1, 2, 4])
    assert hit.node == 0 and hit.edge == -1 and hit.distance == pytest.approx(1)


def test_node_labels_majority():
    sk = CurveSkeleton(np.zeros((2, 3)), np.array([[0, 1]]), np.array([0, 0, 0, 1, 1]))
    assert sk.node_labels(np.array([2, 2, 1, 0, 1])).tolist() == [2, 0]


def test_file_round_trip(tmp_path, skeletons):
    _, sk = skeletons["star"]
    sk.save(tmp_path / "s.sk")
    text = (tmp_path / "s.sk").read_text().splitlines()
    assert text[0] == f"n {sk.n_nodes}" and "map" in text
    back = CurveSkeleton.load(tmp_path / "s.sk")
    assert np.array_equal(back.nodes, sk.nodes)
    assert np.array_equal(back.edges, sk.edges)
    assert np.array_equal(back.vertex_map, sk.vertex_map)
    (tmp_path / "bad.sk").write_text("n 2\n0 0 0\n")
    with pytest.raises(ValueError):
        CurveSkeleton.load(tmp_path / "bad.sk")


def test_l_pipe_skeleton_bends():
    gt = synth.make_l_pipe()
    sk = skeletonize(gt.mesh)
    assert sk.is_tree
    e, j = classify_nodes(sk)
    assert len(e) == 2 and len(j) == 0
