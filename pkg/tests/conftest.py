import numpy as np
import pytest
from scipy.spatial import ConvexHull

from kinrig import synth
from kinrig.mesh import build_halfedge


def tetrahedron():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return build_halfedge(v, f)


def hexagon_fan():
    """Flat regular hexagon of unit edges around vertex 0."""
    ang = np.arange(6) * np.pi / 3
    v = np.vstack([[0.0, 0.0, 0.0], np.c_[np.cos(ang), np.sin(ang), np.zeros(6)]])
    f = np.array([[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)])
    return build_halfedge(v, f)


def sphere(n=200, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Convex hull of a Fibonacci point set, faces oriented outward."""
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = np.pi * (1 + 5 ** 0.5) * k
    p = np.c_[np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]
    f = ConvexHull(p).simplices.copy()
    c = p[f].mean(1)
    nrm = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
    flip = (nrm * c).sum(1) < 0
    f[flip] = f[flip][:, ::-1]
    return build_halfedge(radius * p + np.asarray(center), f)


def cylinder(length=200.0, radius=20.0, around=16, origin=(0.0, 0.0, 700.0)):
    center = synth.straight_centerline(origin, (1.0, 0.0, 0.0), length)
    v, f, arc = synth.sweep_tube(center, radius, around)
    return build_halfedge(v, f), arc


@pytest.fixture
def tet():
    return tetrahedron()


@pytest.fixture
def hexfan():
    return hexagon_fan()


@pytest.fixture(scope="session")
def pipe_gt():
    return synth.make_pipe()


@pytest.fixture(scope="session")
def star_gt():
    return synth.make_star()


@pytest.fixture(scope="session")
def lamp_gt():
    return synth.make_lamp()
