import os

import numpy as np
import pytest

from hho2d import build_annulus_mesh, build_rect_mesh, load_mesh
from hho2d.mesh import _assemble_mesh

MESH_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "meshes")


@pytest.fixture
def mesh_path():
    return lambda name: os.path.join(MESH_DIR, name)


@pytest.fixture(scope="session")
def rect2():
    return build_rect_mesh(2)


@pytest.fixture(scope="session")
def rect3():
    return build_rect_mesh(3)


@pytest.fixture(scope="session")
def rect4():
    return build_rect_mesh(4)


@pytest.fixture(scope="session")
def poly4():
    return load_mesh(os.path.join(MESH_DIR, "square_poly4.txt"))


@pytest.fixture(scope="session")
def ring8():
    return load_mesh(os.path.join(MESH_DIR, "annulus_ring8.txt"))


@pytest.fixture(scope="session")
def annulus1():
    return build_annulus_mesh(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rectangle_moment(a, b, x0, y0, x1, y1):
    return (x1 ** (a + 1) - x0 ** (a + 1)) / (a + 1) * (y1 ** (b + 1) - y0 ** (b + 1)) / (b + 1)


@pytest.fixture
def moment():
    """Exact integral of x^a y^b over an axis-aligned rectangle."""
    return rectangle_moment


@pytest.fixture(scope="session")
def rotated3():
    """The 3 x 3 square mesh turned by 30 degrees; cell 4 is its only interior cell."""
    square = build_rect_mesh(3)
    c, s = np.cos(np.pi / 6), np.sin(np.pi / 6)
    vertices = square.vertices @ np.array([[c, s], [-s, c]])
    return _assemble_mesh(vertices, [cell.vertices for cell in square.cells])
