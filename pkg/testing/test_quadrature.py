import math

import numpy as np
import pytest

from hho2d import QuadratureError, cell_quadrature, face_quadrature, load_mesh
from hho2d.quadrature import ear_clip, gauss01, kernel_point

ANNULUS_AREA = math.pi * (1.0 - 0.4 ** 2)

# U shape whose centroid lies outside the cell
U_SHAPE = """
vertices 8
0 0
3 0
3 1
2.8 1
2.8 0.2
0.2 0.2
0.2 1
0 1
cells 1
8 0 1 2 3 4 5 6 7
"""
U_RECTANGLES = [(0, 0, 3, 0.2), (0, 0.2, 0.2, 1), (2.8, 0.2, 3, 1)]

# long arm with a short post; the centroid lies outside, the corner block is the kernel
L_SHAPE = """
vertices 6
0 0
4 0
4 0.2
0.3 0.2
0.3 1
0 1
cells 1
6 0 1 2 3 4 5
"""
L_RECTANGLES = [(0, 0, 4, 0.2), (0, 0.2, 0.3, 1)]


def monomials(points, degree):
    for d in range(degree + 1):
        for b in range(d + 1):
            yield d - b, b, points[:, 0] ** (d - b) * points[:, 1] ** b


def test_gauss01():
    for n in range(1, 8):
        t, w = gauss01(n)
        assert w.sum() == pytest.approx(1.0)
        assert np.all((t > 0) & (t < 1))
        # exact for degree 2n - 1
        assert w @ t ** (2 * n - 1) == pytest.approx(1.0 / (2 * n))


@pytest.mark.parametrize("degree", [0, 3, 6])
def test_straight_face_rule(rect2, degree):
    face = rect2.faces[0]
    quad = face_quadrature(face, degree)
    s = np.hypot(*(quad.points - face.start.xy).T) / face.length
    assert quad.integrate(s ** degree) == pytest.approx(face.length / (degree + 1))


def test_arc_face_rule_measures_arc_length(annulus1):
    for face in annulus1.boundary_faces:
        quad = face_quadrature(face, 4)
        assert quad.weights.sum() == pytest.approx(face.geometry.radius * abs(face.sweep), rel=1e-14)


def test_negative_degree_is_rejected(rect2):
    with pytest.raises(QuadratureError):
        face_quadrature(rect2.faces[0], -1)
    with pytest.raises(QuadratureError):
        cell_quadrature(rect2, rect2.cells[0], -1)


@pytest.mark.parametrize("degree", [0, 2, 5, 8, 10])
def test_rectangle_monomials(rect2, moment, degree):
    for cell in rect2.cells:
        quad = cell_quadrature(rect2, cell, degree)
        x0, y0 = rect2.vertices[list(cell.vertices)].min(0)
        x1, y1 = rect2.vertices[list(cell.vertices)].max(0)
        for a, b, values in monomials(quad.points, degree):
            assert quad.integrate(values) == pytest.approx(moment(a, b, x0, y0, x1, y1), rel=1e-10, abs=1e-14)


def test_pentagon_with_collinear_faces(poly4, moment):
    degree = 8
    for cell in poly4.cells:
        quad = cell_quadrature(poly4, cell, degree)
        x0, y0 = poly4.vertices[list(cell.vertices)].min(0)
        x1, y1 = poly4.vertices[list(cell.vertices)].max(0)
        for a, b, values in monomials(quad.points, degree):
            assert quad.integrate(values) == pytest.approx(moment(a, b, x0, y0, x1, y1), rel=1e-10, abs=1e-14)


def test_fallback_for_cells_not_star_shaped_from_the_centroid(tmp_path, moment):
    path = tmp_path / "u.txt"
    path.write_text(U_SHAPE)
    mesh = load_mesh(str(path))
    cell = mesh.cells[0]
    assert cell.area == pytest.approx(0.92)
    quad = cell_quadrature(mesh, cell, 6)
    assert np.all(quad.weights > 0)
    for a, b, values in monomials(quad.points, 6):
        expected = sum(moment(a, b, *r) for r in U_RECTANGLES)
        assert quad.integrate(values) == pytest.approx(expected, rel=1e-10)


def test_ear_clip_covers_the_polygon():
    polygon = np.array([[0, 0], [3, 0], [3, 1], [2.8, 1], [2.8, 0.2], [0.2, 0.2], [0.2, 1], [0, 1]], dtype=float)
    triangles = ear_clip(polygon)
    assert len(triangles) == len(polygon) - 2
    area = 0.0
    for a, b, c in triangles:
        (x0, y0), (x1, y1), (x2, y2) = polygon[[a, b, c]]
        signed = 0.5 * ((x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0))
        assert signed > 0
        area += signed
    assert area == pytest.approx(0.92)


@pytest.mark.parametrize("mesh_name", ["annulus1", "ring8"])
def test_curved_cells_integrate_annulus_moments(request, mesh_name):
    mesh = request.getfixturevalue(mesh_name)
    area = x_moment = r2 = 0.0
    for cell in mesh.cells:
        quad = cell_quadrature(mesh, cell, 4)
        area += quad.weights.sum()
        x_moment += quad.integrate(quad.points[:, 0])
        r2 += quad.integrate((quad.points ** 2).sum(1))
    hole = math.pi * 0.16
    assert area == pytest.approx(ANNULUS_AREA, rel=1e-10)
    assert x_moment == pytest.approx(-0.25 * hole, rel=1e-9)
    assert r2 == pytest.approx(math.pi / 2 - (hole * 0.125 + math.pi * 0.4 ** 4 / 2), rel=1e-10)


def test_straight_chords_lose_the_circular_segments(annulus1):
    exact = sum(cell_quadrature(annulus1, c, 2).weights.sum() for c in annulus1.cells)
    chords = sum(cell_quadrature(annulus1, c, 2, exact_arcs=False).weights.sum() for c in annulus1.cells)
    assert abs(exact - ANNULUS_AREA) < 1e-12
    assert abs(chords - ANNULUS_AREA) > 1e-6
    # finer chords approach the curved boundary
    fine = sum(cell_quadrature(annulus1, c, 2, n_subedges=120, exact_arcs=False).weights.sum() for c in annulus1.cells)
    assert abs(fine - ANNULUS_AREA) < abs(chords - ANNULUS_AREA)


def test_ear_clip_drops_collinear_vertices():
    # unit square with its edge midpoints
    polygon = np.array([[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1], [0.5, 1], [0, 1], [0, 0.5]], dtype=float)
    triangles = ear_clip(polygon, tol=1e-13)
    assert len(triangles) == 2
    used = {v for t in triangles for v in t}
    assert used == {0, 2, 4, 6}


def test_ear_clip_on_a_concave_arc_chain():
    # triangle whose third side is a 30-chord arc bulging inwards, as on cells next to the hole
    theta = np.linspace(np.pi / 2, np.pi / 4, 31)
    arc = np.column_stack([0.25 + 0.4 * np.cos(theta), 0.25 + 0.4 * np.sin(theta)])
    polygon = np.vstack([arc[-1:], [[0.0, 1.0]], arc[:-1]])
    triangles = ear_clip(polygon, tol=1e-14)
    assert len(triangles) == len(polygon) - 2
    x, y = polygon[:, 0], polygon[:, 1]
    shoelace = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    area = 0.0
    for a, b, c in triangles:
        (x0, y0), (x1, y1), (x2, y2) = polygon[[a, b, c]]
        area += 0.5 * ((x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0))
    assert area == pytest.approx(shoelace, rel=1e-12)


def test_kernel_point():
    square_l = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)
    np.testing.assert_allclose(kernel_point(square_l), [0.5, 0.5], atol=1e-9)
    u_shape = np.array([[0, 0], [3, 0], [3, 1], [2.8, 1], [2.8, 0.2], [0.2, 0.2], [0.2, 1], [0, 1]], dtype=float)
    assert kernel_point(u_shape) is None


def test_star_shaped_cell_fanned_from_its_kernel(tmp_path, moment):
    path = tmp_path / "l.txt"
    path.write_text(L_SHAPE)
    mesh = load_mesh(str(path))
    cell = mesh.cells[0]
    apex = kernel_point(mesh.vertices)
    assert 0 < apex[0] < 0.3 and 0 < apex[1] < 0.2
    quad = cell_quadrature(mesh, cell, 6)
    assert np.all(quad.weights > 0)
    for a, b, values in monomials(quad.points, 6):
        expected = sum(moment(a, b, *r) for r in L_RECTANGLES)
        assert quad.integrate(values) == pytest.approx(expected, rel=1e-10, abs=1e-14)


def test_every_annulus_cell_gets_a_rule(annulus1):
    for cell in annulus1.cells:
        quad = cell_quadrature(annulus1, cell, 6)
        assert np.all(quad.weights > 0)
        assert quad.weights.sum() == pytest.approx(cell.area, rel=1e-10)
