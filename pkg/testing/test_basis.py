import numpy as np
import pytest

from hho2d import (
    CellBasis,
    FaceBasis,
    ProjectionOperator,
    UnsupportedFaceError,
    cell_mass_matrix,
    cell_quadrature,
    project_cell,
    project_face,
)
from hho2d.basis import monomial_powers, poly_dim
from hho2d.cases import polynomial_fields


def quartic(points):
    x, y = points[:, 0], points[:, 1]
    return x ** 4 + x ** 2 * y ** 2 - 3 * x * y + 2


def test_monomial_ordering():
    assert monomial_powers(2) == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    for k in range(6):
        assert len(monomial_powers(k)) == poly_dim(k) == (k + 1) * (k + 2) // 2


def test_derivative_tables_of_a_projected_quartic(rect2):
    cell = rect2.cells[3]
    quad = cell_quadrature(rect2, cell, 10)
    basis = CellBasis.for_cell(cell, 4)
    coeffs = ProjectionOperator(basis, quad)(quartic)
    pts = quad.points[:5]
    x, y = pts[:, 0], pts[:, 1]
    tab = basis(coeffs, pts, 4)
    np.testing.assert_allclose(tab.value[:, 0], quartic(pts), atol=1e-11)
    np.testing.assert_allclose(tab.grad[:, 0, 0], 4 * x ** 3 + 2 * x * y ** 2 - 3 * y, atol=1e-10)
    np.testing.assert_allclose(tab.grad[:, 0, 1], 2 * x ** 2 * y - 3 * x, atol=1e-10)
    np.testing.assert_allclose(tab.hess[:, 0, 0, 1], 4 * x * y - 3, atol=1e-9)
    np.testing.assert_allclose(tab.laplacian[:, 0], 14 * x ** 2 + 2 * y ** 2, atol=1e-9)
    np.testing.assert_allclose(tab.bilaplacian[:, 0], 32.0, atol=1e-7)


def test_directional_derivatives(rect2):
    cell = rect2.cells[0]
    basis = CellBasis.for_cell(cell, 3)
    pts = np.array([[0.1, 0.2], [0.3, 0.4]])
    tab = basis.eval(pts, 3)
    n = np.tile([0.6, 0.8], (2, 1))
    t = np.column_stack([-n[:, 1], n[:, 0]])
    np.testing.assert_allclose(tab.normal(n), 0.6 * tab[(1, 0)] + 0.8 * tab[(0, 1)], atol=1e-12)
    np.testing.assert_allclose(
        tab.normal_normal(n),
        0.36 * tab[(2, 0)] + 2 * 0.48 * tab[(1, 1)] + 0.64 * tab[(0, 2)],
        atol=1e-12,
    )
    np.testing.assert_allclose(
        tab.normal_tangent(n, t),
        -0.48 * tab[(2, 0)] + (0.36 - 0.64) * tab[(1, 1)] + 0.48 * tab[(0, 2)],
        atol=1e-12,
    )
    np.testing.assert_allclose(tab.grad_normal(n)[..., 0], 0.6 * tab[(2, 0)] + 0.8 * tab[(1, 1)], atol=1e-12)


def test_eval_rejects_high_derivatives(rect2):
    with pytest.raises(ValueError):
        CellBasis.for_cell(rect2.cells[0], 2).eval(np.zeros((1, 2)), 5)


def test_orthonormalized_basis_has_unit_mass(poly4):
    cell = poly4.cells[1]
    quad = cell_quadrature(poly4, cell, 8)
    basis = CellBasis.for_cell(cell, 3).orthonormalized(quad)
    np.testing.assert_allclose(cell_mass_matrix(basis, quad), np.eye(basis.dim), atol=1e-10)


@pytest.mark.parametrize("orthonormal", [False, True])
def test_projection_reproduces_polynomials(poly4, orthonormal):
    cell = poly4.cells[3]
    quad = cell_quadrature(poly4, cell, 8)
    u, _ = polynomial_fields(3, np.random.default_rng(5))
    coeffs = project_cell(u, 3, cell, quad, orthonormal=orthonormal)
    basis = CellBasis.for_cell(cell, 3)
    if orthonormal:
        basis = basis.orthonormalized(quad)
    np.testing.assert_allclose(basis(coeffs, quad.points).value[:, 0], u(quad.points), atol=1e-11)


def test_projection_residual_is_orthogonal(rect2):
    cell = rect2.cells[1]
    quad = cell_quadrature(rect2, cell, 10)
    basis = CellBasis.for_cell(cell, 2)
    proj = ProjectionOperator(basis, quad)
    v = lambda p: np.exp(p[:, 0]) * np.sin(3 * p[:, 1])
    residual = v(quad.points) - basis(proj(v), quad.points).value[:, 0]
    moments = basis.eval(quad.points).value.T @ (quad.weights * residual)
    np.testing.assert_allclose(moments, 0.0, atol=1e-13)


def test_face_basis(rect2):
    face = rect2.interior_faces[0]
    basis = FaceBasis.on_face(face, 3)
    assert basis.dim == 4
    s = np.linspace(-0.4, 0.4, 5)
    pts = face.midpoint + np.outer(s * face.length, face.tangent)
    np.testing.assert_allclose(basis.param(pts), s, atol=1e-14)
    np.testing.assert_allclose(basis.eval_derivative(pts)[:, 3], 3 * s ** 2 / face.length, atol=1e-12)


def test_face_projection_reproduces_polynomials(rect2):
    face = rect2.interior_faces[1]
    f = lambda p: 1 + p[:, 0] - 2 * p[:, 1] ** 2 + p[:, 0] * p[:, 1]
    coeffs = project_face(f, 2, face)
    basis = FaceBasis.on_face(face, 2)
    pts = face.point_at(np.array([0.1, 0.5, 0.9]))
    np.testing.assert_allclose(basis.eval(pts) @ coeffs, f(pts), atol=1e-12)


def test_no_face_basis_on_arcs(annulus1):
    with pytest.raises(UnsupportedFaceError):
        FaceBasis.on_face(annulus1.boundary_faces[0], 1)
