import numpy as np
import pytest

from hho2d import (
    BoundaryData,
    ConfigError,
    LocalDofLayout,
    LocalElement,
    build_lifting,
    build_local_bilinear,
    build_reconstruction,
    build_reconstruction_dual,
    build_stab_interior,
    energy_seminorm,
    energy_seminorm_matrix,
    get_case,
    local_geometry_key,
    local_rhs,
    reduce,
    sigma_K,
)
from hho2d.cases import polynomial_fields
from hho2d.local_operators import penalty_weights

EPS_VALUES = [1.0, 1e-3, 0.0]


def one(points):
    return np.ones(len(points))


def zero_grad(points):
    return np.zeros((len(points), 2))


def test_sigma():
    assert sigma_K(1.0, 0.5) == pytest.approx(4.0)
    assert sigma_K(0.0, 0.5) == 1.0
    assert sigma_K(1e-4, 0.25) == 1.0
    with pytest.raises(ValueError):
        sigma_K(1.0, 0.0)


def test_penalty_weights():
    assert penalty_weights(1, 0.5) == pytest.approx((2.0, 0.5))
    assert penalty_weights(1, 0.5, hp_scaling=True) == pytest.approx((8.0, 0.5))
    assert penalty_weights(1, 0.5, hp_scaling=True, hp_symmetric=True) == pytest.approx((8.0, 0.125))
    # the symmetric completion only acts together with the hp scaling
    assert penalty_weights(2, 0.5, hp_symmetric=True) == pytest.approx((2.0, 0.5))


def test_layout():
    lay = LocalDofLayout.for_degree(1, 4)
    assert (lay.n_cell, lay.n_trace, lay.n_normal) == (10, 4, 2)
    assert lay.size == 10 + 4 * 6
    assert lay.trace_slice(1) == slice(16, 20)
    assert lay.normal_slice(1) == slice(20, 22)
    assert lay.face_slice == slice(10, 34)


def test_element_faces(rect3):
    inner = LocalElement.build(rect3, rect3.cells[4], 1)
    corner = LocalElement.build(rect3, rect3.cells[0], 1)
    assert len(inner.interior_faces) == 4 and not inner.is_boundary
    assert len(corner.interior_faces) == 2 and len(corner.boundary_faces) == 2
    assert corner.layout.size == 10 + 2 * 6
    np.testing.assert_allclose(inner.centroid, [0.5, 0.5])
    # the rule is stored relative to the centroid
    assert inner.quad.weights.sum() == pytest.approx(1 / 9)
    np.testing.assert_allclose(inner.quad.weights @ inner.quad.points, 0.0, atol=1e-14)


def exact_boundary_data(u, grad_u):
    return BoundaryData(g_D=u, g_N=lambda p, n: np.einsum("pi,pi->p", grad_u(p), n), grad_gD=grad_u)


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("eps", EPS_VALUES)
def test_reconstruction_reproduces_polynomials(rect3, poly4, rotated3, rng, k, eps):
    u, grad_u = polynomial_fields(k + 2, rng)
    bdata = exact_boundary_data(u, grad_u)
    cells = [(rect3, 4), (rotated3, 4), (rotated3, 0)] + [(poly4, c) for c in range(4)]
    for mesh, cell_id in cells:
        elem = LocalElement.build(mesh, mesh.cells[cell_id], k)
        expected = elem.projector.project_values(u(elem.absolute(elem.quad.points)))
        ops = build_local_bilinear(elem, eps)
        got = ops.R @ reduce(elem, u, grad_u)
        # on boundary cells the reconstruction sees no boundary unknowns; the lifting supplies them
        if elem.is_boundary:
            got = got + build_lifting(elem, eps, bdata, ops)
        np.testing.assert_allclose(got, expected, atol=1e-9 * np.abs(expected).max())


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("eps", EPS_VALUES)
def test_lifting_completes_boundary_cells(rect3, k, eps):
    case = get_case("poly-exact", eps, k)
    for cell_id in (0, 1):
        elem = LocalElement.build(rect3, rect3.cells[cell_id], k)
        ops = build_local_bilinear(elem, eps)
        expected = elem.projector.project_values(case.u(elem.absolute(elem.quad.points)))
        got = ops.R @ reduce(elem, case.u, case.grad_u) + build_lifting(elem, eps, case.boundary_data(), ops)
        np.testing.assert_allclose(got, expected, atol=1e-9 * np.abs(expected).max())


def test_lifting_vanishes_on_interior_cells(rect3):
    elem = LocalElement.build(rect3, rect3.cells[4], 1)
    bdata = get_case("poly-exact", 1.0).boundary_data()
    np.testing.assert_array_equal(build_lifting(elem, 1.0, bdata), 0.0)


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("eps", [1.0, 1e-2, 0.0])
def test_reconstruction_forms_agree(rect2, poly4, k, eps):
    for mesh in (rect2, poly4):
        for cell in mesh.cells:
            elem = LocalElement.build(mesh, cell, k)
            R, _, _ = build_reconstruction(elem, eps)
            dual = build_reconstruction_dual(elem, eps)
            assert np.abs(dual - R).max() <= 1e-9 * np.abs(R).max()


@pytest.mark.parametrize("hp_scaling", [False, True])
def test_interior_stabilization_kills_interpolated_polynomials(rect3, rng, hp_scaling):
    for k in (0, 1, 2):
        elem = LocalElement.build(rect3, rect3.cells[4], k)
        u, grad_u = polynomial_fields(k + 2, rng)
        v = reduce(elem, u, grad_u)
        Si = build_stab_interior(elem, 1.0, hp_scaling=hp_scaling)
        assert np.linalg.norm(Si @ v) <= 1e-10 * np.linalg.norm(Si) * np.linalg.norm(v)


@pytest.mark.parametrize("eps", EPS_VALUES)
def test_local_bilinear_form(rect3, eps):
    inner = build_local_bilinear(LocalElement.build(rect3, rect3.cells[4], 1), eps)
    np.testing.assert_allclose(inner.A, inner.A.T, atol=1e-12 * np.abs(inner.A).max())
    assert np.linalg.eigvalsh(inner.A)[0] > -1e-10 * np.abs(inner.A).max()
    elem = LocalElement.build(rect3, rect3.cells[4], 1)
    v = reduce(elem, one, zero_grad)
    assert np.linalg.norm(inner.A @ v) <= 1e-10 * np.linalg.norm(inner.A)

    # the Nitsche penalty removes the constants from the kernel on boundary cells
    corner = build_local_bilinear(LocalElement.build(rect3, rect3.cells[0], 1), eps)
    assert np.linalg.eigvalsh(corner.A)[0] > 0
    assert corner.Sb.shape == (10, 10)
    assert np.abs(inner.Sb).max() == 0.0


def test_local_rhs_of_homogeneous_data_is_zero(rect3):
    elem = LocalElement.build(rect3, rect3.cells[0], 1)
    ops = build_local_bilinear(elem, 1.0)
    zero = lambda points: np.zeros(len(points))
    b = local_rhs(elem, 1.0, zero, BoundaryData.homogeneous(), ops.R)
    np.testing.assert_array_equal(b, 0.0)


def test_local_rhs_integrates_the_source(rect3):
    elem = LocalElement.build(rect3, rect3.cells[4], 1)
    ops = build_local_bilinear(elem, 1.0)
    b = local_rhs(elem, 1.0, one, None, ops.R)
    # first scaled monomial is the constant 1
    assert b[0] == pytest.approx(1 / 9)
    np.testing.assert_array_equal(b[elem.layout.face_slice], 0.0)


def test_boundary_data_needs_a_tangential_derivative():
    bdata = BoundaryData(g_D=one, g_N=lambda p, n: np.zeros(len(p)))
    with pytest.raises(ConfigError):
        bdata.tangential(np.zeros((2, 2)), np.zeros((2, 2)))
    with_grad = BoundaryData(g_D=one, g_N=lambda p, n: np.zeros(len(p)), grad_gD=lambda p: np.tile([1.0, 2.0], (len(p), 1)))
    np.testing.assert_allclose(with_grad.tangential(np.zeros((1, 2)), np.array([[0.0, 1.0]])), [2.0])


def test_energy_seminorm(rect3):
    elem = LocalElement.build(rect3, rect3.cells[4], 1)
    linear = lambda p: p[:, 0]
    grad = lambda p: np.tile([1.0, 0.0], (len(p), 1))
    # |grad x|^2 over the cell is its area
    assert energy_seminorm(elem, 1.0, reduce(elem, linear, grad)) == pytest.approx(1 / 3, rel=1e-10)


@pytest.mark.parametrize("eps", EPS_VALUES)
def test_energy_seminorm_kernel_holds_the_constants(rect3, rotated3, eps):
    for mesh in (rect3, rotated3):
        elem = LocalElement.build(mesh, mesh.cells[4], 2)
        v = reduce(elem, one, zero_grad)
        N = energy_seminorm_matrix(elem, eps)
        assert abs(v @ N @ v) <= 1e-12 * np.linalg.norm(N, 2) * (v @ v)


def test_geometry_key(rect3, rect4):
    keys = [local_geometry_key(rect3, c) for c in rect3.cells]
    assert keys[4] != keys[0]
    assert keys[0] != keys[1]
    # interior cells with the same face ownership pattern share their local matrices
    assert local_geometry_key(rect4, rect4.cells[5]) == local_geometry_key(rect4, rect4.cells[6])


def test_relocated_element(rect3):
    elem = LocalElement.build(rect3, rect3.cells[4], 1)
    moved = elem.relocated([0.5, 0.8])
    np.testing.assert_allclose(moved.absolute(np.zeros((1, 2))), [[0.5, 0.8]])
    assert moved.layout == elem.layout
