import numpy as np
import pytest
from pydantic import ValidationError

from hho2d import (
    DofMap,
    HHOConfig,
    LocalElement,
    SolverError,
    assemble,
    build_rect_mesh,
    condition_number,
    discrete_energy_distance,
    energy_error,
    get_case,
    interpolate,
    l2_error,
    reduce,
    solve,
    solve_full,
    solve_poisson_reference,
)
from hho2d.assembly import warm_cache
from hho2d.cases import polynomial_fields
from hho2d.local_operators import local_geometry_key


def relative(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


def test_config_validation():
    with pytest.raises(ValidationError):
        HHOConfig(k=-1)
    with pytest.raises(ValidationError):
        HHOConfig(eps=-1e-3)
    with pytest.raises(ValidationError):
        HHOConfig(solver="gmres")
    config = HHOConfig(k=2)
    assert (config.cell_degree, config.quad_degree, config.error_quad_degree) == (4, 10, 12)


def test_dofmap(rect4):
    dofmap = DofMap.build(rect4, 1)
    assert dofmap.face_block == 6
    assert dofmap.size == 24 * 6
    assert dofmap.full_size == 16 * 10 + 24 * 6
    cell = rect4.cells[5]
    idx, signs = dofmap.local_indices(rect4, cell)
    assert len(idx) == 4 * 6
    expected = []
    for s in cell.signs:
        expected.extend([1.0] * 4 + [float(s)] * 2)
    np.testing.assert_array_equal(signs, expected)
    _, unsigned = dofmap.local_indices(rect4, cell, ignore_signs=True)
    np.testing.assert_array_equal(unsigned, 1.0)


@pytest.mark.parametrize("eps", [1.0, 1e-4, 0.0])
def test_condensed_matrix_is_spd(rect4, annulus1, eps):
    for mesh in (rect4, annulus1):
        system = assemble(mesh, HHOConfig(k=1, eps=eps))
        dense = system.matrix.toarray()
        np.testing.assert_allclose(dense, dense.T, atol=1e-12 * np.abs(dense).max())
        assert np.linalg.eigvalsh(dense)[0] > 0


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("eps", [1.0, 0.0])
@pytest.mark.parametrize("n", [4, 8])
def test_polynomial_solutions_are_exact(k, eps, n):
    mesh = build_rect_mesh(n)
    case = get_case("poly-exact", eps, k)
    sol = solve(assemble(mesh, HHOConfig(k=k, eps=eps), case))
    assert energy_error(mesh, sol, case) <= 1e-8
    assert l2_error(mesh, sol, case) <= 1e-8


def test_single_cell_mesh_has_no_face_unknowns():
    mesh = build_rect_mesh(1)
    case = get_case("poly-exact", 0.0, 0)
    system = assemble(mesh, HHOConfig(k=0, eps=0.0), case)
    assert system.size == 0
    sol = solve(system)
    assert energy_error(mesh, sol, case) <= 1e-8
    with pytest.raises(SolverError):
        condition_number(system)


def test_dropping_orientation_signs_breaks_exactness(rect4):
    case = get_case("poly-exact", 1.0, 1)
    sol = solve(assemble(rect4, HHOConfig(k=1, eps=1.0, mutate_sign=True), case))
    assert energy_error(rect4, sol, case) > 1e-4


@pytest.mark.parametrize("eps", [1.0, 0.0])
def test_condensation_matches_the_full_system(rect2, poly4, eps):
    case = get_case("smooth-square", eps)
    config = HHOConfig(k=1, eps=eps)
    for mesh in (rect2, poly4):
        condensed = solve(assemble(mesh, config, case))
        full = solve_full(mesh, config, case)
        assert relative(condensed.faces, full.faces) <= 1e-10
        assert relative(np.concatenate(condensed.cells), np.concatenate(full.cells)) <= 1e-10


def test_iterative_solver_matches_direct(rect4):
    case = get_case("smooth-square", 1.0)
    system = assemble(rect4, HHOConfig(k=1, eps=1.0), case)
    direct = solve(system)
    iterative = solve(system, method="cg")
    assert relative(iterative.faces, direct.faces) <= 1e-8


def test_threaded_build_matches_serial(rect4):
    case = get_case("smooth-square", 1.0)
    for mesh in (rect4, build_rect_mesh(6)):
        serial_system = assemble(mesh, HHOConfig(k=1, eps=1.0), case)
        threaded_system = assemble(mesh, HHOConfig(k=1, eps=1.0, serial=False, workers=4), case)
        assert abs(threaded_system.matrix - serial_system.matrix).max() <= 1e-14 * abs(serial_system.matrix).max()
        assert relative(solve(threaded_system).faces, solve(serial_system).faces) <= 1e-12


def test_geometry_cache_is_filled_in_cell_order(rect4):
    cache = warm_cache(rect4, HHOConfig(k=1, eps=1.0, serial=False, workers=3))
    seen = set()
    for cell in rect4.cells:
        key = local_geometry_key(rect4, cell)
        if key in seen:
            continue
        seen.add(key)
        np.testing.assert_array_equal(cache[key][0].centroid, cell.centroid.xy)
    assert set(cache) == seen


def test_cache_does_not_change_the_system(rect4):
    case = get_case("smooth-square", 1e-2)
    cached = assemble(rect4, HHOConfig(k=1, eps=1e-2), case)
    fresh = assemble(rect4, HHOConfig(k=1, eps=1e-2, cache_local=False), case)
    assert abs(cached.matrix - fresh.matrix).max() <= 1e-12 * abs(fresh.matrix).max()
    np.testing.assert_allclose(cached.rhs, fresh.rhs, atol=1e-12 * np.abs(fresh.rhs).max())


def test_interpolation_gathers_to_the_local_reduction(poly4, rng):
    config = HHOConfig(k=1, eps=1.0)
    u, grad_u = polynomial_fields(3, rng)
    sol = interpolate(poly4, config, u, grad_u)
    for cell in poly4.cells:
        elem = LocalElement.build(poly4, cell, 1)
        np.testing.assert_allclose(sol.local_vector(poly4, cell), reduce(elem, u, grad_u), atol=1e-11)


def test_condition_number_estimators_agree(rect4):
    system = assemble(rect4, HHOConfig(k=1, eps=1.0))
    dense = condition_number(system, "dense")
    lanczos = condition_number(system, "lanczos")
    assert lanczos == pytest.approx(dense, rel=1e-2)


def test_zero_eps_is_the_poisson_limit():
    mesh = build_rect_mesh(8)
    limit = solve(assemble(mesh, HHOConfig(k=1, eps=0.0), get_case("smooth-square", 0.0)))
    tiny = solve(assemble(mesh, HHOConfig(k=1, eps=1e-14), get_case("smooth-square", 1e-14)))
    assert relative(tiny.faces, limit.faces) <= 1e-9


@pytest.mark.parametrize("k", [0, 1, 2])
def test_zero_eps_matches_the_h1_reference_scheme(rect4, poly4, k):
    case = get_case("smooth-square", 0.0, k)
    for mesh in (rect4, poly4):
        limit = solve(assemble(mesh, HHOConfig(k=k, eps=0.0), case))
        reference = solve_poisson_reference(mesh, k, case)
        assert discrete_energy_distance(mesh, limit, reference) <= 1e-10


def test_reference_scheme_converges(rect4):
    case = get_case("smooth-square", 0.0)
    coarse = solve_poisson_reference(build_rect_mesh(2), 1, case)
    fine = solve_poisson_reference(rect4, 1, case)
    assert coarse.config.eps == 0.0
    assert energy_error(rect4, fine, case) < energy_error(build_rect_mesh(2), coarse, case)


@pytest.mark.slow
@pytest.mark.parametrize("eps, slope", [(1.0, -4.0), (0.0, -2.0)])
def test_condition_number_scaling(eps, slope):
    hs, conds = [], []
    for n in (8, 16, 32):
        mesh = build_rect_mesh(n)
        hs.append(mesh.h)
        conds.append(condition_number(assemble(mesh, HHOConfig(k=1, eps=eps)), "lanczos"))
    fitted = np.polyfit(np.log(hs), np.log(conds), 1)[0]
    assert fitted == pytest.approx(slope, abs=0.5)
