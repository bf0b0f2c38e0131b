"""
Reference discretization of -Lap u = f with Nitsche boundary data, on the same cell, trace and
normal-derivative unknowns as the fourth-order scheme but written without any eps-weighted term.
The eps = 0 solutions of the main scheme coincide with its solutions.
"""
import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from hho2d.assembly import DofMap, HhoSolution, solve_linear
from hho2d.configuration import HHOConfig
from hho2d.errors import LocalSolveError
from hho2d.local_operators import LocalElement

logger = logging.getLogger(__name__)


def _dn(face):
    return np.einsum("pai,pi->pa", face.table.grad, face.normals)


def poisson_reconstruction(elem):
    """(R, gram): R maps local dofs to the H1 reconstruction with the cell mean of v_K."""
    lay = elem.layout
    w = elem.quad.weights
    grad = elem.table.grad
    gram = np.einsum("p,pai,pbi->ab", w, grad, grad)
    rhs = np.zeros((lay.n_cell, lay.size))
    rhs[:, lay.cell_slice] = gram
    for face in elem.faces:
        dn = _dn(face)
        rhs[:, lay.cell_slice] -= dn.T @ (face.weights[:, None] * face.table.value)
        if face.interior:
            rhs[:, lay.trace_slice(face.slot)] += dn.T @ (face.weights[:, None] * face.trace)
    mean = w @ elem.table.value / elem.area
    bordered = np.block([[gram, mean[:, None]], [mean[None, :], np.zeros((1, 1))]])
    mean_rhs = np.zeros(lay.size)
    mean_rhs[lay.cell_slice] = mean
    try:
        R = sla.solve(bordered, np.vstack([rhs, mean_rhs]), assume_a="sym")[:lay.n_cell]
    except (np.linalg.LinAlgError, ValueError) as e:
        raise LocalSolveError(f"H1 reconstruction system is singular: {e}") from e
    return R, gram


def poisson_stabilization(elem):
    lay = elem.layout
    h = elem.h
    stab = np.zeros((lay.size, lay.size))
    for face in elem.interior_faces:
        w = face.weights
        jump = np.zeros((len(w), lay.size))
        jump[:, lay.cell_slice] = -face.table.value
        jump[:, lay.trace_slice(face.slot)] = face.trace
        stab += jump.T @ (w[:, None] * jump) / h
        proj = face.normal_projector
        njump = np.zeros((proj.basis.dim, lay.size))
        njump[:, lay.cell_slice] = -proj.matrix_for(_dn(face))
        njump[:, lay.normal_slice(face.slot)] = np.eye(proj.basis.dim)
        stab += h * njump.T @ proj.mass @ njump
    cells = lay.cell_slice
    for face in elem.boundary_faces:
        value = face.table.value
        stab[cells, cells] += value.T @ (face.weights[:, None] * value) / h
    return 0.5 * (stab + stab.T)


def poisson_load(elem, f, g_D, R):
    lay = elem.layout
    b = np.zeros(lay.size)
    w = elem.quad.weights
    b[lay.cell_slice] = elem.table.value.T @ (w * f(elem.absolute(elem.quad.points)))
    if g_D is None:
        return b
    flux = np.zeros(lay.n_cell)
    for face in elem.boundary_faces:
        gd = g_D(elem.absolute(face.quad.points))
        b[lay.cell_slice] += face.table.value.T @ (face.weights * gd) / elem.h
        flux += _dn(face).T @ (face.weights * gd)
    return b - R.T @ flux


def solve_poisson_reference(mesh, k, case=None, n_subedges=30, exact_arcs=True):
    """Uncondensed solve of the reference H1 scheme; returns an HhoSolution with eps = 0."""
    config = HHOConfig(k=k, eps=0.0, n_subedges=n_subedges, exact_arcs=exact_arcs)
    dofmap = DofMap.build(mesh, k)
    f = case.f if case is not None else (lambda points: np.zeros(len(points)))
    g_D = case.boundary_data().g_D if case is not None else None
    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.full_size)
    for cell in mesh.cells:
        elem = LocalElement.build(mesh, cell, k, n_subedges, exact_arcs)
        R, gram = poisson_reconstruction(elem)
        A = R.T @ gram @ R + poisson_stabilization(elem)
        b = poisson_load(elem, f, g_D, R)
        idx, signs = dofmap.local_indices(mesh, cell)
        off = dofmap.cell_offset(cell.id)
        gidx = np.concatenate([np.arange(off, off + elem.layout.n_cell), dofmap.n_cell_dofs + idx])
        gsign = np.concatenate([np.ones(elem.layout.n_cell), signs])
        rows.append(np.repeat(gidx, len(gidx)))
        cols.append(np.tile(gidx, len(gidx)))
        vals.append((gsign[:, None] * A * gsign[None, :]).ravel())
        np.add.at(rhs, gidx, gsign * b)
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofmap.full_size, dofmap.full_size),
    ).tocsr()
    x = solve_linear(matrix, rhs, "direct")
    n = dofmap.n_cell
    cells = tuple(x[i * n:(i + 1) * n] for i in range(mesh.n_cells))
    logger.debug(f"reference H1 solve on {mesh.n_cells} cells, {dofmap.full_size} unknowns")
    return HhoSolution(dofmap, config, cells, x[dofmap.n_cell_dofs:])
