"""
Global assembly, static condensation and solution recovery.

Global unknowns live on interior faces only: per face a trace block (k+3) followed by a
normal-derivative block (k+1) stored along n_F. Cell unknowns are eliminated cell by cell.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from attrs import field, frozen
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, cg, eigsh, splu
from tqdm import tqdm

from hho2d.configuration import HHOConfig
from hho2d.errors import ConditioningError, LocalSolveError, SolverError
from hho2d.local_operators import (
    LocalElement,
    build_local_bilinear,
    local_geometry_key,
    local_rhs,
)

logger = logging.getLogger(__name__)

DENSE_COND_LIMIT = 2000
RESIDUAL_TOL = 1e-10


@frozen
class DofMap:
    k: int
    face_offsets: dict = field(eq=False)
    n_interior_faces: int
    n_cells: int

    @classmethod
    def build(cls, mesh, k):
        offsets = {}
        block = 2 * k + 4
        for face in mesh.interior_faces:
            offsets[face.id] = len(offsets) * block
        return cls(k, offsets, len(offsets), mesh.n_cells)

    @property
    def n_trace(self):
        return self.k + 3

    @property
    def n_normal(self):
        return self.k + 1

    @property
    def face_block(self):
        return 2 * self.k + 4

    @property
    def n_cell(self):
        return (self.k + 3) * (self.k + 4) // 2

    @property
    def size(self):
        """Number of condensed (face) unknowns."""
        return self.n_interior_faces * self.face_block

    @property
    def n_cell_dofs(self):
        return self.n_cells * self.n_cell

    @property
    def full_size(self):
        return self.n_cell_dofs + self.size

    def cell_offset(self, cell_id):
        return cell_id * self.n_cell

    def local_indices(self, mesh, cell, ignore_signs=False):
        """Global indices and signs of the face part of a cell's local dof vector."""
        idx, signs = [], []
        for fid, s in zip(cell.face_ids, cell.signs):
            if fid not in self.face_offsets:
                continue
            off = self.face_offsets[fid]
            idx.extend(range(off, off + self.n_trace))
            signs.extend([1.0] * self.n_trace)
            idx.extend(range(off + self.n_trace, off + self.face_block))
            signs.extend([1.0 if ignore_signs else float(s)] * self.n_normal)
        return np.array(idx, dtype=int), np.array(signs)


@frozen
class CellContribution:
    cell_id: int
    indices: np.ndarray = field(eq=False)
    signs: np.ndarray = field(eq=False)
    S: np.ndarray = field(eq=False)
    g: np.ndarray = field(eq=False)
    factor: tuple = field(eq=False)
    A_TF: np.ndarray = field(eq=False)
    b_T: np.ndarray = field(eq=False)
    elem: LocalElement = field(eq=False)
    ops: object = field(eq=False)


@frozen
class CondensedSystem:
    matrix: sp.csr_matrix = field(eq=False)
    rhs: np.ndarray = field(eq=False)
    dofmap: DofMap
    config: HHOConfig
    cells: tuple = field(eq=False)

    @property
    def size(self):
        return self.dofmap.size


@frozen
class HhoSolution:
    """Cell coefficients per cell and the face unknowns in condensed numbering (gamma along n_F)."""
    dofmap: DofMap
    config: HHOConfig
    cells: tuple = field(eq=False)
    faces: np.ndarray = field(eq=False)
    locals: tuple | None = field(default=None, eq=False)

    @property
    def n_dofs(self):
        return self.dofmap.size

    def trace(self, face_id):
        off = self.dofmap.face_offsets[face_id]
        return self.faces[off: off + self.dofmap.n_trace]

    def normal_derivative(self, face_id):
        off = self.dofmap.face_offsets[face_id] + self.dofmap.n_trace
        return self.faces[off: off + self.dofmap.n_normal]

    def local_vector(self, mesh, cell):
        """Local dof vector of a cell, normal derivatives along n_K."""
        idx, signs = self.dofmap.local_indices(mesh, cell, ignore_signs=self.config.mutate_sign)
        return np.concatenate([self.cells[cell.id], signs * self.faces[idx]])


def build_local(mesh, cell, config, cache=None):
    """(LocalElement, LocalOperatorSet) of a cell, shared between cells with the same geometry key."""
    key = None
    if cache is not None:
        key = local_geometry_key(mesh, cell)
        hit = cache.get(key)
        if hit is not None:
            elem, ops = hit
            return elem.relocated(cell.centroid.xy), ops
    elem = LocalElement.build(mesh, cell, config.k, config.n_subedges, config.exact_arcs, config.orthonormal)
    ops = build_local_bilinear(elem, config.eps, config.hp_scaling, config.hp_symmetric)
    if cache is not None:
        cache[key] = (elem, ops)
    return elem, ops


def _condense(cell, elem, ops, b):
    lay = elem.layout
    T, F = lay.cell_slice, lay.face_slice
    A = ops.A
    try:
        factor = sla.cho_factor(A[T, T])
    except np.linalg.LinAlgError as e:
        raise LocalSolveError(f"cell block is not positive definite: {e}", cell_id=cell.id) from e
    A_TF = A[T, F]
    X = sla.cho_solve(factor, np.column_stack([A_TF, b[T]]))
    S = A[F, F] - A_TF.T @ X[:, :-1]
    g = b[F] - A_TF.T @ X[:, -1]
    return 0.5 * (S + S.T), g, factor, A_TF, b[T]


def _cell_builder(mesh, config, dofmap, f, bdata, cache):
    def build(cell):
        elem, ops = build_local(mesh, cell, config, cache)
        b = local_rhs(elem, config.eps, f, bdata, ops.R, config.hp_scaling)
        S, g, factor, A_TF, b_T = _condense(cell, elem, ops, b)
        idx, signs = dofmap.local_indices(mesh, cell, ignore_signs=config.mutate_sign)
        return CellContribution(cell.id, idx, signs, S, g, factor, A_TF, b_T, elem, ops)
    return build


def _map_cells(fn, cells, config, progress, desc):
    with tqdm(total=len(cells), ncols=100, desc=desc, disable=not progress) as pbar:
        if config.serial or config.workers <= 1:
            out = []
            for cell in cells:
                out.append(fn(cell))
                pbar.update(1)
            return out
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            out = []
            for item in pool.map(fn, cells):
                out.append(item)
                pbar.update(1)
            return out


def warm_cache(mesh, config, progress=False):
    """
    Geometry cache holding the operators of the first cell of every geometry key, in cell order.
    Assembly threads only read it.
    """
    first = {}
    for cell in mesh.cells:
        first.setdefault(local_geometry_key(mesh, cell), cell)
    built = _map_cells(lambda cell: build_local(mesh, cell, config), list(first.values()), config, progress, "local operators")
    return dict(zip(first, built))


def _case_data(case):
    if case is None:
        return (lambda pts: np.zeros(len(pts))), None
    return case.f, case.boundary_data()


def assemble(mesh, config, case=None, progress=False):
    """Condensed system over the interior face unknowns."""
    if not isinstance(config, HHOConfig):
        config = HHOConfig(**config)
    dofmap = DofMap.build(mesh, config.k)
    f, bdata = _case_data(case)
    start = time.perf_counter()
    cache = warm_cache(mesh, config, progress) if config.cache_local else None
    contributions = _map_cells(_cell_builder(mesh, config, dofmap, f, bdata, cache), mesh.cells, config, progress, "assemble")

    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.size)
    for c in contributions:
        if len(c.indices) == 0:
            continue
        S = c.signs[:, None] * c.S * c.signs[None, :]
        rows.append(np.repeat(c.indices, len(c.indices)))
        cols.append(np.tile(c.indices, len(c.indices)))
        vals.append(S.ravel())
        np.add.at(rhs, c.indices, c.signs * c.g)
    if rows:
        matrix = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dofmap.size, dofmap.size),
        ).tocsr()
    else:
        matrix = sp.csr_matrix((dofmap.size, dofmap.size))
    logger.debug(f"assembled {mesh.n_cells} cells, {dofmap.size} face unknowns in {time.perf_counter() - start:.2f}s")
    return CondensedSystem(matrix, rhs, dofmap, config, tuple(contributions))


def _jacobi(matrix):
    diag = matrix.diagonal().copy()
    diag[diag == 0] = 1.0
    return LinearOperator(matrix.shape, matvec=lambda x: x / diag, dtype=float)


def solve_linear(matrix, rhs, method="direct"):
    if matrix.shape[0] == 0:
        return np.zeros(0)
    if method == "direct":
        try:
            x = splu(sp.csc_matrix(matrix)).solve(rhs)
        except RuntimeError as e:
            raise SolverError(f"sparse factorization failed, matrix is singular: {e}") from e
    elif method == "cg":
        x, info = cg(matrix, rhs, rtol=1e-12, maxiter=20 * matrix.shape[0], M=_jacobi(matrix))
        if info != 0:
            raise SolverError(f"conjugate gradient did not converge (info={info})")
    else:
        raise SolverError(f"unknown linear solver {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    norm_b = np.linalg.norm(rhs)
    if norm_b > 0:
        residual = np.linalg.norm(matrix @ x - rhs) / norm_b
        if residual > RESIDUAL_TOL:
            logger.warning(f"relative residual {residual:.2e} above {RESIDUAL_TOL:.0e}")
    return x


def solve(system, method=None):
    """Solve the condensed system and recover the cell unknowns."""
    method = method or system.config.solver
    x = solve_linear(system.matrix, system.rhs, method)
    cells = []
    for c in system.cells:
        local_faces = c.signs * x[c.indices] if len(c.indices) else np.zeros(0)
        cells.append(sla.cho_solve(c.factor, c.b_T - c.A_TF @ local_faces))
    return HhoSolution(system.dofmap, system.config, tuple(cells), x, tuple((c.elem, c.ops) for c in system.cells))


def assemble_full(mesh, config, case=None):
    """Uncondensed matrix and load over [cell unknowns | face unknowns]."""
    if not isinstance(config, HHOConfig):
        config = HHOConfig(**config)
    dofmap = DofMap.build(mesh, config.k)
    f, bdata = _case_data(case)
    cache = {} if config.cache_local else None
    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.full_size)
    locals_ = []
    for cell in mesh.cells:
        elem, ops = build_local(mesh, cell, config, cache)
        b = local_rhs(elem, config.eps, f, bdata, ops.R, config.hp_scaling)
        idx, signs = dofmap.local_indices(mesh, cell, ignore_signs=config.mutate_sign)
        off = dofmap.cell_offset(cell.id)
        gidx = np.concatenate([np.arange(off, off + elem.layout.n_cell), dofmap.n_cell_dofs + idx])
        gsign = np.concatenate([np.ones(elem.layout.n_cell), signs])
        A = gsign[:, None] * ops.A * gsign[None, :]
        rows.append(np.repeat(gidx, len(gidx)))
        cols.append(np.tile(gidx, len(gidx)))
        vals.append(A.ravel())
        np.add.at(rhs, gidx, gsign * b)
        locals_.append((elem, ops))
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dofmap.full_size, dofmap.full_size),
    ).tocsr()
    return matrix, rhs, dofmap, tuple(locals_)


def solve_full(mesh, config, case=None):
    matrix, rhs, dofmap, locals_ = assemble_full(mesh, config, case)
    x = solve_linear(matrix, rhs, "direct")
    n = dofmap.n_cell
    cells = tuple(x[i * n:(i + 1) * n] for i in range(mesh.n_cells))
    return HhoSolution(dofmap, config if isinstance(config, HHOConfig) else HHOConfig(**config),
                       cells, x[dofmap.n_cell_dofs:], locals_)


def condition_number(system, method="auto", tol=1e-3, maxiter=None):
    """2-norm condition number of the condensed matrix (or of any SPD matrix)."""
    matrix = system.matrix if hasattr(system, "matrix") else system
    n = matrix.shape[0]
    if n == 0:
        raise SolverError("condition number of an empty system is undefined")
    if method == "dense" or (method == "auto" and n <= DENSE_COND_LIMIT):
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
        eig = sla.eigvalsh(0.5 * (dense + dense.T))
        lo, hi = eig[0], eig[-1]
    elif method in ("lanczos", "auto"):
        matrix = sp.csc_matrix(matrix)
        try:
            hi = eigsh(matrix, k=1, which="LA", tol=tol, maxiter=maxiter, return_eigenvectors=False)[0]
            lo = eigsh(matrix, k=1, sigma=0.0, which="LM", tol=tol, maxiter=maxiter, return_eigenvectors=False)[0]
        except ArpackNoConvergence as e:
            raise ConditioningError(f"extremal eigenvalue iteration did not converge: {e}") from e
    else:
        raise SolverError(f"unknown condition number method {method!r}")
    if lo <= 0:
        raise ConditioningError(f"matrix is not positive definite (smallest eigenvalue {lo:.3e})")
    return float(hi / lo)


def interpolate(mesh, config, u, grad_u, cache=None):
    """Global reduction of (u, grad u): cell and face projections, normal derivatives along n_F."""
    if not isinstance(config, HHOConfig):
        config = HHOConfig(**config)
    dofmap = DofMap.build(mesh, config.k)
    faces = np.zeros(dofmap.size)
    cells, locals_ = [], []
    done = set()
    for cell in mesh.cells:
        elem, ops = build_local(mesh, cell, config, cache)
        cells.append(elem.projector.project_values(u(elem.absolute(elem.quad.points))))
        locals_.append((elem, ops))
        for lf in elem.interior_faces:
            fid = cell.face_ids[lf.position]
            if fid in done:
                continue
            done.add(fid)
            pts = elem.absolute(lf.quad.points)
            off = dofmap.face_offsets[fid]
            faces[off: off + dofmap.n_trace] = lf.trace_projector.project_values(u(pts))
            dn = np.einsum("pi,pi->p", grad_u(pts), lf.sign * lf.normals)
            faces[off + dofmap.n_trace: off + dofmap.face_block] = lf.normal_projector.project_values(dn)
    return HhoSolution(dofmap, config, tuple(cells), faces, tuple(locals_))
