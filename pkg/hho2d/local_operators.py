"""
Cell-local HHO operators for eps*Lap^2 u - Lap u = f with Nitsche boundary treatment.

Local unknowns of a cell K are ordered as
    [ v_K in P^{k+2}(K) | for each interior face F of K: v_F in P^{k+2}(F), gamma_F in P^k(F) ]
with gamma stored along the outward normal n_K of the cell. Boundary faces carry no unknowns.
All geometry inside a LocalElement is expressed relative to the cell centroid.
"""
import logging

import numpy as np
import scipy.linalg as sla
from attrs import evolve, field, frozen

from hho2d.basis import CellBasis, DerivativeTable, FaceBasis, ProjectionOperator
from hho2d.errors import ConditioningError, ConfigError, LocalSolveError
from hho2d.mesh import face_frame
from hho2d.quadrature import cell_quadrature, face_quadrature

logger = logging.getLogger(__name__)


def sigma_K(eps, h):
    """max{1, eps h^-2}: which operator dominates on the cell."""
    if not h > 0:
        raise ValueError(f"cell diameter must be positive, got {h}")
    return max(1.0, eps / h ** 2)


def penalty_weights(k, h, hp_scaling=False, hp_symmetric=False):
    """(weight replacing h^-1, weight replacing h) in the stabilization and the boundary load."""
    pen = (k + 1) ** 2 if hp_scaling else 1
    h_weight = h / pen if (hp_scaling and hp_symmetric) else h
    return pen / h, h_weight


@frozen
class LocalDofLayout:
    n_cell: int
    n_trace: int
    n_normal: int
    n_faces: int

    @classmethod
    def for_degree(cls, k, n_interior_faces, n_cell=None):
        n_cell = (k + 3) * (k + 4) // 2 if n_cell is None else n_cell
        return cls(n_cell, k + 3, k + 1, n_interior_faces)

    @property
    def face_block(self):
        return self.n_trace + self.n_normal

    @property
    def size(self):
        return self.n_cell + self.n_faces * self.face_block

    @property
    def cell_slice(self):
        return slice(0, self.n_cell)

    @property
    def face_slice(self):
        return slice(self.n_cell, self.size)

    def trace_slice(self, slot):
        start = self.n_cell + slot * self.face_block
        return slice(start, start + self.n_trace)

    def normal_slice(self, slot):
        start = self.n_cell + slot * self.face_block + self.n_trace
        return slice(start, start + self.n_normal)


@frozen
class LocalFace:
    """
    One face of a cell seen from that cell. 'normals' are n_K at the quadrature points, 'tangents'
    are n_K rotated by +90 degrees. 'slot' is the rank of the face among the interior faces.
    """
    position: int
    interior: bool
    is_arc: bool
    sign: int
    quad: object
    normals: np.ndarray = field(eq=False)
    tangents: np.ndarray = field(eq=False)
    table: DerivativeTable = field(eq=False)
    slot: int | None = None
    trace: np.ndarray | None = field(default=None, eq=False)
    trace_dt: np.ndarray | None = field(default=None, eq=False)
    normal: np.ndarray | None = field(default=None, eq=False)
    trace_projector: ProjectionOperator | None = field(default=None, eq=False)
    normal_projector: ProjectionOperator | None = field(default=None, eq=False)

    @property
    def weights(self):
        return self.quad.weights


@frozen
class LocalElement:
    k: int
    h: float
    area: float
    centroid: np.ndarray = field(eq=False)
    basis: CellBasis
    quad: object
    faces: tuple
    layout: LocalDofLayout
    table: DerivativeTable = field(eq=False)
    projector: ProjectionOperator = field(eq=False)

    @classmethod
    def build(cls, mesh, cell, k, n_subedges=30, exact_arcs=True, orthonormal=False):
        centroid = cell.centroid.xy
        degree = 2 * (k + 2) + 2
        quad = cell_quadrature(mesh, cell, degree, n_subedges, exact_arcs).shifted(centroid)
        basis = CellBasis(k + 2, np.zeros(2), cell.h)
        if orthonormal:
            basis = basis.orthonormalized(quad)
        try:
            projector = ProjectionOperator(basis, quad)
        except ConditioningError:
            logger.warning(f"cell {cell.id}: scaled monomials ill-conditioned, switching to an orthonormal basis")
            basis = basis.orthonormalized(quad)
            projector = ProjectionOperator(basis, quad)

        faces = []
        slot = 0
        for position, (face, _) in enumerate(mesh.cell_edges(cell.id)):
            sign = cell.signs[position]
            fquad = face_quadrature(face, degree)
            n_F, t_F = face_frame(face, fquad.points)
            normals, tangents = sign * n_F, sign * t_F
            fquad = fquad.shifted(centroid)
            table = basis.eval(fquad.points, 3)
            if not face.is_interior:
                faces.append(LocalFace(position, False, face.is_arc, sign, fquad, normals, tangents, table))
                continue
            trace_basis = FaceBasis.on_face(face, k + 2, offset=centroid)
            normal_basis = FaceBasis.on_face(face, k, offset=centroid)
            trace = trace_basis.eval(fquad.points)
            trace_dt = (tangents @ trace_basis.tangent)[:, None] * trace_basis.eval_derivative(fquad.points)
            faces.append(LocalFace(
                position, True, False, sign, fquad, normals, tangents, table,
                slot=slot,
                trace=trace,
                trace_dt=trace_dt,
                normal=normal_basis.eval(fquad.points),
                trace_projector=ProjectionOperator(trace_basis, fquad),
                normal_projector=ProjectionOperator(normal_basis, fquad),
            ))
            slot += 1
        layout = LocalDofLayout.for_degree(k, slot, n_cell=basis.dim)
        return cls(k, cell.h, cell.area, centroid, basis, quad, tuple(faces), layout, basis.eval(quad.points, 2), projector)

    def relocated(self, centroid):
        return evolve(self, centroid=np.asarray(centroid, dtype=float))

    @property
    def interior_faces(self):
        return [f for f in self.faces if f.interior]

    @property
    def boundary_faces(self):
        return [f for f in self.faces if not f.interior]

    @property
    def is_boundary(self):
        return any(not f.interior for f in self.faces)

    def absolute(self, points):
        return points + self.centroid

    def absolute_basis(self):
        return self.basis.with_center(self.centroid)


@frozen
class BoundaryData:
    """
    g_D(points), g_N(points, normals), and either dt_gD(points, tangents) or grad_gD(points);
    points are absolute coordinates.
    """
    g_D: object
    g_N: object
    dt_gD: object | None = None
    grad_gD: object | None = None

    @classmethod
    def homogeneous(cls):
        zero = lambda points, *args: np.zeros(len(points))
        return cls(zero, zero, dt_gD=zero)

    def tangential(self, points, tangents):
        if self.dt_gD is not None:
            return self.dt_gD(points, tangents)
        if self.grad_gD is not None:
            return np.einsum("pi,pi->p", self.grad_gD(points), tangents)
        raise ConfigError("boundary data needs either dt_gD or grad_gD")


@frozen
class LocalOperatorSet:
    """R maps local dofs to coefficients of R_K^i; A = R^T G R + Si + Sb (Sb embedded on the cell block)."""
    R: np.ndarray = field(eq=False)
    G: np.ndarray = field(eq=False)
    mean: np.ndarray = field(eq=False)
    Si: np.ndarray = field(eq=False)
    Sb: np.ndarray = field(eq=False)
    A: np.ndarray = field(eq=False)
    saddle: tuple = field(eq=False)
    eps: float
    sigma: float
    h: float


def _mass(test, trial, weights):
    return test.T @ (weights[:, None] * trial)


def eps_gram(elem, eps):
    """(grad v, grad w)_{K,eps} = eps (hess v, hess w)_K + (grad v, grad w)_K on the cell basis."""
    w = elem.quad.weights
    gram = np.einsum("p,pai,pbi->ab", w, elem.table.grad, elem.table.grad)
    if eps:
        gram = gram + eps * np.einsum("p,paij,pbij->ab", w, elem.table.hess, elem.table.hess)
    return 0.5 * (gram + gram.T)


def _saddle(elem, gram):
    n = elem.layout.n_cell
    mean = elem.quad.weights @ elem.table.value / elem.area
    bordered = np.zeros((n + 1, n + 1))
    bordered[:n, :n] = gram
    bordered[:n, n] = mean
    bordered[n, :n] = mean
    try:
        lu = sla.lu_factor(bordered, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise LocalSolveError(f"mean-constrained local system cannot be factorized: {e}") from e
    pivots = np.diag(lu[0])
    if not np.all(np.isfinite(pivots)) or np.any(pivots == 0.0):
        raise LocalSolveError("mean-constrained local system is singular (degenerate cell geometry?)")
    return mean, lu


def _solve_saddle(lu, rhs, mean_rhs):
    n = rhs.shape[0]
    full = np.vstack([rhs, np.atleast_2d(mean_rhs)])
    return sla.lu_solve(lu, full)[:n]


def _interior_face_terms(elem, eps, rhs):
    """Face integrals over the interior part of the cell boundary, shared by both reconstruction forms."""
    lay = elem.layout
    for face in elem.interior_faces:
        w, n, t, tab = face.weights, face.normals, face.tangents, face.table
        dn = tab.normal(n)
        tr, nr = lay.trace_slice(face.slot), lay.normal_slice(face.slot)
        rhs[:, tr] += _mass(dn, face.trace, w)
        if eps:
            rhs[:, tr] += eps * (_mass(tab.normal_tangent(n, t), face.trace_dt, w) - _mass(tab.normal_laplacian(n), face.trace, w))
            rhs[:, nr] += eps * _mass(tab.normal_normal(n), face.normal, w)
    return rhs


def _reconstruction_rhs(elem, eps, gram):
    """Right-hand side of the integrated-by-parts form: one row per test function."""
    lay = elem.layout
    rhs = np.zeros((lay.n_cell, lay.size))
    rhs[:, lay.cell_slice] = gram
    for face in elem.faces:
        w, n, t, tab = face.weights, face.normals, face.tangents, face.table
        dn = tab.normal(n)
        val = tab.value
        block = -_mass(dn, val, w)
        if eps:
            block += eps * _mass(tab.normal_laplacian(n), val, w)
            if face.interior:
                dt = np.einsum("pbi,pi->pb", tab.grad, t)
                block -= eps * (_mass(tab.normal_normal(n), dn, w) + _mass(tab.normal_tangent(n, t), dt, w))
            else:
                block -= eps * np.einsum("p,pai,pbi->ab", w, tab.grad_normal(n), tab.grad)
        rhs[:, lay.cell_slice] += block
    return _interior_face_terms(elem, eps, rhs)


def build_reconstruction(elem, eps):
    """(R, mean, saddle factorization): R maps local dofs to the coefficients of R_K^i."""
    gram = eps_gram(elem, eps)
    mean, lu = _saddle(elem, gram)
    rhs = _reconstruction_rhs(elem, eps, gram)
    mean_rhs = np.zeros(elem.layout.size)
    mean_rhs[elem.layout.cell_slice] = mean
    return _solve_saddle(lu, rhs, mean_rhs), mean, lu


def build_reconstruction_dual(elem, eps):
    """Same operator assembled from the form with eps Lap^2 w and Lap w tested against v_K."""
    gram = eps_gram(elem, eps)
    mean, lu = _saddle(elem, gram)
    lay = elem.layout
    w = elem.quad.weights
    table = elem.basis.eval(elem.quad.points, 4 if eps else 2)
    rhs = np.zeros((lay.n_cell, lay.size))
    rhs[:, lay.cell_slice] = -_mass(table.laplacian, table.value, w)
    if eps:
        rhs[:, lay.cell_slice] += eps * _mass(table.bilaplacian, table.value, w)
    rhs = _interior_face_terms(elem, eps, rhs)
    mean_rhs = np.zeros(lay.size)
    mean_rhs[lay.cell_slice] = mean
    return _solve_saddle(lu, rhs, mean_rhs)


def _trace_jump(face, lay):
    jump = np.zeros((len(face.weights), lay.size))
    jump[:, lay.cell_slice] = -face.table.value
    jump[:, lay.trace_slice(face.slot)] = face.trace
    return jump


def _projected_normal_jump(face, lay):
    """Coefficients in P^k(F) of Pi^k(gamma - d_n v_K)."""
    proj = face.normal_projector
    jump = np.zeros((proj.basis.dim, lay.size))
    jump[:, lay.cell_slice] = -proj.matrix_for(face.table.normal(face.normals))
    jump[:, lay.normal_slice(face.slot)] = np.eye(proj.basis.dim)
    return jump


def build_stab_interior(elem, eps, hp_scaling=False, hp_symmetric=False):
    lay = elem.layout
    sigma = sigma_K(eps, elem.h)
    h_inv, h_w = penalty_weights(elem.k, elem.h, hp_scaling, hp_symmetric)
    stab = np.zeros((lay.size, lay.size))
    for face in elem.interior_faces:
        jump = _trace_jump(face, lay)
        stab += sigma * h_inv * _mass(jump, jump, face.weights)
        pj = _projected_normal_jump(face, lay)
        stab += sigma * h_w * pj.T @ face.normal_projector.mass @ pj
    return 0.5 * (stab + stab.T)


def build_stab_boundary(elem, eps, hp_scaling=False):
    """Nitsche penalty on the cell unknown; n_cell x n_cell, zero on interior cells."""
    n = elem.layout.n_cell
    sigma = sigma_K(eps, elem.h)
    h_inv, _ = penalty_weights(elem.k, elem.h, hp_scaling)
    stab = np.zeros((n, n))
    for face in elem.boundary_faces:
        w, tab = face.weights, face.table
        stab += sigma * h_inv * _mass(tab.value, tab.value, w)
        if eps:
            stab += eps * h_inv * np.einsum("p,pai,pbi->ab", w, tab.grad, tab.grad)
    return 0.5 * (stab + stab.T)


def build_local_bilinear(elem, eps, hp_scaling=False, hp_symmetric=False):
    gram = eps_gram(elem, eps)
    R, mean, lu = build_reconstruction(elem, eps)
    Si = build_stab_interior(elem, eps, hp_scaling, hp_symmetric)
    Sb = build_stab_boundary(elem, eps, hp_scaling)
    A = R.T @ gram @ R + Si
    cells = elem.layout.cell_slice
    A[cells, cells] += Sb
    A = 0.5 * (A + A.T)
    return LocalOperatorSet(R, gram, mean, Si, Sb, A, lu, eps, sigma_K(eps, elem.h), elem.h)


def _boundary_load(elem, eps, bdata):
    """r(w) = -eps[(g_D, d_n Lap w) - (g_N, d_nn w) - (dt g_D, d_nt w)] + (g_D, d_n w) over the boundary faces."""
    r = np.zeros(elem.layout.n_cell)
    for face in elem.boundary_faces:
        w, n, t, tab = face.weights, face.normals, face.tangents, face.table
        pts = elem.absolute(face.quad.points)
        gd = bdata.g_D(pts)
        r += tab.normal(n).T @ (w * gd)
        if eps:
            gn = bdata.g_N(pts, n)
            dtg = bdata.tangential(pts, t)
            r -= eps * (tab.normal_laplacian(n).T @ (w * gd) - tab.normal_normal(n).T @ (w * gn)
                        - tab.normal_tangent(n, t).T @ (w * dtg))
    return r


def build_lifting(elem, eps, bdata, ops=None):
    """Coefficients of L_K(u), computed from boundary data only; zero on interior cells."""
    n = elem.layout.n_cell
    if not elem.is_boundary:
        return np.zeros(n)
    lu = ops.saddle if ops is not None else _saddle(elem, eps_gram(elem, eps))[1]
    r = _boundary_load(elem, eps, bdata)
    try:
        return _solve_saddle(lu, r[:, None], np.zeros(1))[:, 0]
    except (np.linalg.LinAlgError, ValueError) as e:
        raise LocalSolveError(f"lifting solve failed: {e}") from e


def local_rhs(elem, eps, f, bdata, R, hp_scaling=False):
    """Cell contribution to l_h, acting on the full local dof vector."""
    lay = elem.layout
    b = np.zeros(lay.size)
    w = elem.quad.weights
    b[lay.cell_slice] = elem.table.value.T @ (w * f(elem.absolute(elem.quad.points)))
    if not elem.is_boundary or bdata is None:
        return b
    sigma = sigma_K(eps, elem.h)
    h_inv, _ = penalty_weights(elem.k, elem.h, hp_scaling)
    for face in elem.boundary_faces:
        fw, n, t, tab = face.weights, face.normals, face.tangents, face.table
        pts = elem.absolute(face.quad.points)
        b[lay.cell_slice] += sigma * h_inv * tab.value.T @ (fw * bdata.g_D(pts))
        if eps:
            flux = bdata.g_N(pts, n)[:, None] * n + bdata.tangential(pts, t)[:, None] * t
            b[lay.cell_slice] += eps * h_inv * np.einsum("p,pbi,pi->b", fw, tab.grad, flux)
    b -= R.T @ _boundary_load(elem, eps, bdata)
    return b


def reduce(elem, u, grad_u):
    """I_K(u) = (Pi_K u, Pi_F^{k+2} u, Pi_F^k(n_K . grad u)) as a local dof vector."""
    lay = elem.layout
    v = np.zeros(lay.size)
    v[lay.cell_slice] = elem.projector.project_values(u(elem.absolute(elem.quad.points)))
    for face in elem.interior_faces:
        pts = elem.absolute(face.quad.points)
        v[lay.trace_slice(face.slot)] = face.trace_projector.project_values(u(pts))
        dn = np.einsum("pi,pi->p", grad_u(pts), face.normals)
        v[lay.normal_slice(face.slot)] = face.normal_projector.project_values(dn)
    return v


def energy_seminorm_matrix(elem, eps):
    """Matrix N with |v|^2 = v^T N v for the local energy seminorm."""
    lay = elem.layout
    sigma = sigma_K(eps, elem.h)
    h = elem.h
    N = np.zeros((lay.size, lay.size))
    N[lay.cell_slice, lay.cell_slice] = eps_gram(elem, eps)
    for face in elem.interior_faces:
        jump = _trace_jump(face, lay)
        N += sigma / h * _mass(jump, jump, face.weights)
        njump = np.zeros_like(jump)
        njump[:, lay.cell_slice] = -face.table.normal(face.normals)
        njump[:, lay.normal_slice(face.slot)] = face.normal
        N += sigma * h * _mass(njump, njump, face.weights)
    cells = lay.cell_slice
    for face in elem.boundary_faces:
        w, tab = face.weights, face.table
        N[cells, cells] += sigma / h * _mass(tab.value, tab.value, w)
        if eps:
            N[cells, cells] += eps / h * np.einsum("p,pai,pbi->ab", w, tab.grad, tab.grad)
    return 0.5 * (N + N.T)


def energy_seminorm(elem, eps, v):
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ energy_seminorm_matrix(elem, eps) @ v, 0.0)))


def local_geometry_key(mesh, cell):
    """Translation-invariant signature of a cell; equal keys share their local matrices."""
    c, h = cell.centroid.xy, cell.h
    rel = np.round((mesh.vertices[list(cell.vertices)] - c) / h, 9) + 0.0
    key = [f"{h:.10g}", tuple(rel.ravel().tolist())]
    for position, (face, aligned) in enumerate(mesh.cell_edges(cell.id)):
        entry = (face.kind, face.is_interior, aligned, cell.signs[position])
        if face.is_arc:
            center = np.round((face.geometry.center.xy - c) / h, 9) + 0.0
            entry += (tuple(center.tolist()), round(face.geometry.radius / h, 9), round(face.sweep, 9))
        key.append(entry)
    return tuple(key)
