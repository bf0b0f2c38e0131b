"""
Scaled monomial bases on cells and faces, with exact derivatives and L2 projections.
"""
import logging
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from attrs import evolve, field, frozen

from hho2d.errors import ConditioningError, UnsupportedFaceError
from hho2d.quadrature import face_quadrature

logger = logging.getLogger(__name__)

MAX_DERIV = 4


@lru_cache(maxsize=None)
def monomial_powers(degree):
    """Exponents (a, b) ordered by total degree d as (d,0), (d-1,1), ..., (0,d)."""
    return tuple((d - j, j) for d in range(degree + 1) for j in range(d + 1))


def poly_dim(degree):
    return (degree + 1) * (degree + 2) // 2


def _falling(a, p):
    out = np.ones_like(a, dtype=float)
    for i in range(p):
        out = out * (a - i)
    return out


class DerivativeTable:
    """Derivative values keyed by multi-index (p, q) = d^p/dx^p d^q/dy^q, each of shape (n_points, dim)."""

    def __init__(self, tables):
        self.tables = tables

    def __getitem__(self, index):
        return self.tables[index]

    @property
    def max_deriv(self):
        return max(p + q for p, q in self.tables)

    @property
    def value(self):
        return self.tables[(0, 0)]

    @property
    def grad(self):
        return np.stack([self.tables[(1, 0)], self.tables[(0, 1)]], axis=-1)

    @property
    def hess(self):
        xx, xy, yy = self.tables[(2, 0)], self.tables[(1, 1)], self.tables[(0, 2)]
        return np.stack([np.stack([xx, xy], axis=-1), np.stack([xy, yy], axis=-1)], axis=-2)

    @property
    def laplacian(self):
        return self.tables[(2, 0)] + self.tables[(0, 2)]

    @property
    def grad_laplacian(self):
        t = self.tables
        return np.stack([t[(3, 0)] + t[(1, 2)], t[(2, 1)] + t[(0, 3)]], axis=-1)

    @property
    def bilaplacian(self):
        t = self.tables
        return t[(4, 0)] + 2.0 * t[(2, 2)] + t[(0, 4)]

    def normal(self, n):
        """d_n per point: n has shape (n_points, 2)."""
        return np.einsum("pbi,pi->pb", self.grad, n)

    def normal_normal(self, n):
        return np.einsum("pbij,pi,pj->pb", self.hess, n, n)

    def normal_tangent(self, n, t):
        return np.einsum("pbij,pi,pj->pb", self.hess, t, n)

    def normal_laplacian(self, n):
        return np.einsum("pbi,pi->pb", self.grad_laplacian, n)

    def grad_normal(self, n):
        """Gradient of d_n (per basis function): hess . n."""
        return np.einsum("pbij,pj->pbi", self.hess, n)


@frozen
class CellBasis:
    """
    Scaled monomials ((x - xc)/h)^a ((y - yc)/h)^b, a + b <= degree. An optional 'transform' T
    defines psi_i = sum_j T_ij phi_j.
    """
    degree: int
    center: np.ndarray = field(eq=False, converter=lambda c: np.asarray(c, dtype=float))
    h: float = field(converter=float)
    transform: np.ndarray | None = field(default=None, eq=False)

    @classmethod
    def for_cell(cls, cell, degree, center=None):
        return cls(degree, cell.centroid.xy if center is None else center, cell.h)

    @property
    def dim(self):
        return poly_dim(self.degree)

    @property
    def powers(self):
        return monomial_powers(self.degree)

    def with_center(self, center):
        return evolve(self, center=center)

    def eval_monomials(self, points, max_deriv=0):
        if not 0 <= max_deriv <= MAX_DERIV:
            raise ValueError(f"max_deriv must lie in [0, {MAX_DERIV}], got {max_deriv}")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        xi = (points[:, 0] - self.center[0]) / self.h
        eta = (points[:, 1] - self.center[1]) / self.h
        a = np.array([p[0] for p in self.powers])
        b = np.array([p[1] for p in self.powers])
        tables = {}
        for order in range(max_deriv + 1):
            for q in range(order + 1):
                p = order - q
                coef = _falling(a, p) * _falling(b, q) / self.h ** (p + q)
                ea = np.clip(a - p, 0, None)
                eb = np.clip(b - q, 0, None)
                tables[(p, q)] = coef * xi[:, None] ** ea * eta[:, None] ** eb
        return tables

    def eval(self, points, max_deriv=0):
        tables = self.eval_monomials(points, max_deriv)
        if self.transform is not None:
            tables = {key: val @ self.transform.T for key, val in tables.items()}
        return DerivativeTable(tables)

    def __call__(self, coeffs, points, max_deriv=0):
        """Evaluate the polynomial with the given coefficients: DerivativeTable with one column."""
        table = self.eval(points, max_deriv)
        coeffs = np.asarray(coeffs, dtype=float)
        return DerivativeTable({key: (val @ coeffs)[:, None] for key, val in table.tables.items()})

    def orthonormalized(self, quad):
        """Basis that is L2-orthonormal for the given rule (Cholesky of the monomial mass matrix)."""
        phi = self.eval_monomials(quad.points)[(0, 0)]
        mass = phi.T @ (quad.weights[:, None] * phi)
        try:
            upper = sla.cholesky(mass, lower=False)
        except np.linalg.LinAlgError:
            if np.any(quad.weights <= 0):
                raise ConditioningError("monomial mass matrix is not positive definite")
            _, upper = np.linalg.qr(np.sqrt(quad.weights)[:, None] * phi)
        transform = sla.solve_triangular(upper, np.eye(self.dim), lower=False).T
        return evolve(self, transform=transform)


@frozen
class FaceBasis:
    """1D scaled monomials s^j with s = ((p - m) . tau_F) / L_F."""
    degree: int
    origin: np.ndarray = field(eq=False)
    tangent: np.ndarray = field(eq=False)
    length: float

    @classmethod
    def on_face(cls, face, degree, offset=None):
        if face.is_arc:
            raise UnsupportedFaceError(f"face {face.id}: no polynomial space on curved faces")
        origin = face.midpoint if offset is None else face.midpoint - offset
        return cls(degree, origin, face.tangent, face.length)

    @property
    def dim(self):
        return self.degree + 1

    def param(self, points):
        points = np.atleast_2d(points)
        return (points - self.origin) @ self.tangent / self.length

    def eval(self, points):
        s = self.param(points)
        return s[:, None] ** np.arange(self.dim)[None, :]

    def eval_derivative(self, points):
        """Derivative along tau_F in arc length."""
        s = self.param(points)
        j = np.arange(self.dim)
        return j * s[:, None] ** np.clip(j - 1, 0, None) / self.length


def cell_mass_matrix(basis, quad):
    phi = basis.eval(quad.points).value
    return phi.T @ (quad.weights[:, None] * phi)


class ProjectionOperator:
    """L2 projection onto the span of a basis, for a fixed quadrature rule."""

    def __init__(self, basis, quad):
        self.basis = basis
        self.quad = quad
        self.table = basis.eval(quad.points)
        if isinstance(self.table, DerivativeTable):
            self.table = self.table.value
        self.mass = self.table.T @ (quad.weights[:, None] * self.table)
        try:
            self.factor = sla.cho_factor(self.mass)
        except np.linalg.LinAlgError as e:
            raise ConditioningError(f"mass matrix of degree {basis.degree} is not positive definite") from e

    def project_values(self, values):
        rhs = self.table.T @ (self.quad.weights[:, None] * np.asarray(values, dtype=float).reshape(len(self.quad), -1))
        coeffs = sla.cho_solve(self.factor, rhs)
        return coeffs[:, 0] if np.ndim(values) == 1 else coeffs

    def __call__(self, v):
        return self.project_values(v(self.quad.points))

    def matrix_for(self, table):
        """Coefficients of the projections of every column of a table sampled at the rule points."""
        return sla.cho_solve(self.factor, self.table.T @ (self.quad.weights[:, None] * table))


def project_cell(v, degree, cell, quad, orthonormal=False):
    """Coefficients of the L2 projection of v onto P^degree(cell) (in CellBasis.for_cell, optionally orthonormalized)."""
    basis = CellBasis.for_cell(cell, degree)
    if orthonormal:
        basis = basis.orthonormalized(quad)
    return ProjectionOperator(basis, quad)(v)


def project_face(v, degree, face, quad=None):
    basis = FaceBasis.on_face(face, degree)
    if quad is None:
        quad = face_quadrature(face, 2 * degree + 4)
    return ProjectionOperator(basis, quad)(v)
