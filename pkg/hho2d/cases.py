"""
Manufactured test cases. Exact fields are written symbolically and lambdified to numpy, the source
term is derived as f = eps Lap^2 u - Lap u.
"""
import logging

import numpy as np
import sympy
from attrs import field, frozen

from hho2d.basis import monomial_powers
from hho2d.errors import ConfigError
from hho2d.local_operators import BoundaryData

logger = logging.getLogger(__name__)

X, Y = sympy.symbols("x y", real=True)


def _lambdify(expr):
    fn = sympy.lambdify((X, Y), expr, modules="numpy")

    def evaluate(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = fn(points[:, 0], points[:, 1])
        # constant expressions come back as scalars
        return np.broadcast_to(np.asarray(out, dtype=float), (len(points),)).copy()

    return evaluate


def _stack(fns):
    def evaluate(points):
        return np.stack([fn(points) for fn in fns], axis=-1)

    return evaluate


def laplacian(expr):
    return sympy.diff(expr, X, 2) + sympy.diff(expr, Y, 2)


@frozen
class ManufacturedCase:
    name: str
    eps: float
    domain: str
    f: object
    bdata: BoundaryData
    u: object | None = None
    grad_u: object | None = None
    hess_u: object | None = None
    lap_u: object | None = None
    expr: object | None = field(default=None, eq=False)

    @property
    def has_exact(self):
        return self.u is not None

    def boundary_data(self):
        return self.bdata

    @classmethod
    def from_expression(cls, name, expr, eps, domain):
        grad = [sympy.diff(expr, X), sympy.diff(expr, Y)]
        hess = [[sympy.diff(g, X), sympy.diff(g, Y)] for g in grad]
        lap = laplacian(expr)
        source = eps * laplacian(lap) - lap
        grad_u = _stack([_lambdify(g) for g in grad])
        rows = [_stack([_lambdify(h) for h in row]) for row in hess]
        hess_u = lambda points: np.stack([r(points) for r in rows], axis=-2)
        u = _lambdify(expr)
        bdata = BoundaryData(
            g_D=u,
            g_N=lambda points, normals: np.einsum("pi,pi->p", grad_u(points), normals),
            dt_gD=lambda points, tangents: np.einsum("pi,pi->p", grad_u(points), tangents),
            grad_gD=grad_u,
        )
        return cls(name, float(eps), domain, _lambdify(source), bdata, u, grad_u, hess_u, _lambdify(lap), expr)


def smooth_square(eps, k=None):
    u = sympy.sin(sympy.pi * X) ** 2 * sympy.sin(sympy.pi * Y) ** 2 + sympy.exp(-(X - 0.5) ** 2 - (Y - 0.5) ** 2)
    return ManufacturedCase.from_expression("smooth-square", u, eps, "unit-square")


def smooth_annulus(eps, k=None):
    r2 = X ** 2 + Y ** 2
    u = (1 + sympy.sin(sympy.pi * (r2 - 1))) * sympy.exp(-r2)
    return ManufacturedCase.from_expression("smooth-annulus", u, eps, "annulus")


def layer_annulus(eps, k=None):
    ten = lambda points: np.full(len(np.atleast_2d(points)), 10.0)
    return ManufacturedCase("layer-annulus", float(eps), "annulus", ten, BoundaryData.homogeneous())


def poly_exact(eps, k=1):
    """A polynomial of degree k+2, reproduced exactly by the scheme."""
    u = (1 + X - sympy.Rational(1, 2) * Y) ** (k + 2) + X * Y
    return ManufacturedCase.from_expression("poly-exact", u, eps, "unit-square")


CASES = {
    "smooth-square": smooth_square,
    "smooth-annulus": smooth_annulus,
    "layer-annulus": layer_annulus,
    "poly-exact": poly_exact,
}


def get_case(name, eps, k=1):
    if name not in CASES:
        raise ConfigError(f"unknown case {name!r}, choose from {sorted(CASES)}")
    if eps < 0:
        raise ConfigError(f"eps must be >= 0, got {eps}")
    return CASES[name](eps, k)


def _sample_points(domain, n, rng):
    if domain == "annulus":
        points = []
        while len(points) < n:
            p = rng.uniform(-0.95, 0.95, size=2)
            if np.hypot(*p) < 0.95 and np.hypot(*(p - 0.25)) > 0.45:
                points.append(p)
        return np.array(points)
    return rng.uniform(0.1, 0.9, size=(n, 2))


def check_source(case, n_points=10, step=1e-3, tol=1e-4, seed=0):
    """
    Compare f with eps Lap^2 u - Lap u where the outer Laplacian is a five-point difference of the exact
    Laplacian. Returns the relative deviation; raises ConfigError above 'tol'.
    """
    if not case.has_exact:
        return 0.0
    rng = np.random.default_rng(seed)
    p = _sample_points(case.domain, n_points, rng)
    lap = case.lap_u
    ex, ey = np.array([step, 0.0]), np.array([0.0, step])
    bilap = (lap(p + ex) + lap(p - ex) + lap(p + ey) + lap(p - ey) - 4.0 * lap(p)) / step ** 2
    expected = case.eps * bilap - lap(p)
    got = case.f(p)
    scale = max(np.abs(got).max(), 1.0)
    deviation = float(np.abs(got - expected).max() / scale)
    if deviation > tol:
        raise ConfigError(f"case {case.name!r}: source term deviates from eps*Lap^2 u - Lap u by {deviation:.2e}")
    return deviation


def polynomial_fields(degree, rng=None, scale=1.0):
    """A random polynomial of total degree 'degree' as (u, grad_u) callables on (n, 2) points."""
    rng = rng if rng is not None else np.random.default_rng(0)
    a, b = np.array(monomial_powers(degree)).T
    coeffs = scale * rng.uniform(-1.0, 1.0, len(a))

    def u(points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (p[:, :1] ** a * p[:, 1:] ** b) @ coeffs

    def grad_u(points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        dx = (a * p[:, :1] ** np.maximum(a - 1, 0) * p[:, 1:] ** b) @ coeffs
        dy = (b * p[:, :1] ** a * p[:, 1:] ** np.maximum(b - 1, 0)) @ coeffs
        return np.column_stack([dx, dy])

    return u, grad_u
