"""
Post-processing: reconstructed fields, error norms, convergence rates, the local stability bounds
and the boundary-layer cell flagging.
"""
import logging
import math
from collections import deque

import numpy as np
import pandas as pd
import scipy.linalg as sla
from attrs import define, field, frozen
from scipy.stats import linregress

from hho2d.assembly import build_local
from hho2d.basis import CellBasis
from hho2d.configuration import HHOConfig
from hho2d.errors import ConfigError
from hho2d.local_operators import build_lifting, energy_seminorm_matrix
from hho2d.mesh import build_rect_mesh
from hho2d.quadrature import cell_quadrature

logger = logging.getLogger(__name__)

RATIO_SKIP = 1e-14
FLAT_HESSIAN = 1e-14


@frozen
class CellField:
    """A polynomial on one cell: coefficients in a basis centered at the cell centroid."""
    cell_id: int
    basis: CellBasis
    coeffs: np.ndarray = field(eq=False)

    def __call__(self, points, max_deriv=0):
        return self.basis(self.coeffs, points, max_deriv)


def _locals(mesh, sol):
    if sol.locals is not None:
        return sol.locals
    cache = {} if sol.config.cache_local else None
    return tuple(build_local(mesh, cell, sol.config, cache) for cell in mesh.cells)


def reconstruct(mesh, sol, case=None):
    """R_K(u_K) = R_K^i(u_K) + L_K(u) on every cell (lifting skipped when no case is given)."""
    bdata = case.boundary_data() if case is not None else None
    fields = []
    for cell, (elem, ops) in zip(mesh.cells, _locals(mesh, sol)):
        coeffs = ops.R @ sol.local_vector(mesh, cell)
        if bdata is not None and elem.is_boundary:
            coeffs = coeffs + build_lifting(elem, sol.config.eps, bdata, ops)
        fields.append(CellField(cell.id, elem.absolute_basis(), coeffs))
    return fields


def cell_fields(mesh, sol):
    """The cell unknowns u_K as CellFields."""
    return [
        CellField(cell.id, elem.absolute_basis(), sol.cells[cell.id])
        for cell, (elem, _) in zip(mesh.cells, _locals(mesh, sol))
    ]


def _error_rules(mesh, config):
    return [
        cell_quadrature(mesh, cell, config.error_quad_degree, config.n_subedges, config.exact_arcs)
        for cell in mesh.cells
    ]


def _require_exact(case):
    if case is None or not case.has_exact:
        raise ConfigError(f"case {getattr(case, 'name', None)!r} has no exact solution to measure errors against")


def energy_error(mesh, sol, case, fields=None):
    """Relative error in the eps-weighted H1/H2 seminorm of the post-processed field."""
    _require_exact(case)
    eps = sol.config.eps
    fields = fields if fields is not None else reconstruct(mesh, sol, case)
    num = den = 0.0
    for fld, quad in zip(fields, _error_rules(mesh, sol.config)):
        tab = fld(quad.points, 2 if eps else 1)
        g = case.grad_u(quad.points)
        eg = g - tab.grad[:, 0, :]
        num += quad.weights @ (eg ** 2).sum(-1)
        den += quad.weights @ (g ** 2).sum(-1)
        if eps:
            hu = case.hess_u(quad.points)
            eh = hu - tab.hess[:, 0]
            num += eps * quad.weights @ (eh ** 2).sum((-1, -2))
            den += eps * quad.weights @ (hu ** 2).sum((-1, -2))
    return math.sqrt(max(num, 0.0) / den)


def l2_error(mesh, sol, case, field_name=None, fields=None):
    """Relative L2 error of the reconstruction (default) or of the cell unknowns."""
    _require_exact(case)
    field_name = field_name or sol.config.l2_field
    if fields is None:
        fields = reconstruct(mesh, sol, case) if field_name == "reconstruction" else cell_fields(mesh, sol)
    num = den = 0.0
    for fld, quad in zip(fields, _error_rules(mesh, sol.config)):
        u = case.u(quad.points)
        num += quad.weights @ (u - fld(quad.points).value[:, 0]) ** 2
        den += quad.weights @ u ** 2
    return math.sqrt(max(num, 0.0) / den)


def discrete_energy_distance(mesh, sol, other):
    """Distance of two discrete solutions in the summed local energy seminorms, relative to 'sol'."""
    eps = sol.config.eps
    num = den = 0.0
    for cell, (elem, _) in zip(mesh.cells, _locals(mesh, sol)):
        N = energy_seminorm_matrix(elem, eps)
        v = sol.local_vector(mesh, cell)
        d = v - other.local_vector(mesh, cell)
        num += d @ N @ d
        den += v @ N @ v
    if not den > 0:
        raise ConfigError("reference solution has zero discrete energy")
    return math.sqrt(max(num, 0.0) / den)


@define
class ErrorReport:
    rows: list = field(factory=list)

    def add(self, **row):
        self.rows.append(row)
        return row

    def to_frame(self):
        return pd.DataFrame(self.rows)

    def check_refinement(self):
        """h strictly decreasing within every (k, eps) family."""
        frame = self.to_frame()
        for _, group in frame.groupby(["k", "eps"], sort=False):
            if not np.all(np.diff(group["h"].to_numpy()) < 0):
                return False
        return True


def observed_rate(e_coarse, e_fine, h_coarse, h_fine):
    values = (e_coarse, e_fine, h_coarse, h_fine)
    if not all(np.isfinite(v) and v > 0 for v in values) or h_coarse == h_fine:
        return float("nan")
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def convergence_rates(report, columns=("energy_err", "l2_err")):
    """Rates between consecutive meshes of each (k, eps) family; NaN where undefined."""
    frame = report.to_frame() if isinstance(report, ErrorReport) else pd.DataFrame(report)
    if len(frame) < 2:
        raise ConfigError("convergence rates need at least two meshes")
    out = []
    for _, group in frame.groupby(["k", "eps"], sort=False):
        group = group.sort_values("h", ascending=False)
        prev = None
        for _, row in group.iterrows():
            rec = {"cells": row["cells"], "h": row["h"], "k": row["k"], "eps": row["eps"]}
            for col in columns:
                if col not in row:
                    continue
                rec[f"{col}_rate"] = (
                    float("nan") if prev is None
                    else observed_rate(prev[col], row[col], prev["h"], row["h"])
                )
            out.append(rec)
            prev = row
    return pd.DataFrame(out)


def _complement_eigs(A, N, rel_tol=1e-10):
    """Generalized eigenvalues of A v = lambda N v on the complement of ker N."""
    evals, evecs = sla.eigh(N)
    keep = evals > rel_tol * evals.max()
    Q = evecs[:, keep]
    return sla.eigh(Q.T @ A @ Q, Q.T @ N @ Q, eigvals_only=True)


def stability_ratio_bounds(mesh, config, n_samples=100, seed=0, exact=False, cells=None):
    """
    Extremes over cells of (|grad R(v)|^2_eps + S^i(v,v) + S^b(v,v)) / |v|^2 for random local
    vectors (or exactly, from the generalized eigenproblem restricted away from the seminorm kernel).
    """
    rng = np.random.default_rng(seed)
    cache = {} if config.cache_local else None
    lo, hi = math.inf, -math.inf
    for cell in (mesh.cells if cells is None else [mesh.cells[c] for c in cells]):
        elem, ops = build_local(mesh, cell, config, cache)
        N = energy_seminorm_matrix(elem, config.eps)
        if exact:
            ev = _complement_eigs(ops.A, N)
            lo, hi = min(lo, ev[0]), max(hi, ev[-1])
            continue
        v = rng.standard_normal((n_samples, elem.layout.size))
        num = np.einsum("si,ij,sj->s", v, ops.A, v)
        den = np.einsum("si,ij,sj->s", v, N, v)
        ok = np.sqrt(np.clip(den, 0, None)) > RATIO_SKIP
        if ok.any():
            r = num[ok] / den[ok]
            lo, hi = min(lo, r.min()), max(hi, r.max())
    return float(lo), float(hi)


def stability_sweep(k=1, sizes=(4, 8, 16), eps_list=(1.0, 1e-4, 0.0), hp_scaling=False):
    """
    Exact local constants (lower, upper) on the corner cell and on a central cell of n x n squares,
    for every (n, eps). Cells of one kind are similar, only eps / h^2 changes along a kind.
    """
    if min(sizes) < 3:
        raise ConfigError(f"a central cell needs at least 3 x 3 squares, got sizes {sizes}")
    rows = []
    for n in sizes:
        mesh = build_rect_mesh(n)
        for kind, cell_id in (("corner", 0), ("interior", (n // 2) * (n + 1))):
            for eps in eps_list:
                config = HHOConfig(k=k, eps=eps, hp_scaling=hp_scaling)
                lo, hi = stability_ratio_bounds(mesh, config, exact=True, cells=[cell_id])
                rows.append({"cell": kind, "n": n, "h": mesh.cells[cell_id].h, "eps": eps, "lower": lo, "upper": hi})
    return pd.DataFrame(rows)


def stability_spreads(frame):
    """Largest max/min ratio of each constant within one kind of cell, across h at fixed eps and across eps at fixed h."""
    ratio = lambda s: s.max() / s.min()
    out = {}
    for col in ("lower", "upper"):
        out[f"{col}_over_h"] = float(frame.groupby(["cell", "eps"])[col].agg(ratio).max())
        out[f"{col}_over_eps"] = float(frame.groupby(["cell", "n"])[col].agg(ratio).max())
    return out


@frozen
class LayerFlagReport:
    flagged: tuple
    theta: float = field()
    max_hessian: float
    flagged_area: float
    cell_values: np.ndarray = field(eq=False)

    @theta.validator
    def _theta_range(self, attribute, value):
        if not 0 < value < 1:
            raise ConfigError(f"theta must lie in (0, 1), got {value}")


def vertex_hessian_norms(mesh, fields):
    """Mean over cell vertices of the Frobenius norm of the Hessian of each field."""
    values = np.zeros(len(fields))
    for i, fld in enumerate(fields):
        pts = mesh.vertices[list(mesh.cells[fld.cell_id].vertices)]
        hess = fld(pts, 2).hess[:, 0]
        values[i] = np.sqrt((hess ** 2).sum((-1, -2))).mean()
    return values


def flag_boundary_layer(mesh, sol, case=None, theta=0.3, fields=None):
    """Cells whose Hessian estimate is at least theta times the largest one."""
    if not 0 < theta < 1:
        raise ConfigError(f"theta must lie in (0, 1), got {theta}")
    fields = fields if fields is not None else reconstruct(mesh, sol, case)
    values = vertex_hessian_norms(mesh, fields)
    top = float(values.max()) if len(values) else 0.0
    if top <= FLAT_HESSIAN:
        flagged = ()
    else:
        flagged = tuple(int(i) for i in np.flatnonzero(values >= theta * top))
    area = float(sum(mesh.cells[i].area for i in flagged))
    return LayerFlagReport(flagged, theta, top, area, values)


def hessian_scaling_fit(eps_list, max_hessians):
    """Slope of log(max Hessian) against log(eps)."""
    fit = linregress(np.log(np.asarray(eps_list, dtype=float)), np.log(np.asarray(max_hessians, dtype=float)))
    return float(fit.slope)


def layer_region_touches_boundary(mesh, report):
    """Every flagged cell touches the boundary or reaches it through flagged neighbours."""
    flagged = set(report.flagged)
    queue = deque(c for c in flagged if mesh.cells[c].is_boundary)
    reached = set(queue)
    while queue:
        c = queue.popleft()
        for nb in mesh.cell_neighbours(c):
            if nb in flagged and nb not in reached:
                reached.add(nb)
                queue.append(nb)
    return reached == flagged


def cell_field_summary(mesh, fields):
    """Value, gradient norm and Hessian Frobenius norm of each field at its cell centroid."""
    rows = []
    for fld in fields:
        c = mesh.cells[fld.cell_id].centroid.xy
        tab = fld(c[None, :], 2)
        rows.append({
            "cell": fld.cell_id,
            "x": c[0],
            "y": c[1],
            "value": float(tab.value[0, 0]),
            "grad_norm": float(np.linalg.norm(tab.grad[0, 0])),
            "hessian_norm": float(np.linalg.norm(tab.hess[0, 0])),
        })
    return pd.DataFrame(rows)
