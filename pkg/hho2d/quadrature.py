"""
Quadrature on faces and on (possibly curved) polygonal cells.

Cells are split into a fan of pieces x(u, t) = apex + u (E(t) - apex) over every boundary
sub-edge E, apex at the centroid, or at the centre of the largest disc in the kernel of the
sub-edge polygon when the centroid does not see the whole boundary. Straight pieces are ordinary
triangles; arc pieces are mapped exactly. A collapsed tensor Gauss rule is used on each piece.
Cells that are not star-shaped at all are ear-clipped.
"""
import logging
import math
from functools import lru_cache

import numpy as np
from attrs import field, frozen
from scipy.optimize import linprog

from hho2d.errors import QuadratureError
from hho2d.mesh import edge_param

logger = logging.getLogger(__name__)

STAR_TOL = 1e-13
KERNEL_TOL = 1e-6


@frozen
class QuadRule:
    points: np.ndarray = field(eq=False)
    weights: np.ndarray = field(eq=False)
    degree: int
    params: np.ndarray | None = field(default=None, eq=False)

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))

    def shifted(self, offset):
        return QuadRule(self.points - offset, self.weights, self.degree, self.params)


@lru_cache(maxsize=None)
def gauss01(n):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(max(int(n), 1))
    return 0.5 * (x + 1.0), 0.5 * w


def _arc_nodes(degree):
    return math.ceil((degree + 6) / 2)


def _straight_nodes(degree):
    return math.ceil((degree + 1) / 2)


def face_quadrature(face, degree):
    """Gauss rule on a face in its stored orientation; weights carry the arc-length measure."""
    if degree < 0:
        raise QuadratureError(f"quadrature degree must be >= 0, got {degree}")
    if face.is_arc:
        t, w = gauss01(_arc_nodes(degree))
        weights = w * face.geometry.radius * abs(face.sweep)
    else:
        t, w = gauss01(_straight_nodes(degree))
        weights = w * face.length
    return QuadRule(face.point_at(t), weights, degree, params=t)


def _edge_pieces(mesh, cell, n_subedges):
    """(face, aligned, t0, t1) for every sub-edge of the cell boundary."""
    pieces = []
    for face, aligned in mesh.cell_edges(cell.id):
        if face.is_arc:
            cuts = np.linspace(0.0, 1.0, n_subedges + 1)
            pieces.extend((face, aligned, a, b) for a, b in zip(cuts[:-1], cuts[1:]))
        else:
            pieces.append((face, aligned, 0.0, 1.0))
    return pieces


def _piece_rule(apex, face, aligned, t0, t1, degree, curved):
    """Collapsed Gauss rule on x(u, s) = apex + u (E(t0 + s (t1 - t0)) - apex)."""
    u, wu = gauss01(math.ceil((degree + 2) / 2))
    if curved:
        s, ws = gauss01(_arc_nodes(degree))
        t = t0 + s * (t1 - t0)
        e, de = edge_param(face, aligned, t)
        de = de * (t1 - t0)
    else:
        s, ws = gauss01(_straight_nodes(degree))
        a = edge_param(face, aligned, np.array([t0]))[0][0]
        b = edge_param(face, aligned, np.array([t1]))[0][0]
        e = a + s[:, None] * (b - a)
        de = np.broadcast_to(b - a, e.shape)
    r = e - apex
    cross = r[:, 0] * de[:, 1] - r[:, 1] * de[:, 0]
    points = apex + u[:, None, None] * r[None, :, :]
    weights = (wu * u)[:, None] * (ws * cross)[None, :]
    return points.reshape(-1, 2), weights.ravel(), cross


def _triangle_rule(a, b, c, degree):
    u, wu = gauss01(math.ceil((degree + 2) / 2))
    s, ws = gauss01(_straight_nodes(degree))
    e = b + s[:, None] * (c - b)
    r = e - a
    cross = (b - a)[0] * (c - b)[1] - (b - a)[1] * (c - b)[0]
    points = a + u[:, None, None] * r[None, :, :]
    weights = (wu * u)[:, None] * (ws * cross)[None, :]
    return points.reshape(-1, 2), weights.ravel()


def _cross3(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _in_closed_triangle(p, a, b, c, tol):
    return _cross3(a, b, p) >= -tol and _cross3(b, c, p) >= -tol and _cross3(c, a, p) >= -tol


def _drop_collinear(polygon, idx, tol):
    """Remove vertices whose two edges are collinear up to 'tol'."""
    changed = True
    while changed and len(idx) > 3:
        changed = False
        for i in range(len(idx)):
            a, b, c = idx[i - 1], idx[i], idx[(i + 1) % len(idx)]
            if abs(_cross3(polygon[a], polygon[b], polygon[c])) <= tol:
                idx.pop(i)
                changed = True
                break
    return idx


def ear_clip(polygon, tol=0.0):
    """
    Triangulate a simple counter-clockwise polygon; returns index triples.
    Vertices that are collinear with their neighbours up to 'tol' are dropped first.
    """
    polygon = np.asarray(polygon, dtype=float)
    idx = _drop_collinear(polygon, list(range(len(polygon))), tol)
    triangles = []
    while len(idx) > 3:
        n = len(idx)
        turns = [_cross3(polygon[idx[i - 1]], polygon[idx[i]], polygon[idx[(i + 1) % n]]) for i in range(n)]
        reflex = [idx[i] for i in range(n) if turns[i] <= tol]
        for i in range(n):
            if turns[i] <= tol:
                continue
            a, b, c = idx[i - 1], idx[i], idx[(i + 1) % n]
            pa, pb, pc = polygon[a], polygon[b], polygon[c]
            blocked = any(
                _in_closed_triangle(polygon[p], pa, pb, pc, tol)
                and not any(np.allclose(polygon[p], q, rtol=0.0, atol=1e-14) for q in (pa, pb, pc))
                for p in reflex if p not in (a, b, c)
            )
            if blocked:
                continue
            triangles.append((a, b, c))
            idx.pop(i)
            break
        else:
            raise QuadratureError("ear clipping found no ear; polygon is not simple")
        idx = _drop_collinear(polygon, idx, tol)
    triangles.append(tuple(idx))
    return triangles


def kernel_point(polygon, tol=0.0):
    """
    Centre of the largest disc inside every edge half-plane of a counter-clockwise polygon,
    or None when that disc has radius <= tol (the polygon is not star-shaped).
    """
    polygon = np.asarray(polygon, dtype=float)
    edges = np.roll(polygon, -1, axis=0) - polygon
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    keep = lengths > 0
    inward = np.column_stack([-edges[keep, 1], edges[keep, 0]]) / lengths[keep, None]
    # inward . x - r >= inward . p_i
    A_ub = np.column_stack([-inward, np.ones(len(inward))])
    b_ub = -np.einsum("ij,ij->i", inward, polygon[keep])
    res = linprog([0.0, 0.0, -1.0], A_ub=A_ub, b_ub=b_ub, bounds=[(None, None), (None, None), (0.0, None)], method="highs")
    if res.status != 0 or not res.x[2] > tol:
        return None
    return res.x[:2]


def _fan_rule(apex, pieces, degree, exact_arcs, tol):
    """Fan of pieces around 'apex', or None when some piece is seen from behind."""
    pts, wts = [], []
    for face, aligned, t0, t1 in pieces:
        curved = face.is_arc and exact_arcs
        p, w, cross = _piece_rule(apex, face, aligned, t0, t1, degree, curved)
        if cross.min() < -tol:
            return None
        pts.append(p)
        wts.append(w)
    return np.vstack(pts), np.concatenate(wts)


def _piece_polygon(pieces):
    return np.array([edge_param(f, al, np.array([t0]))[0][0] for f, al, t0, _ in pieces])


def _fallback_rule(mesh, cell, pieces, degree, exact_arcs):
    polygon = _piece_polygon(pieces)
    triangles = ear_clip(polygon, tol=STAR_TOL * cell.h ** 2)
    pts, wts = [], []
    for a, b, c in triangles:
        p, w = _triangle_rule(polygon[a], polygon[b], polygon[c], degree)
        pts.append(p)
        wts.append(w)
    if exact_arcs:
        # signed circular segments between each arc sub-edge and its chord
        for face, aligned, t0, t1 in pieces:
            if not face.is_arc:
                continue
            a = edge_param(face, aligned, np.array([t0]))[0][0]
            b = edge_param(face, aligned, np.array([t1]))[0][0]
            p, w, _ = _piece_rule(0.5 * (a + b), face, aligned, t0, t1, degree, curved=True)
            pts.append(p)
            wts.append(w)
    logger.debug(f"cell {cell.id}: no star centre found, used {len(triangles)} ear-clipped triangles")
    return np.vstack(pts), np.concatenate(wts)


def cell_quadrature(mesh, cell, degree, n_subedges=30, exact_arcs=True):
    """
    Rule exact to 'degree' on straight-sided cells. Arc faces are split into 'n_subedges' pieces,
    mapped exactly when 'exact_arcs' is set and replaced by their chords otherwise.
    """
    if degree < 0:
        raise QuadratureError(f"quadrature degree must be >= 0, got {degree}")
    if n_subedges < 1:
        raise QuadratureError(f"n_subedges must be >= 1, got {n_subedges}")
    pieces = _edge_pieces(mesh, cell, n_subedges)
    tol = STAR_TOL * cell.h ** 2
    rule = _fan_rule(cell.centroid.xy, pieces, degree, exact_arcs, tol)
    if rule is None:
        apex = kernel_point(_piece_polygon(pieces), tol=KERNEL_TOL * cell.h)
        if apex is not None:
            rule = _fan_rule(apex, pieces, degree, exact_arcs, tol)
            if rule is not None:
                logger.debug(f"cell {cell.id}: centroid fan is not star-shaped, fanned from {apex}")
    if rule is None:
        try:
            rule = _fallback_rule(mesh, cell, pieces, degree, exact_arcs)
        except QuadratureError as e:
            raise QuadratureError(f"cell {cell.id}: {e}") from e
    return QuadRule(*rule, degree)
