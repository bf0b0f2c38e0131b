"""
Polytopal meshes of planar domains with straight interior faces and circular-arc boundary faces.

A mesh is built once (generator, file or snapping pass) and is read-only afterwards.
Face endpoints are stored in the traversal order of the lowest-id owner cell, so that the
right-hand normal of start->end is the outward normal of that owner. That normal is n_F.
"""
import logging
import math
from collections import defaultdict

import numpy as np
from attrs import field, frozen

from hho2d.errors import MeshGeometryError, MeshParseError, MeshTopologyError

logger = logging.getLogger(__name__)

ARC_ON_CIRCLE_TOL = 1e-12
ARC_SAMPLES_FOR_DIAMETER = 8


@frozen
class Point2:
    x: float = field(converter=float)
    y: float = field(converter=float)

    @x.validator
    @y.validator
    def _finite(self, attribute, value):
        if not math.isfinite(value):
            raise MeshGeometryError(f"non-finite coordinate {attribute.name}={value}")

    @property
    def xy(self):
        return np.array([self.x, self.y])


@frozen
class ArcGeometry:
    center: Point2
    radius: float = field(converter=float)

    @radius.validator
    def _positive(self, attribute, value):
        if not value > 0:
            raise MeshGeometryError(f"circle radius must be positive, got {value}")

    def distance(self, p):
        return abs(np.hypot(*(np.asarray(p) - self.center.xy)) - self.radius)

    def project(self, p):
        d = np.asarray(p, dtype=float) - self.center.xy
        return self.center.xy + self.radius * d / np.hypot(*d)


@frozen
class Face:
    """
    'start'/'end' follow the first owner's counter-clockwise traversal.
    For arcs, 'theta0' is the polar angle of 'start' about the circle center and 'sweep' the signed
    angle to 'end' (minor arc, in (-pi, pi]).
    """
    id: int
    vertices: tuple
    start: Point2
    end: Point2
    cells: tuple
    geometry: ArcGeometry | None = None
    theta0: float = 0.0
    sweep: float = 0.0

    @property
    def kind(self):
        return "straight" if self.geometry is None else "arc"

    @property
    def is_arc(self):
        return self.geometry is not None

    @property
    def is_boundary(self):
        return len(self.cells) == 1

    @property
    def is_interior(self):
        return len(self.cells) == 2

    @property
    def radial_sign(self):
        # +1 when n_F points away from the circle center, -1 when it points towards it
        return 1.0 if self.sweep > 0 else -1.0

    @property
    def length(self):
        if self.is_arc:
            return self.geometry.radius * abs(self.sweep)
        return float(np.hypot(*(self.end.xy - self.start.xy)))

    @property
    def midpoint(self):
        if self.is_arc:
            return self.point_at(0.5)
        return 0.5 * (self.start.xy + self.end.xy)

    @property
    def tangent(self):
        """Unit tangent tau_F = n_F rotated by +90 degrees (straight faces)."""
        d = self.end.xy - self.start.xy
        return d / np.hypot(*d)

    @property
    def normal(self):
        """Unit normal n_F (straight faces)."""
        t = self.tangent
        return np.array([t[1], -t[0]])

    def point_at(self, t):
        """Point of the face at parameter t in [0, 1], in the stored orientation."""
        t = np.asarray(t, dtype=float)
        if self.is_arc:
            theta = self.theta0 + t * self.sweep
            c, r = self.geometry.center.xy, self.geometry.radius
            return np.stack([c[0] + r * np.cos(theta), c[1] + r * np.sin(theta)], axis=-1)
        a, b = self.start.xy, self.end.xy
        return a + t[..., None] * (b - a)

    def derivative_at(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_arc:
            theta = self.theta0 + t * self.sweep
            r = self.geometry.radius
            return np.stack([-r * self.sweep * np.sin(theta), r * self.sweep * np.cos(theta)], axis=-1)
        return np.broadcast_to(self.end.xy - self.start.xy, t.shape + (2,)).copy()

    def normal_at(self, points):
        points = np.atleast_2d(points)
        if not self.is_arc:
            return np.broadcast_to(self.normal, points.shape).copy()
        d = points - self.geometry.center.xy
        return self.radial_sign * d / np.hypot(d[:, 0], d[:, 1])[:, None]


@frozen
class Cell:
    """
    'signs' holds s_{K,F} = n_F . n_K per face; 'aligned' tells whether the cell traverses the
    face in its stored orientation.
    """
    id: int
    vertices: tuple
    face_ids: tuple
    signs: tuple
    aligned: tuple
    area: float
    centroid: Point2
    h: float
    is_boundary: bool

    def __len__(self):
        return len(self.face_ids)


@frozen
class Mesh2D:
    vertices: np.ndarray = field(eq=False)
    faces: tuple
    cells: tuple
    geometries: tuple = ()

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def interior_faces(self):
        return [f for f in self.faces if f.is_interior]

    @property
    def boundary_faces(self):
        return [f for f in self.faces if f.is_boundary]

    @property
    def h(self):
        return max(c.h for c in self.cells)

    @property
    def area(self):
        return float(sum(c.area for c in self.cells))

    @property
    def diameter(self):
        v = self.vertices
        return float(np.hypot(*(v.max(axis=0) - v.min(axis=0))))

    def cell_neighbours(self, cell_id):
        out = []
        for fid in self.cells[cell_id].face_ids:
            out.extend(c for c in self.faces[fid].cells if c != cell_id)
        return out

    def cell_edges(self, cell_id):
        """Faces of a cell as (face, aligned) pairs in counter-clockwise traversal order."""
        cell = self.cells[cell_id]
        return [(self.faces[fid], al) for fid, al in zip(cell.face_ids, cell.aligned)]

    def summary(self):
        n_arcs = sum(f.is_arc for f in self.faces)
        return {
            "cells": self.n_cells,
            "faces": self.n_faces,
            "interior_faces": len(self.interior_faces),
            "arc_faces": n_arcs,
            "h": self.h,
            "area": self.area,
        }


def _wrap_angle(a):
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def edge_param(face, aligned, t):
    """Points and derivatives of a face traversed by a cell, t in [0, 1]."""
    t = np.asarray(t, dtype=float)
    if aligned:
        return face.point_at(t), face.derivative_at(t)
    return face.point_at(1.0 - t), -face.derivative_at(1.0 - t)


def _loop_integrals(edges):
    """Area, centroid and boundary samples of a closed loop of (face, aligned) edges via Green's theorem."""
    t, w = np.polynomial.legendre.leggauss(12)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    area = mx = my = 0.0
    samples = []
    for face, aligned in edges:
        p, dp = edge_param(face, aligned, t)
        area += np.sum(w * p[:, 0] * dp[:, 1])
        mx += 0.5 * np.sum(w * p[:, 0] ** 2 * dp[:, 1])
        my -= 0.5 * np.sum(w * p[:, 1] ** 2 * dp[:, 0])
        start, _ = edge_param(face, aligned, np.array([0.0]))
        samples.append(start)
        if face.is_arc:
            s = np.arange(1, ARC_SAMPLES_FOR_DIAMETER + 1) / (ARC_SAMPLES_FOR_DIAMETER + 1)
            samples.append(edge_param(face, aligned, s)[0])
    return area, mx, my, np.vstack(samples)


def _diameter(points):
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def _assemble_mesh(vertices, loops, arcs=None, geometries=()):
    """
    Build faces, orientation signs and cell metrics from vertex coordinates and
    counter-clockwise vertex loops. 'arcs' maps a vertex pair (either direction) to a geometry index.
    """
    vertices = np.asarray(vertices, dtype=float)
    arcs = dict(arcs or {})
    nv = len(vertices)
    if not np.all(np.isfinite(vertices)):
        raise MeshGeometryError("non-finite vertex coordinates")

    used = np.zeros(nv, dtype=bool)
    directed = {}
    owners = defaultdict(list)
    face_order = []
    for cid, loop in enumerate(loops):
        loop = tuple(int(v) for v in loop)
        if len(loop) < 3:
            raise MeshTopologyError(f"cell {cid}: vertex loop has {len(loop)} vertices, cannot close a polygon")
        if len(set(loop)) != len(loop):
            raise MeshTopologyError(f"cell {cid}: vertex loop {loop} is not simple")
        for v in loop:
            if not 0 <= v < nv:
                raise MeshTopologyError(f"cell {cid}: unknown vertex {v}")
        used[list(loop)] = True
        for j, a in enumerate(loop):
            b = loop[(j + 1) % len(loop)]
            if (a, b) in directed:
                raise MeshTopologyError(
                    f"edge {a}->{b} traversed in the same direction by cells {directed[(a, b)]} and {cid}"
                )
            directed[(a, b)] = cid
            key = (min(a, b), max(a, b))
            if key not in owners:
                face_order.append(key)
            owners[key].append((cid, a, b))
            if len(owners[key]) > 2:
                raise MeshTopologyError(f"edge {key} is shared by more than two cells")

    if not used.all():
        raise MeshTopologyError(f"dangling vertices {np.flatnonzero(~used).tolist()}")

    arc_of = {}
    for (a, b), gid in arcs.items():
        key = (min(a, b), max(a, b))
        if key not in owners:
            raise MeshTopologyError(f"arc {a}->{b} is not an edge of any cell")
        if not 0 <= gid < len(geometries):
            raise MeshTopologyError(f"arc {a}->{b} refers to unknown geometry {gid}")
        arc_of[key] = gid

    faces = []
    face_index = {}
    for fid, key in enumerate(face_order):
        own = owners[key]
        first_cell, a, b = own[0]
        cells = tuple(c for c, _, _ in own)
        geometry, theta0, sweep = None, 0.0, 0.0
        if key in arc_of:
            if len(own) != 1:
                raise MeshGeometryError(f"face {fid} ({a}-{b}) is curved but interior; interior faces must be straight")
            geometry = geometries[arc_of[key]]
            c = geometry.center.xy
            for v in (a, b):
                if geometry.distance(vertices[v]) > ARC_ON_CIRCLE_TOL * geometry.radius:
                    raise MeshGeometryError(
                        f"face {fid}: arc endpoint {v} at distance {geometry.distance(vertices[v]):.3e} from its circle"
                    )
            theta0 = math.atan2(vertices[a][1] - c[1], vertices[a][0] - c[0])
            theta1 = math.atan2(vertices[b][1] - c[1], vertices[b][0] - c[0])
            sweep = _wrap_angle(theta1 - theta0)
            if sweep == 0.0:
                raise MeshGeometryError(f"face {fid}: degenerate arc")
        faces.append(Face(
            id=fid,
            vertices=(a, b),
            start=Point2(*vertices[a]),
            end=Point2(*vertices[b]),
            cells=cells,
            geometry=geometry,
            theta0=theta0,
            sweep=sweep,
        ))
        face_index[key] = fid

    cells = []
    for cid, loop in enumerate(loops):
        loop = tuple(int(v) for v in loop)
        face_ids, signs, aligned = [], [], []
        for j, a in enumerate(loop):
            b = loop[(j + 1) % len(loop)]
            face = faces[face_index[(min(a, b), max(a, b))]]
            al = face.vertices == (a, b)
            face_ids.append(face.id)
            aligned.append(al)
            signs.append(1 if face.cells[0] == cid else -1)
        edges = [(faces[f], al) for f, al in zip(face_ids, aligned)]
        area, mx, my, samples = _loop_integrals(edges)
        if not area > 0:
            raise MeshGeometryError(f"cell {cid}: non-positive area {area:.3e} (loop must be counter-clockwise)")
        cells.append(Cell(
            id=cid,
            vertices=loop,
            face_ids=tuple(face_ids),
            signs=tuple(signs),
            aligned=tuple(aligned),
            area=float(area),
            centroid=Point2(mx / area, my / area),
            h=_diameter(samples),
            is_boundary=any(faces[f].is_boundary for f in face_ids),
        ))
    mesh = Mesh2D(vertices=vertices, faces=tuple(faces), cells=tuple(cells), geometries=tuple(geometries))
    logger.debug(f"assembled mesh {mesh.summary()}")
    return mesh


def build_rect_mesh(n):
    """Uniform n x n mesh of the unit square."""
    if n < 1:
        raise MeshTopologyError(f"cells per side must be >= 1, got {n}")
    s = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(s, s)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    vid = lambda i, j: j * (n + 1) + i
    loops = [
        (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
        for j in range(n) for i in range(n)
    ]
    return _assemble_mesh(vertices, loops)


ANNULUS_OUTER = ArcGeometry(Point2(0.0, 0.0), 1.0)
ANNULUS_HOLE = ArcGeometry(Point2(0.25, 0.25), 0.4)


def build_annulus_mesh(n):
    """
    Curved triangles fitting the unit disc minus the disc of radius 0.4 centred at (0.25, 0.25).
    n radial layers and 8n sectors, every quad split in two, 16 n^2 cells; each boundary
    cell carries exactly one arc face.
    """
    if n < 1:
        raise MeshTopologyError(f"number of layers must be >= 1, got {n}")
    m = 8 * n
    c0 = ANNULUS_HOLE.center.xy
    theta = 2 * np.pi * np.arange(m) / m
    rays = np.column_stack([np.cos(theta), np.sin(theta)])
    points = []
    for layer in range(n + 1):
        s = layer / n
        points.append((1 - s) * c0 + ((1 - s) * ANNULUS_HOLE.radius + s) * rays)
    vertices = np.vstack(points)
    vid = lambda l, j: l * m + (j % m)
    loops = []
    for l in range(n):
        for j in range(m):
            loops.append((vid(l, j), vid(l + 1, j), vid(l + 1, j + 1)))
            loops.append((vid(l, j), vid(l + 1, j + 1), vid(l, j + 1)))
    polygonal = _assemble_mesh(vertices, loops)
    return snap_boundary_to_arcs(polygonal, [ANNULUS_OUTER, ANNULUS_HOLE])


def snap_boundary_to_arcs(mesh, geoms, tol=None):
    """
    Project boundary vertices radially onto the circle they lie on and turn every
    boundary chord into an arc of that circle.
    """
    geoms = list(geoms)
    if tol is None:
        tol = 1e-8 * mesh.diameter
    vertices = mesh.vertices.copy()
    owner = {}
    for face in mesh.boundary_faces:
        for v in face.vertices:
            if v in owner:
                continue
            near = [g for g, geom in enumerate(geoms) if geom.distance(mesh.vertices[v]) <= tol]
            if not near:
                raise MeshGeometryError(f"boundary vertex {v} at {mesh.vertices[v]} is not within {tol:.1e} of any circle")
            if len(near) > 1:
                raise MeshGeometryError(f"boundary vertex {v} is within {tol:.1e} of circles {near}")
            owner[v] = near[0]
            vertices[v] = geoms[near[0]].project(mesh.vertices[v])

    arcs = {}
    for face in mesh.boundary_faces:
        a, b = face.vertices
        if owner[a] != owner[b]:
            raise MeshGeometryError(f"boundary face {face.id} joins vertices of two different circles")
        arcs[(a, b)] = owner[a]
    loops = [cell.vertices for cell in mesh.cells]
    snapped = _assemble_mesh(vertices, loops, arcs, tuple(geoms))
    logger.info(f"snapped {len(arcs)} boundary faces onto {len(geoms)} circles")
    return snapped


def face_frame(face, p):
    """(n, t) at points p of the face: n is n_F, t is n rotated by +90 degrees."""
    n = face.normal_at(p)
    t = np.column_stack([-n[:, 1], n[:, 0]])
    if np.ndim(p) == 1:
        return n[0], t[0]
    return n, t


def _clean_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_mesh(text):
    """Parse the whitespace mesh format into (vertices, geometries, loops, arcs)."""
    lines = list(_clean_lines(text))
    pos = 0
    sections = {}

    def read_numbers(lineno, tokens, conv):
        try:
            return [conv(t) for t in tokens]
        except ValueError as e:
            raise MeshParseError(f"malformed entry {' '.join(tokens)!r}", lineno) from e

    while pos < len(lines):
        lineno, tokens = lines[pos]
        name = tokens[0].lower()
        if name not in ("vertices", "geometries", "cells", "arcs") or len(tokens) != 2:
            raise MeshParseError(f"expected a section header, got {' '.join(tokens)!r}", lineno)
        if name in sections:
            raise MeshParseError(f"duplicate section {name!r}", lineno)
        count = read_numbers(lineno, tokens[1:], int)[0]
        if count < 0:
            raise MeshParseError(f"negative count in section {name!r}", lineno)
        body = lines[pos + 1: pos + 1 + count]
        if len(body) < count:
            raise MeshParseError(f"section {name!r} announces {count} entries, found {len(body)}", lineno)
        entries = []
        for ln, tk in body:
            if name == "vertices":
                if len(tk) != 2:
                    raise MeshParseError("vertex lines hold 'x y'", ln)
                entries.append(read_numbers(ln, tk, float))
            elif name == "geometries":
                if len(tk) != 4 or tk[0].lower() != "circle":
                    raise MeshParseError("geometry lines hold 'circle cx cy r'", ln)
                cx, cy, r = read_numbers(ln, tk[1:], float)
                try:
                    entries.append(ArcGeometry(Point2(cx, cy), r))
                except MeshGeometryError as e:
                    raise MeshParseError(str(e), ln) from e
            elif name == "cells":
                m, *ids = read_numbers(ln, tk, int)
                if m != len(ids):
                    raise MeshParseError(f"cell announces {m} vertices, lists {len(ids)}", ln)
                entries.append(tuple(ids))
            else:
                if len(tk) != 3:
                    raise MeshParseError("arc lines hold 'va vb geom_id'", ln)
                entries.append(tuple(read_numbers(ln, tk, int)))
        sections[name] = entries
        pos += 1 + count

    for required in ("vertices", "cells"):
        if required not in sections:
            raise MeshParseError(f"missing section {required!r}")
    vertices = np.array(sections["vertices"], dtype=float).reshape(-1, 2)
    arcs = {}
    for va, vb, gid in sections.get("arcs", []):
        arcs[(va, vb)] = gid
    return vertices, tuple(sections.get("geometries", [])), sections["cells"], arcs


def load_mesh(path):
    with open(path, "r") as f:
        text = f.read()
    vertices, geometries, loops, arcs = parse_mesh(text)
    mesh = _assemble_mesh(vertices, loops, arcs, geometries)
    logger.info(f"loaded {path}: {mesh.summary()}")
    return mesh
