"""Polyhedral meshes with curved faces.

A mesh stores vertices, faces and cells. Every face carries a chart
(:mod:`curvem.face_maps`) together with the preimages of its vertices in
parameter space. Cells reference faces with a sign that turns the chart's
canonical normal into the outward one. By convention the canonical normal
of a face points out of the lowest-numbered adjacent cell.

Generators cover the three example families:

* :func:`gen_curved_top_cube`, a hexahedral grid of the box whose top is the
  graph ``z = 1 - a sin(pi x)``, with all horizontal layers graded toward
  that surface;
* :func:`gen_extruded_annulus`, quadrilateral or triangular grids of the
  half annulus ``R1 <= r <= R2, y >= 0`` extruded in ``z``;
* :func:`gen_cornerpoint`, hexahedral corner-point grids with vertical
  pillars and bilinear top and bottom faces.

:func:`flatten` produces the straight-faced twin of a mesh.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import face_maps as fm
from .quadrature import CellGeometry, cell_geometry, check_simple, face_rule, volume_rule_raw

ESSENTIAL = "essential"
NATURAL = "natural"
INTERIOR = "interior"

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
UNIT_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

FAMILIES = ("curved_top_cube", "extruded_annulus_quad", "extruded_annulus_tria", "cornerpoint_layers")


class MeshError(ValueError):
    """Raised for invalid meshes or generator arguments."""


class Face:
    """A mesh face.

    Parameters
    ----------
    loop : sequence of int
        Vertex ids in the order of ``param``.
    map : FaceMap
        Chart describing the face geometry.
    param : (n, 2) array
        Parameter points whose images are the loop vertices.
    true_map : FaceMap, optional
        Exact chart of the surface this face approximates. Set on the
        straight-faced twin so boundary data can be sampled on the true
        surface at the same parameter points.
    """

    def __init__(self, loop, map, param, true_map=None):
        self.loop = tuple(int(i) for i in loop)
        self.rule_cache: dict = {}
        self.map = map
        self.param = np.asarray(param, dtype=float).reshape(-1, 2)
        self.true_map = true_map
        if len(self.param) != len(self.loop):
            raise MeshError("face loop and parameter polygon differ in length")

    @property
    def map(self):
        return self._map

    @map.setter
    def map(self, value) -> None:
        # cached rules carry the chart's normals
        self._map = value
        self.rule_cache.clear()

    @property
    def data_map(self):
        """Chart on which boundary data are sampled."""
        return self.true_map if self.true_map is not None else self.map

    @property
    def curved(self) -> bool:
        return not self.map.is_planar

    def __repr__(self) -> str:
        return f"Face(loop={self.loop}, kind={self.map.kind})"


@dataclass
class Cell:
    faces: list
    material: int = 0
    geometry: CellGeometry | None = field(default=None, repr=False)

    @property
    def volume(self) -> float:
        return self.geometry.volume

    @property
    def barycenter(self) -> np.ndarray:
        return self.geometry.barycenter

    @property
    def diameter(self) -> float:
        return self.geometry.diameter


class PolyMesh:
    """Immutable-by-convention polyhedral mesh."""

    def __init__(self, vertices, faces, cells, tags=None, name: str = "mesh"):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        self.faces: list[Face] = list(faces)
        self.cells: list[Cell] = list(cells)
        self.name = name
        self._face_cells = None
        self.boundary_tags = {}
        tags = tags or {}
        for i in range(len(self.faces)):
            self.boundary_tags[i] = INTERIOR
        for kind in (ESSENTIAL, NATURAL):
            for i in tags.get(kind, ()):
                self.boundary_tags[int(i)] = kind

    # ------------------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_cells(self) -> list[list[tuple[int, int]]]:
        """For every face, the ``(cell, sign)`` pairs referencing it."""
        if self._face_cells is None:
            fc = [[] for _ in self.faces]
            for c, cell in enumerate(self.cells):
                for f, s in cell.faces:
                    if not 0 <= f < len(self.faces):
                        raise MeshError(f"cell {c} references missing face {f}")
                    fc[f].append((c, s))
            self._face_cells = fc
        return self._face_cells

    def boundary_faces(self) -> list[int]:
        return [f for f, cs in enumerate(self.face_cells()) if len(cs) == 1]

    def tagged(self, kind: str) -> list[int]:
        return [f for f, t in self.boundary_tags.items() if t == kind]

    def cell_faces(self, c: int) -> list[tuple[Face, int]]:
        return [(self.faces[f], s) for f, s in self.cells[c].faces]

    def cell_vertex_ids(self, c: int) -> list[int]:
        ids = set()
        for f, _ in self.cells[c].faces:
            ids.update(self.faces[f].loop)
        return sorted(ids)

    def geometry(self, c: int) -> CellGeometry:
        cell = self.cells[c]
        if cell.geometry is None:
            cell.geometry = cell_geometry(self.cell_faces(c), self.vertices[self.cell_vertex_ids(c)])
        return cell.geometry

    def compute_geometry(self) -> None:
        for c in range(self.n_cells):
            self.geometry(c)

    # ------------------------------------------------------------------
    def check(self, degree: int = 8) -> None:
        """Verify the structural and geometric invariants; raise on failure."""
        fc = self.face_cells()
        for f, cs in enumerate(fc):
            if len(cs) == 0 or len(cs) > 2:
                raise MeshError(f"face {f} is referenced by {len(cs)} cells")
            if len(cs) == 2 and cs[0][1] != -cs[1][1]:
                raise MeshError(f"inconsistent orientation on interior face {f}")
            tag = self.boundary_tags.get(f, INTERIOR)
            if len(cs) == 2 and tag != INTERIOR:
                raise MeshError(f"interior face {f} is tagged {tag}")
            if len(cs) == 1 and tag == INTERIOR:
                raise MeshError(f"boundary face {f} carries no boundary tag")
        for f, face in enumerate(self.faces):
            check_simple(face.param)
            X = face.map.eval(face.param[:, 0], face.param[:, 1])
            V = self.vertices[list(face.loop)]
            scale = max(1.0, float(np.abs(V).max()))
            if np.abs(X - V).max() > 1e-10 * scale:
                raise MeshError(f"face {f}: chart does not interpolate its vertices")
            if face.map.kind == "affine" and len(face.loop) > 3:
                n = np.cross(face.map.du, face.map.dv)
                n /= np.linalg.norm(n)
                if np.abs((V - V[0]) @ n).max() > 1e-12 * scale:
                    raise MeshError(f"face {f}: affine face is not planar")
        for c, cell in enumerate(self.cells):
            edges: dict = {}
            for f, _ in cell.faces:
                loop = self.faces[f].loop
                for a, b in zip(loop, loop[1:] + loop[:1]):
                    key = (min(a, b), max(a, b))
                    edges[key] = edges.get(key, 0) + 1
            bad = [e for e, n in edges.items() if n != 2]
            if bad:
                raise MeshError(f"cell {c} is not closed (edge {bad[0]})")
            geo = self.geometry(c)
            vol = float(volume_rule_raw(self.cell_faces(c), degree - 1, drop_vertical=True).weights.sum())
            flux = 0.0
            for face, s in self.cell_faces(c):
                r = face_rule(face, degree)
                flux += s * float(np.sum(r.weights * np.einsum("ij,ij->i", r.normals, r.physical_points - geo.barycenter)))
            if not flux > 0 or abs(flux - 3 * vol) > 1e-9 * 3 * vol:
                raise MeshError(f"cell {c}: normals are not outward (flux {flux:.6e}, 3|P| {3 * vol:.6e})")


def mesh_size(mesh: PolyMesh) -> float:
    """Mean cell diameter."""
    if mesh.n_cells == 0:
        raise MeshError("empty mesh")
    return float(np.mean([mesh.geometry(c).diameter for c in range(mesh.n_cells)]))


# ----------------------------------------------------------------------
# construction helpers
# ----------------------------------------------------------------------


class _Builder:
    """Collects vertices, shared faces and cells, then orients the faces."""

    def __init__(self):
        self.vertices: list = []
        self.vid: dict = {}
        self.faces: list[Face] = []
        self.fid: dict = {}
        self.cells: list[list[int]] = []
        self.materials: list[int] = []

    def vertex(self, key, x) -> int:
        i = self.vid.get(key)
        if i is None:
            i = len(self.vertices)
            self.vid[key] = i
            self.vertices.append(np.asarray(x, dtype=float))
        return i

    def face(self, key, make) -> int:
        i = self.fid.get(key)
        if i is None:
            loop, fmap, param = make()
            i = len(self.faces)
            self.fid[key] = i
            self.faces.append(Face(loop, fmap, param))
        return i

    def cell(self, face_ids, material: int = 0) -> None:
        self.cells.append(list(face_ids))
        self.materials.append(int(material))

    def build(self, tag_fn, name: str) -> PolyMesh:
        V = np.array(self.vertices)
        faces = self.faces
        cells = [_orient_cell(faces, fids) for fids in self.cells]
        faces, cells = _canonical_orientation(faces, cells)
        mesh_cells = [Cell(refs, m) for refs, m in zip(cells, self.materials)]
        counts = np.zeros(len(faces), dtype=int)
        for refs in cells:
            for f, _ in refs:
                counts[f] += 1
        tags = {ESSENTIAL: [], NATURAL: []}
        for f in np.flatnonzero(counts == 1):
            tags[tag_fn(faces[f], V)].append(int(f))
        return PolyMesh(V, faces, mesh_cells, tags, name=name)


def _loop_orientation(face: Face) -> int:
    """+1 if the chart normal follows the loop by the right-hand rule."""
    area = 0.5 * np.sum(face.param[:, 0] * np.roll(face.param[:, 1], -1) - np.roll(face.param[:, 0], -1) * face.param[:, 1])
    return face.map.orientation * (1 if area > 0 else -1)


def _orient_cell(faces, fids) -> list[tuple[int, int]]:
    """Signs making every face normal of a closed cell point outward.

    Adjacent faces of a consistently oriented surface traverse their common
    edge in opposite directions; the global sign follows from the enclosed
    volume being positive.
    """
    edge_faces: dict = {}
    for f in fids:
        loop = faces[f].loop
        for a, b in zip(loop, loop[1:] + loop[:1]):
            edge_faces.setdefault((min(a, b), max(a, b)), []).append((f, (a, b)))
    direction = {fids[0]: 1}
    stack = [fids[0]]
    while stack:
        f = stack.pop()
        loop = faces[f].loop
        for a, b in zip(loop, loop[1:] + loop[:1]):
            for g, (ga, gb) in edge_faces[(min(a, b), max(a, b))]:
                if g == f:
                    continue
                want = -direction[f] if (ga, gb) == (a, b) else direction[f]
                if g not in direction:
                    direction[g] = want
                    stack.append(g)
                elif direction[g] != want:
                    raise MeshError("cell surface is not orientable")
    if len(direction) != len(fids):
        raise MeshError("cell surface is not connected")
    signs = {f: direction[f] * _loop_orientation(faces[f]) for f in fids}
    vol = 0.0
    for f in fids:
        r = face_rule(faces[f], 1)
        vol += signs[f] * float(np.sum(r.weights * r.normals[:, 2] * r.physical_points[:, 2]))
    if vol < 0:
        signs = {f: -s for f, s in signs.items()}
    return [(f, signs[f]) for f in fids]


def _canonical_orientation(faces, cells):
    """Flip charts so each face's normal points out of its first cell."""
    first = {}
    for c, refs in enumerate(cells):
        for f, s in refs:
            first.setdefault(f, s)
    flip = {f for f, s in first.items() if s < 0}
    for f in flip:
        faces[f].map = faces[f].map.flipped()
    cells = [[(f, -s if f in flip else s) for f, s in refs] for refs in cells]
    return faces, cells


# ----------------------------------------------------------------------
# curved-top cube
# ----------------------------------------------------------------------


def gen_curved_top_cube(n: int, amplitude: float = 0.1) -> PolyMesh:
    """``n x n x n`` hexahedra of the box under ``z = 1 - a sin(pi x)``.

    The reference grid on ``[0, 1]^3`` is pushed through
    ``(xi, eta, zeta) -> (xi, eta, zeta (1 - a sin(pi xi)))``. Faces with
    constant ``x`` and the bottom are affine; the others use the matching
    graph chart. All boundary faces are tagged essential.
    """
    if n < 1:
        raise MeshError("n must be >= 1")
    if not abs(amplitude) < 1:
        raise MeshError("amplitude must satisfy |a| < 1")
    a = float(amplitude)
    h = 1.0 / n
    b = _Builder()

    def top(xi):
        return 1.0 - a * math.sin(math.pi * xi)

    def X(i, j, l):
        return np.array([i * h, j * h, l * h * top(i * h)])

    def V(i, j, l):
        return b.vertex((i, j, l), X(i, j, l))

    def graph_or_affine(o, du, dv, flat):
        if a == 0.0 or flat:
            P0 = np.array([o[0], o[1], o[2] * top(o[0])])
            du_ = np.array([du[0], du[1], du[2] * top(o[0])])
            dv_ = np.array([dv[0], dv[1], dv[2] * top(o[0])])
            return fm.AffineMap(P0, du_, dv_)
        return fm.GraphSinMap(o, du, dv, amplitude=a)

    def xface(i, j, l):
        def make():
            loop = [V(i, j, l), V(i, j + 1, l), V(i, j + 1, l + 1), V(i, j, l + 1)]
            fmap = graph_or_affine((i * h, j * h, l * h), (0, h, 0), (0, 0, h), True)
            return loop, fmap, UNIT_SQUARE
        return b.face(("x", i, j, l), make)

    def yface(i, j, l):
        def make():
            loop = [V(i, j, l), V(i + 1, j, l), V(i + 1, j, l + 1), V(i, j, l + 1)]
            fmap = graph_or_affine((i * h, j * h, l * h), (h, 0, 0), (0, 0, h), False)
            return loop, fmap, UNIT_SQUARE
        return b.face(("y", i, j, l), make)

    def zface(i, j, l):
        def make():
            loop = [V(i, j, l), V(i + 1, j, l), V(i + 1, j + 1, l), V(i, j + 1, l)]
            fmap = graph_or_affine((i * h, j * h, l * h), (h, 0, 0), (0, h, 0), l == 0)
            return loop, fmap, UNIT_SQUARE
        return b.face(("z", i, j, l), make)

    for l in range(n):
        for j in range(n):
            for i in range(n):
                b.cell(
                    [xface(i, j, l), xface(i + 1, j, l), yface(i, j, l), yface(i, j + 1, l), zface(i, j, l), zface(i, j, l + 1)]
                )
    return b.build(lambda face, V: ESSENTIAL, name=f"curved_top_cube_n{n}")


# ----------------------------------------------------------------------
# extruded half annulus
# ----------------------------------------------------------------------


def gen_extruded_annulus(base: str, n_r: int, n_theta: int, n_z: int, R1: float = 0.2, R2: float = 1.0) -> PolyMesh:
    """Extruded polar grid of ``R1 <= r <= R2, 0 <= theta <= pi, 0 <= z <= 1``.

    ``base="quad"`` gives hexahedra; ``base="tria"`` splits every polar box
    along its ``(r, theta)`` diagonal into two prisms whose shared face is
    an extruded spiral. All charts are exact in polar coordinates. Faces on
    the cylinders ``r = R1`` and ``r = R2`` are tagged natural, the planar
    boundary faces essential.
    """
    if base not in ("quad", "tria"):
        raise MeshError("base must be 'quad' or 'tria'")
    if not 0 < R1 < R2:
        raise MeshError("radii must satisfy 0 < R1 < R2")
    if min(n_r, n_theta, n_z) < 1:
        raise MeshError("subdivision counts must be >= 1")
    dr, dt, dz = (R2 - R1) / n_r, math.pi / n_theta, 1.0 / n_z
    b = _Builder()

    def polar(i, j, l):
        return np.array([R1 + i * dr, j * dt, l * dz])

    def V(i, j, l):
        r, t, z = polar(i, j, l)
        if j == n_theta:
            t = math.pi
        return b.vertex((i, j, l), (r * math.cos(t), r * math.sin(t), z))

    def rface(i, j, l):
        def make():
            loop = [V(i, j, l), V(i, j + 1, l), V(i, j + 1, l + 1), V(i, j, l + 1)]
            return loop, fm.CylinderMap(polar(i, j, l), (0, dt, 0), (0, 0, dz)), UNIT_SQUARE
        return b.face(("r", i, j, l), make)

    def tface(i, j, l):
        def make():
            loop = [V(i, j, l), V(i + 1, j, l), V(i + 1, j, l + 1), V(i, j, l + 1)]
            r, t, z = polar(i, j, l)
            c, s = math.cos(t), math.sin(t)
            fmap = fm.AffineMap((r * c, r * s, z), (dr * c, dr * s, 0), (0, 0, dz))
            return loop, fmap, UNIT_SQUARE
        return b.face(("t", i, j, l), make)

    def zquad(i, j, l):
        def make():
            loop = [V(i, j, l), V(i + 1, j, l), V(i + 1, j + 1, l), V(i, j + 1, l)]
            return loop, fm.CylinderMap(polar(i, j, l), (dr, 0, 0), (0, dt, 0)), UNIT_SQUARE
        return b.face(("zq", i, j, l), make)

    def diag(i, j, l):
        def make():
            loop = [V(i, j, l), V(i + 1, j + 1, l), V(i + 1, j + 1, l + 1), V(i, j, l + 1)]
            return loop, fm.CylinderMap(polar(i, j, l), (dr, dt, 0), (0, 0, dz)), UNIT_SQUARE
        return b.face(("d", i, j, l), make)

    def ztri(i, j, l, lower):
        def make():
            if lower:
                loop = [V(i, j, l), V(i + 1, j, l), V(i + 1, j + 1, l)]
                fmap = fm.CylinderMap(polar(i, j, l), (dr, 0, 0), (dr, dt, 0))
            else:
                loop = [V(i, j, l), V(i + 1, j + 1, l), V(i, j + 1, l)]
                fmap = fm.CylinderMap(polar(i, j, l), (dr, dt, 0), (0, dt, 0))
            return loop, fmap, UNIT_TRIANGLE
        return b.face(("zt", lower, i, j, l), make)

    for l in range(n_z):
        for j in range(n_theta):
            for i in range(n_r):
                if base == "quad":
                    b.cell([rface(i, j, l), rface(i + 1, j, l), tface(i, j, l), tface(i, j + 1, l), zquad(i, j, l), zquad(i, j, l + 1)])
                else:
                    b.cell([tface(i, j, l), rface(i + 1, j, l), diag(i, j, l), ztri(i, j, l, True), ztri(i, j, l + 1, True)])
                    b.cell([diag(i, j, l), tface(i, j + 1, l), rface(i, j, l), ztri(i, j, l, False), ztri(i, j, l + 1, False)])

    def tag(face, verts):
        if face.map.kind == "cylinder" and face.map.du[0] == 0 and face.map.dv[0] == 0:
            return NATURAL
        return ESSENTIAL

    return b.build(tag, name=f"extruded_annulus_{base}_{n_r}x{n_theta}x{n_z}")


# ----------------------------------------------------------------------
# corner-point grids
# ----------------------------------------------------------------------


def gen_cornerpoint(nx: int, ny: int, nz: int, pillar_heights, materials=None, xs=None, ys=None) -> PolyMesh:
    """Corner-point grid with vertical pillars.

    Parameters
    ----------
    pillar_heights : array (nx+1, ny+1, nz+1)
        Height of each corner along its pillar, strictly increasing in the
        last index.
    materials : array (nx, ny, nz), optional
        Material id per cell; defaults to the layer index.
    xs, ys : arrays, optional
        Pillar positions; default to uniform grids of the unit square.

    All faces use bilinear charts through their four corners. The top and
    bottom of the grid are tagged natural, the sides essential.
    """
    Z = np.asarray(pillar_heights, dtype=float)
    if Z.shape != (nx + 1, ny + 1, nz + 1):
        raise MeshError(f"pillar_heights must have shape {(nx + 1, ny + 1, nz + 1)}")
    if np.any(np.diff(Z, axis=2) <= 0):
        raise MeshError("pinched cell unsupported")
    xs = np.linspace(0.0, 1.0, nx + 1) if xs is None else np.asarray(xs, float)
    ys = np.linspace(0.0, 1.0, ny + 1) if ys is None else np.asarray(ys, float)
    if materials is None:
        materials = np.broadcast_to(np.arange(nz), (nx, ny, nz))
    b = _Builder()

    def V(i, j, k):
        return b.vertex((i, j, k), (xs[i], ys[j], Z[i, j, k]))

    def quad(key, ids):
        def make():
            loop = [V(*t) for t in ids]
            return loop, fm.bilinear_through(b.vertices[v] for v in loop), UNIT_SQUARE
        return b.face(key, make)

    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                fx = [quad(("x", ii, j, k), [(ii, j, k), (ii, j + 1, k), (ii, j + 1, k + 1), (ii, j, k + 1)]) for ii in (i, i + 1)]
                fy = [quad(("y", i, jj, k), [(i, jj, k), (i + 1, jj, k), (i + 1, jj, k + 1), (i, jj, k + 1)]) for jj in (j, j + 1)]
                fz = [quad(("z", i, j, kk), [(i, j, kk), (i + 1, j, kk), (i + 1, j + 1, kk), (i, j + 1, kk)]) for kk in (k, k + 1)]
                b.cell(fx + fy + fz, materials[i, j, k])

    def tag(face, verts):
        n, _ = face.map.jacobian_normal(0.5, 0.5)
        return NATURAL if abs(n[2]) > 1e-12 else ESSENTIAL

    return b.build(tag, name=f"cornerpoint_{nx}x{ny}x{nz}")


def layered_heights(interfaces, nx: int, ny: int, per_layer: int):
    """Pillar heights of a layered grid refined inside each layer.

    ``interfaces`` is a list of callables ``z(x, y)`` from bottom to top.
    Within a layer the heights are linear in the layer coordinate, so a
    bilinear interface stays exactly bilinear on every sub-column when the
    coarse columns are split evenly.
    """
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    levels = [np.asarray(f(X, Y), dtype=float) * np.ones_like(X) for f in interfaces]
    n_layers = len(levels) - 1
    Z = np.empty((nx + 1, ny + 1, n_layers * per_layer + 1))
    for L in range(n_layers):
        for s in range(per_layer):
            t = s / per_layer
            Z[:, :, L * per_layer + s] = (1 - t) * levels[L] + t * levels[L + 1]
    Z[:, :, -1] = levels[-1]
    materials = np.repeat(np.arange(n_layers), per_layer)
    materials = np.broadcast_to(materials, (nx, ny, n_layers * per_layer))
    return Z, materials


def piecewise_bilinear(values):
    """Interface ``z(x, y)`` bilinear on each cell of a coarse uniform grid.

    ``values`` holds the heights at the coarse pillars of the unit square.
    """
    vals = np.asarray(values, dtype=float)
    cx, cy = vals.shape[0] - 1, vals.shape[1] - 1

    def z(x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        i = np.clip(np.floor(x * cx).astype(int), 0, cx - 1)
        j = np.clip(np.floor(y * cy).astype(int), 0, cy - 1)
        u = x * cx - i
        v = y * cy - j
        return (
            (1 - u) * (1 - v) * vals[i, j]
            + u * (1 - v) * vals[i + 1, j]
            + u * v * vals[i + 1, j + 1]
            + (1 - u) * v * vals[i, j + 1]
        )

    return z


#: coarse pillar heights of the two curved interfaces on a 2 x 2 column grid
CURVED_INTERFACES = (
    np.array([[0.28, 0.36, 0.30], [0.33, 0.40, 0.31], [0.36, 0.30, 0.27]]),
    np.array([[0.62, 0.70, 0.64], [0.69, 0.63, 0.72], [0.66, 0.73, 0.61]]),
)


def gen_layered_cube(level: int, variant: str = "curved", cells_per_layer: int | None = None) -> PolyMesh:
    """Three-layer corner-point grid of the unit cube.

    ``variant`` is ``"flat"`` for horizontal interfaces at ``z = 1/3, 2/3``
    or ``"curved"`` for the piecewise bilinear interfaces in
    :data:`CURVED_INTERFACES`. Level ``r >= 1`` uses ``2^r`` columns per
    direction and ``2^(r-1)`` cells per layer.
    """
    if level < 0:
        raise MeshError("level must be >= 0")
    n = 2 ** max(level, 1)
    per = cells_per_layer or 2 ** max(level - 1, 0)
    if variant == "flat":
        ifs = [lambda x, y: 0.0 * x, lambda x, y: 0 * x + 1 / 3, lambda x, y: 0 * x + 2 / 3, lambda x, y: 0 * x + 1.0]
    elif variant == "curved":
        ifs = [lambda x, y: 0.0 * x, piecewise_bilinear(CURVED_INTERFACES[0]), piecewise_bilinear(CURVED_INTERFACES[1]), lambda x, y: 0 * x + 1.0]
    else:
        raise MeshError(f"unknown layered variant {variant!r}")
    Z, mats = layered_heights(ifs, n, n, per)
    mesh = gen_cornerpoint(n, n, Z.shape[2] - 1, Z, mats)
    mesh.name = f"cornerpoint_{variant}_r{level}"
    return mesh


# ----------------------------------------------------------------------
# straight-faced twin
# ----------------------------------------------------------------------


def flatten(mesh: PolyMesh) -> PolyMesh:
    """Replace every non-polynomial chart by the bilinear or affine chart
    through the face vertices, keeping the parameter polygon.

    The original chart is kept as ``true_map`` so that boundary data can
    still be sampled on the exact surface.
    """
    faces = []
    for f, face in enumerate(mesh.faces):
        if face.map.kind in ("affine", "bilinear"):
            faces.append(Face(face.loop, face.map, face.param, face.true_map))
            continue
        V = mesh.vertices[list(face.loop)]
        if len(face.loop) == 4 and np.allclose(face.param, UNIT_SQUARE):
            flat = fm.bilinear_through(V)
        elif len(face.loop) == 3 and np.allclose(face.param, UNIT_TRIANGLE):
            flat = fm.affine_through(V)
        else:
            raise MeshError(f"face {f}: cannot flatten a chart over this parameter polygon")
        if flat.kind == "bilinear" and flat.is_planar:
            P0 = V[0]
            if np.allclose(V[0] + V[2], V[1] + V[3]):
                flat = fm.AffineMap(P0, V[1] - P0, V[3] - P0)
        # keep the canonical normal on the same side as the exact chart
        c = face.param.mean(axis=0)
        n_true, _ = face.map.jacobian_normal(c[0], c[1])
        n_flat, _ = flat.jacobian_normal(c[0], c[1])
        if np.dot(n_true, n_flat) < 0:
            flat = flat.flipped()
        faces.append(Face(face.loop, flat, face.param, face.true_map or face.map))
    cells = [Cell(list(c.faces), c.material) for c in mesh.cells]
    tags = {ESSENTIAL: mesh.tagged(ESSENTIAL), NATURAL: mesh.tagged(NATURAL)}
    return PolyMesh(mesh.vertices.copy(), faces, cells, tags, name=mesh.name + "_noGeo")


# ----------------------------------------------------------------------
# families
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class MeshFamily:
    family: str
    level: int
    parameters: dict = field(default_factory=dict)

    def build(self) -> PolyMesh:
        return family_mesh(self.family, self.level, **self.parameters)


#: subdivisions per level; the coarsest level has at least 8 cells
CUBE_SCHEDULE = (2, 3, 4, 6, 8, 12, 16)
ANNULUS_QUAD_SCHEDULE = ((1, 2, 1), (2, 4, 2), (3, 6, 3), (4, 8, 4), (6, 12, 6), (8, 16, 8))
ANNULUS_TRIA_SCHEDULE = ((1, 2, 1), (2, 4, 2), (3, 6, 3), (4, 8, 4), (6, 12, 6), (8, 16, 8))


def family_mesh(family: str, level: int, **params) -> PolyMesh:
    """Mesh of a named family at a refinement level."""
    if level < 0:
        raise MeshError("level must be >= 0")
    if family == "curved_top_cube":
        sched = params.pop("schedule", CUBE_SCHEDULE)
        return gen_curved_top_cube(sched[level], params.pop("amplitude", 0.1))
    if family in ("extruded_annulus_quad", "extruded_annulus_tria"):
        base = family.rsplit("_", 1)[1]
        default = ANNULUS_QUAD_SCHEDULE if base == "quad" else ANNULUS_TRIA_SCHEDULE
        sched = params.pop("schedule", default)
        n_r, n_t, n_z = sched[level]
        return gen_extruded_annulus(base, n_r, n_t, n_z, params.pop("R1", 0.2), params.pop("R2", 1.0))
    if family == "cornerpoint_layers":
        return gen_layered_cube(level, params.pop("variant", "curved"))
    raise MeshError(f"unknown mesh family {family!r}")


# ----------------------------------------------------------------------
# JSON I/O
# ----------------------------------------------------------------------

MESH_SCHEMA = {
    "type": "object",
    "required": ["vertices", "faces", "cells"],
    "properties": {
        "vertices": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        },
        "faces": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["loop", "map"],
                "properties": {
                    "loop": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 3},
                    "map": {
                        "type": "object",
                        "required": ["kind", "params"],
                        "properties": {"kind": {"enum": list(fm.KINDS)}, "params": {"type": "object"}},
                    },
                    "true_map": {"type": "object"},
                    "param": {
                        "type": "array",
                        "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
        "cells": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["faces"],
                "properties": {
                    "faces": {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "prefixItems": [{"type": "integer"}, {"enum": [-1, 1]}],
                            "minItems": 2,
                            "maxItems": 2,
                        },
                        "minItems": 4,
                    },
                    "material": {"type": "integer"},
                },
            },
        },
        "tags": {
            "type": "object",
            "properties": {
                "essential": {"type": "array", "items": {"type": "integer"}},
                "natural": {"type": "array", "items": {"type": "integer"}},
            },
        },
    },
}


def mesh_to_dict(mesh: PolyMesh) -> dict:
    faces = []
    for face in mesh.faces:
        d = {"loop": list(face.loop), "map": face.map.descriptor(), "param": face.param.tolist()}
        if face.true_map is not None:
            d["true_map"] = face.true_map.descriptor()
        faces.append(d)
    return {
        "vertices": mesh.vertices.tolist(),
        "faces": faces,
        "cells": [{"faces": [[int(f), int(s)] for f, s in c.faces], "material": int(c.material)} for c in mesh.cells],
        "tags": {ESSENTIAL: mesh.tagged(ESSENTIAL), NATURAL: mesh.tagged(NATURAL)},
    }


def mesh_from_dict(data: dict, validate: bool = True) -> PolyMesh:
    import jsonschema

    if validate:
        try:
            jsonschema.validate(data, MESH_SCHEMA)
        except jsonschema.ValidationError as exc:
            pointer = "/" + "/".join(str(p) for p in exc.absolute_path)
            raise MeshError(f"schema violation at {pointer}: {exc.message}") from None
    V = np.asarray(data["vertices"], dtype=float).reshape(-1, 3)
    faces = []
    for f, fd in enumerate(data["faces"]):
        loop = fd["loop"]
        if max(loop) >= len(V):
            raise MeshError(f"face {f} references missing vertex {max(loop)}")
        fmap = fm.from_descriptor(fd["map"])
        if "param" in fd:
            param = fd["param"]
        else:
            param = [fmap.invert(V[v]) for v in loop]
        true_map = fm.from_descriptor(fd["true_map"]) if "true_map" in fd else None
        faces.append(Face(loop, fmap, param, true_map))
    cells = []
    for c, cd in enumerate(data["cells"]):
        for f, _ in cd["faces"]:
            if not 0 <= f < len(faces):
                raise MeshError(f"cell {c} references missing face {f}")
        cells.append(Cell([(int(f), int(s)) for f, s in cd["faces"]], int(cd.get("material", 0))))
    mesh = PolyMesh(V, faces, cells, data.get("tags", {}))
    for f, cs in enumerate(mesh.face_cells()):
        if len(cs) == 2 and cs[0][1] != -cs[1][1]:
            raise MeshError(f"inconsistent orientation on interior face {f}")
    return mesh


def write_mesh(mesh: PolyMesh, path) -> None:
    """Write the mesh as JSON; floats round-trip exactly."""
    Path(path).write_text(json.dumps(mesh_to_dict(mesh), indent=1))


def read_mesh(path) -> PolyMesh:
    return mesh_from_dict(json.loads(Path(path).read_text()))
