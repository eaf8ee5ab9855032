"""Quadrature on curved faces and curved polyhedra.

Face rules live in the parameter space of the face chart and carry the
mapped physical points alongside, so integrands may mix physical factors
(evaluated at ``gamma(u_i, v_i)``) and parameter-space factors (evaluated
at ``(u_i, v_i)``).

Volume rules come from the divergence theorem applied to the field
``(0, 0, int_{z0}^z f dt)``: every face point spawns a short Gauss rule on
the vertical segment joining it to the reference height ``z0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import nnls
from scipy.special import roots_jacobi, roots_legendre

from .poly import dim_p, monomials

log = logging.getLogger(__name__)

#: polynomial degree of the chart coordinates and extra allowance for the
#: metric factor, per chart kind; trigonometric charts use a heuristic
CHART_DEGREE = {"affine": 1, "bilinear": 2, "cylinder": 1, "graph_sin": 1}
JACOBIAN_ALLOWANCE = {"affine": 0, "bilinear": 1, "cylinder": 12, "graph_sin": 12}


class QuadratureError(ValueError):
    """Raised for inputs on which no rule can be built."""


# ----------------------------------------------------------------------
# reference rules
# ----------------------------------------------------------------------


@lru_cache(maxsize=None)
def gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    """``m``-point Gauss-Legendre rule on ``[0, 1]``."""
    if m < 1:
        raise ValueError("rule needs at least one point")
    x, w = roots_legendre(m)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def square_rule(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule with ``m x m`` points on the unit square."""
    x, w = gauss_legendre(m)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the triangle ``(0,0), (1,0), (0,1)``.

    Exact for polynomials of total degree ``degree``.
    """
    n = max(1, math.ceil((degree + 1) / 2))
    s, ws = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (s + 1.0)
    ws = ws / 4.0  # (1 - s) weight on [0, 1]: factor 1/2 for ds, 1/2 for (1-s)
    t, wt = gauss_legendre(n)
    S, T = np.meshgrid(s, t, indexing="ij")
    pts = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
    return pts, np.outer(ws, wt).ravel()


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def polygon_area(poly) -> float:
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def check_simple(poly) -> None:
    """Raise if the polygon self-intersects or has no area."""
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    if n < 3:
        raise QuadratureError("parameter polygon needs at least 3 vertices")
    scale = float(np.ptp(poly, axis=0).max())
    if abs(polygon_area(poly)) <= 1e-14 * max(scale, 1e-300) ** 2:
        raise QuadratureError("parameter polygon is degenerate")
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                raise QuadratureError("parameter polygon is not simple")


def _is_parallelogram(q) -> bool:
    return bool(np.allclose(q[0] + q[2], q[1] + q[3], rtol=0.0, atol=1e-14 * max(1.0, float(np.abs(q).max()))))


def polygon_rule(poly, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on a simple parameter polygon, exact for total degree ``degree``.

    Triangles use the collapsed rule, quadrilaterals a tensor rule through
    their bilinear map, and larger polygons a fan from the vertex centroid.
    """
    poly = np.asarray(poly, dtype=float)
    check_simple(poly)
    n = len(poly)
    if n == 3:
        ref, w = triangle_rule(degree)
        e1, e2 = poly[1] - poly[0], poly[2] - poly[0]
        det = abs(e1[0] * e2[1] - e1[1] * e2[0])
        return poly[0] + ref[:, :1] * e1 + ref[:, 1:] * e2, w * det
    if n == 4:
        par = _is_parallelogram(poly)
        m = math.ceil((degree + 1) / 2) if par else math.ceil((degree + 2) / 2)
        ref, w = square_rule(max(m, 1))
        s, t = ref[:, :1], ref[:, 1:]
        A, B, C, D = poly
        pts = (1 - s) * (1 - t) * A + s * (1 - t) * B + s * t * C + (1 - s) * t * D
        ds = (1 - t) * (B - A) + t * (C - D)
        dt = (1 - s) * (D - A) + s * (C - B)
        det = np.abs(ds[:, 0] * dt[:, 1] - ds[:, 1] * dt[:, 0])
        return pts, w * det
    c = poly.mean(axis=0)
    pts, wts = [], []
    for i in range(n):
        p, q = polygon_rule([c, poly[i], poly[(i + 1) % n]], degree)
        pts.append(p)
        wts.append(q)
    return np.vstack(pts), np.concatenate(wts)


# ----------------------------------------------------------------------
# face rules
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceRule:
    """Dual point lists on a face.

    ``normals`` are the chart's canonical unit normals; a cell seeing the
    face with sign ``-1`` flips them.
    """

    param_points: np.ndarray
    param_weights: np.ndarray
    physical_points: np.ndarray
    surface_factors: np.ndarray
    normals: np.ndarray
    degree: int

    @property
    def weights(self) -> np.ndarray:
        """Physical weights ``omega_i J_i``."""
        return self.param_weights * self.surface_factors

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return len(self.param_weights)


def parameter_degree(kind: str, degree: int, param_degree: int = 0) -> int:
    """Parameter-space degree needed for a physical integrand of ``degree``."""
    return degree * CHART_DEGREE[kind] + param_degree + JACOBIAN_ALLOWANCE[kind]


def surface_rule(fmap, param_polygon, degree: int, param_degree: int = 0) -> SurfaceRule:
    """Rule for ``int_F f(x) g(u, v) dF`` with ``f`` of physical ``degree``."""
    D = parameter_degree(fmap.kind, degree, param_degree)
    uv, w = polygon_rule(param_polygon, D)
    x = fmap.eval(uv[:, 0], uv[:, 1])
    n, J = fmap.jacobian_normal(uv[:, 0], uv[:, 1])
    return SurfaceRule(uv, w, x, J, n, degree)


def face_rule(face, degree: int, param_degree: int = 0) -> SurfaceRule:
    """Cached :func:`surface_rule` for a mesh face on its geometric chart."""
    key = (degree, param_degree)
    cache = face.rule_cache
    rule = cache.get(key)
    if rule is None:
        rule = surface_rule(face.map, face.param, degree, param_degree)
        cache[key] = rule
    return rule


def integrate_face(rule: SurfaceRule, f_physical=None, g_param=None) -> float:
    """``sum_i f(x_i) g(u_i, v_i) J_i omega_i``; either factor may be omitted."""
    vals = rule.weights.copy()
    if f_physical is not None:
        vals = vals * np.asarray(f_physical(rule.physical_points))
    if g_param is not None:
        vals = vals * np.asarray(g_param(rule.param_points))
    return float(vals.sum())


# ----------------------------------------------------------------------
# regions with curved boundaries
# ----------------------------------------------------------------------


def _gauss_from_discrete(x: np.ndarray, w: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n``-point Gauss rule of the discrete measure ``sum w_i delta(x_i)``
    via the Stieltjes procedure and the Golub-Welsch eigenproblem."""
    a = np.zeros(n)
    b = np.zeros(n)
    p_prev = np.zeros_like(x)
    p = np.ones_like(x)
    norm_prev = 1.0
    for j in range(n):
        norm = float(np.dot(w, p * p))
        a[j] = float(np.dot(w, x * p * p)) / norm
        b[j] = norm / norm_prev if j else norm
        p, p_prev = (x - a[j]) * p - (b[j] if j else 0.0) * p_prev, p
        norm_prev = norm
    J = np.diag(a) + np.diag(np.sqrt(b[1:]), 1) + np.diag(np.sqrt(b[1:]), -1)
    nodes, vecs = np.linalg.eigh(J)
    return nodes, b[0] * vecs[0] ** 2


@lru_cache(maxsize=None)
def trig_gauss(n: int, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """``n``-point rule on ``[-omega, omega]`` exact for trigonometric
    polynomials of degree ``n - 1``, ``0 < omega <= pi / 2``.

    The substitution ``theta = 2 arcsin(sin(omega/2) x)`` turns the problem
    into a Gauss rule on ``[-1, 1]`` for the weight
    ``2 sin(omega/2) / sqrt(1 - sin(omega/2)^2 x^2)``.
    """
    if not 0.0 < omega <= math.pi / 2 + 1e-14:
        raise QuadratureError("arc half-angle must lie in (0, pi/2]")
    c = math.sin(omega / 2)
    xg, wg = roots_legendre(max(64, 4 * n))
    wd = wg * 2 * c / np.sqrt(1.0 - (c * xg) ** 2)
    xi, lam = _gauss_from_discrete(xg, wd, n)
    theta = 2.0 * np.arcsin(c * xi)
    # refit the weights to the exact trigonometric moments to remove the
    # eigenvector round-off of the Golub-Welsch step
    j = np.arange(n)
    moments = np.concatenate([np.where(j == 0, 2.0 * omega, 2.0 * np.sin(j * omega) / np.maximum(j, 1)),
                              np.zeros(n - 1)])
    A = np.vstack([np.cos(np.outer(j, theta)), np.sin(np.outer(j[1:], theta))])
    refit = np.linalg.lstsq(A, moments, rcond=None)[0]
    return theta, refit if np.all(refit > 0) else lam


@dataclass(frozen=True)
class Segment:
    """Straight boundary edge from ``a`` to ``b``."""

    a: tuple
    b: tuple

    def boundary_rule(self, degree: int):
        """Points, tangents and weights exact for polynomials of ``degree``."""
        s, w = gauss_legendre(max(1, math.ceil((degree + 1) / 2)))
        a, b = np.asarray(self.a, float), np.asarray(self.b, float)
        return a + np.outer(s, b - a), np.tile(b - a, (len(s), 1)), np.asarray(w)


@dataclass(frozen=True)
class Arc:
    """Circular boundary edge of radius ``radius`` about the origin, from
    angle ``t0`` to ``t1`` (either direction, span at most ``pi``)."""

    radius: float
    t0: float
    t1: float

    def boundary_rule(self, degree: int):
        """Exact for polynomials of ``degree`` in the plane coordinates
        times the tangent, a trigonometric polynomial of ``degree + 1``."""
        mid, half = 0.5 * (self.t0 + self.t1), 0.5 * abs(self.t1 - self.t0)
        th, w = trig_gauss(degree + 2, half)
        th = mid + np.sign(self.t1 - self.t0) * th
        r = self.radius
        x = r * np.column_stack([np.cos(th), np.sin(th)])
        dx = np.sign(self.t1 - self.t0) * r * np.column_stack([-np.sin(th), np.cos(th)])
        return x, dx, w


def green_rule(edges, n: int, base: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Green cubature on a planar region with curved edges.

    ``edges`` traverse the boundary counter-clockwise and provide
    ``boundary_rule(degree)``. With ``G(u, v) = int_base^u g(t, v) dt``
    the integral of ``g`` equals the boundary integral of ``G dv``. The
    inner integral uses ``n`` Gauss points and the boundary rules are
    exact for the resulting degree, so polynomials of degree ``2n - 1``
    integrate exactly; other integrands carry the inner-rule error.
    Weights may be negative.
    """
    t, wt = gauss_legendre(n)
    parts = [e.boundary_rule(2 * n) for e in edges]
    x = np.vstack([p[0] for p in parts])
    dx = np.vstack([p[1] for p in parts])
    w = np.concatenate([p[2] for p in parts])
    if base is None:
        base = float(x[:, 0].mean())
    span = x[:, 0] - base
    pts = np.empty((len(x), n, 2))
    pts[:, :, 0] = base + span[:, None] * t[None, :]
    pts[:, :, 1] = x[:, 1][:, None]
    wts = (w * dx[:, 1] * span)[:, None] * wt[None, :]
    return pts.reshape(-1, 2), wts.ravel()


def sector_face_rule(r0: float, r1: float, t0: float, t1: float, z: float, n: int) -> SurfaceRule:
    """Rule on the flat annular sector ``r0 <= r <= r1``, ``t0 <= theta <= t1``
    at height ``z``, parametrised by Cartesian ``(x, y)``.

    The region has arcs in its boundary, so the rule comes from
    :func:`green_rule` and is exact only in the limit ``n -> inf``.
    """
    c0, s0, c1, s1 = math.cos(t0), math.sin(t0), math.cos(t1), math.sin(t1)
    edges = [
        Segment((r0 * c0, r0 * s0), (r1 * c0, r1 * s0)),
        Arc(r1, t0, t1),
        Segment((r1 * c1, r1 * s1), (r0 * c1, r0 * s1)),
        Arc(r0, t1, t0),
    ]
    uv, w = green_rule(edges, n)
    x = np.column_stack([uv, np.full(len(uv), z)])
    normals = np.tile([0.0, 0.0, 1.0], (len(uv), 1))
    return SurfaceRule(uv, w, x, np.ones(len(uv)), normals, 2 * n - 1)


def half_annulus_integral(
    f, n_r: int, n_theta: int, n_z: int, gauss: int, R1: float = 0.2, R2: float = 1.0
) -> float:
    """Integral of ``f`` over the half annulus with Cartesian-parametrised caps.

    Every cell is an annular sector times a z-interval. Its cylindrical and
    radial faces are vertical, so only the two caps carry weight. The caps
    use ``gauss``-point rules, as does the vertical segment stage.
    """
    rs = np.linspace(R1, R2, n_r + 1)
    ts = np.linspace(0.0, math.pi, n_theta + 1)
    zs = np.linspace(0.0, 1.0, n_z + 1)
    total = 0.0
    for a in range(n_r):
        for b in range(n_theta):
            for c in range(n_z):
                caps = [
                    (sector_face_rule(rs[a], rs[a + 1], ts[b], ts[b + 1], zs[c + 1], gauss), 1),
                    (sector_face_rule(rs[a], rs[a + 1], ts[b], ts[b + 1], zs[c], gauss), -1),
                ]
                rule = volume_rule_from_faces(caps, 2 * gauss - 1, gauss, z0=0.5 * (zs[c] + zs[c + 1]))
                total += integrate(rule, f)
    return total


# ----------------------------------------------------------------------
# volume rules
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class VolumeRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int
    provenance: str = "raw"

    def __len__(self) -> int:
        return len(self.weights)


def volume_rule_raw(
    faces,
    degree: int,
    z0: float | None = None,
    drop_vertical: bool = False,
    segment_points: int | None = None,
) -> VolumeRule:
    """Divergence-theorem rule on a cell bounded by ``faces``.

    ``faces`` is a sequence of ``(face, sign)`` pairs where ``sign`` makes
    the face normal outward. ``z0`` defaults to the barycentre height.
    With ``drop_vertical`` the points of faces with ``n_z = 0`` everywhere,
    which carry zero weight, are left out.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    rules = [(face_rule(face, degree + 1), sign) for face, sign in faces]
    m = segment_points or math.ceil((degree + 2) / 2)
    return volume_rule_from_faces(rules, degree, m, z0, drop_vertical)


def volume_rule_from_faces(
    rules,
    degree: int,
    segment_points: int,
    z0: float | None = None,
    drop_vertical: bool = False,
) -> VolumeRule:
    """Segment stage of the divergence-theorem rule.

    ``rules`` holds ``(SurfaceRule, sign)`` pairs covering the cell
    boundary; every face point spawns a ``segment_points`` Gauss rule on
    the vertical segment down (or up) to ``z0``.
    """
    face_data = []
    nz_max = 0.0
    for rule, sign in rules:
        nz = sign * rule.normals[:, 2]
        nz_max = max(nz_max, float(np.abs(nz).max()))
        face_data.append((rule, nz))
    if nz_max < 1e-8:
        raise QuadratureError("degenerate cell: no face has a vertical normal component")

    if z0 is None:
        vol = sum(float(np.sum(nz * r.weights * r.physical_points[:, 2])) for r, nz in face_data)
        if vol <= 0:
            raise QuadratureError("degenerate cell: non-positive volume")
        mom = sum(float(np.sum(nz * r.weights * r.physical_points[:, 2] ** 2)) for r, nz in face_data)
        z0 = 0.5 * mom / vol

    m = segment_points
    t, wt = gauss_legendre(m)
    pts, wts = [], []
    for rule, nz in face_data:
        if drop_vertical and np.all(np.abs(nz) <= 1e-14):
            continue
        x = rule.physical_points
        dz = x[:, 2] - z0
        base = nz * rule.weights * dz
        P = np.repeat(x[:, None, :], m, axis=1)
        P[:, :, 2] = z0 + dz[:, None] * t[None, :]
        pts.append(P.reshape(-1, 3))
        wts.append((base[:, None] * wt[None, :]).ravel())
    return VolumeRule(np.vstack(pts), np.concatenate(wts), degree, "raw")


def integrate(rule, f) -> float:
    """``sum_i f(p_i) w_i`` for a volume rule (or physical face integral)."""
    if isinstance(rule, SurfaceRule):
        return integrate_face(rule, f)
    return float(np.dot(np.asarray(f(rule.points)), rule.weights))


def compress_rule(rule: VolumeRule, degree: int | None = None, center=None, scale=None) -> VolumeRule:
    """Positive-weight subset of ``rule`` matching its moments up to ``degree``.

    Solves the moment-matching problem with non-negative least squares on a
    scaled-monomial Vandermonde. Falls back to ``rule`` (with a warning) if
    the compressed rule fails the moment check or is too large.
    """
    d = rule.degree if degree is None else degree
    pts = rule.points
    if center is None:
        center = pts.mean(axis=0)
    if scale is None:
        scale = float(np.max(np.linalg.norm(pts - center, axis=1))) or 1.0
    V = monomials((pts - center) / scale, d).T
    b = V @ rule.weights
    try:
        w, _ = nnls(V, b, maxiter=10 * V.shape[1])
    except RuntimeError:
        log.warning("NNLS did not converge; keeping the raw rule")
        return rule
    keep = w > 0
    if not keep.any():
        log.warning("compression produced an empty rule; keeping the raw rule")
        return rule
    residual = float(np.linalg.norm(V[:, keep] @ w[keep] - b))
    if residual > 1e-12 * np.linalg.norm(b) or keep.sum() > dim_p(d):
        log.warning("compression rejected (residual %.2e, %d points); keeping the raw rule", residual, keep.sum())
        return rule
    return VolumeRule(pts[keep].copy(), w[keep], d, "compressed")


def moment_residual(rule: VolumeRule, reference: VolumeRule, degree: int, center=None, scale=None) -> float:
    """Relative difference of the scaled-monomial moments of two rules."""
    pts = reference.points
    if center is None:
        center = pts.mean(axis=0)
    if scale is None:
        scale = float(np.max(np.linalg.norm(pts - center, axis=1))) or 1.0
    b = monomials((pts - center) / scale, degree).T @ reference.weights
    m = monomials((rule.points - center) / scale, degree).T @ rule.weights
    return float(np.linalg.norm(m - b) / np.linalg.norm(b))


# ----------------------------------------------------------------------
# cell geometry
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CellGeometry:
    volume: float
    barycenter: np.ndarray
    diameter: float


def cell_geometry(faces, vertices, degree: int = 4) -> CellGeometry:
    """Volume, barycentre and diameter of a cell.

    The diameter is the largest distance between vertices and the face
    quadrature points, which also catches bulging curved faces.
    """
    rule = volume_rule_raw(faces, max(degree, 1), drop_vertical=True)
    vol = float(rule.weights.sum())
    if vol <= 0:
        raise QuadratureError("degenerate cell: non-positive volume")
    bary = rule.weights @ rule.points / vol
    samples = [np.asarray(vertices, dtype=float)]
    for face, _ in faces:
        if not face.map.is_planar:
            samples.append(face_rule(face, 2).physical_points)
    X = np.vstack(samples)
    diff = X[:, None, :] - X[None, :, :]
    diam = float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))
    return CellGeometry(vol, bary, diam)
