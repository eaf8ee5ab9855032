"""Parametric charts for mesh faces.

Every chart maps a parameter point ``(u, v)`` to a physical point. Four
families are supported:

``affine``
    ``o + u a + v b`` in physical space.
``bilinear``
    The bilinear patch through four corners ``A, B, C, D`` (corner-point
    cells).
``cylinder``
    An affine plane in cylindrical coordinates ``(r, theta, z)`` pushed
    through ``(r cos theta, r sin theta, z)``. Covers lateral cylinder
    patches, polar pieces of horizontal planes, and extruded spirals.
``graph_sin``
    An affine plane in reference coordinates ``(xi, eta, zeta)`` pushed
    through ``(xi, eta, zeta * (1 - A sin(pi xi)))``, i.e. the layers of a box
    whose top is the graph ``z = 1 - A sin(pi x)``.

All charts are vectorised: ``u`` and ``v`` may be arrays of equal shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("affine", "bilinear", "cylinder", "graph_sin")

DEGENERATE_J = 1e-14


class ChartError(ValueError):
    """Raised for degenerate charts or failed inversions."""


def _vec(x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FaceMap:
    """Base class of a face chart.

    ``orientation`` (+1 or -1) flips the canonical normal relative to
    ``d/du x d/dv``.
    """

    orientation: int = field(default=1, kw_only=True)

    kind = "abstract"
    #: polynomial degree of the chart in (u, v); 0 means non-polynomial
    chart_degree = 1

    def eval(self, u, v) -> np.ndarray:
        raise NotImplementedError

    def derivatives(self, u, v) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    # ------------------------------------------------------------------
    def jacobian_normal(self, u, v, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Unit normal and surface factor ``|d/du x d/dv|`` at ``(u, v)``."""
        gu, gv = self.derivatives(u, v)
        cr = np.cross(gu, gv)
        J = np.linalg.norm(cr, axis=-1)
        if check and np.any(J < DEGENERATE_J):
            raise ChartError("degenerate chart")
        n = self.orientation * cr / J[..., None]
        return n, J

    def area_vector(self, u, v) -> np.ndarray:
        """Oriented ``J * n`` (no normalisation, no degeneracy check)."""
        gu, gv = self.derivatives(u, v)
        return self.orientation * np.cross(gu, gv)

    def invert(self, p, tol: float = 1e-9, maxiter: int = 50, start=(0.5, 0.5)):
        """Parameters ``(u, v)`` of a physical point lying on the surface.

        Damped Gauss-Newton from ``start``; step halving keeps the residual
        monotone.
        """
        p = np.asarray(p, dtype=float)
        x = np.array(start, dtype=float)
        scale = max(1.0, float(np.linalg.norm(p)))
        r = self.eval(x[0], x[1]) - p
        res = float(np.linalg.norm(r))
        stationary = False
        for _ in range(maxiter):
            if res <= 1e-14 * scale:
                break
            gu, gv = self.derivatives(x[0], x[1])
            Jm = np.stack([gu, gv], axis=-1)
            JtJ = Jm.T @ Jm
            if np.linalg.det(JtJ) < DEGENERATE_J**2:
                raise ChartError("degenerate chart")
            grad = Jm.T @ r
            if np.linalg.norm(grad) <= 1e-13 * np.sqrt(np.trace(JtJ)) * scale:
                stationary = True
                break
            step = np.linalg.solve(JtJ, grad)
            t = 1.0
            for _ in range(40):
                xn = x - t * step
                rn = self.eval(xn[0], xn[1]) - p
                resn = float(np.linalg.norm(rn))
                if resn < res:
                    break
                t *= 0.5
            else:
                stationary = True
                break
            x, r, res = xn, rn, resn
        if res > tol * scale:
            if stationary:
                raise ChartError(f"point is off the surface (distance {res:.3e})")
            raise ChartError("inversion failed")
        return float(x[0]), float(x[1])

    @property
    def is_planar(self) -> bool:
        return False

    def descriptor(self) -> dict:
        return {"kind": self.kind, "params": self.params(), "orientation": self.orientation}

    def flipped(self) -> "FaceMap":
        d = self.descriptor()
        d["orientation"] = -self.orientation
        return from_descriptor(d)


@dataclass(frozen=True, eq=False)
class AffineMap(FaceMap):
    origin: np.ndarray
    du: np.ndarray
    dv: np.ndarray

    kind = "affine"
    chart_degree = 1

    def __post_init__(self):
        for name in ("origin", "du", "dv"):
            object.__setattr__(self, name, _vec(getattr(self, name)))

    def eval(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        return self.origin + u * self.du + v * self.dv

    def derivatives(self, u, v):
        shape = np.shape(u) + (3,)
        return np.broadcast_to(self.du, shape).copy(), np.broadcast_to(self.dv, shape).copy()

    def invert(self, p, tol: float = 1e-9, maxiter: int = 50, start=(0.5, 0.5)):
        A = np.stack([self.du, self.dv], axis=-1)
        uv, *_ = np.linalg.lstsq(A, np.asarray(p, float) - self.origin, rcond=None)
        res = np.linalg.norm(A @ uv + self.origin - p)
        if res > tol * max(1.0, float(np.linalg.norm(p))):
            raise ChartError(f"point is off the surface (distance {res:.3e})")
        return float(uv[0]), float(uv[1])

    @property
    def is_planar(self) -> bool:
        return True

    def params(self):
        return {"origin": self.origin.tolist(), "du": self.du.tolist(), "dv": self.dv.tolist()}


@dataclass(frozen=True, eq=False)
class BilinearMap(FaceMap):
    """``(1-u)(1-v) A + u(1-v) B + u v C + (1-u) v D``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    kind = "bilinear"
    chart_degree = 2

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, _vec(getattr(self, name)))

    def eval(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        return (1 - u) * (1 - v) * self.A + u * (1 - v) * self.B + u * v * self.C + (1 - u) * v * self.D

    def derivatives(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        twist = self.A - self.B + self.C - self.D
        gu = (self.B - self.A) + v * twist
        gv = (self.D - self.A) + u * twist
        return gu, gv

    @property
    def is_planar(self) -> bool:
        n = np.cross(self.B - self.A, self.D - self.A)
        scale = max(np.linalg.norm(self.B - self.A), np.linalg.norm(self.D - self.A)) ** 2
        return bool(abs(np.dot(n, self.C - self.A)) <= 1e-12 * scale * np.linalg.norm(self.C - self.A) + 1e-300)

    def params(self):
        return {k: getattr(self, k).tolist() for k in "ABCD"}


@dataclass(frozen=True, eq=False)
class CylinderMap(FaceMap):
    """Affine plane ``origin + u du + v dv`` in ``(r, theta, z)``."""

    origin: np.ndarray
    du: np.ndarray
    dv: np.ndarray

    kind = "cylinder"
    chart_degree = 0

    def __post_init__(self):
        for name in ("origin", "du", "dv"):
            object.__setattr__(self, name, _vec(getattr(self, name)))

    def _ref(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        return self.origin + u * self.du + v * self.dv

    def eval(self, u, v):
        q = self._ref(u, v)
        r, t, z = q[..., 0], q[..., 1], q[..., 2]
        return np.stack([r * np.cos(t), r * np.sin(t), z], axis=-1)

    def derivatives(self, u, v):
        q = self._ref(u, v)
        r, t = q[..., 0], q[..., 1]
        c, s = np.cos(t), np.sin(t)

        def push(d):
            return np.stack([d[0] * c - r * s * d[1], d[0] * s + r * c * d[1], np.broadcast_to(d[2], r.shape)], axis=-1)

        return push(self.du), push(self.dv)

    @property
    def is_planar(self) -> bool:
        # theta fixed -> vertical half-plane; z fixed -> horizontal plane
        return bool((self.du[1] == 0 and self.dv[1] == 0) or (self.du[2] == 0 and self.dv[2] == 0))

    def params(self):
        return {"origin": self.origin.tolist(), "du": self.du.tolist(), "dv": self.dv.tolist()}


@dataclass(frozen=True, eq=False)
class GraphSinMap(FaceMap):
    """Affine plane in ``(xi, eta, zeta)`` pushed through the graded-sine box map."""

    origin: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    amplitude: float = 0.0

    kind = "graph_sin"
    chart_degree = 0

    def __post_init__(self):
        for name in ("origin", "du", "dv"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        object.__setattr__(self, "amplitude", float(self.amplitude))

    def _ref(self, u, v):
        u = np.asarray(u, dtype=float)[..., None]
        v = np.asarray(v, dtype=float)[..., None]
        return self.origin + u * self.du + v * self.dv

    def eval(self, u, v):
        q = self._ref(u, v)
        xi, eta, zeta = q[..., 0], q[..., 1], q[..., 2]
        return np.stack([xi, eta, zeta * (1.0 - self.amplitude * np.sin(np.pi * xi))], axis=-1)

    def derivatives(self, u, v):
        q = self._ref(u, v)
        xi, zeta = q[..., 0], q[..., 2]
        top = 1.0 - self.amplitude * np.sin(np.pi * xi)
        dtop = -self.amplitude * np.pi * np.cos(np.pi * xi)

        def push(d):
            return np.stack(
                [np.broadcast_to(d[0], xi.shape), np.broadcast_to(d[1], xi.shape), d[0] * zeta * dtop + d[2] * top],
                axis=-1,
            )

        return push(self.du), push(self.dv)

    @property
    def is_planar(self) -> bool:
        if self.amplitude == 0.0:
            return True
        # eta fixed -> the plane y = const; zeta = 0 -> the plane z = 0
        if self.du[1] == 0 and self.dv[1] == 0:
            return True
        return bool(self.du[2] == 0 and self.dv[2] == 0 and self.origin[2] == 0)

    def params(self):
        return {
            "origin": self.origin.tolist(),
            "du": self.du.tolist(),
            "dv": self.dv.tolist(),
            "amplitude": self.amplitude,
        }


_REGISTRY = {"affine": AffineMap, "bilinear": BilinearMap, "cylinder": CylinderMap, "graph_sin": GraphSinMap}


def from_descriptor(desc: dict) -> FaceMap:
    """Build a chart from its JSON descriptor ``{"kind", "params", "orientation"}``."""
    try:
        cls = _REGISTRY[desc["kind"]]
    except KeyError as exc:
        raise ValueError(f"unknown map kind {desc.get('kind')!r}") from exc
    return cls(**desc["params"], orientation=int(desc.get("orientation", 1)))


def eval(fmap: FaceMap, u, v) -> np.ndarray:  # noqa: A001 - mirrors the chart method
    return fmap.eval(u, v)


def jacobian_normal(fmap: FaceMap, u, v):
    return fmap.jacobian_normal(u, v)


def invert(fmap: FaceMap, p):
    return fmap.invert(p)


def bilinear_through(points) -> BilinearMap:
    """Bilinear chart whose corners (0,0),(1,0),(1,1),(0,1) hit ``points``."""
    A, B, C, D = (np.asarray(p, float) for p in points)
    return BilinearMap(A, B, C, D)


def affine_through(points) -> AffineMap:
    """Affine chart with (0,0),(1,0),(0,1) on the first three points."""
    P0, P1, P2 = (np.asarray(p, float) for p in points[:3])
    return AffineMap(P0, P1 - P0, P2 - P0)
