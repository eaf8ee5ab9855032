"""Local mixed virtual element machinery.

Degrees of freedom of the velocity on a cell ``P`` (degree ``k``):

D1, per face ``F`` and ``j``
    ``(1/|F|) int_F (v . n) mt_j dF`` with ``mt_j`` scaled monomials of the
    face parameters, so that ``v . n`` is a polynomial in parameter space.
D2, for ``1 <= |g| <= k-1``
    ``(h_P/|P|) int_P div(v) m_g dP``; the constant part of the divergence
    follows from the face fluxes.
D3, per cross basis field ``chi_r``
    ``(1/|P|) int_P v . chi_r dP`` where ``chi_r`` spans
    ``x~ ^ [P_{k-1}]^3`` in scaled coordinates.

All cell integrals use the divergence-theorem volume rule, all face
integrals the dual point lists of the face chart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .poly import dim_p, index_map, monomial_gradients, monomials, multi_indices, vector_decomp
from .quadrature import VolumeRule, face_rule, volume_rule_raw


class VemError(ValueError):
    """Raised for invalid local problems."""


def n_face_dofs(k: int) -> int:
    return dim_p(k, 2)


def n_div_dofs(k: int) -> int:
    return dim_p(k - 1) - 1


def n_cross_dofs(k: int) -> int:
    return vector_decomp(k).n_cross


def local_quad_degree(k: int) -> int:
    return 2 * k + 2


@dataclass(frozen=True)
class DofLayout:
    """Local DOF counts of a cell with ``n_faces`` faces."""

    k: int
    n_faces: int

    @property
    def per_face(self) -> int:
        return n_face_dofs(self.k)

    @property
    def n_div(self) -> int:
        return n_div_dofs(self.k)

    @property
    def n_cross(self) -> int:
        return n_cross_dofs(self.k)

    @property
    def n_interior(self) -> int:
        return self.n_div + self.n_cross

    @property
    def size(self) -> int:
        return self.n_faces * self.per_face + self.n_interior

    def face_slice(self, i: int) -> slice:
        return slice(i * self.per_face, (i + 1) * self.per_face)

    @property
    def div_slice(self) -> slice:
        s = self.n_faces * self.per_face
        return slice(s, s + self.n_div)

    @property
    def cross_slice(self) -> slice:
        s = self.n_faces * self.per_face + self.n_div
        return slice(s, s + self.n_cross)


# ----------------------------------------------------------------------
# face data
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class FaceBasis:
    """Parameter-space monomials of a face and their Gram data."""

    center: np.ndarray
    scale: float
    area: float
    values: np.ndarray  # (nq, nf) at the rule's parameter points
    gram: np.ndarray  # int_F mt_i mt_j dF
    rule: object

    def eval(self, uv) -> np.ndarray:
        return monomials((np.atleast_2d(uv) - self.center) / self.scale, self.k)

    @property
    def k(self) -> int:
        n = self.values.shape[1]
        return int(round((np.sqrt(8 * n + 1) - 3) / 2))


def polygon_centroid_radius(poly) -> tuple[np.ndarray, float]:
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = 0.5 * cr.sum()
    c = np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6 * a)
    d = np.max(np.linalg.norm(poly - c, axis=-1))
    return c, float(d)


def face_basis(face, k: int) -> FaceBasis:
    """Cached face basis; its rule integrates degree-``2k+2`` physical times
    degree-``k`` parameter integrands."""
    key = ("basis", k)
    fb = face.rule_cache.get(key)
    if fb is None:
        rule = face_rule(face, local_quad_degree(k), k)
        c, d = polygon_centroid_radius(face.param)
        vals = monomials((rule.param_points - c) / d, k)
        w = rule.weights
        gram = (vals * w[:, None]).T @ vals
        fb = FaceBasis(c, d, float(w.sum()), vals, gram, rule)
        face.rule_cache[key] = fb
    return fb


# ----------------------------------------------------------------------
# local element
# ----------------------------------------------------------------------


class LocalVem:
    """Projector, DOF matrix and local forms of one cell.

    Attributes
    ----------
    Pi : (3 pi_k, ndof)
        Coefficients of ``Pi^0_k v`` in the basis ``m_alpha e_i`` (component
        major).
    Dmat : (ndof, 3 pi_k)
        DOFs of the basis fields ``m_alpha e_i``.
    M : (3 pi_k, 3 pi_k)
        Mass matrix of the vector basis.
    B : (pi_{k-1}, ndof)
        ``-int_P div(v) m_g`` as a function of the DOFs.
    mu : (pi_{k-1}, ndof)
        Divergence moments ``int_P div(v) m_g``.
    """

    def __init__(self, mesh, c: int, k: int, quad_degree: int | None = None):
        if k < 1:
            raise VemError("k must be >= 1")
        self.mesh = mesh
        self.cell = c
        self.k = k
        self.faces = mesh.cell_faces(c)
        self.layout = DofLayout(k, len(self.faces))
        geo = mesh.geometry(c)
        self.h = geo.diameter
        self.center = geo.barycenter
        self.quad_degree = local_quad_degree(k) if quad_degree is None else quad_degree
        self.rule = volume_rule_raw(self.faces, self.quad_degree, drop_vertical=True)
        self.volume = float(self.rule.weights.sum())
        self._build()

    # ------------------------------------------------------------------
    def scaled(self, x) -> np.ndarray:
        return (np.atleast_2d(x) - self.center) / self.h

    def basis(self, x, degree: int) -> np.ndarray:
        return monomials(self.scaled(x), degree)

    def _build(self) -> None:
        k, lay = self.k, self.layout
        pk, pk1, pkm = dim_p(k), dim_p(k + 1), dim_p(k - 1)
        dec = vector_decomp(k)
        nd = lay.size
        W = self.rule.weights
        Mv = self.basis(self.rule.points, k + 1)
        G = (Mv * W[:, None]).T @ Mv
        self.gram = G
        Gk = G[:pk, :pk]
        self.M = np.kron(np.eye(3), Gk)
        Gkm = G[:pkm, :pkm]
        self._gkm = cho_factor(Gkm)

        # divergence moments mu_g(v) = int_P div v m_g
        mu = np.zeros((pkm, nd))
        for i, (face, s) in enumerate(self.faces):
            fb = face_basis(face, k)
            mu[0, lay.face_slice(i).start] = fb.area
        mu[1:, lay.div_slice] = (self.volume / self.h) * np.eye(pkm - 1)
        self.mu = mu
        self.B = -mu

        # projector right-hand side
        L = np.zeros((3 * pk, nd))
        ng = dec.n_grad
        div_coef = cho_solve(self._gkm, mu)  # coefficients of div v in m_g
        L[:ng] -= self.h * (G[:pkm, 1:pk1].T @ div_coef)
        D = np.zeros((nd, 3 * pk))
        self.face_data = []
        for i, (face, s) in enumerate(self.faces):
            fb = face_basis(face, k)
            r = fb.rule
            w = r.weights
            mk1 = self.basis(r.physical_points, k + 1)
            H = (fb.values * w[:, None]).T @ mk1  # (nf, pk1)
            trace = np.linalg.solve(fb.gram, fb.area * np.eye(lay.per_face))  # D1 -> v.n coefficients
            L[:ng, lay.face_slice(i)] += self.h * (H[:, 1:].T @ trace)
            n = s * r.normals
            # D1 of m_alpha e_i: (1/|F|) int (m_alpha n_i) mt_j dF
            vals = fb.values * w[:, None] / fb.area
            for comp in range(3):
                D[lay.face_slice(i), comp * pk : (comp + 1) * pk] = vals.T @ (mk1[:, :pk] * n[:, comp : comp + 1])
            self.face_data.append((fb, s, trace))
        L[ng:, lay.cross_slice] = self.volume * np.eye(lay.n_cross)

        # D2 of m_alpha e_i: (1/|P|) alpha_i int m_{alpha - e_i} m_g
        idx = index_map(k - 1)
        for a_i, alpha in enumerate(multi_indices(k)):
            for comp in range(3):
                if alpha[comp] == 0:
                    continue
                lower = list(alpha)
                lower[comp] -= 1
                row = idx[tuple(lower)]
                D[lay.div_slice, comp * pk + a_i] = alpha[comp] * G[row, 1:pkm] / self.volume
        D[lay.cross_slice] = dec.cross @ self.M / self.volume
        self.Dmat = D

        TM = dec.rows @ self.M
        self._tm = lu_factor(TM)
        self.Pi = lu_solve(self._tm, L)
        self.L = L

        E = np.eye(nd) - D @ self.Pi
        self.S0 = self.volume * E.T @ E
        self.A0 = self.Pi.T @ self.M @ self.Pi

    # ------------------------------------------------------------------
    def project(self, dofs) -> np.ndarray:
        """Coefficients of ``Pi^0_k v`` from the local DOF vector."""
        return self.Pi @ np.asarray(dofs)

    def eval_projection(self, coeffs, x) -> np.ndarray:
        """Evaluate a ``[P_k]^3`` coefficient vector at points ``x``."""
        vals = self.basis(x, self.k)
        return vals @ np.asarray(coeffs).reshape(3, -1).T

    def div_coefficients(self, dofs) -> np.ndarray:
        """Coefficients of ``div v`` in ``m_g``, ``|g| <= k-1``."""
        return cho_solve(self._gkm, self.mu @ np.asarray(dofs))

    def pressure_gram(self) -> np.ndarray:
        pkm = dim_p(self.k - 1)
        return self.gram[:pkm, :pkm]

    def l2_project_scalar(self, f, degree: int) -> np.ndarray:
        """Coefficients of the L2 projection of ``f`` on ``P_degree``."""
        n = dim_p(degree)
        vals = self.basis(self.rule.points, degree)
        rhs = vals.T @ (self.rule.weights * f(self.rule.points))
        return np.linalg.solve(self.gram[:n, :n], rhs)

    def face_trace(self, i: int, dofs) -> np.ndarray:
        """Coefficients of ``v . n_out`` on local face ``i`` in the face basis."""
        fb, s, trace = self.face_data[i]
        return trace @ np.asarray(dofs)[self.layout.face_slice(i)]

    def interpolate(self, v, rule: VolumeRule | None = None, face_degree: int | None = None) -> np.ndarray:
        """DOF vector of a smooth vector field ``v(x) -> (n, 3)``."""
        return interpolate(self, v, rule=rule, face_degree=face_degree)


def build_local(mesh, c: int, k: int, quad_degree: int | None = None) -> LocalVem:
    return LocalVem(mesh, c, k, quad_degree)


def project(lv: LocalVem, dofs) -> np.ndarray:
    return lv.project(dofs)


def local_forms(lv: LocalVem, nu: float):
    """``(A_h, B, S)`` for a cell-constant coefficient ``nu``."""
    nu = float(nu)
    if not nu > 0:
        raise VemError("coefficient nu must be positive")
    S = nu * lv.S0
    A = nu * lv.A0 + S
    A = 0.5 * (A + A.T)
    return A, lv.B, S


def face_moments(face, sign: int, k: int, v, data_map=None) -> np.ndarray:
    """``(1/|F|) int_F (v . n) mt_j dF`` with the outward normal ``sign * n``.

    With ``data_map`` the flux density ``(v . n) J`` is taken on that chart
    at the same parameter points (the exact surface behind a flattened
    face), and divided by the area of the face itself.
    """
    fb = face_basis(face, k)
    r = fb.rule
    if data_map is None:
        flux = np.einsum("ij,ij->i", v(r.physical_points), r.normals) * r.weights
    else:
        uv = r.param_points
        x = data_map.eval(uv[:, 0], uv[:, 1])
        av = data_map.area_vector(uv[:, 0], uv[:, 1])
        n_flat = r.normals
        # orient the exact surface like the flat face
        orient = np.sign(np.einsum("ij,ij->i", av, n_flat))
        flux = np.einsum("ij,ij->i", v(x), av) * orient * r.param_weights
    return sign * (fb.values.T @ flux) / fb.area


def interpolate(lv: LocalVem, v, rule: VolumeRule | None = None, face_degree: int | None = None) -> np.ndarray:
    """DOFs of ``v``; the divergence moments use integration by parts."""
    k, lay = lv.k, lv.layout
    dofs = np.zeros(lay.size)
    rule = lv.rule if rule is None else rule
    X, W = rule.points, rule.weights
    V = np.asarray(v(X), dtype=float)
    pkm = dim_p(k - 1)
    # int_P v . grad m_g  (gradient w.r.t. x)
    grads = monomial_gradients(lv.scaled(X), k - 1) / lv.h  # (n, pkm, 3)
    vol_term = np.einsum("nd,ngd,n->g", V, grads, W)
    face_term = np.zeros(pkm)
    for i, (face, s) in enumerate(lv.faces):
        if face_degree is None:
            fb = face_basis(face, k)
            r = fb.rule
            dofs[lay.face_slice(i)] = face_moments(face, s, k, v)
        else:
            r = face_rule(face, face_degree, k)
            fb = face_basis(face, k)
            vals = monomials((r.param_points - fb.center) / fb.scale, k)
            flux = np.einsum("ij,ij->i", v(r.physical_points), s * r.normals) * r.weights
            dofs[lay.face_slice(i)] = vals.T @ flux / fb.area
        flux = np.einsum("ij,ij->i", v(r.physical_points), s * r.normals) * r.weights
        face_term += lv.basis(r.physical_points, k - 1).T @ flux
    div_mom = face_term - vol_term
    dofs[lay.div_slice] = lv.h / lv.volume * div_mom[1:]
    M = lv.basis(X, k)
    dec = vector_decomp(k)
    pk = dim_p(k)
    # int_P v . (m_alpha e_i) for all (i, alpha), then combine with the cross rows
    vm = np.concatenate([M.T @ (W * V[:, comp]) for comp in range(3)])
    dofs[lay.cross_slice] = dec.cross @ vm / lv.volume
    assert vm.shape == (3 * pk,)
    return dofs


def l2_best_approximation(lv: LocalVem, v, rule: VolumeRule | None = None) -> np.ndarray:
    """Coefficients of the ``[P_k]^3`` L2 best approximation of ``v`` (oracle)."""
    rule = lv.rule if rule is None else rule
    M = lv.basis(rule.points, lv.k)
    G = (M * rule.weights[:, None]).T @ M
    V = np.asarray(v(rule.points))
    rhs = [M.T @ (rule.weights * V[:, c]) for c in range(3)]
    return np.concatenate([np.linalg.solve(G, r) for r in rhs])
