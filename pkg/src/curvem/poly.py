"""Scaled monomial bases and the vector-polynomial decomposition.

Monomials are enumerated in graded lexicographic order, so the basis of
degree ``k`` is a prefix of the basis of degree ``k + 1``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def dim_p(k: int, dim: int = 3) -> int:
    """Dimension of the polynomials of degree ``<= k`` in ``dim`` variables."""
    if k < 0:
        return 0
    if dim == 3:
        return (k + 1) * (k + 2) * (k + 3) // 6
    if dim == 2:
        return (k + 1) * (k + 2) // 2
    raise ValueError("dim must be 2 or 3")


@lru_cache(maxsize=None)
def multi_indices(k: int, dim: int = 3) -> tuple[tuple[int, ...], ...]:
    out = []
    for n in range(k + 1):
        if dim == 2:
            for a in range(n, -1, -1):
                out.append((a, n - a))
        else:
            for a in range(n, -1, -1):
                for b in range(n - a, -1, -1):
                    out.append((a, b, n - a - b))
    return tuple(out)


@lru_cache(maxsize=None)
def index_map(k: int, dim: int = 3) -> dict:
    return {alpha: i for i, alpha in enumerate(multi_indices(k, dim))}


@lru_cache(maxsize=None)
def _exponents(k: int, dim: int) -> np.ndarray:
    e = np.array(multi_indices(k, dim), dtype=int)
    e.setflags(write=False)
    return e


def _powers(x: np.ndarray, k: int) -> np.ndarray:
    """``x**j`` for ``j = 0..k`` along a new last axis."""
    out = np.empty(x.shape + (k + 1,))
    out[..., 0] = 1.0
    for j in range(1, k + 1):
        out[..., j] = out[..., j - 1] * x
    return out


def monomials(xs: np.ndarray, k: int) -> np.ndarray:
    """Values of all monomials of degree ``<= k`` at scaled points ``xs`` (n, dim)."""
    xs = np.atleast_2d(xs)
    dim = xs.shape[1]
    e = _exponents(k, dim)
    val = np.ones((xs.shape[0], e.shape[0]))
    for d in range(dim):
        val *= _powers(xs[:, d], k)[:, e[:, d]]
    return val


def monomial_gradients(xs: np.ndarray, k: int) -> np.ndarray:
    """Gradients in scaled coordinates, shape (n, dim_p, dim)."""
    xs = np.atleast_2d(xs)
    dim = xs.shape[1]
    e = _exponents(k, dim)
    pw = [_powers(xs[:, d], k) for d in range(dim)]
    out = np.empty((xs.shape[0], e.shape[0], dim))
    for d in range(dim):
        g = e[:, d] * pw[d][:, np.maximum(e[:, d] - 1, 0)]
        for o in range(dim):
            if o != d:
                g = g * pw[o][:, e[:, o]]
        out[:, :, d] = g
    return out


class ScaledBasis3:
    """``m_alpha(x) = ((x - center) / h)**alpha`` for ``|alpha| <= k``."""

    def __init__(self, center, h: float, k: int):
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.h = float(h)
        self.k = int(k)
        self.size = dim_p(self.k, 3)

    def scaled(self, x) -> np.ndarray:
        return (np.atleast_2d(x) - self.center) / self.h

    def eval(self, x) -> np.ndarray:
        return monomials(self.scaled(x), self.k)

    def grad(self, x) -> np.ndarray:
        return monomial_gradients(self.scaled(x), self.k) / self.h


class ScaledBasis2:
    """Parameter-space monomials centred at ``center`` with scale ``scale``."""

    def __init__(self, k: int, center=(0.5, 0.5), scale: float = 1.0):
        self.center = np.asarray(center, dtype=float).reshape(2)
        self.scale = float(scale)
        self.k = int(k)
        self.size = dim_p(self.k, 2)

    def eval(self, uv) -> np.ndarray:
        return monomials((np.atleast_2d(uv) - self.center) / self.scale, self.k)

    def grad(self, uv) -> np.ndarray:
        return monomial_gradients((np.atleast_2d(uv) - self.center) / self.scale, self.k) / self.scale


def eval_basis(basis, point, derivative: int = 0):
    """Basis values, or ``(values, gradients)`` when ``derivative == 1``."""
    if derivative == 0:
        return basis.eval(point)
    if derivative == 1:
        return basis.eval(point), basis.grad(point)
    raise ValueError("derivative order must be 0 or 1")


# ----------------------------------------------------------------------
# coefficient algebra for vector fields in the basis m_alpha e_i
# ----------------------------------------------------------------------


def vector_index(i: int, alpha, k: int) -> int:
    return i * dim_p(k) + index_map(k)[tuple(alpha)]


def gradient_coefficients(k: int) -> np.ndarray:
    """Rows: scaled gradients of ``m_beta``, ``1 <= |beta| <= k + 1``, in ``[P_k]^3``."""
    betas = multi_indices(k + 1)[1:]
    out = np.zeros((len(betas), 3 * dim_p(k)))
    for r, beta in enumerate(betas):
        for i in range(3):
            if beta[i] > 0:
                lower = list(beta)
                lower[i] -= 1
                out[r, vector_index(i, lower, k)] += beta[i]
    return out


def cross_generators(k: int) -> np.ndarray:
    """Rows: ``x~ ^ (m_alpha e_i)`` for ``|alpha| <= k - 1`` in ``[P_k]^3``."""
    alphas = multi_indices(k - 1)
    out = np.zeros((3 * len(alphas), 3 * dim_p(k)))

    def shift(alpha, j):
        a = list(alpha)
        a[j] += 1
        return a

    # x ^ e_0 = (0, z, -y); x ^ e_1 = (-z, 0, x); x ^ e_2 = (y, -x, 0)
    table = {
        0: [(1, 2, 1.0), (2, 1, -1.0)],
        1: [(0, 2, -1.0), (2, 0, 1.0)],
        2: [(0, 1, 1.0), (1, 0, -1.0)],
    }
    r = 0
    for i in range(3):
        for alpha in alphas:
            for comp, var, sgn in table[i]:
                out[r, vector_index(comp, shift(alpha, var), k)] += sgn
            r += 1
    return out


class VectorDecomp:
    """Gradient part plus cross part spanning ``[P_k]^3`` in scaled coordinates.

    ``rows`` stacks the coefficient vectors (gradients first). The cross
    basis is an orthonormalised recombination of the generators; ``weights``
    holds the combination, so ``cross = weights @ cross_generators(k)``.
    """

    def __init__(self, k: int, tol: float = 1e-10):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.grad = gradient_coefficients(k)
        gens = cross_generators(k)
        U, s, Vt = np.linalg.svd(gens, full_matrices=False)
        rank = int(np.sum(s > tol * s[0]))
        self.weights = U[:, :rank].T / s[:rank, None]
        self.cross = self.weights @ gens
        self.rows = np.vstack([self.grad, self.cross])
        sv = np.linalg.svd(self.rows, compute_uv=False)
        if self.rows.shape[0] != 3 * dim_p(k) or sv[-1] < tol * sv[0]:
            raise np.linalg.LinAlgError("decomposition failed")

    @property
    def n_grad(self) -> int:
        return self.grad.shape[0]

    @property
    def n_cross(self) -> int:
        return self.cross.shape[0]


@lru_cache(maxsize=None)
def vector_decomp(k: int) -> VectorDecomp:
    return VectorDecomp(k)


def build_vector_decomp(k: int, cell=None) -> VectorDecomp:
    """The decomposition is cell independent in scaled coordinates."""
    return vector_decomp(k)


def eval_vector_field(coeffs: np.ndarray, basis_values: np.ndarray) -> np.ndarray:
    """Evaluate ``sum c_(i,alpha) m_alpha e_i`` given monomial values (n, pi_k)."""
    n = basis_values.shape[1]
    c = np.asarray(coeffs).reshape(3, n)
    return basis_values @ c.T
