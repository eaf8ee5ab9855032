"""Global mixed VEM assembly and solution of the Darcy problem.

Strong form::

    nu q + grad p = g,   div q = f   in Omega,   nu = mu / kappa
    p = pbar on the natural boundary,  q . n = qbar . n on the essential one

Unknowns are the face moments (one block per mesh face, oriented by the
face's canonical normal), the cell-interior velocity moments and the
pressure coefficients in the scaled monomials of each cell.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from .mesh import ESSENTIAL, NATURAL, PolyMesh, mesh_size
from .poly import dim_p
from .quadrature import volume_rule_raw
from .vem import LocalVem, face_basis, face_moments, local_forms, n_div_dofs, n_cross_dofs, n_face_dofs

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]


class DarcyError(RuntimeError):
    """Raised for invalid problem data or solver breakdown."""


# ----------------------------------------------------------------------
# problem description
# ----------------------------------------------------------------------


@dataclass
class ProblemSpec:
    """Data of a Darcy problem on a mesh.

    Parameters
    ----------
    mesh : PolyMesh
    k : int
        Velocity degree; pressures are of degree ``k - 1``.
    kappa : float or dict
        Permeability, scalar or per material id.
    mu : float
        Viscosity.
    pressure, velocity : callable, optional
        Exact solution, used for boundary data and errors.
    source : callable, optional
        ``f = div q``; zero if omitted.
    body_force : callable, optional
        ``g`` in ``nu q + grad p = g``; zero if omitted.
    pbar, qbar : callable, optional
        Boundary data; default to the exact pressure and velocity.
    gauge : bool or None
        Fix the mean pressure with a multiplier. ``None`` activates it when
        the natural boundary is empty.
    """

    mesh: PolyMesh
    k: int
    kappa: float | dict = 1.0
    mu: float = 1.0
    pressure: Field | None = None
    velocity: Field | None = None
    source: Field | None = None
    body_force: Field | None = None
    pbar: Field | None = None
    qbar: Field | None = None
    gauge: bool | None = None
    name: str = "problem"

    def __post_init__(self):
        if self.mu <= 0:
            raise DarcyError("viscosity must be positive")
        if self.pbar is None:
            self.pbar = self.pressure
        if self.qbar is None:
            self.qbar = self.velocity

    def nu(self, material: int) -> float:
        if isinstance(self.kappa, dict):
            if material not in self.kappa:
                raise DarcyError(f"no permeability for material {material}")
            kap = self.kappa[material]
        else:
            kap = self.kappa
        if not kap > 0:
            raise DarcyError("permeability must be positive")
        return self.mu / kap

    @property
    def has_exact(self) -> bool:
        return self.pressure is not None and self.velocity is not None


# ----------------------------------------------------------------------
# manufactured solutions
# ----------------------------------------------------------------------


def example1_fields(amplitude: float = 0.1):
    """``p = (z + a sin(pi x) - 1)^2``, ``q = -grad p``, ``f = -lap p``."""
    a = amplitude
    pi = math.pi

    def s(x):
        return x[:, 2] + a * np.sin(pi * x[:, 0]) - 1.0

    def p(x):
        return s(x) ** 2

    def q(x):
        ds = np.column_stack([a * pi * np.cos(pi * x[:, 0]), np.zeros(len(x)), np.ones(len(x))])
        return -2.0 * s(x)[:, None] * ds

    def f(x):
        c = a * pi * np.cos(pi * x[:, 0])
        return -2.0 * (c**2 + 1.0) + 2.0 * s(x) * a * pi**2 * np.sin(pi * x[:, 0])

    return p, q, f


def example2_fields():
    """``p = sin(pi x) cos(pi y) sin(pi z)``, ``q = -grad p``, ``f = 3 pi^2 p``."""
    pi = math.pi

    def p(x):
        return np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1]) * np.sin(pi * x[:, 2])

    def q(x):
        sx, cx = np.sin(pi * x[:, 0]), np.cos(pi * x[:, 0])
        sy, cy = np.sin(pi * x[:, 1]), np.cos(pi * x[:, 1])
        sz, cz = np.sin(pi * x[:, 2]), np.cos(pi * x[:, 2])
        return -pi * np.column_stack([cx * cy * sz, -sx * sy * sz, sx * cy * cz])

    def f(x):
        return 3 * pi**2 * p(x)

    return p, q, f


def example1_problem(mesh: PolyMesh, k: int, amplitude: float = 0.1) -> ProblemSpec:
    p, q, f = example1_fields(amplitude)
    return ProblemSpec(mesh, k, pressure=p, velocity=q, source=f, name="example1")


def example2_problem(mesh: PolyMesh, k: int) -> ProblemSpec:
    p, q, f = example2_fields()
    return ProblemSpec(mesh, k, pressure=p, velocity=q, source=f, name="example2")


def patch_problem(mesh: PolyMesh, k: int, seed: int = 0, nu: float = 1.0) -> ProblemSpec:
    """Constant velocity and a random pressure of degree ``k - 1``.

    The body force ``g = nu q + grad p`` makes the pair an exact solution
    with ``f = 0``.
    """
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, 3)
    from .poly import monomial_gradients, monomials

    coef = rng.uniform(-1, 1, dim_p(k - 1))

    def p(x):
        return monomials(x, k - 1) @ coef

    def grad_p(x):
        return np.einsum("nad,a->nd", monomial_gradients(x, k - 1), coef)

    def q(x):
        return np.broadcast_to(c, (len(x), 3)).copy()

    def g(x):
        return nu * q(x) + grad_p(x)

    return ProblemSpec(mesh, k, kappa=1.0 / nu, pressure=p, velocity=q, body_force=g, name="patch")


def layered_problem(mesh: PolyMesh, k: int = 2, kappa=(1.0, 0.01, 1.0)) -> ProblemSpec:
    """Pressure 1 at the bottom, 0 at the top, no flow through the sides."""

    def pbar(x):
        return np.where(x[:, 2] < 0.5, 1.0, 0.0)

    def qbar(x):
        return np.zeros((len(x), 3))

    kap = {i: float(v) for i, v in enumerate(kappa)}
    return ProblemSpec(mesh, k, kappa=kap, pbar=pbar, qbar=qbar, name="layered")


# ----------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------


@dataclass
class SaddleSystem:
    """``[[A, B^T], [B, 0]] (q, p) = (G, F)`` with constrained face DOFs."""

    spec: ProblemSpec
    A: sp.csr_matrix
    B: sp.csr_matrix
    G: np.ndarray
    F: np.ndarray
    essential_dofs: np.ndarray
    essential_values: np.ndarray
    gauge_row: np.ndarray | None
    gauge_value: float
    locals: list
    cell_dofs: list
    cell_signs: list
    n_face_dofs: int
    n_velocity: int
    n_pressure: int
    compatibility_shift: float = 0.0
    local_A: list = field(default_factory=list, repr=False)

    @property
    def n_dofs(self) -> int:
        return self.n_velocity + self.n_pressure


@dataclass
class Solution:
    system: SaddleSystem
    velocity: np.ndarray
    pressure: np.ndarray
    residual: float
    solve_seconds: float
    multiplier: float = 0.0

    def cell_velocity_dofs(self, c: int) -> np.ndarray:
        s = self.system
        return self.velocity[s.cell_dofs[c]] * s.cell_signs[c]

    def cell_pressure(self, c: int) -> np.ndarray:
        npc = dim_p(self.system.spec.k - 1)
        return self.pressure[c * npc : (c + 1) * npc]

    def eval_pressure(self, c: int, x) -> np.ndarray:
        lv = self.system.locals[c]
        return lv.basis(x, lv.k - 1) @ self.cell_pressure(c)

    def cell_mean_pressure(self, c: int) -> float:
        rule = self.system.locals[c].rule
        return float(np.dot(rule.weights, self.eval_pressure(c, rule.points)) / rule.weights.sum())


def build_locals(mesh: PolyMesh, k: int, quad_degree: int | None = None) -> list[LocalVem]:
    return [LocalVem(mesh, c, k, quad_degree) for c in range(mesh.n_cells)]


def _dof_maps(mesh: PolyMesh, k: int):
    nf = n_face_dofs(k)
    ni = n_div_dofs(k) + n_cross_dofs(k)
    nfd = mesh.n_faces * nf
    maps, signs = [], []
    for c, cell in enumerate(mesh.cells):
        idx, sg = [], []
        for f, s in cell.faces:
            idx.extend(range(f * nf, (f + 1) * nf))
            sg.extend([s] * nf)
        idx.extend(range(nfd + c * ni, nfd + (c + 1) * ni))
        sg.extend([1] * ni)
        maps.append(np.array(idx))
        signs.append(np.array(sg, dtype=float))
    return maps, signs, nfd, nfd + mesh.n_cells * ni


def boundary_face_moments(face, k: int, field: Field) -> np.ndarray:
    """Global D1 values of ``field`` on a boundary face (outward normal),
    sampling the exact surface behind a flattened face."""
    return face_moments(face, 1, k, field, data_map=face.true_map)


def natural_load(face, k: int, pbar: Field) -> np.ndarray:
    """``-int_F pbar (phi_j . n) dF`` for the face basis functions ``phi_j``.

    ``pbar`` is evaluated on the exact surface at the rule's parameter
    points.
    """
    fb = face_basis(face, k)
    r = fb.rule
    x = face.data_map.eval(r.param_points[:, 0], r.param_points[:, 1])
    pb = fb.values.T @ (r.weights * pbar(x))
    return -fb.area * np.linalg.solve(fb.gram, pb)


def assemble(spec: ProblemSpec, locals_: list[LocalVem] | None = None) -> SaddleSystem:
    """Assemble the saddle-point system of ``spec``."""
    mesh, k = spec.mesh, spec.k
    natural = mesh.tagged(NATURAL)
    essential = mesh.tagged(ESSENTIAL)
    gauge = spec.gauge
    if gauge is None:
        gauge = len(natural) == 0
    if not natural and not gauge:
        raise DarcyError("empty natural boundary requires a pressure gauge")
    if natural and spec.pbar is None:
        raise DarcyError("natural boundary data missing")
    if essential and spec.qbar is None:
        raise DarcyError("essential boundary data missing")
    nus = [spec.nu(cell.material) for cell in mesh.cells]

    lvs = locals_ if locals_ is not None else build_locals(mesh, k)
    maps, signs, nfd, nv = _dof_maps(mesh, k)
    npc = dim_p(k - 1)
    npr = mesh.n_cells * npc

    rows, cols, vals = [], [], []
    brows, bcols, bvals = [], [], []
    local_A = []
    G = np.zeros(nv)
    F = np.zeros(npr)
    total_source = 0.0
    for c, lv in enumerate(lvs):
        A, B, _ = local_forms(lv, nus[c])
        idx, sg = maps[c], signs[c]
        As = A * np.outer(sg, sg)
        local_A.append(As)
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        vals.append(As.ravel())
        Bs = B * sg[None, :]
        prow = np.arange(c * npc, (c + 1) * npc)
        brows.append(np.repeat(prow, len(idx)))
        bcols.append(np.tile(idx, npc))
        bvals.append(Bs.ravel())
        X, W = lv.rule.points, lv.rule.weights
        if spec.source is not None:
            fv = spec.source(X) * W
            F[prow] = -(lv.basis(X, k - 1).T @ fv)
            total_source += float(fv.sum())
        if spec.body_force is not None:
            gv = spec.body_force(X) * W[:, None]
            mk = lv.basis(X, k)
            gvec = np.concatenate([mk.T @ gv[:, i] for i in range(3)])
            G[idx] += sg * (lv.Pi.T @ gvec)

    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nv, nv)).tocsr()
    A = ((A + A.T) * 0.5).tocsr()
    B = sp.coo_matrix((np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))), shape=(npr, nv)).tocsr()

    nf = n_face_dofs(k)
    for f in natural:
        G[f * nf : (f + 1) * nf] += natural_load(mesh.faces[f], k, spec.pbar)

    ess_dofs, ess_vals = [], []
    areas = []
    for f in essential:
        ess_dofs.extend(range(f * nf, (f + 1) * nf))
        ess_vals.append(boundary_face_moments(mesh.faces[f], k, spec.qbar))
        areas.append(face_basis(mesh.faces[f], k).area)
    ess_dofs = np.array(ess_dofs, dtype=int)
    ess_vals = np.concatenate(ess_vals) if ess_vals else np.zeros(0)

    shift = 0.0
    if not natural and essential:
        # the boundary flux must balance the discrete source exactly
        areas = np.array(areas)
        flux = float(np.dot(ess_vals[::nf], areas))
        shift = (flux - total_source) / areas.sum()
        ess_vals[::nf] -= shift
        if abs(shift) > 1e-8 * max(1.0, abs(total_source)):
            log.info("essential data adjusted by %.3e for flux compatibility", shift)

    gauge_row = None
    gauge_value = 0.0
    if gauge:
        gauge_row = np.zeros(npr)
        for c, lv in enumerate(lvs):
            gauge_row[c * npc : (c + 1) * npc] = lv.gram[0, :npc]
            if spec.pressure is not None:
                gauge_value += float(np.dot(lv.rule.weights, spec.pressure(lv.rule.points)))

    return SaddleSystem(
        spec, A, B, G, F, ess_dofs, ess_vals, gauge_row, gauge_value, lvs, maps, signs, nfd, nv, npr, shift, local_A
    )


def solve(system: SaddleSystem, check: float = 1e-10, condense: bool = True) -> Solution:
    """Eliminate the essential DOFs and solve with a sparse direct method.

    With ``condense`` the cell-interior velocity moments and the
    non-constant pressure coefficients are eliminated cell by cell first;
    the answer is the same, the factorisation much cheaper. Either way the
    residual is checked on the full constrained system.
    """
    if condense and system.local_A:
        return _solve_condensed(system, check)
    nv, npr = system.n_velocity, system.n_pressure
    free = np.ones(nv, dtype=bool)
    free[system.essential_dofs] = False
    fi = np.flatnonzero(free)
    xe = np.zeros(nv)
    xe[system.essential_dofs] = system.essential_values
    A, B = system.A, system.B
    Aff = A[fi][:, fi]
    Bf = B[:, fi]
    rhs_v = system.G[fi] - A[fi] @ xe
    rhs_p = system.F - B @ xe
    blocks = [[Aff, Bf.T], [Bf, None]]
    rhs = [rhs_v, rhs_p]
    if system.gauge_row is not None:
        g = sp.csr_matrix(system.gauge_row[None, :])
        blocks = [[Aff, Bf.T, None], [Bf, None, g.T], [None, g, None]]
        rhs.append(np.array([system.gauge_value]))
    K = sp.bmat(blocks, format="csc")
    b = np.concatenate(rhs)
    t0 = time.perf_counter()
    try:
        x = spsolve(K, b)
    except RuntimeError as exc:
        raise DarcyError(
            f"linear solve failed on {system.spec.mesh.n_cells} cells, {K.shape[0]} unknowns: {exc}"
        ) from exc
    r = K @ x - b
    nb = max(np.linalg.norm(b), 1e-300)
    res = float(np.linalg.norm(r) / nb)
    if not np.all(np.isfinite(x)) or res > check:
        # one step of iterative refinement before giving up
        x = x - spsolve(K, r)
        res = float(np.linalg.norm(K @ x - b) / nb)
    secs = time.perf_counter() - t0
    if not np.all(np.isfinite(x)) or res > check:
        raise DarcyError(
            f"solver residual {res:.2e} on {system.spec.mesh.n_cells} cells, {K.shape[0]} unknowns"
        )
    vel = xe.copy()
    vel[fi] = x[: len(fi)]
    pres = x[len(fi) : len(fi) + npr]
    mult = float(x[-1]) if system.gauge_row is not None else 0.0
    return Solution(system, vel, pres, res, secs, mult)


def _full_residual(system: SaddleSystem, vel, pres, mult) -> float:
    """Relative residual of the constrained saddle-point system."""
    nv = system.n_velocity
    free = np.ones(nv, dtype=bool)
    free[system.essential_dofs] = False
    rv = (system.A @ vel + system.B.T @ pres - system.G)[free]
    rp = system.B @ vel - system.F
    if system.gauge_row is not None:
        rp = rp + mult * system.gauge_row
        rg = np.array([system.gauge_row @ pres - system.gauge_value])
    else:
        rg = np.zeros(0)
    xe = np.zeros(nv)
    xe[system.essential_dofs] = system.essential_values
    bv = (system.G - system.A @ xe)[free]
    bp = system.F - system.B @ xe
    nb = np.sqrt(np.sum(bv**2) + np.sum(bp**2) + system.gauge_value**2)
    nr = np.sqrt(np.sum(rv**2) + np.sum(rp**2) + np.sum(rg**2))
    return float(nr / max(nb, 1e-300))


def _solve_condensed(system: SaddleSystem, check: float) -> Solution:
    spec = system.spec
    k = spec.k
    npc = dim_p(k - 1)
    nfd = system.n_face_dofs
    ncell = spec.mesh.n_cells
    G, F = system.G, system.F
    rows, cols, vals = [], [], []
    rhs_f = G[:nfd].copy()
    b0_rows, b0_cols, b0_vals = [], [], []
    store = []
    for c, lv in enumerate(system.locals):
        lay = lv.layout
        idx, sg = system.cell_dofs[c], system.cell_signs[c]
        As = system.local_A[c]
        Bs = lv.B * sg[None, :]
        nF = lay.n_faces * lay.per_face
        f_ = slice(0, nF)
        i2, i3 = lay.div_slice, lay.cross_slice
        Fc = F[c * npc : (c + 1) * npc]
        x2 = np.linalg.solve(Bs[1:, i2], Fc[1:]) if lay.n_div else np.zeros(0)
        A33 = As[i3, i3]
        ch = np.linalg.cholesky(A33)

        def a33_solve(rhs, ch=ch):
            y = np.linalg.solve(ch, rhs)
            return np.linalg.solve(ch.T, y)

        gI = G[idx]
        X3F = a33_solve(As[i3, f_])
        x3_0 = a33_solve(gI[i3] - As[i3, i2] @ x2)
        S = As[f_, f_] - As[f_, i3] @ X3F
        r = -As[f_, i2] @ x2 - As[f_, i3] @ x3_0
        gidx = idx[:nF]
        rows.append(np.repeat(gidx, nF))
        cols.append(np.tile(gidx, nF))
        vals.append(S.ravel())
        np.add.at(rhs_f, gidx, r)
        b0_rows.append(np.full(nF, c))
        b0_cols.append(gidx)
        b0_vals.append(Bs[0, f_])
        store.append((x2, X3F, x3_0))

    S = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nfd, nfd)).tocsr()
    S = ((S + S.T) * 0.5).tocsr()
    B0 = sp.coo_matrix(
        (np.concatenate(b0_vals), (np.concatenate(b0_rows), np.concatenate(b0_cols))), shape=(ncell, nfd)
    ).tocsr()
    F0 = F[::npc].copy()

    free = np.ones(nfd, dtype=bool)
    free[system.essential_dofs] = False
    fi = np.flatnonzero(free)
    xe = np.zeros(nfd)
    xe[system.essential_dofs] = system.essential_values
    blocks = [[S[fi][:, fi], B0[:, fi].T], [B0[:, fi], None]]
    rhs = [rhs_f[fi] - S[fi] @ xe, F0 - B0 @ xe]
    if system.gauge_row is not None:
        # the gauge row acts on the constant pressure coefficients; the
        # non-constant ones are fixed by the local problems
        g0 = system.gauge_row[::npc]
        blocks = [
            [blocks[0][0], blocks[0][1], None],
            [blocks[1][0], None, sp.csr_matrix(g0[:, None])],
            [None, sp.csr_matrix(g0[None, :]), None],
        ]
    K = sp.bmat(blocks, format="csc")
    t0 = time.perf_counter()

    try:
        if system.gauge_row is not None:
            x = _gauge_solve(system, K, rhs, fi, xe, store, npc)
        else:
            x = spsolve(K, np.concatenate(rhs))
    except RuntimeError as exc:
        raise DarcyError(f"linear solve failed on {ncell} cells, {K.shape[0]} unknowns: {exc}") from exc
    nff = len(fi)
    vel = np.zeros(system.n_velocity)
    vel[:nfd] = xe
    vel[fi] = x[:nff]
    p0 = x[nff : nff + ncell]
    mult = float(x[-1]) if system.gauge_row is not None else 0.0
    pres = _recover(system, vel, p0, store, npc)
    secs = time.perf_counter() - t0
    res = _full_residual(system, vel, pres, mult)
    if not np.all(np.isfinite(vel)) or res > check:
        raise DarcyError(f"solver residual {res:.2e} on {ncell} cells, {K.shape[0]} unknowns")
    return Solution(system, vel, pres, res, secs, mult)


def _recover(system: SaddleSystem, vel, p0, store, npc) -> np.ndarray:
    """Interior velocity moments and non-constant pressures from the faces."""
    pres = np.zeros(system.n_pressure)
    for c, lv in enumerate(system.locals):
        lay = lv.layout
        idx, sg = system.cell_dofs[c], system.cell_signs[c]
        As = system.local_A[c]
        Bs = lv.B * sg[None, :]
        nF = lay.n_faces * lay.per_face
        i2, i3 = lay.div_slice, lay.cross_slice
        x2, X3F, x3_0 = store[c]
        xF = vel[idx[:nF]]
        x3 = x3_0 - X3F @ xF
        vel[idx[i2]] = x2
        vel[idx[i3]] = x3
        pres[c * npc] = p0[c]
        if lay.n_div:
            xl = vel[idx]
            r = system.G[idx][i2] - As[i2] @ xl - Bs[0, i2] * p0[c]
            pres[c * npc + 1 : (c + 1) * npc] = np.linalg.solve(Bs[1:, i2].T, r)
    return pres


def _gauge_solve(system, K, rhs, fi, xe, store, npc):
    """Solve with the mean-pressure constraint on the full pressure.

    The reduced system fixes the mean of the cell constants; the
    non-constant pressure parts have nonzero means too, so the constants
    are shifted afterwards. A uniform shift leaves the velocity unchanged.
    """
    ncell = system.spec.mesh.n_cells
    nff = len(fi)
    g0 = system.gauge_row[::npc]
    # particular solution with zero constraint value, then fix the mean
    b = np.concatenate(rhs + [np.array([0.0])])
    x = splu(K).solve(b)
    vel = np.zeros(system.n_velocity)
    vel[: system.n_face_dofs] = xe
    vel[fi] = x[:nff]
    pres = _recover(system, vel, x[nff : nff + ncell], store, npc)
    mean = float(system.gauge_row @ pres)
    # adding a constant c to every cell pressure shifts the mean by c * |Omega|
    # and leaves the velocity unchanged
    omega = float(g0.sum())
    x[nff : nff + ncell] += (system.gauge_value - mean) / omega
    return x


def run(spec: ProblemSpec) -> Solution:
    return solve(assemble(spec))


# ----------------------------------------------------------------------
# post-processing
# ----------------------------------------------------------------------


@dataclass
class ErrorReport:
    e_v: float
    e_p: float
    e_p_projected: float
    per_cell_v: np.ndarray = field(repr=False)
    per_cell_p: np.ndarray = field(repr=False)


def errors(spec: ProblemSpec, solution: Solution, degree: int | None = None) -> ErrorReport:
    """L2 errors of ``Pi q_h`` and ``p_h`` against the exact solution.

    Also returns the distance between ``p_h`` and the L2 projection of the
    exact pressure on the pressure space.
    """
    if not spec.has_exact:
        raise DarcyError("errors need a manufactured solution")
    k = spec.k
    degree = 2 * k + 4 if degree is None else degree
    ev, ep, epp = [], [], []
    mesh = spec.mesh
    for c, lv in enumerate(solution.system.locals):
        rule = volume_rule_raw(mesh.cell_faces(c), degree, drop_vertical=True)
        X, W = rule.points, rule.weights
        coef = lv.project(solution.cell_velocity_dofs(c))
        dq = lv.eval_projection(coef, X) - spec.velocity(X)
        ev.append(float(np.dot(W, np.einsum("ij,ij->i", dq, dq))))
        pex = spec.pressure(X)
        mk = lv.basis(X, k - 1)
        ph = mk @ solution.cell_pressure(c)
        ep.append(float(np.dot(W, (ph - pex) ** 2)))
        Gp = (mk * W[:, None]).T @ mk
        proj = np.linalg.solve(Gp, mk.T @ (W * pex))
        d = proj - solution.cell_pressure(c)
        epp.append(float(d @ Gp @ d))
    ev, ep, epp = np.array(ev), np.array(ep), np.array(epp)
    return ErrorReport(
        float(np.sqrt(ev.sum())), float(np.sqrt(ep.sum())), float(np.sqrt(max(epp.sum(), 0.0))), np.sqrt(ev), np.sqrt(ep)
    )


def local_mass_conservation(solution: Solution, relative: bool = True) -> float:
    """Largest cell value of ``||div q_h - Pi_{k-1} f||_0``.

    Relative to ``||f||_0`` on the cell when ``f`` is nonzero there.
    """
    spec = solution.system.spec
    k = spec.k
    worst = 0.0
    for c, lv in enumerate(solution.system.locals):
        d = lv.div_coefficients(solution.cell_velocity_dofs(c))
        Gp = lv.pressure_gram()
        if spec.source is not None:
            X, W = lv.rule.points, lv.rule.weights
            fv = spec.source(X)
            pf = np.linalg.solve(Gp, lv.basis(X, k - 1).T @ (W * fv))
            fnorm = math.sqrt(float(np.dot(W, fv**2)))
        else:
            pf = np.zeros_like(d)
            fnorm = 0.0
        diff = d - pf
        val = math.sqrt(max(float(diff @ Gp @ diff), 0.0))
        if relative and fnorm > 0:
            val /= fnorm
        worst = max(worst, val)
    return worst


def _height_over(fmap, x0: float, y0: float, tol: float = 1e-13) -> float | None:
    """Height of a non-vertical face above ``(x0, y0)``, or ``None`` when
    the vertical line misses the face's parameter square."""
    uv = np.array([0.5, 0.5])
    for _ in range(50):
        x = fmap.eval(uv[:1], uv[1:])[0]
        du, dv = fmap.derivatives(uv[:1], uv[1:])
        J = np.column_stack([du[0, :2], dv[0, :2]])
        step = np.linalg.solve(J, np.array([x0, y0]) - x[:2])
        uv = uv + step
        if np.abs(step).max() < tol:
            break
    if np.any(uv < -1e-9) or np.any(uv > 1 + 1e-9):
        return None
    return float(fmap.eval(uv[:1], uv[1:])[0, 2])


def column_cells(mesh: PolyMesh, x0: float, y0: float) -> list[tuple[int, float, float]]:
    """Cells crossed by the vertical line through ``(x0, y0)``.

    Meant for meshes built from vertical pillars; ``(x0, y0)`` should avoid
    column boundaries. Returns ``(cell, z_bottom, z_top)`` sorted upwards.
    """
    out = []
    for c in range(mesh.n_cells):
        xy = mesh.vertices[mesh.cell_vertex_ids(c), :2]
        if not (xy[:, 0].min() < x0 < xy[:, 0].max() and xy[:, 1].min() < y0 < xy[:, 1].max()):
            continue
        heights = []
        for face, _sign in mesh.cell_faces(c):
            if np.abs(_corner_normal_z(face)).max() < 1e-8:
                continue
            z = _height_over(face.map, x0, y0)
            if z is not None:
                heights.append(z)
        if len(heights) >= 2:
            out.append((c, min(heights), max(heights)))
    if not out:
        raise DarcyError(f"no cell above ({x0}, {y0})")
    return sorted(out, key=lambda r: r[1])


def column_profile(solution: Solution, x0: float, y0: float, zs=None, per_cell: int = 5) -> np.ndarray:
    """Pressure on the vertical line through ``(x0, y0)``.

    Evaluated at the heights ``zs`` when given, otherwise at ``per_cell``
    Gauss heights inside every crossed cell. Rows ``(z, p)`` sorted upwards.
    """
    cells = column_cells(solution.system.spec.mesh, x0, y0)
    if zs is None:
        t, _ = np.polynomial.legendre.leggauss(per_cell)
        t = 0.5 * (t + 1.0)
        chunks = [(c, z0 + (z1 - z0) * t) for c, z0, z1 in cells]
    else:
        zs = np.sort(np.asarray(zs, dtype=float))
        tops = np.array([z1 for _, _, z1 in cells])
        owner = np.minimum(np.searchsorted(tops, zs), len(cells) - 1)
        chunks = [(cells[i][0], zs[owner == i]) for i in range(len(cells)) if np.any(owner == i)]
    rows = []
    for c, z in chunks:
        pts = np.column_stack([np.full(len(z), x0), np.full(len(z), y0), z])
        rows.append(np.column_stack([z, solution.eval_pressure(c, pts)]))
    return np.vstack(rows)


def layer_drops(solution: Solution, x0: float, y0: float) -> dict[int, float]:
    """Pressure drop across each material along a vertical line.

    Interface pressures are the mean of the two one-sided cell values, so
    the drops add up to the difference of the end values.
    """
    mesh = solution.system.spec.mesh
    cells = column_cells(mesh, x0, y0)
    # one-sided values at every cell end, then averaged at shared heights
    values = []
    for c, z0, z1 in cells:
        pts = np.array([[x0, y0, z0], [x0, y0, z1]])
        values.append(solution.eval_pressure(c, pts))
    n = len(cells)
    node = np.empty(n + 1)
    node[0] = values[0][0]
    node[n] = values[-1][1]
    for i in range(1, n):
        node[i] = 0.5 * (values[i - 1][1] + values[i][0])
    drops: dict[int, float] = {}
    for i, (c, _, _) in enumerate(cells):
        mat = mesh.cells[c].material
        drops[mat] = drops.get(mat, 0.0) + float(node[i] - node[i + 1])
    return drops


def _corner_normal_z(face) -> np.ndarray:
    """z-components of the chart normal at the face's corner parameters."""
    n, _ = face.map.jacobian_normal(face.param[:, 0], face.param[:, 1])
    return n[:, 2]


def fit_slope(h, e) -> tuple[float, float]:
    """Least-squares slope of ``log e`` against ``log h`` and the slope of
    the last interval."""
    lh, le = np.log(np.asarray(h, float)), np.log(np.asarray(e, float))
    if len(lh) < 2:
        return float("nan"), float("nan")
    slope = float(np.polyfit(lh, le, 1)[0])
    last = float((le[-1] - le[-2]) / (lh[-1] - lh[-2]))
    return slope, last


@dataclass
class RunRecord:
    family: str
    level: int
    h: float
    k: int
    geo_mode: str
    e_v: float
    e_p: float
    dofs: int
    solve_seconds: float
    e_p_projected: float = float("nan")
    mass_residual: float = float("nan")
    slope_v: float = float("nan")
    slope_p: float = float("nan")
    status: str = "ok"


CSV_COLUMNS = (
    "family",
    "level",
    "h",
    "k",
    "geo_mode",
    "e_v",
    "e_p",
    "slope_v",
    "slope_p",
    "dofs",
    "solve_seconds",
    "e_p_projected",
    "mass_residual",
    "status",
)


def convergence_run(
    mesh: PolyMesh, problem_factory, k: int, family: str, level: int, geo_mode: str, quad_degree: int | None = None
) -> RunRecord:
    spec = problem_factory(mesh, k)
    sol = solve(assemble(spec, build_locals(mesh, k, quad_degree))) if quad_degree else run(spec)
    rep = errors(spec, sol)
    return RunRecord(
        family,
        level,
        mesh_size(mesh),
        k,
        geo_mode,
        rep.e_v,
        rep.e_p,
        sol.system.n_dofs,
        sol.solve_seconds,
        rep.e_p_projected,
        local_mass_conservation(sol),
    )


def attach_slopes(records: list[RunRecord]) -> None:
    """Fill the slope columns per ``(family, k, geo_mode)`` group, on the
    row of the finest level."""
    groups: dict = {}
    for r in records:
        if r.status == "ok":
            groups.setdefault((r.family, r.k, r.geo_mode), []).append(r)
    for rs in groups.values():
        rs.sort(key=lambda r: r.level)
        for i in range(1, len(rs)):
            sub = rs[: i + 1]
            rs[i].slope_v = fit_slope([r.h for r in sub], [r.e_v for r in sub])[0]
            rs[i].slope_p = fit_slope([r.h for r in sub], [r.e_p for r in sub])[0]


def format_value(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6e}"
    return str(v)


def write_csv(records: list[RunRecord], path, timing: bool = True) -> None:
    """Write records; with ``timing=False`` the timing column is blank so
    the file is byte-identical across runs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            row = []
            for col in CSV_COLUMNS:
                v = getattr(r, col)
                if col == "solve_seconds" and not timing:
                    v = ""
                row.append(format_value(v))
            writer.writerow(row)
