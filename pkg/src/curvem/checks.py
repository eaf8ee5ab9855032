"""Named invariant checks shared by the self test and the test suite.

Every check returns a :class:`CheckResult`; exceptions raised inside a
check are reported as failures with the exception text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import face_maps as fm
from .darcy import errors, local_mass_conservation, patch_problem, run
from .mesh import PolyMesh, family_mesh, gen_cornerpoint, gen_curved_top_cube, read_mesh
from .poly import dim_p, vector_decomp
from .quadrature import compress_rule, integrate, moment_residual, volume_rule_raw
from .vem import LocalVem, local_forms

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    ok: bool
    value: float = float("nan")
    tolerance: float = float("nan")
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        text = f"{status} {self.name}"
        if not np.isnan(self.value):
            text += f"  value={self.value:.3e} tol={self.tolerance:.1e}"
        if self.detail:
            text += f"  {self.detail}"
        return text


def _bounded(name: str, value: float, tol: float, detail: str = "") -> CheckResult:
    return CheckResult(name, bool(value <= tol), float(value), tol, detail)


def lifted_corner_cube(lift: float = 0.3) -> PolyMesh:
    """Unit cube whose top face is the bilinear surface through a lifted corner."""
    Z = np.zeros((2, 2, 2))
    Z[:, :, 1] = 1.0
    Z[1, 1, 1] += lift
    return gen_cornerpoint(1, 1, 1, Z)


def sample_meshes() -> dict[str, PolyMesh]:
    """Small members of every mesh family."""
    return {
        "curved_top_cube": family_mesh("curved_top_cube", 0),
        "extruded_annulus_quad": family_mesh("extruded_annulus_quad", 1),
        "extruded_annulus_tria": family_mesh("extruded_annulus_tria", 1),
        "cornerpoint_layers": family_mesh("cornerpoint_layers", 1),
        "straight_cube": gen_curved_top_cube(2, 0.0),
    }


# ----------------------------------------------------------------------
# individual checks
# ----------------------------------------------------------------------


def check_mesh_file(path) -> CheckResult:
    try:
        mesh = read_mesh(path)
    except Exception as exc:
        return CheckResult(f"mesh[file:{path}]", False, detail=str(exc))
    return check_mesh(f"file:{path}", mesh)


def check_mesh(name: str, mesh: PolyMesh) -> CheckResult:
    try:
        mesh.check()
    except Exception as exc:  # the message names the broken invariant
        return CheckResult(f"mesh[{name}]", False, detail=str(exc))
    return CheckResult(f"mesh[{name}]", True)


def _sample_maps() -> dict[str, fm.FaceMap]:
    return {
        "affine": fm.AffineMap([0.1, 0.2, 0.3], [1.0, 0.2, 0.0], [0.0, 0.7, 0.4]),
        "bilinear": fm.BilinearMap([0, 0, 0], [1, 0, 0.1], [1, 1, 0.5], [0, 1, 0.2]),
        "cylinder": fm.CylinderMap([0.5, 0.0, 0.0], [0.0, np.pi / 2, 0.0], [0.0, 0.0, 1.0]),
        "graph_sin": fm.GraphSinMap([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.1),
    }


def check_face_map(kind: str, fmap: fm.FaceMap, rng: np.random.Generator) -> list[CheckResult]:
    """Unit normals, ``J = |d_u gamma x d_v gamma|`` against central
    differences, and ``invert(eval(u, v)) = (u, v)``."""
    uv = rng.uniform(0.1, 0.9, (10, 2))
    n, J = fmap.jacobian_normal(uv[:, 0], uv[:, 1])
    unit = float(np.abs(np.linalg.norm(n, axis=1) - 1.0).max())
    eps = 1e-5
    du = (fmap.eval(uv[:, 0] + eps, uv[:, 1]) - fmap.eval(uv[:, 0] - eps, uv[:, 1])) / (2 * eps)
    dv = (fmap.eval(uv[:, 0], uv[:, 1] + eps) - fmap.eval(uv[:, 0], uv[:, 1] - eps)) / (2 * eps)
    cross = np.cross(du, dv)
    fd = float(np.abs(cross - n * J[:, None]).max() / J.max())
    inv = 0.0
    for u, v in uv:
        back = fm.invert(fmap, fmap.eval(np.array([u]), np.array([v]))[0])
        inv = max(inv, float(np.abs(np.ravel(back) - (u, v)).max()))
    return [
        _bounded(f"face_maps.normal[{kind}]", unit, 1e-12),
        _bounded(f"face_maps.jacobian[{kind}]", fd, 1e-7, "central differences"),
        _bounded(f"face_maps.invert[{kind}]", inv, 1e-10),
    ]


def check_decomposition(k: int) -> CheckResult:
    dec = vector_decomp(k)
    sv = np.linalg.svd(dec.rows, compute_uv=False)
    ok = dec.rows.shape == (3 * dim_p(k), 3 * dim_p(k)) and sv[-1] > 1e-10 * sv[0]
    return CheckResult(f"poly.decomposition[k={k}]", bool(ok), float(sv[-1] / sv[0]), 1e-10,
                       f"{dec.n_grad} gradients + {dec.n_cross} cross")


def check_volume_exactness(degree: int, rng: np.random.Generator) -> CheckResult:
    """Random polynomials of ``degree`` on the straight unit cube."""
    mesh = gen_curved_top_cube(1, 0.0)
    rule = volume_rule_raw(mesh.cell_faces(0), degree)
    worst = 0.0
    for _ in range(5):
        cuts = np.sort(rng.integers(0, degree + 1, 2))
        e = np.array([cuts[0], cuts[1] - cuts[0], degree - cuts[1]])
        exact = float(np.prod(1.0 / (e + 1)))
        val = integrate(rule, lambda x, e=e: np.prod(x**e, axis=1))
        worst = max(worst, abs(val - exact))
    return _bounded(f"quadrature.exactness[d={degree}]", worst, 1e-12)


def check_compression() -> CheckResult:
    mesh = lifted_corner_cube()
    raw = volume_rule_raw(mesh.cell_faces(0), 2)
    geo = mesh.geometry(0)
    comp = compress_rule(raw, 2, geo.barycenter, geo.diameter)
    res = moment_residual(comp, raw, 2, geo.barycenter, geo.diameter)
    ok = comp.provenance == "compressed" and len(comp) <= dim_p(2) and np.all(comp.weights > 0) and res <= 1e-12
    return CheckResult("quadrature.compression", bool(ok), res, 1e-12, f"{len(raw)} -> {len(comp)} points")


def check_consistency(k: int, rng: np.random.Generator, quad_degree: int | None = None,
                      trials: int = 20) -> CheckResult:
    """``project(interpolate(p)) = p`` for random ``p`` in ``[P_k]^3`` on a
    straight cube cell."""
    mesh = gen_curved_top_cube(2, 0.0)
    lv = LocalVem(mesh, 0, k, quad_degree)
    worst = 0.0
    for _ in range(trials):
        c = rng.uniform(-1.0, 1.0, 3 * dim_p(k))
        dofs = lv.interpolate(lambda x, c=c: lv.eval_projection(c, x))
        worst = max(worst, float(np.abs(lv.project(dofs) - c).max()))
    detail = "" if quad_degree is None else f"quadrature degree {quad_degree}"
    return _bounded(f"vem.consistency[k={k}]", worst, 1e-9, detail)


def check_stabilization(k: int, rng: np.random.Generator) -> CheckResult:
    mesh = gen_curved_top_cube(2, 0.0)
    lv = LocalVem(mesh, 0, k)
    _, _, S = local_forms(lv, 1.0)
    worst = 0.0
    for _ in range(5):
        c = rng.uniform(-1.0, 1.0, 3 * dim_p(k))
        dofs = lv.interpolate(lambda x, c=c: lv.eval_projection(c, x))
        worst = max(worst, float(np.abs(S @ dofs).max()))
    return _bounded(f"vem.stabilization[k={k}]", worst, 1e-10)


def check_spd(name: str, mesh: PolyMesh, k: int) -> CheckResult:
    worst = np.inf
    for c in range(mesh.n_cells):
        A, _, _ = local_forms(LocalVem(mesh, c, k), 1.0)
        if not np.array_equal(A, A.T):
            return CheckResult(f"vem.spd[{name},k={k}]", False, detail=f"cell {c} not symmetric")
        worst = min(worst, float(np.linalg.eigvalsh(A)[0]))
    return CheckResult(f"vem.spd[{name},k={k}]", bool(worst > 0), worst, 0.0, "smallest eigenvalue")


def check_patch(k: int, seed: int, quad_degree: int | None = None) -> CheckResult:
    mesh = gen_curved_top_cube(2, 0.0)
    spec = patch_problem(mesh, k, seed)
    if quad_degree is not None:
        from .darcy import assemble, build_locals, solve

        sol = solve(assemble(spec, build_locals(mesh, k, quad_degree)))
    else:
        sol = run(spec)
    rep = errors(spec, sol)
    mass = local_mass_conservation(sol)
    return _bounded(f"darcy.patch[k={k}]", max(rep.e_v, rep.e_p, mass), 1e-9)


# ----------------------------------------------------------------------
# suite
# ----------------------------------------------------------------------


def suite(seed: int = 0, quad_degree: int | None = None, mesh_files=(), ks=(1, 2, 3)) -> list[tuple[str, Callable]]:
    """Named deferred checks; each callable returns one result or a list."""
    rng = np.random.default_rng(seed)
    meshes = sample_meshes()
    checks: list[tuple[str, Callable]] = []
    for name, mesh in meshes.items():
        checks.append((f"mesh[{name}]", lambda n=name, m=mesh: check_mesh(n, m)))
    for path in mesh_files:
        checks.append((f"mesh[file:{path}]", lambda p=path: check_mesh_file(p)))
    for kind, fmap in _sample_maps().items():
        checks.append((f"face_maps[{kind}]", lambda k=kind, f=fmap: check_face_map(k, f, rng)))
    for k in ks:
        checks.append((f"poly.decomposition[k={k}]", lambda k=k: check_decomposition(k)))
    for d in range(1, 7):
        checks.append((f"quadrature.exactness[d={d}]", lambda d=d: check_volume_exactness(d, rng)))
    checks.append(("quadrature.compression", check_compression))
    for k in ks:
        checks += [
            (f"vem.consistency[k={k}]", lambda k=k: check_consistency(k, rng, quad_degree)),
            (f"vem.stabilization[k={k}]", lambda k=k: check_stabilization(k, rng)),
            (f"vem.spd[curved_top_cube,k={k}]", lambda k=k: check_spd("curved_top_cube", meshes["curved_top_cube"], k)),
            (f"darcy.patch[k={k}]", lambda k=k: check_patch(k, seed, quad_degree)),
        ]
    return checks


def run_suite(checks) -> list[CheckResult]:
    """Run named checks; an exception becomes a failure under the check's name."""
    out = []
    for name, chk in checks:
        try:
            res = chk()
        except Exception as exc:
            res = CheckResult(name, False, detail=f"{type(exc).__name__}: {exc}")
        for r in res if isinstance(res, list) else [res]:
            log.info(r.line())
            out.append(r)
    return out
