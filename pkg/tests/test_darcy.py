import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvem.darcy import (
    DarcyError,
    ProblemSpec,
    RunRecord,
    Solution,
    assemble,
    attach_slopes,
    column_profile,
    errors,
    example1_problem,
    example2_problem,
    fit_slope,
    layer_drops,
    layered_problem,
    local_mass_conservation,
    patch_problem,
    run,
    solve,
    write_csv,
)
from curvem.mesh import ESSENTIAL, NATURAL, gen_curved_top_cube, gen_layered_cube, mesh_size

from .conftest import cached_cube, cached_family

CENTER = (0.5 - 1e-6, 0.5 - 1e-6)


def retag(mesh, kind):
    """Copy of the mesh with every boundary face tagged ``kind``."""
    mesh = copy.copy(mesh)
    mesh.boundary_tags = dict(mesh.boundary_tags)
    for f in mesh.boundary_faces():
        mesh.boundary_tags[f] = kind
    return mesh


def linear_pressure_problem(mesh, k, tag):
    """p = x, q = -(1, 0, 0) with kappa = mu = 1."""
    return ProblemSpec(
        retag(mesh, tag),
        k,
        pressure=lambda x: x[:, 0].copy(),
        velocity=lambda x: np.tile([-1.0, 0.0, 0.0], (len(x), 1)),
    )


def homogeneous(mesh):
    spec = layered_problem(mesh, 2, kappa=(1.0, 1.0, 1.0))
    spec.pressure = lambda x: 1.0 - x[:, 2]
    spec.velocity = lambda x: np.tile([0.0, 0.0, 1.0], (len(x), 1))
    return spec


# ---------------------------------------------------------------- problem data


def test_zero_data_gives_zero_solution():
    mesh = retag(gen_curved_top_cube(1, 0.0), NATURAL)
    zero = lambda x: np.zeros(len(x))  # noqa: E731
    sol = run(ProblemSpec(mesh, 1, pbar=zero))
    assert np.abs(sol.velocity).max() == 0.0
    assert np.abs(sol.pressure).max() == 0.0


def test_non_positive_viscosity_is_rejected():
    with pytest.raises(DarcyError, match="viscosity"):
        ProblemSpec(gen_curved_top_cube(1, 0.0), 1, mu=0.0)


def test_missing_material_is_rejected():
    mesh = gen_layered_cube(1, "flat")
    with pytest.raises(DarcyError, match="material 2"):
        assemble(layered_problem(mesh, 1, kappa=(1.0, 1.0)))


def test_all_essential_without_gauge_is_rejected():
    spec = example1_problem(gen_curved_top_cube(1, 0.0), 1)
    spec.gauge = False
    with pytest.raises(DarcyError, match="gauge"):
        assemble(spec)


def test_errors_need_exact_solution():
    mesh = retag(gen_curved_top_cube(1, 0.0), NATURAL)
    spec = ProblemSpec(mesh, 1, pbar=lambda x: np.zeros(len(x)))
    with pytest.raises(DarcyError, match="manufactured"):
        errors(spec, run(spec))


# ---------------------------------------------------------------- exactness


@pytest.mark.parametrize("tag", [NATURAL, ESSENTIAL])
def test_linear_pressure_patch_k2(tag):
    spec = linear_pressure_problem(gen_curved_top_cube(2, 0.0), 2, tag)
    sol = run(spec)
    rep = errors(spec, sol)
    assert sol.residual <= 1e-10
    assert rep.e_v <= 1e-10 and rep.e_p <= 1e-10


@pytest.mark.parametrize("k", [1, 2, 3])
def test_patch_problem_is_reproduced(k):
    spec = patch_problem(gen_curved_top_cube(2, 0.0), k, seed=k)
    sol = run(spec)
    rep = errors(spec, sol)
    assert rep.e_v <= 1e-9 and rep.e_p <= 1e-9
    assert local_mass_conservation(sol) <= 1e-10


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000), nu=st.floats(0.1, 10.0))
def test_patch_property(seed, nu):
    spec = patch_problem(cached_cube(2, 0.0), 2, seed=seed, nu=nu)
    rep = errors(spec, run(spec))
    assert rep.e_v <= 1e-9 and rep.e_p <= 1e-9


def test_exact_interpolant_has_zero_velocity_error():
    mesh = gen_curved_top_cube(2, 0.0)
    spec = linear_pressure_problem(mesh, 2, NATURAL)
    system = assemble(spec)
    vel = np.zeros(system.n_velocity)
    for c, lv in enumerate(system.locals):
        vel[system.cell_dofs[c]] = lv.interpolate(spec.velocity) * system.cell_signs[c]
    pres = np.concatenate([lv.l2_project_scalar(spec.pressure, 1) for lv in system.locals])
    rep = errors(spec, Solution(system, vel, pres, 0.0, 0.0))
    assert rep.e_v <= 1e-9 and rep.e_p <= 1e-12


# ---------------------------------------------------------------- system structure


def test_condensed_and_full_solves_agree():
    spec = example1_problem(cached_cube(2, 0.1), 2)
    system = assemble(spec)
    a = solve(system, condense=True)
    b = solve(system, condense=False)
    np.testing.assert_allclose(a.velocity, b.velocity, atol=1e-10)
    np.testing.assert_allclose(a.pressure, b.pressure, atol=1e-10)


@pytest.mark.parametrize("family", ["curved_top_cube", "extruded_annulus_tria", "cornerpoint_layers"])
def test_assembled_matrix_is_symmetric(family):
    mesh = cached_family(family, 1)
    spec = layered_problem(mesh, 2) if family == "cornerpoint_layers" else example2_problem(mesh, 2)
    A = assemble(spec).A
    assert (A != A.T).nnz == 0


def test_example1_level0_solves():
    spec = example1_problem(cached_family("curved_top_cube", 0), 1)
    sol = run(spec)
    assert sol.residual <= 1e-10
    assert sol.system.gauge_row is not None


def test_example2_level1_solves():
    sol = run(example2_problem(cached_family("extruded_annulus_quad", 1), 2))
    assert sol.residual <= 1e-10 and sol.solve_seconds >= 0


def test_flux_is_continuous_across_interior_faces():
    mesh = cached_family("curved_top_cube", 1)
    sol = run(example1_problem(mesh, 2))
    rng = np.random.default_rng(0)
    interior = [f for f, cs in enumerate(mesh.face_cells()) if len(cs) == 2]
    for f in rng.choice(interior, 10, replace=False):
        traces = []
        for c, _ in mesh.face_cells()[f]:
            lv = sol.system.locals[c]
            i = [g for g, _ in mesh.cells[c].faces].index(f)
            traces.append(lv.face_trace(i, sol.cell_velocity_dofs(c)))
        # outward normals are opposite, so the outward traces cancel exactly
        np.testing.assert_array_equal(traces[0], -traces[1])


def test_essential_dofs_carry_prescribed_moments():
    sol = run(example2_problem(cached_family("extruded_annulus_quad", 1), 2))
    s = sol.system
    np.testing.assert_array_equal(sol.velocity[s.essential_dofs], s.essential_values)


def test_compatibility_shift_is_small_on_consistent_data():
    spec = example1_problem(cached_family("curved_top_cube", 1), 3)
    assert abs(assemble(spec).compatibility_shift) < 1e-5


# ---------------------------------------------------------------- conservation


def test_mass_conservation_divergence_free():
    spec = linear_pressure_problem(cached_cube(2, 0.1), 2, NATURAL)
    assert local_mass_conservation(run(spec)) <= 1e-10


@pytest.mark.parametrize("k", [1, 2, 3])
def test_mass_conservation_example2(k):
    sol = run(example2_problem(cached_family("extruded_annulus_tria", 1), k))
    assert local_mass_conservation(sol) <= 1e-9


@pytest.mark.parametrize("variant", ["flat", "curved"])
def test_mass_conservation_cornerpoint(variant):
    sol = run(layered_problem(gen_layered_cube(1, variant), 2))
    assert local_mass_conservation(sol) <= 1e-10


# ---------------------------------------------------------------- convergence


def test_example1_velocity_converges_at_optimal_rate():
    h, e = [], []
    for level in range(3):
        spec = example1_problem(cached_family("curved_top_cube", level), 1)
        rep = errors(spec, run(spec))
        h.append(mesh_size(spec.mesh))
        e.append(rep.e_v)
    assert fit_slope(h, e)[0] == pytest.approx(2.0, abs=0.35)


def test_pressure_is_superclose_to_its_projection():
    # p_h approaches the L2 projection of p faster than p itself
    for level in (0, 1):
        spec = example1_problem(cached_family("curved_top_cube", level), 2)
        rep = errors(spec, run(spec))
        assert rep.e_p_projected < 0.5 * rep.e_p


# ---------------------------------------------------------------- layered column


@pytest.mark.parametrize("level", [1, 2])
def test_homogeneous_flat_layers_are_exact(level):
    spec = homogeneous(gen_layered_cube(level, "flat"))
    rep = errors(spec, run(spec))
    assert rep.e_p <= 1e-12 and rep.e_v <= 1e-12


def test_homogeneous_curved_layers_error_decreases():
    eps = []
    for level in (1, 2):
        spec = homogeneous(cached_family("cornerpoint_layers", level))
        eps.append(errors(spec, run(spec)).e_p)
    assert eps[1] < eps[0] < 1e-6


def test_flat_layers_match_series_resistance():
    sol = run(layered_problem(gen_layered_cube(1, "flat"), 2))
    drops = layer_drops(sol, *CENTER)
    r = np.array([1 / 3, (1 / 3) / 0.01, 1 / 3])
    expected = r / r.sum()
    for mat in range(3):
        assert drops[mat] == pytest.approx(expected[mat], abs=0.01)
    assert sum(drops.values()) == pytest.approx(1.0, abs=1e-12)


def test_curved_layers_centerline_is_monotone():
    sol = run(layered_problem(cached_family("cornerpoint_layers", 2), 2))
    prof = column_profile(sol, *CENTER)
    assert np.all(np.diff(prof[:, 0]) > 0)
    assert np.all(np.diff(prof[:, 1]) < 1e-9)
    assert prof[0, 1] == pytest.approx(1.0, abs=0.05) and prof[-1, 1] == pytest.approx(0.0, abs=0.05)


# ---------------------------------------------------------------- tables


@given(slope=st.floats(-5, 5), c=st.floats(0.1, 10))
def test_fit_slope_recovers_power_law(slope, c):
    h = np.array([0.5, 0.25, 0.125, 0.0625])
    fitted, last = fit_slope(h, c * h**slope)
    assert fitted == pytest.approx(slope, abs=1e-9) and last == pytest.approx(slope, abs=1e-9)


def test_slopes_attach_to_finest_rows():
    recs = [RunRecord("f", lvl, 2.0**-lvl, 1, "withGeo", 4.0**-lvl, 2.0**-lvl, 10, 0.0) for lvl in range(3)]
    attach_slopes(recs)
    assert math.isnan(recs[0].slope_v)
    assert recs[2].slope_v == pytest.approx(2.0) and recs[2].slope_p == pytest.approx(1.0)


def test_csv_without_timing_is_deterministic(tmp_path):
    recs = [RunRecord("f", 0, 0.5, 1, "withGeo", 1e-3, 2e-3, 10, 0.123)]
    write_csv(recs, tmp_path / "a.csv", timing=False)
    recs[0].solve_seconds = 9.87
    write_csv(recs, tmp_path / "b.csv", timing=False)
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    header = a.decode().splitlines()[0].split(",")
    assert header[:11] == ["family", "level", "h", "k", "geo_mode", "e_v", "e_p", "slope_v", "slope_p", "dofs",
                           "solve_seconds"]
