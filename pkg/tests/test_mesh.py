import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from curvem import face_maps as fm
from curvem.checks import lifted_corner_cube
from curvem.mesh import (
    ESSENTIAL,
    NATURAL,
    MeshError,
    flatten,
    family_mesh,
    gen_cornerpoint,
    gen_curved_top_cube,
    gen_extruded_annulus,
    gen_layered_cube,
    mesh_from_dict,
    mesh_size,
    mesh_to_dict,
    read_mesh,
    write_mesh,
)
from curvem.quadrature import face_rule

from .conftest import cached_family

FAMILIES = ["curved_top_cube", "extruded_annulus_quad", "extruded_annulus_tria", "cornerpoint_layers"]


def total_volume(mesh):
    return sum(mesh.geometry(c).volume for c in range(mesh.n_cells))


def on_cylinder(face, R):
    X = face.map.eval(face.param[:, 0], face.param[:, 1])
    return bool(np.allclose(np.hypot(X[:, 0], X[:, 1]), R, atol=1e-12)) and not face.map.is_planar


# ---------------------------------------------------------------- mesh size


def test_mesh_size_of_unit_cube():
    assert mesh_size(gen_curved_top_cube(1, 0.0)) == pytest.approx(math.sqrt(3), rel=1e-13)


def test_mesh_size_of_2x2x2_cube():
    assert mesh_size(gen_curved_top_cube(2, 0.0)) == pytest.approx(math.sqrt(3) / 2, rel=1e-13)


def test_mesh_size_empty_mesh_is_an_error():
    mesh = gen_curved_top_cube(1, 0.0)
    mesh.cells = []
    with pytest.raises(MeshError, match="empty mesh"):
        mesh_size(mesh)


@pytest.mark.parametrize("family", FAMILIES)
def test_refinement_reduces_mesh_size_and_adds_cells(family):
    meshes = [cached_family(family, level) for level in range(1, 4)]
    h = [mesh_size(m) for m in meshes]
    n = [m.n_cells for m in meshes]
    assert all(b < a for a, b in zip(h, h[1:]))
    assert all(b > a for a, b in zip(n, n[1:]))


# ---------------------------------------------------------------- curved-top cube


def test_flat_cube_has_six_affine_faces():
    mesh = gen_curved_top_cube(1, 0.0)
    assert mesh.n_cells == 1
    assert [f.map.kind for f in mesh.faces] == ["affine"] * 6


def test_curved_top_chart_and_volume():
    mesh = gen_curved_top_cube(1, 0.1)
    tops = [f for f in mesh.faces if f.curved]
    assert len(tops) == 1
    u = np.linspace(0, 1, 7)
    U, V = np.meshgrid(u, u)
    X = tops[0].map.eval(U.ravel(), V.ravel())
    # the top surface is z = 1 - 0.1 sin(pi x)
    np.testing.assert_allclose(X[:, 2], 1 - 0.1 * np.sin(np.pi * X[:, 0]), atol=1e-14)
    assert mesh.geometry(0).volume == pytest.approx(1 - 0.2 / math.pi, rel=1e-12)


def test_curved_top_cube_n2_is_consistent():
    mesh = gen_curved_top_cube(2, 0.1)
    assert mesh.n_cells == 8
    mesh.check()
    assert set(mesh.tagged(ESSENTIAL)) == set(mesh.boundary_faces())


def test_curved_top_grading_makes_interior_faces_curved():
    mesh = gen_curved_top_cube(3, 0.1)
    interior = [f for f, cs in enumerate(mesh.face_cells()) if len(cs) == 2]
    assert any(mesh.faces[f].curved for f in interior)


@pytest.mark.parametrize("n", [0, -1])
def test_curved_top_cube_rejects_empty_subdivision(n):
    with pytest.raises(MeshError):
        gen_curved_top_cube(n, 0.1)


# ---------------------------------------------------------------- extruded annulus


def test_coarsest_quad_annulus_cell():
    mesh = gen_extruded_annulus("quad", 1, 1, 1)
    assert mesh.n_cells == 1
    faces = [f for f, _ in mesh.cell_faces(0)]
    assert sum(on_cylinder(f, 0.2) or on_cylinder(f, 1.0) for f in faces) == 2
    assert sum(f.map.is_planar for f in faces) == 4
    assert len(mesh.tagged(NATURAL)) == 2 and len(mesh.tagged(ESSENTIAL)) == 4


@pytest.mark.parametrize("base", ["quad", "tria"])
def test_annulus_volume_matches_closed_form(base):
    mesh = gen_extruded_annulus(base, 2, 3, 1)
    assert total_volume(mesh) == pytest.approx(0.48 * math.pi, rel=1e-10)


def test_tria_cells_touch_exactly_one_boundary_cylinder():
    mesh = gen_extruded_annulus("tria", 1, 4, 1)
    for c in range(mesh.n_cells):
        faces = [f for f, _ in mesh.cell_faces(c)]
        assert sum(on_cylinder(f, 0.2) or on_cylinder(f, 1.0) for f in faces) == 1


@pytest.mark.parametrize("R1,R2", [(1.0, 1.0), (1.0, 0.5), (0.0, 1.0)])
def test_annulus_rejects_bad_radii(R1, R2):
    with pytest.raises(MeshError):
        gen_extruded_annulus("quad", 1, 1, 1, R1, R2)


def test_cylinder_faces_are_natural_and_planar_faces_essential():
    mesh = gen_extruded_annulus("quad", 2, 2, 2)
    for f in mesh.boundary_faces():
        face = mesh.faces[f]
        curved_boundary = on_cylinder(face, 0.2) or on_cylinder(face, 1.0)
        assert mesh.boundary_tags[f] == (NATURAL if curved_boundary else ESSENTIAL)


# ---------------------------------------------------------------- corner-point grids


def test_planar_pillars_give_affine_geometry():
    Z = np.zeros((2, 2, 2))
    Z[:, :, 1] = 1.0
    mesh = gen_cornerpoint(1, 1, 1, Z)
    for face in mesh.faces:
        assert face.map.is_planar
        corners = face.map.eval(face.param[:, 0], face.param[:, 1])
        np.testing.assert_allclose(corners, mesh.vertices[list(face.loop)], atol=1e-15)
    assert mesh.geometry(0).volume == pytest.approx(1.0, abs=1e-14)


def test_lifted_corner_volume_is_mean_corner_height():
    mesh = lifted_corner_cube(0.2)
    assert mesh.geometry(0).volume == pytest.approx((1 + 1 + 1 + 1.2) / 4, rel=1e-13)


def test_standard_bilinear_chart_on_lifted_top():
    mesh = lifted_corner_cube(0.2)
    top = [f for f in mesh.faces if f.curved]
    assert len(top) == 1
    # z = 1 + 0.2 x y on the lifted top
    rng = np.random.default_rng(3)
    uv = rng.uniform(0, 1, (20, 2))
    X = top[0].map.eval(uv[:, 0], uv[:, 1])
    np.testing.assert_allclose(X[:, 2], 1 + 0.2 * X[:, 0] * X[:, 1], atol=1e-14)


def test_layer_materials_follow_layer_index():
    Z = np.broadcast_to(np.arange(4.0), (2, 2, 4))
    mesh = gen_cornerpoint(1, 1, 3, Z)
    assert [c.material for c in mesh.cells] == [0, 1, 2]
    kappa = np.array([1.0, 0.01, 1.0])
    assert list(kappa[[c.material for c in mesh.cells]]) == [1.0, 0.01, 1.0]


def test_non_monotone_pillar_is_rejected():
    Z = np.zeros((2, 2, 2))
    Z[:, :, 1] = 1.0
    Z[0, 0, 1] = -0.1
    with pytest.raises(MeshError, match="pinched cell unsupported"):
        gen_cornerpoint(1, 1, 1, Z)


@pytest.mark.parametrize("variant", ["flat", "curved"])
def test_layered_cube_has_three_materials(variant):
    mesh = gen_layered_cube(1, variant)
    assert sorted({c.material for c in mesh.cells}) == [0, 1, 2]
    assert total_volume(mesh) == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------- invariants on all families


@pytest.mark.parametrize("family", FAMILIES)
def test_family_meshes_pass_invariant_suite(family):
    cached_family(family, 1).check()


@pytest.mark.parametrize("family", FAMILIES)
def test_outward_flux_identity(family):
    mesh = cached_family(family, 1)
    for c in range(mesh.n_cells):
        geo = mesh.geometry(c)
        flux = 0.0
        for face, s in mesh.cell_faces(c):
            r = face_rule(face, 10)
            flux += s * np.sum(r.weights * np.einsum("ij,ij->i", r.normals, r.physical_points - geo.barycenter))
        assert flux == pytest.approx(3 * geo.volume, rel=1e-9)


@pytest.mark.parametrize("family", FAMILIES)
def test_interior_faces_have_opposite_signs(family):
    mesh = cached_family(family, 1)
    for cs in mesh.face_cells():
        assert len(cs) in (1, 2)
        if len(cs) == 2:
            assert cs[0][1] == -cs[1][1]


@pytest.mark.parametrize("family", FAMILIES)
def test_charts_interpolate_face_vertices(family):
    mesh = cached_family(family, 1)
    for face in mesh.faces:
        X = face.map.eval(face.param[:, 0], face.param[:, 1])
        np.testing.assert_allclose(X, mesh.vertices[list(face.loop)], atol=1e-10)


@given(n=st.integers(1, 3), a=st.floats(-0.5, 0.5))
def test_curved_top_cube_volume_for_any_amplitude(n, a):
    mesh = gen_curved_top_cube(n, a)
    assert total_volume(mesh) == pytest.approx(1 - 2 * a / math.pi, rel=1e-10)


@given(lift=st.floats(-0.5, 0.5), corner=st.tuples(st.integers(0, 1), st.integers(0, 1)))
def test_lifted_corner_volume_property(lift, corner):
    Z = np.zeros((2, 2, 2))
    Z[:, :, 1] = 1.0
    Z[corner[0], corner[1], 1] += lift
    mesh = gen_cornerpoint(1, 1, 1, Z)
    mesh.check()
    assert mesh.geometry(0).volume == pytest.approx(1 + lift / 4, rel=1e-12)


def test_detects_flipped_orientation():
    mesh = gen_curved_top_cube(2, 0.1)
    data = mesh_to_dict(mesh)
    interior = next(f for f, cs in enumerate(mesh.face_cells()) if len(cs) == 2)
    for cell in data["cells"]:
        for ref in cell["faces"]:
            if ref[0] == interior:
                ref[1] = -ref[1]
                break
        else:
            continue
        break
    with pytest.raises(MeshError, match="orientation"):
        mesh_from_dict(data)


# ---------------------------------------------------------------- noGeo twin


def test_flatten_keeps_vertices_and_exact_chart():
    mesh = cached_family("extruded_annulus_quad", 1)
    flat = flatten(mesh)
    np.testing.assert_array_equal(flat.vertices, mesh.vertices)
    for f0, f1 in zip(mesh.faces, flat.faces):
        assert f1.map.kind in ("affine", "bilinear")
        if f0.map.kind not in ("affine", "bilinear"):
            assert f1.true_map is f0.map
    flat.check()


def test_flatten_loses_curved_volume():
    mesh = gen_extruded_annulus("quad", 1, 2, 1)
    # the chordal twin is the polygonal annulus sector
    chordal = 0.5 * 2 * math.sin(math.pi / 2) * (1.0 - 0.04)
    assert total_volume(flatten(mesh)) == pytest.approx(chordal, rel=1e-12)
    assert total_volume(mesh) == pytest.approx(0.48 * math.pi, rel=1e-10)


# ---------------------------------------------------------------- I/O


def same_mesh(a, b):
    np.testing.assert_array_equal(a.vertices, b.vertices)
    assert [f.loop for f in a.faces] == [f.loop for f in b.faces]
    assert [f.map.descriptor() for f in a.faces] == [f.map.descriptor() for f in b.faces]
    for fa, fb in zip(a.faces, b.faces):
        np.testing.assert_array_equal(fa.param, fb.param)
    assert [(c.faces, c.material) for c in a.cells] == [(c.faces, c.material) for c in b.cells]
    assert a.boundary_tags == b.boundary_tags


def test_round_trip_unit_cube(tmp_path):
    mesh = gen_curved_top_cube(1, 0.0)
    write_mesh(mesh, tmp_path / "cube.json")
    same_mesh(mesh, read_mesh(tmp_path / "cube.json"))


def test_round_trip_cornerpoint(tmp_path):
    rng = np.random.default_rng(0)
    Z = np.cumsum(rng.uniform(0.2, 0.5, (3, 3, 3)), axis=2)
    mesh = gen_cornerpoint(2, 2, 2, Z)
    write_mesh(mesh, tmp_path / "cp.json")
    back = read_mesh(tmp_path / "cp.json")
    same_mesh(mesh, back)
    assert any(f.map.kind == "bilinear" and f.curved for f in back.faces)


def test_round_trip_preserves_true_map(tmp_path):
    mesh = flatten(gen_extruded_annulus("quad", 1, 2, 1))
    write_mesh(mesh, tmp_path / "flat.json")
    back = read_mesh(tmp_path / "flat.json")
    same_mesh(mesh, back)
    for fa, fb in zip(mesh.faces, back.faces):
        assert (fa.true_map is None) == (fb.true_map is None)
        if fa.true_map is not None:
            assert fa.true_map.descriptor() == fb.true_map.descriptor()


@given(x=st.floats(-1e6, 1e6, allow_nan=False))
def test_coordinates_round_trip_bit_exact(x):
    mesh = gen_curved_top_cube(1, 0.0)
    data = mesh_to_dict(mesh)
    data["vertices"][0][0] = x
    assert json.loads(json.dumps(data))["vertices"][0][0] == x


def test_dangling_face_id_names_the_cell():
    data = mesh_to_dict(gen_curved_top_cube(2, 0.0))
    data["cells"][5]["faces"][0][0] = 999
    with pytest.raises(MeshError, match="cell 5"):
        mesh_from_dict(data)


def test_schema_violation_reports_json_pointer():
    data = mesh_to_dict(gen_curved_top_cube(1, 0.0))
    data["faces"][2]["map"]["kind"] = "spline"
    with pytest.raises(MeshError, match="/faces/2/map/kind"):
        mesh_from_dict(data)


def test_unknown_family_is_rejected():
    with pytest.raises(MeshError, match="unknown mesh family"):
        family_mesh("torus", 0)


def test_face_maps_from_file_have_expected_kinds():
    data = mesh_to_dict(gen_extruded_annulus("tria", 1, 2, 1))
    mesh = mesh_from_dict(data)
    kinds = {f.map.kind for f in mesh.faces}
    assert kinds <= set(fm.KINDS) and "cylinder" in kinds
