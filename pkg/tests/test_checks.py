import math

import numpy as np
import pytest

from curvem import checks
from curvem.checks import CheckResult, run_suite, suite


def test_line_formats_value_and_detail():
    r = CheckResult("x[k=1]", True, 1.5e-13, 1e-9, "note")
    assert r.line() == "PASS x[k=1]  value=1.500e-13 tol=1.0e-09  note"
    assert CheckResult("y", False).line() == "FAIL y"


def test_bounded_compares_against_tolerance():
    assert checks._bounded("a", 1e-10, 1e-9).ok
    assert not checks._bounded("a", 1e-8, 1e-9).ok
    assert not checks._bounded("a", math.nan, 1e-9).ok


def test_exceptions_become_named_failures():
    def broken():
        raise RuntimeError("boom")

    (res,) = run_suite([("broken[x]", broken)])
    assert not res.ok and res.name == "broken[x]" and "boom" in res.detail


def test_list_results_are_flattened():
    out = run_suite([("pair", lambda: [CheckResult("a", True), CheckResult("b", True)])])
    assert [r.name for r in out] == ["a", "b"]


def test_suite_names_are_unique():
    names = [n for n, _ in suite(ks=(1, 2))]
    assert len(names) == len(set(names))


@pytest.mark.parametrize("kind", ["affine", "bilinear", "cylinder", "graph_sin"])
def test_face_map_checks_pass(kind, rng):
    results = checks.check_face_map(kind, checks._sample_maps()[kind], rng)
    assert len(results) == 3 and all(r.ok for r in results)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_decomposition_is_full_rank(k):
    assert checks.check_decomposition(k).ok


def test_compression_check_reports_point_counts():
    res = checks.check_compression()
    assert res.ok and res.detail == "192 -> 10 points"


def test_consistency_check_flags_reduced_quadrature(rng):
    assert checks.check_consistency(2, rng, trials=3).ok
    assert not checks.check_consistency(2, rng, quad_degree=2, trials=3).ok


def test_mesh_check_reports_the_broken_invariant():
    mesh = checks.lifted_corner_cube()
    assert checks.check_mesh("ok", mesh).ok
    mesh.cells[0].faces[0] = (mesh.cells[0].faces[0][0], -mesh.cells[0].faces[0][1])
    res = checks.check_mesh("bad", mesh)
    assert not res.ok and res.name == "mesh[bad]" and res.detail


def test_missing_mesh_file_fails(tmp_path):
    res = checks.check_mesh_file(tmp_path / "missing.json")
    assert not res.ok and res.name.startswith("mesh[file:")


def test_spd_check_reports_smallest_eigenvalue():
    res = checks.check_spd("cube", checks.sample_meshes()["straight_cube"], 1)
    assert res.ok and res.value > 0 and np.isfinite(res.value)


def test_lifted_corner_cube_has_one_curved_face():
    mesh = checks.lifted_corner_cube(0.3)
    assert sum(f.curved for f in mesh.faces) == 1
