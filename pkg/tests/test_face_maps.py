import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from curvem import face_maps as fm
from curvem.checks import _sample_maps

unit = st.floats(0.05, 0.95)


def lifted_bilinear():
    return fm.BilinearMap([0, 0, 0], [1, 0, 0], [1, 1, 0.2], [0, 1, 0])


def half_cylinder(R=1.0, orientation=1):
    return fm.CylinderMap([R, 0.0, 0.0], [0.0, math.pi, 0.0], [0.0, 0.0, 1.0], orientation=orientation)


def sine_top(a=0.1):
    return fm.GraphSinMap([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], a)


# ---------------------------------------------------------------- eval


def test_affine_centre_is_face_centroid():
    m = fm.AffineMap([0, 0, 1], [1, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(m.eval(0.5, 0.5), [0.5, 0.5, 1.0])


def test_cylinder_midpoint_on_symmetry_axis():
    for v in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(half_cylinder().eval(0.5, v), [0.0, 1.0, v], atol=1e-15)


def test_bilinear_centre_is_corner_average():
    np.testing.assert_allclose(lifted_bilinear().eval(0.5, 0.5), [0.5, 0.5, 0.05])


def test_bilinear_uses_standard_last_corner_weight():
    m = fm.BilinearMap([0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.7])
    np.testing.assert_allclose(m.eval(0.0, 1.0), [0, 1, 0.7])
    np.testing.assert_allclose(m.eval(0.25, 0.5), [0.25, 0.5, 0.75 * 0.5 * 0.7])


def test_eval_is_vectorised():
    u = np.array([[0.1, 0.2], [0.3, 0.4]])
    assert lifted_bilinear().eval(u, u).shape == (2, 2, 3)


# ---------------------------------------------------------------- jacobian_normal


def test_affine_unit_square_normal_and_factor():
    n, J = fm.AffineMap([0, 0, 1], [1, 0, 0], [0, 1, 0]).jacobian_normal(0.3, 0.6)
    np.testing.assert_allclose(n, [0, 0, 1])
    assert J == pytest.approx(1.0)


def test_inner_cylinder_points_to_axis():
    R = 0.2
    m = half_cylinder(R, orientation=-1)
    u, v = np.array([0.1, 0.5, 0.9]), np.array([0.2, 0.5, 0.8])
    n, J = m.jacobian_normal(u, v)
    x = m.eval(u, v)
    radial = x[:, :2] / np.linalg.norm(x[:, :2], axis=1, keepdims=True)
    np.testing.assert_allclose(np.einsum("ij,ij->i", n[:, :2], radial), -1.0)
    np.testing.assert_allclose(J, R * math.pi)


def test_sine_graph_factor():
    u = np.linspace(0.05, 0.95, 7)
    v = np.full_like(u, 0.4)
    n, J = sine_top().jacobian_normal(u, v)
    expected = np.sqrt(1 + (0.1 * math.pi * np.cos(math.pi * u)) ** 2)
    np.testing.assert_allclose(J, expected, rtol=1e-14)
    np.testing.assert_allclose(n[:, 2], 1 / expected, rtol=1e-14)


def test_degenerate_chart_is_rejected():
    m = fm.AffineMap([0, 0, 0], [1, 0, 0], [2, 0, 0])
    with pytest.raises(fm.ChartError, match="degenerate chart"):
        m.jacobian_normal(0.5, 0.5)


@pytest.mark.parametrize("kind", ["affine", "bilinear", "cylinder", "graph_sin"])
def test_affine_factor_constant_only_for_affine(kind):
    m = _sample_maps()[kind]
    u = np.linspace(0.1, 0.9, 9)
    _, J = m.jacobian_normal(u, u[::-1])
    if kind == "affine":
        assert np.var(J) < 1e-14


@pytest.mark.parametrize("kind", ["affine", "bilinear", "cylinder", "graph_sin"])
@given(u=unit, v=unit)
def test_derivatives_match_central_differences(kind, u, v):
    m = _sample_maps()[kind]
    eps = 1e-6
    gu, gv = m.derivatives(np.array([u]), np.array([v]))
    fu = (m.eval(u + eps, v) - m.eval(u - eps, v)) / (2 * eps)
    fv = (m.eval(u, v + eps) - m.eval(u, v - eps)) / (2 * eps)
    scale = max(1.0, np.abs(gu).max(), np.abs(gv).max())
    assert np.abs(gu[0] - fu).max() <= 1e-7 * scale
    assert np.abs(gv[0] - fv).max() <= 1e-7 * scale


@pytest.mark.parametrize("kind", ["affine", "bilinear", "cylinder", "graph_sin"])
@given(u=unit, v=unit)
def test_unit_normal_and_orientation_flag(kind, u, v):
    m = _sample_maps()[kind]
    n, J = m.jacobian_normal(u, v)
    nf, Jf = m.flipped().jacobian_normal(u, v)
    assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-14)
    assert J > 0 and Jf == pytest.approx(J)
    np.testing.assert_allclose(nf, -n)


# ---------------------------------------------------------------- invert


def test_affine_exact_inverse():
    m = fm.AffineMap([0.1, 0.2, 0.3], [1.0, 0.2, 0.0], [0.0, 0.7, 0.4])
    assert m.invert(m.eval(0.3, 0.7)) == pytest.approx((0.3, 0.7), abs=1e-14)


def test_cylinder_inverse_of_symmetry_point():
    R = 0.6
    assert half_cylinder(R).invert([0.0, R, 0.5]) == pytest.approx((0.5, 0.5), abs=1e-12)


def test_bilinear_round_trip_100_points(rng):
    m = lifted_bilinear()
    for u, v in rng.uniform(0, 1, (100, 2)):
        assert np.allclose(m.invert(m.eval(u, v)), (u, v), atol=1e-10)


@pytest.mark.parametrize("kind", ["affine", "bilinear", "cylinder", "graph_sin"])
@given(u=unit, v=unit)
def test_round_trip(kind, u, v):
    m = _sample_maps()[kind]
    back = m.invert(m.eval(u, v))
    np.testing.assert_allclose(m.eval(*back), m.eval(u, v), atol=1e-10)
    np.testing.assert_allclose(back, (u, v), atol=1e-9)


@pytest.mark.parametrize("kind", ["affine", "bilinear", "cylinder", "graph_sin"])
def test_off_surface_point_is_an_error(kind):
    m = _sample_maps()[kind]
    p = m.eval(0.5, 0.5)
    n, _ = m.jacobian_normal(0.5, 0.5)
    with pytest.raises(fm.ChartError):
        m.invert(p + 0.1 * n)


# ---------------------------------------------------------------- descriptors


@pytest.mark.parametrize("kind", ["affine", "bilinear", "cylinder", "graph_sin"])
def test_descriptor_round_trip(kind):
    m = _sample_maps()[kind].flipped()
    back = fm.from_descriptor(m.descriptor())
    assert back.descriptor() == m.descriptor()
    np.testing.assert_array_equal(back.eval(0.3, 0.4), m.eval(0.3, 0.4))


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown map kind"):
        fm.from_descriptor({"kind": "nurbs", "params": {}})


def test_planarity_flags():
    assert fm.BilinearMap([0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]).is_planar
    assert not lifted_bilinear().is_planar
    assert not half_cylinder().is_planar
    horizontal = fm.CylinderMap([0.2, 0.0, 0.5], [0.8, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert horizontal.is_planar
    assert fm.GraphSinMap([0, 0, 0], [1, 0, 0], [0, 1, 0], 0.1).is_planar
    assert not sine_top().is_planar
