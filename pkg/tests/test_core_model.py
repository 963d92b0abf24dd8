import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation
from scipy.special import elliprd

from emimaging.core_model import (
    ArrayGeometry,
    Ellipsoid,
    Inclusion,
    ParameterError,
    PhysicalConfig,
    SearchGrid,
    SensingMatrix,
    build_square_array,
    depolarization_factors,
    polarization_tensor,
    reflectivity_from_ellipsoid,
)

axes = st.floats(min_value=0.05, max_value=20.0, allow_nan=False)


def carlson_depolarization(a):
    """Independent route: D_q = (a1 a2 a3 / 3) R_D(a_r^2, a_s^2, a_q^2)."""
    a = np.asarray(a, float)
    a2 = a**2
    out = []
    for q in range(3):
        r, s = [i for i in range(3) if i != q]
        out.append(np.prod(a) / 3.0 * elliprd(a2[r], a2[s], a2[q]))
    return np.array(out)


def test_square_array_layout():
    g = build_square_array(21, 0.5, 10.0)
    assert g.n_sensors == 441
    assert g.aperture == pytest.approx(10.0)
    assert np.allclose(g.positions[0], [-5, -5, 0])
    assert np.allclose(g.positions[1], [-5, -4.5, 0])
    assert np.allclose(g.positions[21], [-4.5, -5, 0])
    assert g.cross_range_resolution == pytest.approx(1.0)
    assert g.range_resolution == pytest.approx(1.0)
    assert build_square_array(21, 0.5, 100.0).cross_range_resolution == pytest.approx(10.0)


def test_geometry_validation():
    with pytest.raises(ParameterError):
        ArrayGeometry(np.array([[0, 0, 1.0]]), 1.0, 1.0)
    with pytest.raises(ParameterError):
        ArrayGeometry(np.zeros((2, 3)), 1.0, 1.0)
    with pytest.raises(ParameterError):
        build_square_array(1, 0.5, 10)
    with pytest.raises(ParameterError):
        PhysicalConfig(0.0)
    g = build_square_array(3, 1.0, 5.0)
    with pytest.raises(ValueError):
        g.positions[0, 0] = 1.0


def test_sensing_matrix():
    s = SensingMatrix.parse("13")
    assert s.index == [0, 2]
    assert s.matrix.shape == (3, 2)
    assert not s.complete and s.label == "13"
    assert SensingMatrix().complete
    for bad in ["", "4", "31", "1123"]:
        with pytest.raises(ParameterError):
            SensingMatrix.parse(bad)


def test_search_grid_order_and_nearest():
    g = SearchGrid((0, 0, 0), (1, 2, 3), (0.5, 1.0, 1.0))
    pts = g.points()
    assert g.shape == (4, 3, 3) and len(pts) == g.size == 36
    # y1 fastest, y3 slowest
    assert np.allclose(pts[:4], [[0, 0, 0], [0.5, 0, 0], [1, 0, 0], [0, 1, 0]])
    assert np.allclose(pts[9], [0, 0, 1])
    for i in [0, 7, 20, 35]:
        assert g.nearest_index(pts[i] + 0.1) == i
    with pytest.raises(ParameterError):
        SearchGrid((0, 0, 0), (-1, 1, 1))


def test_depolarization_sphere_and_oracle():
    assert np.allclose(depolarization_factors(Ellipsoid((1, 1, 1), 2.0)), 1 / 3, atol=1e-12)
    d = depolarization_factors(Ellipsoid((1, 2, 3), 10.0))
    assert np.allclose(d, carlson_depolarization((1, 2, 3)), rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(axes, axes, axes)
def test_depolarization_sum_to_one(a1, a2, a3):
    d = depolarization_factors(Ellipsoid((a1, a2, a3), 5.0))
    assert abs(d.sum() - 1.0) < 1e-8
    assert np.all((d > 0) & (d < 1))
    assert np.allclose(d, carlson_depolarization((a1, a2, a3)), rtol=1e-7, atol=1e-12)
    # the longest semiaxis has the smallest factor
    assert np.argmin(d) == np.argmax([a1, a2, a3]) or np.isclose(np.min(d), d[np.argmax([a1, a2, a3])])


def test_polarization_tensor_sphere():
    e = Ellipsoid((1, 1, 1), 10.0)
    M = polarization_tensor(e)
    assert np.allclose(M, e.volume * 3 / (10 + 2) * np.eye(3))
    assert np.allclose(reflectivity_from_ellipsoid(e), 9 * M)


def test_rotated_ellipsoid_reflectivity_is_symmetric():
    R = Rotation.from_euler("zyx", [0.3, -0.7, 1.1]).as_matrix()
    rho = reflectivity_from_ellipsoid(Ellipsoid((1, 2, 3), 10.0, R))
    assert np.allclose(rho, rho.T, atol=0)
    w = np.linalg.eigvalsh(rho)
    rho0 = reflectivity_from_ellipsoid(Ellipsoid((1, 2, 3), 10.0))
    assert np.allclose(np.sort(w), np.sort(np.diag(rho0)))


def test_ellipsoid_validation():
    with pytest.raises(ParameterError):
        Ellipsoid((1, 0, 1), 2.0)
    with pytest.raises(ParameterError):
        Ellipsoid((1, 1, 1), -1.0)
    with pytest.raises(ParameterError):
        Ellipsoid((1, 1, 1), 2.0, np.diag([1, 1, -1.0]))
    with pytest.raises(ParameterError):
        Ellipsoid((1, 1, 1), 2.0, np.ones((3, 3)))


def test_inclusion_symmetry():
    rho = np.array([[1, 2, 3], [2, 4, 5], [3, 5, 6.0]])
    inc = Inclusion([0, 0, 1], rho)
    assert np.array_equal(inc.rho, rho)
    bad = rho.copy()
    bad[0, 1] += 1e-3
    with pytest.raises(ParameterError):
        Inclusion([0, 0, 1], bad)
    with pytest.raises(ParameterError):
        Inclusion([0, 0], rho)
