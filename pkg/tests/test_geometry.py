import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon.errors import DimensionError
from horizon.geometry import Domain, Factor, contains, orbit_metric_distance, sample_vertical_boundary

coord = st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False)


def test_contains_examples(bidisc):
    assert contains(bidisc, "D", [0, 0])
    assert not contains(bidisc, "D", [2.5, 0])
    assert not contains(bidisc, "D'", [1.9, 0])
    assert contains(bidisc, "D", [1.9, 0])


def test_contains_rejects_wrong_dimension(bidisc):
    with pytest.raises(DimensionError):
        bidisc.contains([0, 0, 0])


def test_shell_radii(bidisc):
    assert bidisc.M.radii == pytest.approx((2.0, 1.8, 1.6))
    with pytest.raises(ValueError):
        Factor(1, (2.0, 2.0, 1.0))


@given(coord, coord)
def test_shell_monotonicity(z, w):
    dom = Domain.bidisc(2.0)
    x = [z, w]
    if dom.contains(x, "D''"):
        assert dom.contains(x, "D'")
    if dom.contains(x, "D'"):
        assert dom.contains(x, "D")


def test_vertical_boundary_sample(bidisc):
    pts = sample_vertical_boundary(bidisc, 4, 7)
    assert pts.shape == (4, 2)
    assert np.allclose(np.abs(pts[:, 0]), 2.0, rtol=1e-12, atol=0)
    assert np.all(np.abs(pts[:, 1]) < 2.0)
    assert np.array_equal(pts, sample_vertical_boundary(bidisc, 4, 7))
    with pytest.raises(ValueError):
        sample_vertical_boundary(bidisc, 0, 7)


@given(st.integers(min_value=0, max_value=2 ** 32))
def test_boundary_samples_satisfy_equations(seed):
    dom = Domain.polydisc(3, 1, 2.0, 1.5)
    v = dom.sample_vertical_boundary(50, seed)
    h = dom.sample_horizontal_boundary(50, seed)
    assert np.allclose(np.abs(v[:, 0]), 2.0, rtol=1e-12, atol=0)
    assert np.allclose(np.max(np.abs(h[:, 1:]), axis=1), 1.5, rtol=1e-12, atol=0)


def test_ball_factor_boundary():
    dom = Domain.polydisc(3, 2, 1.0, shape="ball")
    v = dom.sample_vertical_boundary(100, 3)
    assert np.allclose(np.linalg.norm(v[:, :2], axis=1), 1.0, rtol=1e-12)


def test_orbit_metric_examples():
    a = np.zeros((5, 2), dtype=complex)
    assert orbit_metric_distance(a, a) == 0
    b = a.copy()
    b[3, 0] = 0.5
    assert orbit_metric_distance(a, b) == pytest.approx(0.5)
    x = np.array([[0, 0], [0, 0]], dtype=complex)
    y = np.array([[1, 0], [0, 2]], dtype=complex)
    assert orbit_metric_distance(x, y) == pytest.approx(2.0)
    with pytest.raises(DimensionError):
        orbit_metric_distance(a, a[:3])


def test_sampling_is_seeded(bidisc):
    assert np.array_equal(bidisc.sample(100, 5), bidisc.sample(100, 5))
    assert not np.array_equal(bidisc.sample(100, 5), bidisc.sample(100, 6))
    assert np.all(bidisc.contains(bidisc.sample(500, 1, "D''"), "D''"))
