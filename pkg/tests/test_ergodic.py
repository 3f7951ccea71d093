import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import unitary_group

from horizon.equilibrium import Observable, SampleMeasure
from horizon.ergodic import (bowen_ball_mass, correlation_decay, correlations, degree_gap_dashboard,
                             degree_gap_defaults, entropy_separated_sets, greedy_separated, inverse_measure,
                             lyapunov_qr, product_measure)
from horizon.geometry import Domain
from horizon.maps import LinearMap
from horizon.report import ExperimentReport
from horizon.structure import StructureCertificate

LOG2 = math.log(2)


def _atoms(k, count=200, history=None):
    return SampleMeasure(np.zeros((count, k), complex), np.ones(count), history=history)


@pytest.mark.parametrize("k", [2, 3])
def test_linear_exponents_exact(k):
    mags = np.array([3.0, 0.5, 0.2][:k])
    A = np.diag(mags * np.exp(1j * np.arange(k)))
    rep = lyapunov_qr(LinearMap(A), _atoms(k), 32, 100, seed=0, dom=Domain.polydisc(k, 1, 2.0))
    assert np.allclose(rep.exponents, np.log(mags), atol=1e-12)
    assert rep.spread <= 1e-12


def test_conjugated_linear_exponents():
    U = unitary_group.rvs(2, random_state=1)
    A = U @ np.diag([2.0, 0.25]) @ U.conj().T + np.array([[0, 0.3], [0, 0]]) @ U.conj().T
    ev = np.sort(np.log(np.abs(np.linalg.eigvals(A))))[::-1]
    rep = lyapunov_qr(LinearMap(A), _atoms(2), 32, 400, seed=0, dom=Domain.bidisc(2.0))
    assert np.allclose(rep.exponents, ev, atol=0.01)
    assert rep.exponents == sorted(rep.exponents, reverse=True)
    assert abs(sum(rep.exponents) - rep.log_det_mean) <= 1e-9


def test_lyapunov_preconditions():
    with pytest.raises(ValueError):
        lyapunov_qr(LinearMap(np.eye(2) * 2), _atoms(2), 10, 400)
    with pytest.raises(ValueError):
        lyapunov_qr(LinearMap(np.eye(2) * 2), _atoms(2), 64, 50)


def test_decoupled_exponents_and_counts(g, bidisc):
    from horizon.equilibrium import sample_equilibrium

    mu = sample_equilibrium(g, bidisc, 2000, seed=2)
    rep = lyapunov_qr(g, mu, 32, 100, seed=2, dom=bidisc)
    assert rep.exponents[0] == pytest.approx(LOG2, abs=0.01)
    assert rep.exponents[1] == pytest.approx(-2 * LOG2, abs=0.01)
    assert rep.theorem_floor == pytest.approx(LOG2 / 4)
    assert rep.counts_consistent(1)


def test_degree_gap_defaults(henon):
    assert degree_gap_defaults(henon) == (1.0, 1.0)
    assert degree_gap_defaults(LinearMap(np.eye(3), p=1)) == (1.0, None)


def test_inverse_measure_is_an_involution():
    rng = np.random.default_rng(0)
    hist = rng.standard_normal((5, 4, 2)) + 0j
    fut = rng.standard_normal((5, 3, 2)) + 0j
    fut[:, 0] = hist[:, -1]
    mu = SampleMeasure(hist[:, -1], np.arange(1.0, 6.0), history=hist, future=fut)
    inv = inverse_measure(LinearMap(np.eye(2)), mu)
    assert np.array_equal(inv.points, mu.points[:, ::-1])
    assert np.array_equal(inv.history[:, -1], inv.points)
    back = inverse_measure(LinearMap(np.eye(2)), inv)
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.history, mu.history) and np.array_equal(back.future, mu.future)


def test_product_measure_layout():
    a = SampleMeasure(np.array([[1.0, 2.0]]), [1.0])
    b = SampleMeasure(np.array([[3.0, 4.0]]), [1.0])
    pm = product_measure(a, b, 1, 1, 5, seed=0)
    assert pm.points.shape == (5, 4)
    assert np.all(pm.points == np.array([1, 3, 2, 4]))


def test_sample_size_preconditions(henon, bidisc):
    small = _atoms(2, 100)
    with pytest.raises(ValueError):
        entropy_separated_sets(henon, bidisc, 0.3, [1, 2], 20_000)
    with pytest.raises(ValueError):
        entropy_separated_sets(henon, bidisc, 0.3, [1, 2, 3], 5000)
    with pytest.raises(ValueError):
        bowen_ball_mass(henon, small, 0.3, [0, 1, 2])
    with pytest.raises(ValueError):
        correlation_decay(henon, small, Observable("a", lambda x: x[..., 0].real),
                          Observable("b", lambda x: x[..., 0].real))


def test_constant_observable_has_no_correlation(g):
    rng = np.random.default_rng(3)
    mu = SampleMeasure(np.exp(2j * np.pi * rng.random((500, 1))) * np.array([1, 0]), np.ones(500))
    one = lambda x: np.full(x.shape[:-1], 2.0)  # noqa: E731
    res = correlations(g, mu, one, lambda x: x[..., 0].real, 5)
    assert np.all(np.abs(res.values) <= 1e-14)


def _bowen(a, b):
    return np.sqrt(np.sum(np.abs(a - b) ** 2, axis=-1)).max(axis=-1)


@given(st.integers(min_value=0, max_value=2 ** 32), st.integers(min_value=1, max_value=120),
       st.integers(min_value=0, max_value=3), st.floats(min_value=0.05, max_value=1.0))
def test_greedy_separated_is_maximal(seed, count, n, eps):
    rng = np.random.default_rng(seed)
    orbits = rng.uniform(-1, 1, (count, n + 1, 2)) + 1j * rng.uniform(-1, 1, (count, n + 1, 2))
    keep = greedy_separated(orbits, eps)
    kept = orbits[keep]
    dist = _bowen(kept[:, None], kept[None, :])
    np.fill_diagonal(dist, np.inf)
    assert np.all(dist > eps)
    rest = np.setdiff1d(np.arange(count), keep)
    if len(rest):
        assert np.all(_bowen(orbits[rest][:, None], kept[None, :]).min(axis=1) <= eps)


def test_dashboard_not_applicable(henon):
    cert = StructureCertificate(False, -0.1, 0.2, 100, None)
    rep = degree_gap_dashboard(henon, {"structure": cert})
    assert rep.scalars["verdict"] == "not applicable" and rep.flags["not_certified"]


def test_dashboard_gap_failure(henon):
    deg = ExperimentReport("degrees", {})
    deg.scalars.update({"delta_plus": 2.0, "delta_minus": 1.0})
    rep = degree_gap_dashboard(henon, {"degrees": deg})
    assert rep.scalars["verdict"] == "degree gap fails"
    deg.scalars["delta_plus"] = 1.0
    assert degree_gap_dashboard(henon, {"degrees": deg}).scalars["verdict"] == "incomplete"
