import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from horizon.currents import HORIZONTAL, GridSpec, PotentialGrid, fubini_study, log_plus
from horizon.equilibrium import (LogPole, Observable, SampleMeasure, measure_convergence_probe, mixed_ma_density,
                                 mixed_ma_measure, pb_probe, sample_equilibrium, systematic_indices)
from horizon.geometry import Domain


@pytest.fixture(scope="module")
def spec():
    return GridSpec.for_domain(Domain.bidisc(2.0), nz=48, nw=24)


@pytest.fixture(scope="module")
def g_sample(g, bidisc):
    return sample_equilibrium(g, bidisc, 4000, seed=3)


@pytest.fixture(scope="module")
def henon_sample(henon, bidisc):
    return sample_equilibrium(henon, bidisc, 4000, seed=3)


def _fs_square_mass(a):
    return integrate.dblquad(lambda y, x: 1 / (math.pi * (1 + x * x + y * y) ** 2), -a, a, -a, a)[0]


def test_fubini_study_density_mass(spec):
    u = PotentialGrid.from_potential(spec, fubini_study(0))
    v = PotentialGrid.from_potential(spec, fubini_study(1), HORIZONTAL)
    gd = mixed_ma_density(u.values, v.values, spec.hz, spec.hw)
    # interior cells cover the box shrunk by half a cell
    exact = _fs_square_mass(spec.z_half - spec.hz / 2) * _fs_square_mass(spec.w_half - spec.hw / 2)
    assert gd.density.sum() == pytest.approx(exact, rel=0.01)
    assert gd.cross_fraction == 0.0 and gd.negative_fraction == 0.0


def test_product_model_torus(spec):
    u = PotentialGrid.from_potential(spec, log_plus(0))
    v = PotentialGrid.from_potential(spec, log_plus(1), HORIZONTAL)
    mu = mixed_ma_measure(u, v)
    assert mu.weights.sum() == pytest.approx(1, abs=1e-12)
    assert mu.diagnostics["cross_fraction"] < 0.01
    assert np.allclose(mu.abs_mean(), 1, atol=0.02)
    assert np.allclose(mu.mean(), 0, atol=0.02)
    assert not mu.diagnostics["unreliable"]


def test_mixed_measure_orientation(spec):
    u = PotentialGrid.from_potential(spec, log_plus(0))
    with pytest.raises(ValueError):
        mixed_ma_measure(u, u)


def test_sample_measure_validation():
    with pytest.raises(ValueError):
        SampleMeasure(np.zeros((2, 2)), [1.0, -1.0])
    with pytest.raises(ValueError):
        SampleMeasure(np.zeros((2, 2)), [0.0, 0.0])
    mu = SampleMeasure(np.zeros((3, 2)), [1.0, 2.0, 1.0])
    assert mu.weights.tolist() == [0.25, 0.5, 0.25]


@given(st.lists(st.floats(min_value=0.0, max_value=10.0), min_size=1, max_size=30).filter(lambda w: sum(w) > 0),
       st.integers(min_value=1, max_value=500), st.integers(min_value=0, max_value=2 ** 32))
def test_systematic_resampling_counts(weights, count, seed):
    w = np.asarray(weights) / np.sum(weights)
    idx = systematic_indices(w, count, seed)
    counts = np.bincount(idx, minlength=len(w))
    assert counts.sum() == count
    assert np.all(np.abs(counts - count * w) < 1 + 1e-9)
    assert np.all(counts[w == 0] == 0)
    assert np.array_equal(idx, systematic_indices(w, count, seed))


def test_convergence_probe_constant_observable(g, spec):
    u = PotentialGrid.from_potential(spec, fubini_study(0))
    v = PotentialGrid.from_potential(spec, fubini_study(1), HORIZONTAL)
    rep = measure_convergence_probe(g, u, v, Observable("one", lambda x: np.ones(x.shape[:-1])), n_max=2)
    assert np.allclose(rep.series["pairing"], 1.0, atol=1e-12)


def test_segment_samples_are_orbits(g, henon, bidisc, g_sample, henon_sample):
    for m, mu in ((g, g_sample), (henon, henon_sample)):
        assert len(mu) + mu.diagnostics["dropped"] == 4000
        assert np.array_equal(mu.history[:, -1], mu.points)
        assert np.array_equal(mu.future[:, 0], mu.points)
        hist = mu.history
        step = m.eval(hist[:, :-1].reshape(-1, 2)).reshape(hist[:, 1:].shape)
        assert np.max(np.abs(step - hist[:, 1:])) <= 1e-9
        assert bidisc.contains(mu.points).all()


def test_decoupled_sample_lies_on_the_torus(g_sample):
    assert np.max(np.abs(np.abs(g_sample.points[:, 0]) - 1)) <= 1e-6
    assert np.max(np.abs(g_sample.points[:, 1])) <= 1e-12
    # the z-marginal is Lebesgue measure on the circle
    angles = np.angle(g_sample.points[:, 0])
    assert abs(np.mean(np.cos(angles))) < 0.05 and abs(np.mean(np.sin(2 * angles))) < 0.05


def test_sampler_is_seeded(g, bidisc):
    a = sample_equilibrium(g, bidisc, 300, seed=5)
    b = sample_equilibrium(g, bidisc, 300, seed=5)
    c = sample_equilibrium(g, bidisc, 300, seed=6)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_sample_invariance(henon, henon_sample):
    mu = henon_sample
    for ob in (lambda x: x[..., 0].real, lambda x: np.abs(x[..., 1]) ** 2):
        a = ob(mu.points)
        b = ob(henon.eval(mu.points))
        sigma = np.std(b - a) / math.sqrt(len(a))
        assert abs(b.mean() - a.mean()) <= 4 * sigma


def test_pb_probe(g_sample):
    rep = pb_probe(g_sample, [LogPole((1, 0), -1.0), LogPole((1, 1), 0.3)], j_max=14, floor=0.0)
    assert rep.flags["pb_consistent"]
    atom = SampleMeasure(np.array([[1.0, 0.0], [0.0, 0.0]]), [0.5, 0.5])
    rep = pb_probe(atom, [LogPole((1, 0), -1.0)], j_max=14, floor=0.0)
    assert rep.scalars["last_slope[0]"] == pytest.approx(0.5, abs=0.01)
    assert not rep.flags["pb_consistent"]
