import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon.degrees import DiscFamily, degree_summary, horizontal_disc, log_volumes, vertical_disc, volume_growth
from horizon.geometry import Domain
from horizon.maps import LinearMap, regular_c3_example
from horizon.report import ExperimentReport


def _gram_log_volume(M, J):
    G = (M @ J).conj().T @ (M @ J)
    return J.shape[1] * math.log(math.pi) + math.log(np.linalg.det(G).real)


@given(st.integers(min_value=0, max_value=2 ** 32))
def test_linear_two_discs_in_c4(seed):
    rng = np.random.default_rng(seed)
    A = np.eye(4) + 0.4 * (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
    J = 0.5 * (rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2)))
    disc = DiscFamily(tuple(np.zeros(4)), tuple(J.reshape(-1)), samples=64)
    dom = Domain.polydisc(4, 2, 2.0)
    vs = log_volumes(LinearMap(A, p=2), disc, dom, [0, 1, 3], seed=seed % 100, restrict=False)
    for n, lv in zip(vs.n, vs.log_volume):
        assert lv == pytest.approx(_gram_log_volume(np.linalg.matrix_power(A, n), J), abs=1e-8)


def test_disc_family_validation():
    with pytest.raises(ValueError):
        DiscFamily((0, 0), (1, 0), direction="sideways")
    with pytest.raises(ValueError):
        DiscFamily((0, 0), (1, 0, 0))
    dom = Domain.bidisc(2.0)
    with pytest.raises(ValueError):
        horizontal_disc(dom, 2)
    with pytest.raises(ValueError):
        vertical_disc(dom, 2)


def test_disc_geometry_checks(bidisc):
    assert horizontal_disc(bidisc, 1).check(bidisc) == {"inside": True, "oriented": True}
    assert vertical_disc(bidisc, 1).check(bidisc) == {"inside": True, "oriented": True}
    far = DiscFamily((0, 1.9), (1.0, 0.0))
    assert far.check(bidisc)["oriented"] is False


def test_sobol_parameters_fill_the_polydisc():
    disc = DiscFamily((0, 0, 0), (1, 0, 0, 1, 0, 0), samples=4096)
    t = disc.parameters(seed=3)
    assert t.shape == (4096, 2) and np.all(np.abs(t) <= 1)
    # area-preserving map: |t|^2 is uniform on [0, 1]
    assert np.mean(np.abs(t) ** 2) == pytest.approx(0.5, abs=0.01)
    assert np.array_equal(t, disc.parameters(seed=3))


def test_volume_growth_preconditions(henon, bidisc):
    with pytest.raises(ValueError):
        volume_growth(henon, horizontal_disc(bidisc, 0), [1, 2], dom=bidisc)
    with pytest.raises(ValueError):
        volume_growth(henon, horizontal_disc(bidisc, 1), [3], dom=bidisc)
    with pytest.raises(ValueError):
        volume_growth(henon, horizontal_disc(bidisc, 1), [1, 2], dom=bidisc, method="magic")
    with pytest.raises(ValueError):
        volume_growth(henon, horizontal_disc(bidisc, 1), [1, 2])


def test_linear_growth_is_stabilized():
    lin = LinearMap(np.diag([2.0, 0.5]))
    disc = DiscFamily((0, 0), (1, 0), samples=256)
    rep = volume_growth(lin, disc, [1, 2, 3, 4, 5], dom=Domain.bidisc(2.0), restrict=False)
    assert rep.scalars["degree_estimate"] == pytest.approx(4.0, rel=1e-9)
    assert rep.flags["stabilized"] and not rep.flags["undersampled"]


def _fake(q, direction, estimate):
    r = ExperimentReport("degrees", {}, {"q": q, "direction": direction})
    r.scalars["degree_estimate"] = estimate
    return r


def test_summary_verdicts():
    m = regular_c3_example()
    assert (m.k, m.p, m.main_degree) == (3, 2, 4)
    ok = degree_summary(m, [_fake(1, "forward", 2.1), _fake(2, "forward", 3.9), _fake(1, "backward", 2.0)])
    assert ok.scalars["verdict"] == "d > delta"
    assert ok.scalars["delta_plus"] == 2.1 and ok.scalars["control_forward"] == 3.9
    assert ok.flags["monotone_forward"] and not ok.flags["incomplete"]
    bad = degree_summary(m, [_fake(1, "forward", 3.9), _fake(1, "backward", 2.0)])
    assert bad.scalars["verdict"] == "gap not established" and not bad.flags["degree_gap"]
    assert degree_summary(m, [_fake(1, "backward", 2.0)]).flags["incomplete"]


def test_henon_summary_is_trivially_one(henon):
    s = degree_summary(henon, [_fake(1, "forward", 1.98), _fake(1, "backward", 1.7)])
    assert s.scalars["delta_plus"] == 1.0 and s.scalars["delta_minus"] == 1.0
    assert s.scalars["verdict"] == "d > delta"
