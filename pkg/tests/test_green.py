import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon.geometry import Domain
from horizon.green import (BOUNDED, ESCAPED, escape_rate_sequence, green_minus, green_plus, holder_probe)
from horizon.maps import HenonMap

# Henon c=0, a=0.5: d^-40 log max(|z_40|, |w_40|) at 50 digits
HENON_ORACLE = [
    ((3, 5), 0.926618610553897, 2.23802154213046),
    ((10, -20), 2.350136808765, 3.67622876819769),
    ((1.2 + 0.3j, -0.4j), 0.227039461754926, 0.865410923281366),
    ((1, 0.5), 0.0, 0.500626341367184),
    ((0.9, 1.4), 0.0, 0.621780475108269),
]


def test_decoupled_closed_form(g):
    r = green_plus(g, np.array([2, 0]))
    assert r.status == ESCAPED
    assert abs(r.value - math.log(2)) <= max(r.error_bound, 1e-12)
    r = green_plus(g, np.array([0.5, 0.5]))
    assert r.status == BOUNDED and r.value == 0.0


@pytest.mark.parametrize("x,gp,gm", HENON_ORACLE)
def test_henon_against_high_precision_iteration(henon, x, gp, gm):
    p = green_plus(henon, np.array(x, dtype=complex))
    m = green_minus(henon, np.array(x, dtype=complex))
    assert abs(p.value - gp) <= p.error_bound + 1e-10
    assert abs(m.value - gm) <= m.error_bound + 1e-10
    if gp == 0.0:
        assert p.status == BOUNDED


def test_decoupled_g_minus_tends_to_zero(g):
    # f^-n(0, 1) = (0, 4^n), so d^-n log|4^n| = n log 4 / 2^n
    table = [n * math.log(4) / 2 ** n for n in range(1, 31)]
    assert table[-1] < 1e-7
    assert green_minus(g, np.array([0, 1])).value < 1e-7


def test_status_and_invariants_on_batch(henon, bidisc):
    x = bidisc.sample(10_000, 5)
    for m in (henon,):
        gp = green_plus(m, x)
        assert np.all(gp.value >= 0) and np.all(gp.error_bound >= 0)
        assert np.all(gp.value[gp.status == BOUNDED] == 0.0)
        gm = green_minus(m, x)
        assert np.all(gm.value >= 0)


@given(st.integers(min_value=0, max_value=2 ** 32))
def test_functional_equation(seed):
    m = HenonMap.quadratic(0.2 - 0.1j, 0.5)
    x = Domain.bidisc(3.0).sample(200, seed)
    gx, gf = green_plus(m, x), green_plus(m, m.eval(x))
    assert np.all(np.abs(gf.value - 2 * gx.value) <= gf.error_bound + 2 * gx.error_bound)
    hx, hf = green_minus(m, x), green_minus(m, m.eval_inverse(x))
    assert np.all(np.abs(hf.value - 2 * hx.value) <= hf.error_bound + 2 * hx.error_bound)


@pytest.mark.parametrize("x", [(3, 5), (10, -20), (-4 + 3j, 2)])
def test_approximants_are_cauchy_at_rate(henon, x):
    # escaped from the start; differences are compared until they reach rounding level
    seq = escape_rate_sequence(henon, np.array(x, dtype=complex), 6)
    diffs = np.abs(np.diff(seq))
    diffs = diffs[diffs > 1e-12]
    assert len(diffs) >= 3
    assert np.all(diffs[1:] / diffs[:-1] <= 1 / 2 + 0.1)


def test_n_max_precondition(henon):
    with pytest.raises(ValueError):
        green_plus(henon, np.zeros(2), n_max=0)


def test_holder_probe(g, henon, bidisc):
    est = holder_probe(g, bidisc, 1000, 0)
    assert est.applicable and est.exponent == pytest.approx(1.0, abs=0.1)
    est = holder_probe(henon, bidisc, 1000, 0)
    assert est.applicable and 0 < est.exponent <= 1.05


def test_holder_probe_constant_region(g, bidisc):
    centers = np.full((50, 2), 0.1 + 0.1j)
    est = holder_probe(g, bidisc, 1000, 0, centers=centers)
    assert not est.applicable and est.exponent is None
