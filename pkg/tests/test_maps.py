import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon.errors import InverseConvergenceError
from horizon.maps import (HenonFactor, HenonMap, IteratedMap, LinearMap, ProductMap, RegularAutomorphism,
                          make_product, perturb, regular_c3_example)

seeds = st.integers(min_value=0, max_value=2 ** 32)


def _points(dom, count, seed):
    return dom.sample(count, seed)


def _fd_jacobian(f, x, h=1e-5):
    """Central differences in the complex coordinates (holomorphic maps only)."""
    k = x.shape[-1]
    J = np.empty(x.shape[:-1] + (k, k), dtype=complex)
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        J[..., :, j] = (f(x + e) - f(x - e)) / (2 * h)
    return J


def test_henon_examples(henon):
    assert np.allclose(henon.eval([1, 1]), [0.5, 1])
    assert np.allclose(henon.eval_inverse([0.5, 1]), [1, 1])
    assert np.allclose(henon.differential([1, 1]), [[2, -0.5], [1, 0]])


def test_decoupled_examples(g):
    assert np.allclose(g.eval([2, 4]), [4, 1])
    assert np.allclose(g.eval_inverse([4, 1]), [2, 4])
    assert np.allclose(g.differential([2, 4]), [[4, 0], [0, 0.25]])


def test_henon_inverse_form():
    m = HenonMap((0.3, -1, 0, 1), 0.7)
    y = np.array([0.4 - 0.2j, 1.1 + 0.3j])
    z, w = y
    assert np.allclose(m.eval_inverse(y), [w, (0.3 - w + w ** 3 - z) / 0.7])


def test_round_trip(henon, bidisc):
    maps = [henon, HenonMap((0.1j, -1, 0, 1), 0.4), perturb(henon, 1e-3), IteratedMap(henon, 3)]
    x = _points(bidisc, 1000, 3)
    for m in maps:
        assert np.max(np.abs(m.eval_inverse(m.eval(x)) - x)) <= 1e-10, m.kind
    reg = regular_c3_example()
    from horizon.geometry import Domain

    x3 = Domain.polydisc(3, 2, 2.0).sample(1000, 3)
    assert np.max(np.abs(reg.eval_inverse(reg.eval(x3)) - x3)) <= 1e-10
    F = make_product(henon, henon.inverse_map())
    x4 = Domain.polydisc(4, 2, 2.0).sample(1000, 3)
    assert np.max(np.abs(F.eval_inverse(F.eval(x4)) - x4)) <= 1e-10


def test_decoupled_principal_branch_round_trip(g, bidisc):
    y = _points(bidisc, 1000, 4)
    assert np.max(np.abs(g.eval(g.eval_inverse(y)) - y)) <= 1e-12


@given(seeds)
def test_differential_matches_finite_differences(seed):
    from horizon.geometry import Domain

    dom = Domain.bidisc(2.0)
    x = dom.sample(100, seed)
    for m in (HenonMap.quadratic(0.3 - 0.1j, 0.5), perturb(HenonMap.quadratic(0, 0.5), 1e-2)):
        J = m.differential(x)
        fd = _fd_jacobian(m.eval, x)
        assert np.max(np.abs(J - fd)) <= 1e-6 * np.max(np.abs(J))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_chain_rule_for_iterates(henon, n):
    from horizon.geometry import Domain

    x = Domain.bidisc(1.0).sample(50, n)
    f = IteratedMap(henon, n)
    J = f.differential(x)
    steps = np.broadcast_to(np.eye(2, dtype=complex), J.shape).copy()
    y = x
    for _ in range(n):
        steps = henon.differential(y) @ steps
        y = henon.eval(y)
    assert np.allclose(J, steps, rtol=1e-12, atol=0)
    fd = _fd_jacobian(f.eval, x, h=1e-6)
    rel = np.abs(J - fd).max(axis=(-2, -1)) / np.abs(J).max(axis=(-2, -1))
    assert rel.max() < 1e-4


def test_regular_constraint_rejected():
    with pytest.raises(ValueError, match="not regular"):
        RegularAutomorphism(3, 1, (HenonFactor(0, 2, (0, 0, 1), 0.5),))
    reg = regular_c3_example()
    assert (reg.d_plus, reg.d_minus, reg.main_degree) == (2, 4, 4)


def test_perturbed_zero_eps_is_base(henon, bidisc):
    x = _points(bidisc, 200, 9)
    pm = perturb(henon, 0.0)
    assert np.array_equal(pm.eval(x), henon.eval(x))
    assert np.array_equal(pm.differential(x), henon.differential(x))


def test_perturbed_inverse_failure_is_signalled(henon):
    pm = perturb(henon, 1e-3)
    with pytest.raises(InverseConvergenceError):
        # a constant residual has no zero, so Newton cannot converge
        pm._newton(np.ones_like, lambda x: np.broadcast_to(np.eye(2), x.shape + (2,)),
                   np.zeros((1, 2), dtype=complex))


def test_product_is_permuted_pair(henon, g, bidisc):
    F = make_product(henon, g)
    assert (F.k, F.p, F.main_degree) == (4, 2, 4)
    x1 = _points(bidisc, 20, 1)
    x2 = _points(bidisc, 20, 2)
    packed = np.stack([x1[:, 0], x2[:, 0], x1[:, 1], x2[:, 1]], axis=1)
    y = F.eval(packed)
    y1, y2 = henon.eval(x1), g.eval(x2)
    assert np.allclose(y, np.stack([y1[:, 0], y2[:, 0], y1[:, 1], y2[:, 1]], axis=1))
    assert ProductMap(g, g).main_degree == 4


def test_linear_map():
    A = np.array([[2, 1j], [0, 0.5]])
    m = LinearMap(A)
    x = np.array([[1 + 1j, -2]])
    assert np.allclose(m.eval(x), x @ A.T)
    assert np.allclose(m.eval_inverse(m.eval(x)), x)
    with pytest.raises(ValueError):
        LinearMap(np.zeros((2, 2)))
