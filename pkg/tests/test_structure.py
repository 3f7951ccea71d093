import math

import pytest

from horizon.geometry import Domain
from horizon.maps import HenonMap, IteratedMap, make_product, regular_c3_example
from horizon.structure import (certify_horizontal_like, main_degree, main_degree_argument_principle,
                               perturbation_stability_scan, winding_count)


@pytest.mark.parametrize("r", [1.8, 2.0, 2.5, 3.0])
def test_henon_margin_matches_analytic_bound(henon, r):
    # |z^2 - a w| < r and |w| < r force |z| < sqrt(r + a r)
    bound = r - math.sqrt(1.5 * r)
    cert = certify_horizontal_like(henon, Domain.bidisc(r), 10_000, seed=1)
    assert cert.is_horizontal_like
    assert abs(cert.margin_v - bound) <= 0.05 * bound


def test_decoupled_margin(g, bidisc):
    cert = certify_horizontal_like(g, bidisc, 10_000, seed=0)
    assert cert.is_horizontal_like
    assert cert.margin_v >= (2 - math.sqrt(2)) * (1 - 1e-6)
    assert cert.margin_v == pytest.approx(2 - math.sqrt(2), rel=0.05)


def test_small_domain_is_rejected(henon):
    cert = certify_horizontal_like(henon, Domain.bidisc(0.5), 10_000, seed=0)
    assert not cert.is_horizontal_like


def test_count_precondition(henon, bidisc):
    with pytest.raises(ValueError):
        certify_horizontal_like(henon, bidisc, 999)


def test_degrees_by_argument_principle(henon, bidisc):
    assert main_degree_argument_principle(henon, bidisc) == 2
    assert main_degree(HenonMap((0, -1, 0, 1), 0.5), bidisc) == 3
    assert main_degree(regular_c3_example(), Domain.polydisc(3, 2, 2.0)) == 4


def test_winding_integral_is_near_integer(henon, bidisc):
    n = winding_count(henon, bidisc, 0.1 + 0.2j, 0.3 - 0.1j)
    assert abs(n - 2) < 1e-6


def test_degree_multiplicativity(henon, g, bidisc):
    assert main_degree(IteratedMap(henon, 2), bidisc) == main_degree(henon, bidisc) ** 2
    assert main_degree(make_product(henon, g), Domain.polydisc(4, 2, 2.0)) == 4


def test_certificate_survives_shrinking(henon, g, bidisc):
    for m in (henon, g):
        assert certify_horizontal_like(m, bidisc, 10_000, 0).is_horizontal_like
        assert certify_horizontal_like(m, bidisc.shrink("D'"), 10_000, 0).is_horizontal_like


def test_stability_scan(henon, bidisc):
    scan = perturbation_stability_scan(henon, bidisc, [0.0, 1e-3, 1.0], seed=0)
    assert scan.certificates[0] == certify_horizontal_like(henon, bidisc.shrink("D'"), 10_000, 0)
    assert scan.certificates[1].is_horizontal_like and scan.certificates[1].main_degree == 2
    assert not scan.certificates[2].is_horizontal_like
    assert scan.largest_stable_eps == 1e-3
    assert scan.perturbation_bounds[0] == 0.0
