"""End-to-end acceptance criteria, one test per criterion, at the stated tolerances and time budgets."""

import json
import math
import time

import numpy as np
import pytest

from horizon.currents import (HORIZONTAL, VERTICAL, GridSpec, PotentialGrid, TestForm, convergence_rate_probe,
                              fubini_study, log_plus, mixed_smooth, pullback_normalized, pushforward_normalized,
                              radial_bump, sup_distance)
from horizon.degrees import DiscFamily, degree_summary, horizontal_disc, log_volumes, volume_growth
from horizon.equilibrium import (coarse_measure, invariance_check, mixed_ma_measure, observable_library,
                                 sample_equilibrium, support_check)
from horizon.ergodic import (bowen_ball_mass, bump_observable, correlation_decay, entropy_separated_sets,
                             inverse_measure, lyapunov_qr)
from horizon.equilibrium import Observable
from horizon.experiments import degree_reports, saddle_point
from horizon.geometry import Domain
from horizon.green import BOUNDED, ESCAPED, green_plus
from horizon.maps import HenonMap, IteratedMap, LinearMap, ProductMap, decoupled_model
from horizon.structure import certify_horizontal_like, main_degree

pytestmark = pytest.mark.acceptance

LOG2 = math.log(2)


@pytest.fixture(scope="module")
def henon():
    return HenonMap.quadratic(0.0, 0.5)


@pytest.fixture(scope="module")
def g():
    return decoupled_model()


@pytest.fixture(scope="module")
def bidisc():
    return Domain.bidisc(2.0)


def test_criterion_1_structure_and_degree(henon, bidisc):
    t0 = time.perf_counter()
    cert = certify_horizontal_like(henon, bidisc, 10_000, seed=0)
    assert cert.is_horizontal_like
    bound = 2 - math.sqrt(3)
    assert abs(cert.margin_v - bound) <= 0.05 * bound
    assert main_degree(henon, bidisc) == 2
    assert cert.main_degree == 2
    assert main_degree(IteratedMap(henon, 2), bidisc) == 4
    product = ProductMap(henon, henon.inverse_map())
    assert main_degree(product, Domain.polydisc(4, 2, 2.0)) == 4
    assert time.perf_counter() - t0 < 10


def test_criterion_2_green_functions(g, henon, bidisc):
    t0 = time.perf_counter()
    x = bidisc.sample(10_000, seed=11, shell="D")
    gp = green_plus(g, x)
    esc = gp.status == ESCAPED
    bnd = gp.status == BOUNDED
    assert esc.sum() > 1000 and bnd.sum() > 1000
    exact = np.log(np.maximum(np.abs(x[:, 0]), 1.0))
    assert np.max(np.abs(gp.value[esc] - exact[esc])) <= 1e-6
    assert np.all(gp.value[bnd] == 0.0)
    for m in (g, henon):
        gx = green_plus(m, x)
        fx = m.eval(x)
        gf = green_plus(m, fx)
        defect = np.abs(gf.value - m.d_plus * gx.value)
        assert np.all(defect <= gf.error_bound + m.d_plus * gx.error_bound)
    assert time.perf_counter() - t0 < 30


def test_criterion_3_current_convergence(g, henon, bidisc):
    t0 = time.perf_counter()
    spec = GridSpec.for_domain(bidisc)
    u_fs = PotentialGrid.from_potential(spec, fubini_study(0), VERTICAL)
    ref = PotentialGrid.from_potential(spec, log_plus(0), VERTICAL)
    rep = convergence_rate_probe(g, [u_fs], [radial_bump(1.5, 1.0)], 10, ref, seed=0)
    assert rep.scalars["rate_min"] >= 1.8

    u8 = u_fs
    for _ in range(8):
        u8 = pullback_normalized(g, u8)

    def off_circle(p):
        r = np.abs(p[..., 0])
        return (r <= 0.9) | ((r >= 1.1) & (r <= 1.5))

    assert sup_distance(u8, lambda p: np.log(np.maximum(np.abs(p[..., 0]), 1.0)), off_circle) < 0.01

    u_mixed = PotentialGrid.from_potential(spec, mixed_smooth(0, 0.25), VERTICAL)
    phi = TestForm(0j, 1.5, 0j, 1.0, 1.0, 0.3 - 0.2j)
    rep = convergence_rate_probe(henon, [u_fs, u_mixed], [phi], 10, None, seed=0)
    assert rep.scalars["cross_difference_final[phi0]"] <= 10 * rep.scalars["grid_error_final[phi0]"]
    assert time.perf_counter() - t0 < 300


def test_criterion_4_equilibrium_measure(g, bidisc):
    t0 = time.perf_counter()
    spec = GridSpec.for_domain(bidisc)
    u = PotentialGrid.from_potential(spec, log_plus(0), VERTICAL)
    v_torus = PotentialGrid.from_potential(spec, log_plus(1), HORIZONTAL)
    torus = mixed_ma_measure(u, v_torus)
    ez, ew = torus.mean()
    assert abs(ez) < 0.02 and abs(ew) < 0.02
    az, aw = torus.abs_mean()
    assert abs(az - 1) <= 0.02 and abs(aw - 1) <= 0.02
    assert abs(torus.weights.sum() - 1) <= 1e-9
    del torus, v_torus

    v = PotentialGrid.from_potential(spec, fubini_study(1), HORIZONTAL)
    for _ in range(2):
        v = pushforward_normalized(g, v)
    mu = mixed_ma_measure(u, v)
    assert abs(mu.weights.sum() - 1) <= 1e-9
    inv = invariance_check(g, mu, coarse_measure(u, v), observable_library(10), factor=3.0)
    assert len(inv.names) == 10 and inv.all_passed, inv
    sc = support_check(g, mu, spec.cell_diagonal())
    assert sc.checked > 0 and sc.passed, sc
    assert time.perf_counter() - t0 < 300


def test_criterion_5_lyapunov(g, henon, bidisc):
    t0 = time.perf_counter()
    mu_g = sample_equilibrium(g, bidisc, 10_000, seed=1)
    lg = lyapunov_qr(g, mu_g, 64, 400, seed=1, dom=bidisc)
    assert abs(lg.exponents[0] - LOG2) <= 0.01
    assert abs(lg.exponents[1] + 2 * LOG2) <= 0.01

    mu_h = sample_equilibrium(henon, bidisc, 10_000, seed=1)
    lh = lyapunov_qr(henon, mu_h, 64, 400, seed=1, dom=bidisc)
    assert lh.exponents[0] >= LOG2 / 4 - 0.01
    assert lh.exponents[1] <= -LOG2 / 4 + 0.01
    for m, mu, lyap in ((g, mu_g, lg), (henon, mu_h, lh)):
        inv = lyapunov_qr(m.inverse_map(), inverse_measure(m, mu), 64, 400, seed=1, dom=bidisc)
        spread = max(lyap.spread, inv.spread)
        assert np.all(np.abs(np.asarray(inv.exponents) + np.asarray(lyap.exponents)[::-1]) <= 2 * spread)
        assert abs(np.sum(lyap.exponents) - lyap.log_det_mean) <= 2 * lyap.spread
    assert time.perf_counter() - t0 < 120


def test_criterion_6_entropy(g, henon, bidisc):
    t0 = time.perf_counter()
    for m in (g, henon):
        mu = sample_equilibrium(m, bidisc, 20_000, seed=7)
        sep = entropy_separated_sets(m, bidisc, 0.3, [1, 2, 3, 4, 5], 20_000, seed=7, mu=mu)
        bow = bowen_ball_mass(m, mu, 0.3, [0, 1, 2, 3, 4, 5, 6], 200, seed=7)
        for slope in (sep.scalars["entropy_slope"], bow.scalars["entropy_slope"]):
            assert 0.8 * LOG2 <= slope <= 1.15 * LOG2, (m.kind, slope / LOG2)
    assert time.perf_counter() - t0 < 300


def test_criterion_7_mixing(g, henon, bidisc):
    t0 = time.perf_counter()
    mu_g = sample_equilibrium(g, bidisc, 10_100, seed=1)
    re_z = Observable("re_z", lambda x: x[..., 0].real)
    rep = correlation_decay(g, mu_g, re_z, re_z, 10, seed=1)
    floor = rep.scalars["noise_floor"]
    assert np.all(np.abs(rep.series["I_n"][1:11]) < floor)

    mu_h = sample_equilibrium(henon, bidisc, 10_100, seed=1)
    s = saddle_point(henon)
    rep = correlation_decay(henon, mu_h, bump_observable(s, 0.5), bump_observable(s, 0.8), 10, seed=1)
    assert rep.scalars["decay_ratio"] > 1
    assert rep.scalars["fit_r2"] >= 0.9
    assert time.perf_counter() - t0 < 300


def test_criterion_8_degrees(henon, bidisc):
    t0 = time.perf_counter()
    reps = degree_reports(henon, bidisc, (2, 3, 4, 5, 6, 7, 8), 2 ** 15, seed=0, control=False)
    summary = degree_summary(henon, reps)
    assert abs(summary.scalars["delta_plus"] - 1) <= 0.1
    assert abs(summary.scalars["delta_minus"] - 1) <= 0.1
    assert summary.flags["degree_gap"] and summary.scalars["verdict"] == "d > delta"

    A = np.array([[1.5 + 0.5j, 0.3], [0.2j, 0.7 - 0.1j]])
    lin = LinearMap(A)
    disc = DiscFamily((0.1, 0.2j), (0.8 + 0.1j, 0.3), samples=256)
    n_list = [1, 2, 3, 4]
    vs = log_volumes(lin, disc, bidisc, n_list, seed=0, restrict=False)
    j = np.array([0.8 + 0.1j, 0.3])
    for n, lv in zip(vs.n, vs.log_volume):
        image = np.linalg.matrix_power(A, n) @ j
        assert abs(lv - math.log(math.pi * np.vdot(image, image).real)) <= 1e-8

    control = volume_growth(henon, horizontal_disc(bidisc, 1), (2, 3, 4, 5, 6, 7, 8), seed=0, dom=bidisc)
    assert abs(control.scalars["log_slope"] - LOG2) <= 0.1 * LOG2
    assert time.perf_counter() - t0 < 180


DETERMINISM_PARAMS = {
    "check-structure": "count = 2000\n",
    "green": "points = 2000\n",
    "current-converge": "nz = 32\nnw = 16\nn_max = 4\n",
    "measure": "count = 2000\n",
    "lyapunov": "orbits = 32\nsteps = 120\ncount = 2000\n",
    "entropy": "budget = 10000\ncount = 10000\ncenters = 60\n",
    "mixing": "count = 10000\n",
    "degrees": "samples = 4096\nn_list = 2, 3, 4\n",
    "dashboard": "count = 10000\norbits = 32\nsteps = 120\nsamples = 4096\n",
}


def test_criterion_9_determinism(tmp_path):
    from horizon.cli import execute

    for sub, params in DETERMINISM_PARAMS.items():
        text = f"[run]\nseed = 12345\n\n[map]\nkind = henon\nc = 0\na = 0.5\n\n[params]\n{params}"
        outputs = []
        for workers in (1, 2, 1):
            status, where = execute(sub, text, tmp_path / f"w{workers}-{len(outputs)}", workers=workers)
            assert status in (0, 2)
            report = json.loads((where / "report.json").read_text())
            report.pop("timestamp", None)
            csv = (where / "series.csv").read_bytes()
            outputs.append((json.dumps(report, sort_keys=True), csv))
        assert outputs[0] == outputs[1] == outputs[2], sub
