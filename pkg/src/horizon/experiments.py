"""One function per command-line experiment.

Each runner takes a validated :class:`RunConfig` and returns the report plus
optional extra files (SVG plots, point clouds) keyed by file name. Nothing
here touches the file system.
"""

from __future__ import annotations

import math

import numpy as np

from horizon import svg
from horizon.config import RunConfig, build_domain, build_map
from horizon.errors import ConfigError
from horizon.equilibrium import (Observable, coarse_measure, invariance_check, mixed_ma_measure,
                                 observable_library, sample_equilibrium)
from horizon.ergodic import (bowen_ball_mass, bump_observable, correlation_decay, degree_gap_dashboard,
                             entropy_separated_sets, lyapunov_qr)
from horizon.green import STATUS_NAMES, green_minus, green_plus
from horizon.maps import DiagonalMap, HenonMap, MapSpec
from horizon.report import ExperimentReport
from horizon.structure import certify_horizontal_like


def _require_planar(m: MapSpec, what: str) -> None:
    if m.k != 2 or m.p != 1:
        raise ConfigError(f"{what} is implemented for k=2, p=1 maps only")


def saddle_point(m: MapSpec) -> np.ndarray:
    """A fixed point of largest modulus, used to center bump observables on the Julia set."""
    if isinstance(m, HenonMap):
        # z = w and P(z) - a z - z = 0
        coeffs = list(m.poly)
        coeffs[1] -= m.a + 1
        roots = np.roots(coeffs[::-1])
        z = roots[np.argmax(np.abs(roots))]
        return np.array([z, z])
    if isinstance(m, DiagonalMap):
        pt = []
        for c, e in zip(m.coeffs, m.powers):
            pt.append((1 / c) ** (1 / (e - 1)) if e > 1 else 0.0)
        return np.array(pt, dtype=complex)
    return np.zeros(m.k, dtype=complex)


def observable_by_name(m: MapSpec, name: str) -> Observable:
    if name == "bump_saddle":
        return bump_observable(saddle_point(m), 0.5, name)
    if name == "bump_saddle_wide":
        return bump_observable(saddle_point(m), 0.8, name)
    for ob in observable_library(12):
        if ob.name == name:
            return ob
    if name == "constant":
        return Observable("constant", lambda x: np.ones(x.shape[:-1]))
    raise ConfigError(f"unknown observable {name!r}")


def _mu(m, dom, cfg: RunConfig, count: int):
    """A mu-sample with at least ``count`` points: a few segments fail to converge and are dropped."""
    extra = max(16, count // 32)
    mu = sample_equilibrium(m, dom, count + extra, cfg.seed)
    if len(mu) < count:
        mu = sample_equilibrium(m, dom, 2 * count, cfg.seed)
    return mu


def run_check_structure(cfg: RunConfig):
    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    P = cfg.params
    cert = certify_horizontal_like(m, dom, P["count"], cfg.seed, P["threshold"])
    rep = ExperimentReport("check-structure", m.describe(), cfg.echo(), seed=cfg.seed)
    rep.set_scalar("margin_v", cert.margin_v)
    rep.set_scalar("margin_h", cert.margin_h)
    rep.set_scalar("main_degree", cert.main_degree)
    rep.scalars["samples_used"] = cert.samples_used
    rep.flags["horizontal_like"] = cert.is_horizontal_like
    rep.flags["not_certified"] = not cert.is_horizontal_like
    rep.notes.append(cert.note)
    return rep, {}


def run_green(cfg: RunConfig):
    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    P = cfg.params
    x = dom.sample(P["points"], cfg.seed, P["shell"], stream=21)
    gp = green_plus(m, x, P["n_max"])
    rep = ExperimentReport("green", m.describe(), cfg.echo(), seed=cfg.seed)
    for code, name in STATUS_NAMES.items():
        rep.scalars[f"count_{name}"] = int(np.sum(gp.status == code))
    rep.set_scalar("max_error_bound", float(gp.error_bound.max()))
    with np.errstate(all="ignore"):
        fx = m.eval(x)
    ok = np.all(np.isfinite(fx), axis=-1)
    gf = green_plus(m, fx[ok], P["n_max"])
    defect = np.abs(gf.value - m.d_plus * gp.value[ok])
    bound = gf.error_bound + m.d_plus * gp.error_bound[ok]
    rep.set_scalar("invariance_defect_max", float(defect.max()) if defect.size else 0.0)
    rep.flags["invariance_within_bounds"] = bool(np.all(defect <= bound))
    rep.flags["unreliable"] = not rep.flags["invariance_within_bounds"]
    try:
        gm = green_minus(m, x, P["n_max"])
        rep.set_scalar("g_minus_max_error_bound", float(gm.error_bound.max()))
    except (NotImplementedError, ValueError):
        gm = None
        rep.notes.append("G- not available for this map")
    s = min(P["series_points"], len(x))
    for i in range(m.k):
        rep.series[f"re_x{i}"] = x[:s, i].real
        rep.series[f"im_x{i}"] = x[:s, i].imag
    rep.series["g_plus"] = gp.value[:s]
    rep.series["g_plus_error"] = gp.error_bound[:s]
    rep.series["status"] = [STATUS_NAMES[int(c)] for c in gp.status[:s]]
    if gm is not None:
        rep.series["g_minus"] = gm.value[:s]
    order = np.argsort(np.abs(x[:s, 0]), kind="stable")
    plot = svg.line_plot(np.abs(x[:s, 0])[order], {"G+": gp.value[:s][order]}, "G+ against |z|", "|z|", "G+")
    return rep, {"green.svg": plot}


def run_current_converge(cfg: RunConfig):
    from horizon.currents import (GridSpec, PotentialGrid, fubini_study, green_potential, log_plus,
                                  mixed_smooth, test_form_library, convergence_rate_probe, VERTICAL)

    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    _require_planar(m, "current convergence")
    P = cfg.params
    spec = GridSpec.for_domain(dom, nz=P["nz"], nw=P["nw"])
    lib = {"fubini_study": fubini_study(0), "mixed_smooth": mixed_smooth(0), "log_plus": log_plus(0)}
    try:
        u0 = [PotentialGrid.from_potential(spec, lib[name], VERTICAL) for name in P["potentials"]]
    except KeyError as e:
        raise ConfigError(f"unknown potential {e.args[0]!r}") from None
    ref = None
    if P["reference"] == "green":
        ref = PotentialGrid.from_potential(spec, green_potential(m), VERTICAL)
    elif P["reference"] == "log_plus":
        ref = PotentialGrid.from_potential(spec, log_plus(0), VERTICAL)
    elif P["reference"] != "none":
        raise ConfigError("reference must be none, green or log_plus")
    rep = convergence_rate_probe(m, u0, test_form_library(dom)[:1], P["n_max"], ref, cfg.seed)
    rep.config = cfg.echo()
    ys = {k: np.abs(np.asarray(v, dtype=float)) for k, v in rep.series.items() if k.startswith("grid_error")}
    plot = svg.line_plot(rep.series["n"], ys, "grid-error estimates", "n", "error", log_y=True)
    return rep, {"current.svg": plot}


def run_measure(cfg: RunConfig):
    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    P = cfg.params
    rep = ExperimentReport("measure", m.describe(), cfg.echo(), seed=cfg.seed)
    obs = observable_library(P["observables"])
    if P["method"] == "segments":
        mu = sample_equilibrium(m, dom, P["count"], cfg.seed, P["past"], P["future"])
        rep.scalars["dropped"] = mu.diagnostics["dropped"]
        rep.set_scalar("max_residual", mu.diagnostics["max_residual"])
        with np.errstate(all="ignore"):
            fx = mu.future[:, 1] if mu.future is not None and mu.future.shape[1] > 1 else m.eval(mu.points)
        se = 1.0 / math.sqrt(len(mu))
        for ob in obs:
            a, b = ob(mu.points), ob(fx)
            d = float(np.sum(mu.weights * (b - a)))
            sd = float(np.sqrt(np.sum(mu.weights * (b - a) ** 2)))
            rep.set_scalar(f"invariance_defect[{ob.name}]", abs(d))
            rep.flags[f"invariant[{ob.name}]"] = bool(abs(d) <= 3 * sd * se + 1e-12)
    elif P["method"] == "grid":
        from horizon.currents import (GridSpec, PotentialGrid, fubini_study, pushforward_normalized,
                                      HORIZONTAL, VERTICAL, green_potential)

        _require_planar(m, "the grid measure")
        spec = GridSpec.for_domain(dom, nz=P["nz"], nw=P["nw"])
        u = PotentialGrid.from_potential(spec, green_potential(m, True), VERTICAL)
        v = PotentialGrid.from_potential(spec, fubini_study(1), HORIZONTAL)
        for _ in range(P["push"]):
            v = pushforward_normalized(m, v)
        mu = mixed_ma_measure(u, v)
        inv = invariance_check(m, mu, coarse_measure(u, v), obs)
        for name, dft, ge, ok in zip(inv.names, inv.defects, inv.grid_errors, inv.passed):
            rep.set_scalar(f"invariance_defect[{name}]", dft)
            rep.set_scalar(f"grid_error[{name}]", ge)
            rep.flags[f"invariant[{name}]"] = ok
        rep.set_scalar("negative_fraction", mu.diagnostics["negative_fraction"])
        rep.flags["unreliable"] = bool(mu.diagnostics["unreliable"])
    else:
        raise ConfigError("method must be segments or grid")
    rep.set_scalar("total_mass", float(mu.weights.sum()))
    for i, v in enumerate(mu.mean()):
        rep.set_scalar(f"mean_re[{i}]", float(v.real))
        rep.set_scalar(f"mean_im[{i}]", float(v.imag))
    for i, v in enumerate(mu.abs_mean()):
        rep.set_scalar(f"mean_abs[{i}]", float(v))
    cloud = {"weight": mu.weights}
    for i in range(mu.k):
        cloud[f"re_x{i}"] = mu.points[:, i].real
        cloud[f"im_x{i}"] = mu.points[:, i].imag
    from horizon.report import write_csv

    lim = float(np.max(np.abs(mu.points.real[:, 0]))) + 1e-9
    hist, _, _ = np.histogram2d(mu.points[:, 0].imag, mu.points[:, 0].real, bins=48,
                                range=[[-lim, lim], [-lim, lim]], weights=mu.weights)
    files = {"points.csv": write_csv(list(cloud), list(cloud.values())),
             "marginal.svg": svg.heatmap(hist, (-lim, lim), (-lim, lim), "z-marginal of mu")}
    return rep, files


def run_lyapunov(cfg: RunConfig):
    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    P = cfg.params
    mu = _mu(m, dom, cfg, P["count"])
    lr = lyapunov_qr(m, mu, P["orbits"], P["steps"], cfg.seed, dom=dom)
    rep = lr.to_report(m, cfg.seed)
    rep.config = cfg.echo()
    ys = {f"lambda_{i + 1}": lr.per_orbit[:, i] for i in range(m.k)}
    return rep, {"lyapunov.svg": svg.line_plot(range(len(lr.per_orbit)), ys, "per-orbit exponents", "orbit")}


def run_entropy(cfg: RunConfig):
    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    P = cfg.params
    mu = _mu(m, dom, cfg, P["count"])
    sep = entropy_separated_sets(m, dom, P["eps"], P["n_list"], P["budget"], cfg.seed, mu=mu)
    bow = bowen_ball_mass(m, mu, P["bowen_eps"], P["bowen_n_list"], P["centers"], cfg.seed)
    rep = ExperimentReport("entropy", m.describe(), cfg.echo(), seed=cfg.seed)
    rep.set_scalar("separated_slope", sep.scalars["entropy_slope"])
    rep.set_scalar("bowen_slope", bow.scalars["entropy_slope"])
    rep.set_scalar("log_d", sep.scalars["log_d"])
    rep.set_scalar("bowen_dropped_fraction", bow.scalars["dropped_fraction"])
    rep.series["n"] = sep.series["n"]
    rep.series["separated_count"] = sep.series["count"]
    rep.series["bowen_n"] = bow.series["n"]
    rep.series["bowen_median_mass"] = bow.series["median_mass"]
    rep.flags["budget_saturated"] = sep.flags["budget_saturated"]
    rep.flags["undersampled"] = bow.flags["undersampled"]
    plot = svg.line_plot(sep.series["n"], {"log count": sep.series["log_count"]}, "separated sets", "n")
    return rep, {"entropy.svg": plot}


def run_mixing(cfg: RunConfig):
    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    P = cfg.params
    mu = _mu(m, dom, cfg, P["count"])
    rep = correlation_decay(m, mu, observable_by_name(m, P["phi"]), observable_by_name(m, P["psi"]),
                            P["n_max"], cfg.seed)
    rep.config = cfg.echo()
    floor = rep.scalars["noise_floor"]
    plot = svg.line_plot(rep.series["n"], {"|I_n|": rep.series["abs_I_n"],
                                           "noise floor": [floor] * len(rep.series["n"])},
                         "correlations", "n", "|I_n|", log_y=True)
    return rep, {"mixing.svg": plot}


def degree_reports(m: MapSpec, dom, n_list, samples: int, seed: int, control: bool = True):
    """Volume-growth reports for every disc dimension that needs one, plus the full-dimensional controls."""
    import dataclasses

    from horizon.degrees import horizontal_disc, vertical_disc, volume_growth

    reps = []
    qs = [("forward", q) for q in range(1, m.p)] + [("backward", q) for q in range(1, m.k - m.p)]
    if control:
        qs += [("forward", m.p), ("backward", m.k - m.p)]
    for direction, q in qs:
        disc = horizontal_disc(dom, q) if direction == "forward" else vertical_disc(dom, q)
        disc = dataclasses.replace(disc, samples=samples)
        reps.append(volume_growth(m, disc, n_list, seed, dom=dom))
    return reps


def run_degrees(cfg: RunConfig):
    from horizon.degrees import degree_summary
    from horizon.report import write_csv

    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    P = cfg.params
    reps = degree_reports(m, dom, P["n_list"], P["samples"], cfg.seed, P["control"])
    rep = degree_summary(m, reps)
    rep.experiment = "degrees"
    rep.config = cfg.echo()
    rep.seed = cfg.seed
    rows = {"q": [], "direction": [], "n": [], "log_volume": []}
    for r in reps:
        for n, lv in zip(r.series["n"], r.series["log_volume"]):
            rows["q"].append(r.config["q"])
            rows["direction"].append(r.config["direction"])
            rows["n"].append(n)
            rows["log_volume"].append(lv)
        rep.scalars[f"log_slope[{r.config['direction']},q{r.config['q']}]"] = r.scalars["log_slope"]
        rep.flags[f"undersampled[{r.config['direction']},q{r.config['q']}]"] = r.flags["undersampled"]
    rep.series.update(rows)
    plots = {}
    if reps:
        ys = {f"{r.config['direction']} q={r.config['q']}": r.series["log_volume"] for r in reps}
        plots["degrees.svg"] = svg.line_plot(reps[0].series["n"], ys, "log volume", "n")
    return rep, plots


def run_dashboard(cfg: RunConfig):
    from horizon.degrees import degree_summary

    m, dom = build_map(cfg.map_spec), build_domain(cfg.map_spec, cfg.domain_spec)
    P = cfg.params
    cert = certify_horizontal_like(m, dom, 10_000, cfg.seed)
    parts = {"structure": cert}
    if cert.is_horizontal_like:
        parts["degrees"] = degree_summary(m, degree_reports(m, dom, (2, 3, 4, 5, 6, 7, 8), P["samples"],
                                                            cfg.seed, control=False))
        mu = _mu(m, dom, cfg, P["count"])
        parts["lyapunov"] = lyapunov_qr(m, mu, P["orbits"], P["steps"], cfg.seed, dom=dom)
        parts["mixing"] = correlation_decay(m, mu, observable_by_name(m, "bump_saddle"),
                                            observable_by_name(m, "bump_saddle_wide"), P["n_max"], cfg.seed)
    rep = degree_gap_dashboard(m, parts)
    rep.config = cfg.echo()
    rep.seed = cfg.seed
    if "mixing" in parts:
        rep.series["n"] = parts["mixing"].series["n"]
        rep.series["abs_I_n"] = parts["mixing"].series["abs_I_n"]
    return rep, {}


RUNNERS = {
    "check-structure": run_check_structure,
    "green": run_green,
    "current-converge": run_current_converge,
    "measure": run_measure,
    "lyapunov": run_lyapunov,
    "entropy": run_entropy,
    "mixing": run_mixing,
    "degrees": run_degrees,
    "dashboard": run_dashboard,
}
