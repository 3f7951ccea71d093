"""The equilibrium measure mu = T+ ^ T- for k=2 and weighted samples of it.

Two constructions are provided. The grid construction takes a vertical
potential u and a horizontal potential v on a common lattice and forms the
mixed Monge-Ampere density of dd^c u ^ dd^c v by centered second
differences. The orbit-segment sampler solves for points x_0, ..., x_n with
x_0 on a horizontal line, x_n on a vertical line and x_{j+1} = f(x_j); the
d^n solutions are indexed by inverse-branch codes and their midpoints x_m
equidistribute towards mu. Each sample keeps its exact past and future
orbit segments, which the ergodic estimators use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from horizon.currents import (
    HORIZONTAL,
    VERTICAL,
    GridSpec,
    Potential,
    PotentialGrid,
    Transport,
    _Interpolant,
)
from horizon.errors import HorizonError, ResolutionError
from horizon.geometry import Domain
from horizon.maps import MapSpec
from horizon.report import ExperimentReport, aitken_limit, geometric_rate
from horizon.rng import make_rng, uniform_disc


@dataclass
class SampleMeasure:
    """Weighted point cloud; optional orbit segments ending (history) and starting (future) at each point."""

    points: np.ndarray
    weights: np.ndarray
    provenance: dict = field(default_factory=dict)
    history: np.ndarray | None = None
    future: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=complex)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.points.shape[:1]:
            raise ValueError("one weight per point is required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        tot = w.sum()
        if tot <= 0:
            raise ValueError("total weight must be positive")
        self.weights = w / tot

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def k(self) -> int:
        return self.points.shape[-1]

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.sum(self.weights * f(self.points)))

    def mean(self) -> np.ndarray:
        return np.sum(self.weights[:, None] * self.points, axis=0)

    def abs_mean(self) -> np.ndarray:
        return np.sum(self.weights[:, None] * np.abs(self.points), axis=0)

    def subset(self, idx) -> "SampleMeasure":
        h = None if self.history is None else self.history[idx]
        fu = None if self.future is None else self.future[idx]
        return SampleMeasure(self.points[idx], self.weights[idx], dict(self.provenance), h, fu)

    def resample(self, count: int, seed: int) -> "SampleMeasure":
        """Systematic resampling by weight: ``count`` equally weighted points, seeded."""
        idx = systematic_indices(self.weights, count, seed)
        out = self.subset(idx)
        out.weights = np.full(count, 1.0 / count)
        out.provenance["resampled"] = count
        return out


def systematic_indices(weights: np.ndarray, count: int, seed: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    u0 = make_rng(seed, 71).random()
    u = (u0 + np.arange(count)) / count
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right").clip(0, len(weights) - 1)


# ---------------------------------------------------------------- grid measure


def _second_differences(U: np.ndarray, hz: float, hw: float):
    """u_zzbar, u_wwbar and u_zwbar at interior nodes of a [wr, wi, zr, zi] array."""
    c = U[1:-1, 1:-1, 1:-1, 1:-1]

    def sh(a0=0, a1=0, a2=0, a3=0):
        n0, n1, n2, n3 = U.shape
        return U[1 + a0:n0 - 1 + a0, 1 + a1:n1 - 1 + a1, 1 + a2:n2 - 1 + a2, 1 + a3:n3 - 1 + a3]

    lap_z = (sh(a2=1) + sh(a2=-1) + sh(a3=1) + sh(a3=-1) - 4 * c) / hz ** 2
    lap_w = (sh(a0=1) + sh(a0=-1) + sh(a1=1) + sh(a1=-1) - 4 * c) / hw ** 2

    def mixed(i, j):
        kw = lambda si, sj: sh(**{f"a{i}": si, f"a{j}": sj})  # noqa: E731
        return (kw(1, 1) - kw(1, -1) - kw(-1, 1) + kw(-1, -1)) / (4 * hz * hw)

    # z = x + iy on axes (2, 3); w = s + it on axes (0, 1)
    u_xs, u_yt, u_xt, u_ys = mixed(2, 0), mixed(3, 1), mixed(2, 1), mixed(3, 0)
    u_zwbar = 0.25 * ((u_xs + u_yt) + 1j * (u_xt - u_ys))
    return 0.25 * lap_z, 0.25 * lap_w, u_zwbar


@dataclass
class GridDensity:
    density: np.ndarray
    cross_fraction: float
    negative_fraction: float


def mixed_ma_density(U: np.ndarray, V: np.ndarray, hz: float, hw: float) -> GridDensity:
    """Cell masses of dd^c u ^ dd^c v at interior nodes, before clipping.

    With dd^c = (2/pi) d_z d_zbar per variable the density is
    (2/pi)^2 (u_zz v_ww + u_ww v_zz - 2 Re(u_zw conj(v_zw))).
    """
    uzz, uww, uzw = _second_differences(U, hz, hw)
    vzz, vww, vzw = _second_differences(V, hz, hw)
    scale = (2 / math.pi) ** 2 * hz ** 2 * hw ** 2
    diag = (uzz * vww + uww * vzz) * scale
    cross = -2 * (uzw * np.conj(vzw)).real * scale
    dens = diag + cross
    pos = dens[dens > 0].sum()
    neg = -dens[dens < 0].sum()
    tot = abs(dens.sum())
    return GridDensity(dens, float(abs(cross.sum()) / tot) if tot > 0 else math.inf,
                       float(neg / pos) if pos > 0 else math.inf)


def _cell_centers(spec: GridSpec) -> np.ndarray:
    z = spec.plane("z")[1:-1, 1:-1]
    w = spec.plane("w")[1:-1, 1:-1]
    zz = np.broadcast_to(z, w.shape + z.shape)
    ww = np.broadcast_to(w[:, :, None, None], zz.shape)
    return np.stack([zz, ww], axis=-1)


def _values(g: PotentialGrid) -> np.ndarray:
    return g.values


def mixed_ma_measure(u: PotentialGrid, v: PotentialGrid, tolerance: float = 0.05,
                     keep_zero: bool = False) -> SampleMeasure:
    """Normalized, clipped mixed Monge-Ampere measure of a vertical u and horizontal v.

    Diagnostics record the negative-mass fraction before clipping (flag
    ``unreliable`` above ``tolerance``) and the share of the total carried by
    the cross-derivative terms.
    """
    if u.orientation != VERTICAL or v.orientation != HORIZONTAL:
        raise ValueError("need a vertical u and a horizontal v")
    if u.spec != v.spec:
        raise ValueError("potentials must share a grid")
    spec = u.spec
    return _measure_from_arrays(spec, _values(u), _values(v), spec.hz, spec.hw, tolerance, keep_zero,
                                {"grid": spec.describe(), "u": u.provenance, "v": v.provenance})


def _measure_from_arrays(spec, U, V, hz, hw, tolerance, keep_zero, prov, centers=None) -> SampleMeasure:
    gd = mixed_ma_density(U, V, hz, hw)
    dens = np.clip(gd.density, 0.0, None)
    if dens.sum() <= 0:
        raise ResolutionError("mixed Monge-Ampere density vanishes on the grid")
    pts = _cell_centers(spec) if centers is None else centers
    flat_w = dens.reshape(-1)
    flat_p = pts.reshape(-1, 2)
    keep = np.ones_like(flat_w, bool) if keep_zero else flat_w > 0
    mu = SampleMeasure(flat_p[keep], flat_w[keep], prov)
    mu.diagnostics = {"negative_fraction": gd.negative_fraction, "cross_fraction": gd.cross_fraction,
                      "unreliable": bool(gd.negative_fraction > tolerance), "cells": int(keep.sum()),
                      "cell_diagonal": math.sqrt(2 * hz ** 2 + 2 * hw ** 2)}
    return mu


def coarse_measure(u: PotentialGrid, v: PotentialGrid) -> SampleMeasure:
    """The same construction on the every-other-node sub-lattice (spacing 2h)."""
    spec = u.spec
    U = _values(u)[::2, ::2, ::2, ::2]
    V = _values(v)[::2, ::2, ::2, ::2]
    z = spec.plane("z")[::2, ::2][1:-1, 1:-1]
    w = spec.plane("w")[::2, ::2][1:-1, 1:-1]
    zz = np.broadcast_to(z, w.shape + z.shape)
    ww = np.broadcast_to(w[:, :, None, None], zz.shape)
    return _measure_from_arrays(spec, U, V, 2 * spec.hz, 2 * spec.hw, 1.0, False, {"coarse": True},
                                np.stack([zz, ww], axis=-1))


# ---------------------------------------------------------------- observables


@dataclass(frozen=True)
class Observable:
    """A C^2 test function on C^k given in closed form."""

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False)

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=complex))


def observable_library(count: int = 10) -> list[Observable]:
    """Trigonometric-polynomial and bump observables on C^2."""
    lib = [
        Observable("re_z", lambda x: x[..., 0].real),
        Observable("im_z", lambda x: x[..., 0].imag),
        Observable("abs2_z", lambda x: np.abs(x[..., 0]) ** 2),
        Observable("re_z2", lambda x: (x[..., 0] ** 2).real),
        Observable("re_w", lambda x: x[..., 1].real),
        Observable("abs2_w", lambda x: np.abs(x[..., 1]) ** 2),
        Observable("re_zw", lambda x: (x[..., 0] * np.conj(x[..., 1])).real),
        Observable("cos_re_z", lambda x: np.cos(x[..., 0].real)),
        Observable("bump_z", lambda x: np.exp(-np.abs(x[..., 0] - 0.5) ** 2)),
        Observable("bump_zw", lambda x: np.exp(-np.abs(x[..., 0] + 0.5j) ** 2 - np.abs(x[..., 1]) ** 2)),
        Observable("re_z3", lambda x: (x[..., 0] ** 3).real),
        Observable("im_w", lambda x: x[..., 1].imag),
    ]
    return lib[:count]


@dataclass
class InvarianceCheck:
    defects: list[float]
    grid_errors: list[float]
    passed: list[bool]
    names: list[str]

    @property
    def all_passed(self) -> bool:
        return all(self.passed)


def invariance_check(m: MapSpec, mu: SampleMeasure, mu_coarse: SampleMeasure,
                     observables: Sequence[Observable], factor: float = 3.0) -> InvarianceCheck:
    """|<mu, phi o f> - <mu, phi>| against ``factor`` times the grid-error estimate.

    The grid error for phi is the larger of |<mu_h, psi> - <mu_2h, psi>| for
    psi = phi and psi = phi o f.
    """
    defects, errs, ok, names = [], [], [], []
    for ob in observables:
        a = mu.integrate(ob)
        b = mu.integrate(lambda x: ob(m.eval(x)))
        ea = abs(a - mu_coarse.integrate(ob))
        eb = abs(b - mu_coarse.integrate(lambda x: ob(m.eval(x))))
        e = max(ea, eb)
        defects.append(abs(b - a))
        errs.append(e)
        ok.append(bool(abs(b - a) <= factor * e))
        names.append(ob.name)
    return InvarianceCheck(defects, errs, ok, names)


@dataclass
class SupportCheck:
    checked: int
    failures: int
    eps: float
    radius: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def support_check(m: MapSpec, mu: SampleMeasure, radius: float, eps: float = 1e-3,
                  rel_threshold: float = 1e-3, probes: int = 64, seed: int = 0) -> SupportCheck:
    """Every cell with weight above ``rel_threshold`` of the largest lies within ``radius``
    of a point where both G+ and G- are at most ``eps``.

    Each cell center is tested with itself and ``probes`` seeded points of
    the ball of that radius around it.
    """
    from horizon.green import green_minus, green_plus

    heavy = np.flatnonzero(mu.weights >= rel_threshold * mu.weights.max())
    rng = make_rng(seed, 72)
    fails = 0
    for chunk in np.array_split(heavy, max(1, len(heavy) // 512)):
        c = mu.points[chunk]
        off = rng.standard_normal((len(chunk), probes, mu.k)) + 1j * rng.standard_normal((len(chunk), probes, mu.k))
        off *= (radius * rng.random((len(chunk), probes, 1)) ** (1 / (2 * mu.k))
                / np.linalg.norm(off, axis=-1, keepdims=True))
        pts = np.concatenate([c[:, None], c[:, None] + off], axis=1)
        flat = pts.reshape(-1, mu.k)
        gp = green_plus(m, flat).value
        gm = green_minus(m, flat).value
        good = (np.maximum(gp, gm) <= eps).reshape(pts.shape[:2]).any(axis=1)
        fails += int((~good).sum())
    return SupportCheck(len(heavy), fails, eps, radius)


# ---------------------------------------------------------------- convergence and PB probes


def measure_convergence_probe(m: MapSpec, u0: PotentialGrid, v0: PotentialGrid, phi: Observable,
                              n_max: int = 6, reference: float | None = None,
                              seed: int | None = None) -> ExperimentReport:
    """<mu_n, phi> for mu_n = mixed_ma_measure(L^n u0, L_-^n v0), with a geometric fit.

    ``reference`` is <mu_inf, phi>; when absent the Aitken limit of the
    sequence is used.
    """
    spec = u0.spec
    rep = ExperimentReport("measure", m.describe(), {"n_max": n_max, "grid": spec.describe(),
                                                     "observable": phi.name}, seed=seed)
    nodes = u0.nodes().reshape(-1, 2)
    shape = (spec.nw, spec.nw, spec.nz, spec.nz)

    def seq(g, pull):
        src = g.source
        if not isinstance(src, Transport):
            src = Transport(Potential("grid", src if src is not None else _Interpolant(g), g.normalization))
        return src.sequence(nodes, n_max, m, pull)

    vals, unrel, neg = [], False, []
    for n, (uu, vv) in enumerate(zip(seq(u0, True), seq(v0, False))):
        mu = _measure_from_arrays(spec, uu.reshape(shape), vv.reshape(shape), spec.hz, spec.hw, 0.05, False, {})
        vals.append(mu.integrate(phi))
        neg.append(mu.diagnostics["negative_fraction"])
        unrel |= mu.diagnostics["unreliable"]
    vals = np.array(vals)
    rep.series["n"] = list(range(len(vals)))
    rep.series["pairing"] = vals
    rep.series["negative_fraction"] = neg
    lim = reference if reference is not None else (aitken_limit(vals) if len(vals) >= 3 else vals[-1])
    rep.scalars["limit"] = lim
    err = np.abs(vals - lim)
    fit = geometric_rate(np.arange(len(vals))[err > 1e-14], err[err > 1e-14])
    if fit is not None and fit.points >= 2:
        rep.set_scalar("rate", math.exp(-fit.slope))
        rep.scalars["r2"] = fit.r2
    else:
        rep.set_scalar("rate", None)
    if len(vals) >= 3:
        d = np.abs(np.diff(vals))
        rep.scalars["cauchy_ratio"] = float(d[-1] / d[0]) if d[0] > 0 else 0.0
    rep.flags["unreliable"] = bool(unrel)
    return rep


@dataclass(frozen=True)
class LogPole:
    """phi_delta(x) = log(delta + |l(x)|) for the affine l(x) = sum coeffs_i x_i + const."""

    coeffs: tuple
    const: complex = 0j
    name: str = ""

    def ell(self, x):
        return np.tensordot(np.asarray(x, dtype=complex), np.asarray(self.coeffs, dtype=complex), axes=([-1], [0])) + self.const


def pb_probe(mu: SampleMeasure, family: Sequence[LogPole], j_max: int = 20, floor: float | None = None,
             seed: int | None = None) -> ExperimentReport:
    """<mu, log(delta + |l|)> for delta = 2^-j, j = 0..j_max.

    The local slope s_j = (v_j - v_{j+1}) / log 2 is the mass that mu puts
    within about delta of the pole set; a PB measure has s_j -> 0, an atom
    keeps it at the atom's weight. Scales below ``floor`` (default: the
    measure's cell diagonal, if recorded) are reported but not judged.
    """
    rep = ExperimentReport("pb-probe", {}, {"j_max": j_max}, seed=seed)
    floor = floor if floor is not None else mu.diagnostics.get("cell_diagonal", 0.0)
    deltas = 2.0 ** -np.arange(j_max + 1)
    rep.series["delta"] = deltas
    consistent = True
    for i, pole in enumerate(family):
        a = np.abs(pole.ell(mu.points))
        v = np.array([float(np.sum(mu.weights * np.log(dl + a))) for dl in deltas])
        s = (v[:-1] - v[1:]) / math.log(2)
        rep.series[f"value[{i}]"] = v
        rep.series[f"slope[{i}]"] = s
        judged = s[deltas[1:] >= floor] if floor > 0 else s
        last = float(judged[-1]) if len(judged) else float(s[-1])
        ok = bool(last < 0.1)
        rep.scalars[f"last_slope[{i}]"] = last
        rep.scalars[f"value_at_floor[{i}]"] = float(v[: len(judged) + 1][-1])
        rep.flags[f"bounded[{i}]"] = ok
        consistent &= ok
    rep.flags["pb_consistent"] = consistent
    return rep


# ---------------------------------------------------------------- orbit-segment sampler


@dataclass
class SegmentSolve:
    orbits: np.ndarray
    residual: np.ndarray
    sweeps: int


def solve_segments(m: MapSpec, w0: np.ndarray, c: np.ndarray, codes: np.ndarray,
                   coded_sweeps: int = 12, max_sweeps: int = 200, tol: float = 1e-13) -> SegmentSolve:
    """Orbit segments x_0..x_n with pi_2 x_0 = w0, pi_1 x_n = c and inverse-branch codes.

    The z-coordinates are updated by backward sweeps through the crossed
    inverse branches and the w-coordinates by forward sweeps. The first
    ``coded_sweeps`` pick the branch by code; later sweeps follow the branch
    closest to the previous iterate, so the labeling stays continuous.
    """
    N, n = codes.shape
    p, k = m.p, m.k
    z = np.zeros((N, n + 1, p), dtype=complex)
    w = np.zeros((N, n + 1, k - p), dtype=complex)
    z[:, n] = c
    w[:, 0] = w0
    active = np.arange(N)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        za, wa = z[active], w[active]
        old = za.copy()
        for j in range(n):
            x = np.concatenate([za[:, j], wa[:, j]], axis=-1)
            wa[:, j + 1] = m.eval(x)[:, p:]
        ar = np.arange(len(active))
        for j in range(n - 1, -1, -1):
            zb, _ = m.crossed_branches(wa[:, j], za[:, j + 1])
            if sweeps <= coded_sweeps:
                pick = codes[active, j] % zb.shape[0]
            else:
                pick = np.argmin(np.sum(np.abs(zb - old[None, :, j]) ** 2, axis=-1), axis=0)
            za[:, j] = zb[pick, ar]
        z[active], w[active] = za, wa
        if sweeps > coded_sweeps:
            # segments stop being updated once their own z-coordinates settle
            moving = np.max(np.abs(za - old), axis=(1, 2)) >= tol
            active = active[moving]
            if active.size == 0:
                break
    for j in range(n):
        x = np.concatenate([z[:, j], w[:, j]], axis=-1)
        w[:, j + 1] = m.eval(x)[:, p:]
    orbits = np.concatenate([z, w], axis=-1)
    res = np.max(np.abs(m.eval(orbits[:, :-1].reshape(-1, k)).reshape(N, n, k) - orbits[:, 1:]), axis=(1, 2))
    return SegmentSolve(orbits, res, sweeps)


def _branch_count(m: MapSpec) -> int:
    d = m.main_degree
    if d is None:
        raise HorizonError("orbit-segment sampling needs a known main degree")
    return int(d)


def stratified_codes(count: int, length: int, base: int, center: int, rng, strata_digits: int) -> np.ndarray:
    """Random branch codes whose digits nearest ``center`` run through all values evenly."""
    codes = rng.integers(0, base, size=(count, length))
    order = sorted(range(length), key=lambda j: (abs(j - center), j))[:strata_digits]
    idx = np.arange(count) + int(rng.integers(0, base ** len(order)))
    perm = rng.permutation(count)
    for t, j in enumerate(order):
        codes[perm, j] = (idx // base ** t) % base
    return codes


def sample_equilibrium(m: MapSpec, dom: Domain, count: int = 10_000, seed: int = 0, past: int = 24,
                       future: int = 24, strata_digits: int | None = None, chunk: int = 4096,
                       max_residual: float = 1e-9) -> SampleMeasure:
    """Equally weighted samples of mu from orbit segments of length past + future.

    Start lines {w = w0} and end lines {z = c} are drawn uniformly from
    the inner shells N'' and M''. Segments whose residual exceeds
    ``max_residual`` or which leave D are dropped and counted.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    d = _branch_count(m)
    n = past + future
    rng = make_rng(seed, 73)
    if strata_digits is None:
        strata_digits = max(1, int(math.log(max(count, 2), d)))
    codes = stratified_codes(count, n, d, past, rng, strata_digits)
    w0 = np.concatenate([uniform_disc(rng, (count, 1), dom.N.radii[2])] * (m.k - m.p), axis=1) \
        if m.k - m.p == 1 else dom.N.sample(rng, count, 2)
    c = uniform_disc(rng, (count, 1), dom.M.radii[2]) if m.p == 1 else dom.M.sample(rng, count, 2)
    orbits, res, sweeps = [], [], 0
    for a in range(0, count, chunk):
        sl = slice(a, min(a + chunk, count))
        sol = solve_segments(m, w0[sl], c[sl], codes[sl])
        orbits.append(sol.orbits)
        res.append(sol.residual)
        sweeps = max(sweeps, sol.sweeps)
    orbits = np.concatenate(orbits)
    res = np.concatenate(res)
    inside = dom.contains(orbits.reshape(-1, m.k)).reshape(orbits.shape[:2]).all(axis=1)
    good = (res <= max_residual) & inside
    if not np.any(good):
        raise HorizonError("no orbit segment converged inside the domain")
    orbits = orbits[good]
    mu = SampleMeasure(orbits[:, past], np.ones(len(orbits)),
                       {"sampler": "orbit-segments", "past": past, "future": future, "seed": seed},
                       history=orbits[:, : past + 1], future=orbits[:, past:])
    mu.diagnostics = {"dropped": int((~good).sum()), "max_residual": float(res[good].max()), "sweeps": sweeps}
    return mu
