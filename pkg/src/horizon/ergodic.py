"""Lyapunov exponents, entropy and correlation decay along sampled orbits.

All estimators work from a :class:`SampleMeasure` whose points approximate
mu. When the measure carries orbit segments (``history`` ending at each
point, ``future`` starting at it) those exact segments are used in place of
naive forward iteration, which drifts off the Julia set at the rate of the
largest exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from horizon.equilibrium import Observable, SampleMeasure
from horizon.geometry import Domain
from horizon.maps import MapSpec
from horizon.report import ExperimentReport, geometric_rate, line_fit
from horizon.rng import chunk_slices, make_rng, ordered_map

BLOCK = 20
ORBIT_CHUNK = 64


def degree_gap_defaults(m: MapSpec) -> tuple[float | None, float | None]:
    """delta+ and delta- where they are forced: d_0 = 1 in either direction."""
    dp = 1.0 if m.p == 1 else None
    dm = 1.0 if m.k - m.p == 1 else None
    return dp, dm


@dataclass
class LyapunovReport:
    exponents: list[float]
    spread: float
    orbits_used: int
    steps_used: int
    theorem_floor: float | None
    theorem_ceiling_neg: float | None
    per_orbit: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 0)))
    restarts: int = 0
    discarded_fraction: float = 0.0
    log_det_mean: float = math.nan
    log_det_spread: float = math.nan
    unreliable: bool = False

    def counts_consistent(self, p: int, slack: float = 0.05) -> bool:
        """Exactly p exponents above floor - slack and k - p below -floor + slack."""
        if self.theorem_floor is None:
            return False
        ex = np.array(self.exponents)
        k = len(ex)
        up = int(np.sum(ex >= self.theorem_floor - slack))
        ceiling = self.theorem_ceiling_neg if self.theorem_ceiling_neg is not None else -self.theorem_floor
        down = int(np.sum(ex <= ceiling + slack))
        return up == p and down == k - p

    def to_report(self, m: MapSpec, seed: int) -> ExperimentReport:
        rep = ExperimentReport("lyapunov", m.describe(), {"orbits": self.orbits_used, "steps": self.steps_used},
                               seed=seed)
        for i, v in enumerate(self.exponents):
            rep.set_scalar(f"lambda_{i + 1}", v)
        rep.set_scalar("spread", self.spread)
        rep.set_scalar("theorem_floor", self.theorem_floor)
        rep.set_scalar("theorem_ceiling_neg", self.theorem_ceiling_neg)
        rep.set_scalar("mean_log_det", self.log_det_mean)
        rep.set_scalar("exponent_sum", float(np.sum(self.exponents)))
        rep.set_scalar("discarded_fraction", self.discarded_fraction)
        rep.scalars["restarts"] = self.restarts
        rep.series["orbit"] = list(range(len(self.per_orbit)))
        for i in range(self.per_orbit.shape[1] if self.per_orbit.ndim == 2 else 0):
            rep.series[f"lambda_{i + 1}"] = self.per_orbit[:, i]
        rep.flags["unreliable_sampling"] = self.unreliable
        rep.flags["count_rule"] = self.counts_consistent(m.p)
        return rep


def _weighted_choice(rng, weights: np.ndarray, size: int) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right").clip(0, len(weights) - 1)


def _warm_frames(m: MapSpec, mu: SampleMeasure, idx: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal frames pushed along the stored history so they start aligned with the splitting."""
    Q = np.broadcast_to(np.eye(k, dtype=complex), (len(idx), k, k)).copy()
    if mu.history is None or len(idx) == 0:
        return Q
    hist = mu.history[idx]
    for j in range(hist.shape[1] - 1):
        Q, _ = np.linalg.qr(m.differential(hist[:, j]) @ Q)
    return Q


def _lyapunov_chunk(m: MapSpec, mu: SampleMeasure, dom: Domain, tube, n_orb: int, steps: int, seed: int,
                    label: int):
    k = m.k
    rng = make_rng(seed, 81, label)
    fut = mu.future
    flen = 0 if fut is None else fut.shape[1] - 1
    idx = _weighted_choice(rng, mu.weights, n_orb)
    pos = np.zeros(n_orb, dtype=np.int64)
    x = mu.points[idx].copy()
    Q = _warm_frames(m, mu, idx, k)
    total = np.zeros((n_orb, k))
    done = np.zeros(n_orb, dtype=np.int64)
    block = np.zeros((n_orb, k))
    bcount = np.zeros(n_orb, dtype=np.int64)
    restarts = discarded = attempted = 0
    while np.any(done < steps):
        act = np.flatnonzero(done < steps)
        Q[act], R = np.linalg.qr(m.differential(x[act]) @ Q[act])
        with np.errstate(divide="ignore"):
            block[act] += np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1)))
        bcount[act] += 1
        attempted += len(act)
        # follow the stored exact segment while it lasts, then iterate the map
        stored = pos[act] < flen
        nxt = np.empty((len(act), k), dtype=complex)
        if np.any(stored):
            nxt[stored] = fut[idx[act[stored]], pos[act[stored]] + 1]
        if np.any(~stored):
            with np.errstate(all="ignore"):
                nxt[~stored] = m.eval(x[act[~stored]])
        x[act] = nxt
        pos[act] += 1
        bad = ~dom.contains(x[act]) | ~np.all(np.isfinite(block[act]), axis=-1)
        if tube is not None:
            tree, radius = tube
            ok = np.all(np.isfinite(x[act]), axis=-1)
            far = np.ones(len(act), dtype=bool)
            if np.any(ok):
                xa = x[act[ok]]
                dist, _ = tree.query(np.concatenate([xa.real, xa.imag], axis=-1))
                far[ok] = dist > radius
            bad |= far
        left = act[bad]
        if len(left):
            # restart from a fresh mu-sample; the unfinished block is discarded
            restarts += len(left)
            discarded += int(bcount[left].sum())
            new = _weighted_choice(rng, mu.weights, len(left))
            idx[left] = new
            pos[left] = 0
            x[left] = mu.points[new]
            Q[left] = _warm_frames(m, mu, new, k)
            block[left] = 0.0
            bcount[left] = 0
        full = act[(bcount[act] == BLOCK)]
        if len(full):
            total[full] += block[full]
            done[full] += BLOCK
            block[full] = 0.0
            bcount[full] = 0
    return total / done[:, None], restarts, discarded, attempted


def support_tube(mu: SampleMeasure, factor: float = 5.0, floor: float = 0.0):
    """KD-tree of the sample and a tube radius.

    The radius is ``factor`` times the 95th percentile nearest-neighbour
    gap, and at least ``floor``; the floor matters for supports of low
    dimension, where sample gaps are far smaller than the scale on which
    the differential changes.
    """
    pts = np.concatenate([mu.points.real, mu.points.imag], axis=-1)
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=2)
    return tree, max(factor * float(np.quantile(dist[:, 1], 0.95)), floor)


def lyapunov_qr(m: MapSpec, mu: SampleMeasure, orbits: int = 64, steps: int = 400, seed: int = 0,
                dom: Domain | None = None, delta_plus: float | None = None,
                delta_minus: float | None = None, tube_factor: float | None = 5.0) -> LyapunovReport:
    """Per-complex-direction Lyapunov exponents from QR of the Jacobian cocycle.

    Each orbit starts at a mu-sample, runs ``steps`` iterations in blocks
    of 20 and is restarted from a fresh sample whenever it leaves ``dom``
    or a tube around the sample (the partial block is dropped). The tube
    catches orbits that drift off the support toward an attracting cycle
    inside D. Stored future segments are followed before the map is
    iterated. ``spread`` is the largest standard
    deviation of the per-orbit estimates over the k exponents.
    """
    if orbits < 30 or steps < 100:
        raise ValueError("lyapunov_qr needs orbits >= 30 and steps >= 100")
    if dom is None:
        r = 2.0 * float(np.max(np.abs(mu.points))) + 1.0
        dom = Domain.polydisc(m.k, m.p, r)
    steps = BLOCK * math.ceil(steps / BLOCK)
    tube = None if tube_factor is None else support_tube(mu, tube_factor, 0.025 * dom.M.radius)
    slices = chunk_slices(orbits, ORBIT_CHUNK)
    out = ordered_map(lambda t: _lyapunov_chunk(m, mu, dom, tube, t[1].stop - t[1].start, steps, seed, t[0]),
                      list(enumerate(slices)))
    per = np.concatenate([o[0] for o in out])
    restarts = sum(o[1] for o in out)
    discarded = sum(o[2] for o in out)
    attempted = sum(o[3] for o in out)
    ex = np.sort(per.mean(axis=0))[::-1]
    spread = float(np.max(per.std(axis=0)))
    with np.errstate(divide="ignore"):
        logdet = np.log(np.abs(np.linalg.det(m.differential(mu.points))))
    ld_mean = float(np.sum(mu.weights * logdet))
    ld_spread = float(math.sqrt(max(np.sum(mu.weights * (logdet - ld_mean) ** 2), 0.0)))
    dp, dm = degree_gap_defaults(m)
    dp = dp if delta_plus is None else delta_plus
    dm = dm if delta_minus is None else delta_minus
    d = m.main_degree
    floor = None if (d is None or dp is None) else math.log(d / dp) / (2 * m.k)
    ceil = None if (d is None or dm is None) else -math.log(d / dm) / (2 * m.k)
    frac = discarded / attempted if attempted else 0.0
    # restarts per attempted orbit-step measures how often orbits leave D
    leave = restarts / attempted if attempted else 0.0
    return LyapunovReport([float(v) for v in ex], spread, orbits, steps, floor, ceil, per, restarts, frac,
                          ld_mean, ld_spread, bool(leave > 0.2))


def inverse_measure(m: MapSpec, mu: SampleMeasure) -> SampleMeasure:
    """mu in the coordinates of ``m.inverse_map()`` (expanding block first); segments swap roles."""
    q = m.p

    def swap(a):
        return None if a is None else np.concatenate([a[..., q:], a[..., :q]], axis=-1)

    hist = None if mu.future is None else swap(mu.future[:, ::-1])
    fut = None if mu.history is None else swap(mu.history[:, ::-1])
    return SampleMeasure(swap(mu.points), mu.weights.copy(), dict(mu.provenance, inverse=True), hist, fut)


def product_measure(mu1: SampleMeasure, mu2: SampleMeasure, p1: int, p2: int, count: int,
                    seed: int = 0) -> SampleMeasure:
    """Independent pairs from two measures, packed as (z1, z2, w1, w2)."""
    rng = make_rng(seed, 83)
    i = _weighted_choice(rng, mu1.weights, count)
    j = _weighted_choice(rng, mu2.weights, count)

    def pack(a, b):
        return np.concatenate([a[..., :p1], b[..., :p2], a[..., p1:], b[..., p2:]], axis=-1)

    hist = fut = None
    if mu1.history is not None and mu2.history is not None:
        n = min(mu1.history.shape[1], mu2.history.shape[1])
        hist = pack(mu1.history[i, -n:], mu2.history[j, -n:])
    if mu1.future is not None and mu2.future is not None:
        n = min(mu1.future.shape[1], mu2.future.shape[1])
        fut = pack(mu1.future[i, :n], mu2.future[j, :n])
    return SampleMeasure(pack(mu1.points[i], mu2.points[j]), np.ones(count), {"product": True}, hist, fut)


# ---------------------------------------------------------------- entropy


def _forward_orbits(m: MapSpec, mu: SampleMeasure, n: int) -> np.ndarray:
    if mu.future is not None and mu.future.shape[1] > n:
        return mu.future[:, : n + 1]
    return m.orbit(mu.points, n)


def _backward_orbits(m: MapSpec, mu: SampleMeasure, n: int) -> np.ndarray:
    """x_0, x_-1, ..., x_-n for every sample."""
    if mu.history is None or mu.history.shape[1] <= n:
        raise ValueError(f"the measure needs stored histories of length > {n}")
    return mu.history[:, ::-1][:, : n + 1]


def greedy_separated(orbits: np.ndarray, eps: float) -> np.ndarray:
    """Indices of a greedy maximal eps-separated subset in the Bowen metric.

    Candidates are visited in order; a candidate is kept unless an earlier
    kept orbit lies within ``eps``. Close pairs are found with a KD-tree on
    the first and last orbit points (a necessary condition) and then
    checked on the whole segment.
    """
    N = orbits.shape[0]
    if N == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.concatenate([orbits[:, 0], orbits[:, -1]], axis=-1)
    feats = np.concatenate([ends.real, ends.imag], axis=-1)
    tree = cKDTree(feats)
    pairs = tree.query_pairs(eps, p=np.inf, output_type="ndarray")
    if len(pairs):
        dist = np.sqrt(np.sum(np.abs(orbits[pairs[:, 0]] - orbits[pairs[:, 1]]) ** 2, axis=-1)).max(axis=-1)
        pairs = pairs[dist <= eps]
    nbr: list[list[int]] = [[] for _ in range(N)]
    for a, b in pairs:
        lo, hi = (a, b) if a < b else (b, a)
        nbr[hi].append(lo)
    keep = np.zeros(N, dtype=bool)
    for i in range(N):
        if not any(keep[j] for j in nbr[i]):
            keep[i] = True
    return np.flatnonzero(keep)


def entropy_separated_sets(m: MapSpec, dom: Domain, eps: float, n_list: Sequence[int], budget: int = 10_000,
                           seed: int = 0, mu: SampleMeasure | None = None) -> ExperimentReport:
    """Slope of log #(greedy (n, eps)-separated set) against n.

    Candidates are ``budget`` points of a mu-sample (drawn with
    :func:`sample_equilibrium` when ``mu`` is not given); only those whose
    forward orbit stays in D'' through n are kept. Counts above a quarter
    of the surviving candidates are limited by sample density and raise
    ``budget_saturated``.
    """
    n_list = sorted(int(n) for n in n_list)
    if len(n_list) < 3:
        raise ValueError("the entropy slope needs at least three values of n")
    if budget < 10_000:
        raise ValueError("budget must be >= 10^4 candidate points")
    if mu is None:
        from horizon.equilibrium import sample_equilibrium

        mu = sample_equilibrium(m, dom, budget, seed)
    if len(mu) > budget:
        mu = mu.subset(np.sort(make_rng(seed, 85).choice(len(mu), budget, replace=False)))
    inner = dom.shrink("D''")
    counts, survivors = [], []
    for n in n_list:
        orb = _forward_orbits(m, mu, n)
        stay = inner.contains(orb.reshape(-1, m.k)).reshape(orb.shape[:2]).all(axis=1)
        survivors.append(int(stay.sum()))
        counts.append(len(greedy_separated(orb[stay], eps)))
    logs = np.log(np.maximum(counts, 1))
    fit = line_fit(n_list, logs)
    d = m.main_degree
    rep = ExperimentReport("entropy", m.describe(), {"eps": eps, "n_list": n_list, "budget": budget}, seed=seed)
    rep.series.update({"n": n_list, "count": counts, "survivors": survivors, "log_count": logs})
    rep.set_scalar("entropy_slope", fit.slope)
    rep.set_scalar("fit_r2", fit.r2)
    rep.set_scalar("log_d", math.log(d) if d else None)
    rep.set_scalar("ratio_to_log_d", fit.slope / math.log(d) if d else None)
    rep.flags["budget_saturated"] = bool(any(c > 0.25 * s for c, s in zip(counts, survivors)))
    rep.notes.append("greedy separation gives a lower estimate of the maximal separated count")
    return rep


def bowen_ball_mass(m: MapSpec, mu: SampleMeasure, eps: float, n_list: Sequence[int], centers: int = 200,
                    seed: int = 0, min_count: int = 3) -> ExperimentReport:
    """Brin-Katok estimate from the mu-mass of backward Bowen balls.

    For each center x the mass of {y : |f^-j y - f^-j x| <= eps, j <= n} is
    the weighted fraction of samples inside. Per center, log mass is
    fitted against n; the median of minus the slopes is the entropy
    estimate. Centers whose ball holds fewer than ``min_count`` samples at
    the largest n are dropped.
    """
    n_list = sorted(int(n) for n in n_list)
    if len(mu) < 10_000:
        raise ValueError("bowen_ball_mass needs a mu-sample of size >= 10^4")
    n_max = n_list[-1]
    orb = _backward_orbits(m, mu, n_max)
    rng = make_rng(seed, 87)
    cidx = _weighted_choice(rng, mu.weights, centers)

    def one(ci):
        c = orb[ci]
        step = np.sqrt(np.sum(np.abs(orb - c[None]) ** 2, axis=-1))
        running = np.maximum.accumulate(step, axis=1)
        inside = running[:, n_list] <= eps
        return (mu.weights[:, None] * inside).sum(axis=0), inside.sum(axis=0)

    res = ordered_map(one, list(cidx))
    mass = np.array([r[0] for r in res])
    cnt = np.array([r[1] for r in res])
    good = cnt[:, -1] >= min_count
    slopes = []
    if len(n_list) >= 2:
        for row in mass[good]:
            slopes.append(-line_fit(n_list, np.log(row)).slope)
    h = float(np.median(slopes)) if slopes else None
    d = m.main_degree
    rep = ExperimentReport("bowen", m.describe(), {"eps": eps, "n_list": n_list, "centers": centers}, seed=seed)
    rep.series["n"] = n_list
    rep.series["median_mass"] = np.median(mass[good], axis=0) if good.any() else [None] * len(n_list)
    rep.set_scalar("entropy_slope", h)
    rep.set_scalar("dropped_fraction", float(1 - good.mean()))
    rep.set_scalar("log_d", math.log(d) if d else None)
    rep.flags["undersampled"] = bool(good.mean() < 0.5)
    rep.flags["above_log_d"] = bool(h is not None and d is not None and h > math.log(d) + 0.1)
    return rep


# ---------------------------------------------------------------- mixing


def bump_observable(center: Sequence[complex], radius: float, name: str | None = None) -> Observable:
    """Smooth radial bump exp(-|x - c|^2 / r^2) around a point of C^k."""
    c = np.asarray(center, dtype=complex)
    return Observable(name or f"bump({radius:g})", lambda x: np.exp(-np.sum(np.abs(x - c) ** 2, axis=-1) / radius ** 2))


@dataclass
class CorrelationResult:
    n: np.ndarray
    values: np.ndarray
    noise_floor: float
    rate: float | None
    r2: float | None
    fit_range: int


def correlations(m: MapSpec, mu: SampleMeasure, phi: Callable, psi: Callable, n_max: int) -> CorrelationResult:
    """I_n = sum_i w_i phi(f^n x_i) psi(x_i) - (sum w phi)(sum w psi) for n = 0..n_max."""
    orb = _forward_orbits(m, mu, n_max)
    w = mu.weights
    psi0 = psi(orb[:, 0])
    mean_phi = float(np.sum(w * phi(orb[:, 0])))
    mean_psi = float(np.sum(w * psi0))
    vals = np.array([np.sum(w * phi(orb[:, n]) * psi0) - mean_phi * mean_psi for n in range(n_max + 1)])
    sd_phi = math.sqrt(max(float(np.sum(w * (phi(orb[:, 0]) - mean_phi) ** 2)), 0.0))
    sd_psi = math.sqrt(max(float(np.sum(w * (psi0 - mean_psi) ** 2)), 0.0))
    floor = 3.0 / math.sqrt(len(mu)) * sd_phi * sd_psi
    n = np.arange(n_max + 1)
    above = np.abs(vals) > floor
    run = int(np.argmin(above)) if not above.all() else len(vals)
    fit = geometric_rate(n[:run], vals[:run]) if run >= 3 else None
    rate = math.exp(-fit.slope) if fit else None
    return CorrelationResult(n, vals, floor, rate, fit.r2 if fit else None, run)


def correlation_decay(m: MapSpec, mu: SampleMeasure, phi: Observable, psi: Observable, n_max: int = 10,
                      seed: int = 0) -> ExperimentReport:
    """Correlation sequence, noise floor 3 sd(phi) sd(psi) / sqrt(N) and the fitted decay ratio.

    The fit uses the initial run of n with |I_n| above the floor.
    """
    if len(mu) < 10_000:
        raise ValueError("correlation_decay needs a mu-sample of size >= 10^4")
    res = correlations(m, mu, phi, psi, n_max)
    rep = ExperimentReport("mixing", m.describe(), {"phi": phi.name, "psi": psi.name, "n_max": n_max}, seed=seed)
    rep.series.update({"n": res.n, "I_n": res.values, "abs_I_n": np.abs(res.values)})
    rep.set_scalar("noise_floor", res.noise_floor)
    rep.set_scalar("decay_ratio", res.rate)
    rep.set_scalar("fit_r2", res.r2)
    rep.scalars["fit_points"] = res.fit_range
    rep.flags["degenerate_observables"] = bool(abs(res.values[0]) <= res.noise_floor)
    rep.flags["below_floor_after_0"] = bool(np.all(np.abs(res.values[1:]) <= res.noise_floor))
    return rep


# ---------------------------------------------------------------- dashboard


def degree_gap_dashboard(m: MapSpec, reports: dict) -> ExperimentReport:
    """Checklist of the mixing and hyperbolicity hypotheses against the collected estimates.

    ``reports`` may hold "structure" (a StructureCertificate), "degrees"
    (the degree summary report), "lyapunov" (a LyapunovReport) and
    "mixing" (a correlation report).
    """
    rep = ExperimentReport("dashboard", m.describe())
    cert = reports.get("structure")
    if cert is not None and not cert.is_horizontal_like:
        rep.flags["not_certified"] = True
        rep.notes.append("verdict: not applicable")
        rep.scalars["verdict"] = "not applicable"
        return rep
    d = m.main_degree
    rep.set_scalar("d", d)
    deg = reports.get("degrees")
    gap = None
    if deg is not None:
        dp, dm = deg.scalars.get("delta_plus"), deg.scalars.get("delta_minus")
        rep.set_scalar("delta_plus", dp)
        rep.set_scalar("delta_minus", dm)
        gap = bool(dp is not None and dm is not None and d is not None and d > max(dp, dm))
        rep.flags["degree_gap"] = gap
    lyap = reports.get("lyapunov")
    hyper = None
    if lyap is not None:
        for i, v in enumerate(lyap.exponents):
            rep.set_scalar(f"lambda_{i + 1}", v)
        rep.set_scalar("theorem_floor", lyap.theorem_floor)
        pos = sum(v > 0 for v in lyap.exponents)
        neg = sum(v < 0 for v in lyap.exponents)
        hyper = bool(pos == m.p and neg == m.k - m.p and lyap.counts_consistent(m.p))
        rep.flags["hyperbolic"] = hyper
    mix = reports.get("mixing")
    mixing = None
    if mix is not None:
        rate = mix.scalars.get("decay_ratio")
        rep.set_scalar("decay_ratio", rate)
        mixing = bool(rate is not None and rate > 1)
        rep.flags["mixing"] = mixing
    parts = []
    if hyper:
        parts.append("hyperbolic")
    if mixing:
        parts.append("mixing")
    if gap is False:
        verdict = "degree gap fails"
    elif parts and None not in (gap, hyper, mixing) and hyper and mixing:
        verdict = "hyperbolic + mixing consistent"
    elif hyper is False or mixing is False:
        verdict = "inconsistent"
    else:
        verdict = "incomplete"
    rep.scalars["verdict"] = verdict
    return rep
