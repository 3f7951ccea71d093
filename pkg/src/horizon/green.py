"""Green functions G+ and G- by escape-rate iteration with tail bounds.

G+(x) = lim d+^-n log+ |f^n(x)| and G-(x) = lim d-^-n log+ |f^-n(x)|.
Escape is detected with the filtration region
V+(R) = {|x'| >= max(|x''|, R)} (sup norms on the expanding block x' and
the contracting block x''), which f maps into itself once R is calibrated.
Inside V+(R) the offset c(y) = log|f(y)| - d log|y| is bounded, so after
n steps the remaining tail of the series lies in [min c, max c] d^-n / (d - 1);
the midpoint is added to the value and the half-range is the error bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from horizon.geometry import Domain
from horizon.maps import MapSpec
from horizon.rng import make_rng

ESCAPED, BOUNDED, TRUNCATED = 0, 1, 2
STATUS_NAMES = {ESCAPED: "escaped", BOUNDED: "bounded", TRUNCATED: "truncated"}
LOG_CEILING = math.log(1e100)
ROUNDING = 1e-13


@dataclass(frozen=True)
class EscapeCalibration:
    radius: float
    tail_constant: float
    degree: int
    valid: bool
    shell_radii: tuple = ()
    shell_lo: tuple = ()
    shell_hi: tuple = ()

    def offset_at(self, norm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Center and half-width of the one-step offset log|f(y)| - d log|y| beyond ``norm``.

        The half-width carries a safety factor of 2 over the sampled range.
        """
        norm = np.asarray(norm, dtype=float)
        if not self.shell_radii:
            return np.zeros(norm.shape), np.full(norm.shape, self.tail_constant)
        idx = np.clip(np.searchsorted(np.array(self.shell_radii), norm, side="right") - 1, 0, None)
        lo, hi = np.array(self.shell_lo)[idx], np.array(self.shell_hi)[idx]
        return 0.5 * (lo + hi), (hi - lo) + 1e-15


@dataclass
class GreenEval:
    """Batched Green function values; scalars for a single point."""

    value: np.ndarray
    status: np.ndarray
    steps: np.ndarray
    error_bound: np.ndarray

    @property
    def status_names(self):
        return np.vectorize(STATUS_NAMES.get)(self.status)

    def __getitem__(self, idx) -> "GreenEval":
        return GreenEval(self.value[idx], self.status[idx], self.steps[idx], self.error_bound[idx])


def _blocks(x: np.ndarray, p: int, forward: bool):
    big, small = (x[..., :p], x[..., p:]) if forward else (x[..., p:], x[..., :p])
    nb = np.max(np.abs(big), axis=-1)
    ns = np.max(np.abs(small), axis=-1) if small.shape[-1] else np.zeros(nb.shape)
    return nb, ns


def in_filtration(x: np.ndarray, p: int, radius: float, forward: bool = True) -> np.ndarray:
    nb, ns = _blocks(x, p, forward)
    return (nb >= ns) & (nb >= radius)


def _step(m: MapSpec, forward: bool):
    return m.eval if forward else m.eval_inverse


@lru_cache(maxsize=64)
def calibrate_escape(m: MapSpec, forward: bool = True, samples: int = 1000, seed: int = 2024,
                     r_max: float = 2.0 ** 40) -> EscapeCalibration:
    """Smallest R in a doubling search such that V(R) maps into itself with |f(y)| >= 2|y|.

    The signed one-step offset log|f(y)| - d log|y| is sampled on shells
    |y'| in [r, 64 r] from R up to 1e100. Each shell records the range of
    offsets seen there and beyond it, and the tail constant is twice the
    largest absolute offset.
    """
    d = m.d_plus if forward else m.d_minus
    f = _step(m, forward)
    rng = make_rng(seed, 51)
    R = 1.0
    while R <= r_max:
        x = _filtration_samples(rng, m, R, samples, forward)
        with np.errstate(all="ignore"):
            y = f(x)
        ny = np.max(np.abs(y), axis=-1)
        nx = np.max(np.abs(x), axis=-1)
        ok = np.all(np.isfinite(y)) and np.all(in_filtration(y, m.p, R, forward)) and np.all(ny >= 2 * nx)
        if ok:
            radii, lo, hi = [], [], []
            r = R
            while r < 1e100:
                xs = x if r == R else _filtration_samples(rng, m, r, samples, forward)
                with np.errstate(all="ignore"):
                    ys = f(xs)
                    c = np.log(np.max(np.abs(ys), axis=-1)) - d * np.log(np.max(np.abs(xs), axis=-1))
                c = c[np.isfinite(c)]
                radii.append(r)
                lo.append(float(c.min()) if c.size else -math.inf)
                hi.append(float(c.max()) if c.size else math.inf)
                r *= 64.0
            lo = np.minimum.accumulate(np.array(lo)[::-1])[::-1]
            hi = np.maximum.accumulate(np.array(hi)[::-1])[::-1]
            tail = 2.0 * max(abs(lo[0]), abs(hi[0]))
            return EscapeCalibration(R, tail, d, True, tuple(radii), tuple(lo), tuple(hi))
        R *= 2.0
    return EscapeCalibration(math.inf, math.inf, d, False)


def _filtration_samples(rng, m: MapSpec, R: float, samples: int, forward: bool) -> np.ndarray:
    nbig = m.p if forward else m.k - m.p
    nsmall = m.k - nbig
    s = np.exp(rng.random(samples) * math.log(64.0))
    big = (rng.random((samples, nbig)) ** 0.5) * np.exp(2j * np.pi * rng.random((samples, nbig)))
    lead = rng.integers(0, nbig, samples)
    big[np.arange(samples), lead] = np.exp(2j * np.pi * rng.random(samples))
    big *= (R * s)[:, None]
    small = (rng.random((samples, nsmall)) ** 0.5) * np.exp(2j * np.pi * rng.random((samples, nsmall)))
    small *= (R * s)[:, None]
    return np.concatenate([big, small], axis=1) if forward else np.concatenate([small, big], axis=1)


def _green(m: MapSpec, x, n_max: int, r_esc: float | None, forward: bool) -> GreenEval:
    x = np.asarray(x, dtype=complex)
    scalar = x.ndim == 1
    x = np.atleast_2d(x).reshape(-1, m.k)
    cal = calibrate_escape(m, forward)
    R = cal.radius if r_esc is None else float(r_esc)
    if cal.valid and R < cal.radius:
        raise ValueError(f"escape radius {R} is below the calibrated radius {cal.radius}")
    d = cal.degree
    f = _step(m, forward)
    n = x.shape[0]
    value = np.zeros(n)
    status = np.full(n, BOUNDED, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int64)
    err = np.zeros(n)
    escaped = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    cur = x.copy()
    cap = n_max + 2000
    for j in range(cap + 1):
        act = ~done
        if not np.any(act):
            break
        nrm = np.max(np.abs(cur[act]), axis=-1)
        if np.isfinite(R):
            newly = in_filtration(cur[act], m.p, R, forward) & ~escaped[act]
            escaped[np.flatnonzero(act)[newly]] = True
        with np.errstate(divide="ignore"):
            lg = np.log(nrm)
        ia = np.flatnonzero(act)
        # finish escaped orbits once they are large enough for a negligible tail
        fin = escaped[ia] & ((lg >= LOG_CEILING) | (j >= cap))
        if np.any(fin):
            idx = ia[fin]
            # the remaining tail sum_{i>=j} d^-(i+1) c_i lies in [lo, hi] d^-j / (d - 1)
            mid, half = cal.offset_at(nrm[fin])
            scale = float(d) ** (-j) / (d - 1)
            value[idx] = lg[fin] / float(d) ** j + mid * scale
            status[idx] = ESCAPED
            steps[idx] = j
            err[idx] = half * scale + ROUNDING * (1 + value[idx])
            done[idx] = True
        stop = ~escaped[ia] & (j >= n_max)
        if np.any(stop):
            idx = ia[stop]
            with np.errstate(divide="ignore"):
                lp = np.maximum(lg[stop], 0.0)
            trunc = nrm[stop] > R
            value[idx] = np.where(trunc, lp / float(d) ** j, 0.0)
            status[idx] = np.where(trunc, TRUNCATED, BOUNDED)
            steps[idx] = j
            box = max(math.log(R) if np.isfinite(R) else 0.0, 0.0)
            err[idx] = (box + cal.tail_constant + np.where(trunc, lp, 0.0)) * float(d) ** (-j) + ROUNDING
            done[idx] = True
        act = ~done
        if not np.any(act):
            break
        with np.errstate(all="ignore"):
            cur[act] = f(cur[act])
    out = GreenEval(value, status, steps, err)
    return out[0] if scalar else out


def green_plus(m: MapSpec, x, n_max: int = 200, r_esc: float | None = None) -> GreenEval:
    """G+ at the points ``x`` (shape (..., k) flattened to a batch)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    return _green(m, x, n_max, r_esc, True)


def green_minus(m: MapSpec, x, n_max: int = 200, r_esc: float | None = None) -> GreenEval:
    """G- at the points ``x``, iterating the inverse map with degree d-."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    return _green(m, x, n_max, r_esc, False)


def escape_rate_sequence(m: MapSpec, x, n: int, forward: bool = True) -> np.ndarray:
    """The approximants d^-j log+ |f^j(x)| for j = 0..n (brute force, no escape logic)."""
    d = m.d_plus if forward else m.d_minus
    f = _step(m, forward)
    x = np.asarray(x, dtype=complex)
    out = []
    for j in range(n + 1):
        with np.errstate(all="ignore"):
            out.append(max(math.log(float(np.max(np.abs(x)))), 0.0) / d ** j)
            x = f(x)
    return np.array(out)


@dataclass
class HolderEstimate:
    exponent: float | None
    applicable: bool
    scales: np.ndarray
    spreads: np.ndarray
    pairs_used: int


def holder_probe(m: MapSpec, dom: Domain, pairs: int = 1000, seed: int = 0, scales: int = 10,
                 quantile: float = 0.9, level: float = 0.1, centers=None) -> HolderEstimate:
    """Fit log |G+(x) - G+(y)| against log |x - y| over dyadic distances 2^-j.

    Centers are drawn from D' where 0 < G+ <= ``level`` (the region near
    the boundary of K+ where regularity is weakest), falling back to all
    of D' if that set is empty. Per scale the ``quantile`` of the
    increments is used as the modulus estimate; the fitted slope is a
    lower-bound estimate of the exponent.
    """
    if pairs < 1000:
        raise ValueError("holder_probe needs pairs >= 1000")
    rng = make_rng(seed, 61)
    per = max(pairs // scales, 10)
    if centers is None:
        pool = dom.sample(20 * per, seed, "D'", stream=61)
        gp = green_plus(m, pool).value
        near = pool[(gp > 0) & (gp <= level)]
        x = near if len(near) else pool
    else:
        x = np.asarray(centers, dtype=complex).reshape(-1, m.k)
    x = x[:per] if len(x) >= per else x[rng.integers(0, len(x), per)]
    js = np.arange(2, 2 + scales)
    hs, spread = [], []
    g0 = green_plus(m, x).value
    for j in js:
        h = 2.0 ** (-j)
        v = rng.standard_normal((len(x), m.k)) + 1j * rng.standard_normal((len(x), m.k))
        v *= h / np.linalg.norm(v, axis=1, keepdims=True)
        dg = np.abs(green_plus(m, x + v).value - g0)
        hs.append(h)
        spread.append(np.quantile(dg, quantile))
    hs, spread = np.array(hs), np.array(spread)
    good = spread > 1e-14
    if good.sum() < 3 or np.ptp(np.log(spread[good])) < 1e-9:
        return HolderEstimate(None, False, hs, spread, per * scales)
    slope = np.polyfit(np.log(hs[good]), np.log(spread[good]), 1)[0]
    return HolderEstimate(float(slope), True, hs, spread, per * scales)
