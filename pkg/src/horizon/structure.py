"""Sampled certification of the horizontal-like property and the main degree.

A map f is horizontal-like on D = M x N when, for x in D with f(x) in D,
pi_1(x) stays away from dM and pi_2(f(x)) stays away from dN. The check
below is Monte Carlo over boundary-biased samples followed by a local
descent on the worst samples; it is evidence, not a proof, and the
certificate records that.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from horizon.errors import DegreeError, HorizonError
from horizon.geometry import Domain
from horizon.maps import IteratedMap, MapSpec, PerturbedMap, ProductMap, RegularAutomorphism, SwappedInverse, perturb
from horizon.rng import make_rng


@dataclass(frozen=True)
class StructureCertificate:
    is_horizontal_like: bool
    margin_v: float
    margin_h: float
    samples_used: int
    main_degree: int | None
    threshold_v: float = 0.0
    threshold_h: float = 0.0
    sampled: bool = True
    note: str = "sampled certificate, not a proof"

    def to_dict(self) -> dict:
        return asdict(self)


def _admissible(m: MapSpec, dom: Domain, x: np.ndarray):
    y = m.eval(x)
    ok = dom.contains(x) & dom.contains(y) & np.all(np.isfinite(y), axis=-1)
    return y, ok


def _refine(m, dom, x, score, seed, iters=300, keep=16):
    """Stochastic descent of ``score`` over admissible points, started at the worst samples."""
    rng = make_rng(seed, 31)
    _, ok = _admissible(m, dom, x)
    if not np.any(ok):
        return math.inf
    cand = x[ok]
    s = score(cand)
    order = np.argsort(s, kind="stable")[:keep]
    cur, cur_s = cand[order].copy(), s[order].copy()
    scale = 0.05 * max(dom.M.radius, dom.N.radius)
    for it in range(iters):
        step = scale * (0.97 ** it)
        prop = cur + step * (rng.standard_normal(cur.shape) + 1j * rng.standard_normal(cur.shape))
        _, pok = _admissible(m, dom, prop)
        ps = np.where(pok, score(prop), np.inf)
        better = ps < cur_s
        cur[better], cur_s[better] = prop[better], ps[better]
    return float(cur_s.min())


def certify_horizontal_like(m: MapSpec, dom: Domain, count: int = 10_000, seed: int = 0,
                            threshold: float = 0.01, refine: bool = True,
                            degree: bool = True) -> StructureCertificate:
    """Sampled check of the graph conditions on ``dom``.

    margin_v is the smallest distance of pi_1(x) to dM and margin_h the
    smallest distance of pi_2(f(x)) to dN over sampled x in D with f(x)
    in D. The certificate is positive iff both exceed ``threshold`` times
    the corresponding outer radius.
    """
    if count < 1000:
        raise ValueError("certification needs count >= 1000")
    if m.k != dom.k or m.p != dom.p:
        raise ValueError("map and domain dimensions differ")
    x = dom.sample_boundary_biased(count, seed)
    y, ok = _admissible(m, dom, x)
    tv, th = threshold * dom.M.radius, threshold * dom.N.radius
    if not np.any(ok):
        return StructureCertificate(False, math.nan, math.nan, count, None, tv, th,
                                    note="no sampled point has f(x) in D")
    mv = float(dom.vertical_margin(x[ok]).min())
    mh = float(dom.horizontal_margin(y[ok]).min())
    if refine:
        mv = min(mv, _refine(m, dom, x, dom.vertical_margin, seed))
        mh = min(mh, _refine(m, dom, x, lambda pts: dom.horizontal_margin(m.eval(pts)), seed + 1))
    deg = None
    if degree:
        try:
            deg = main_degree(m, dom, seed=seed)
        except HorizonError:
            deg = None
    return StructureCertificate(bool(mv > tv and mh > th), mv, mh, count, deg, tv, th)


def winding_count(m: MapSpec, dom: Domain, w0: complex, c0: complex, quad_points: int = 4096) -> float:
    """(1/2 pi i) * contour integral over dM of g'/(g - c0), g(z) = pi_1 f(z, w0)."""
    r = dom.M.radius
    t = 2 * np.pi * np.arange(quad_points) / quad_points
    z = r * np.exp(1j * t)
    pts = np.stack([z, np.full_like(z, w0)], axis=-1)
    g = m.eval(pts)[:, 0] - c0
    dg = m.differential(pts)[:, 0, 0]
    dz = 1j * z * (2 * np.pi / quad_points)
    return complex(np.sum(dg / g * dz) / (2j * np.pi))


def _closed_form_degree(m: MapSpec) -> int | None:
    if isinstance(m, RegularAutomorphism):
        return m.d_plus ** m.p
    if isinstance(m, PerturbedMap) and m.k != 2:
        return None
    if isinstance(m, ProductMap):
        d1, d2 = _closed_form_degree(m.f1), _closed_form_degree(m.f2)
        return None if d1 is None or d2 is None else d1 * d2
    if isinstance(m, (IteratedMap,)):
        d = _closed_form_degree(m.base)
        return None if d is None else d ** m.n
    if isinstance(m, SwappedInverse):
        return _closed_form_degree(m.base)
    if isinstance(m, PerturbedMap):
        return _closed_form_degree(m.base)
    return m.main_degree


def main_degree_argument_principle(m: MapSpec, dom: Domain, w0: complex | None = None,
                                   c0: complex | None = None, quad_points: int = 4096,
                                   seed: int = 0, retries: int = 3) -> int:
    """Number of roots of pi_1 f(z, w0) = c0 in M, counted by the argument principle.

    Only defined for k=2, p=1; the count is repeated on ``retries`` jittered
    slices and all counts must agree. Regular automorphisms and products
    of certified factors use their closed forms instead.
    """
    if m.k != 2 or m.p != 1:
        d = _closed_form_degree(m)
        if d is None:
            raise DegreeError(f"no degree rule for kind {m.kind!r} with k={m.k}, p={m.p}")
        return d
    rng = make_rng(seed, 41)
    counts = []
    for attempt in range(retries):
        if w0 is None or attempt > 0:
            wa = complex(dom.N.radii[2] * 0.5 * np.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random()))
        else:
            wa = complex(w0)
        if c0 is None or attempt > 0:
            ca = complex(dom.M.radii[2] * 0.5 * np.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random()))
        else:
            ca = complex(c0)
        n = winding_count(m, dom, wa, ca, quad_points)
        if abs(n - round(n.real)) > 0.1 or not np.isfinite(n):
            raise DegreeError(f"winding integral {n:.4g} is not near an integer; increase quad_points")
        counts.append(int(round(n.real)))
    if len(set(counts)) != 1:
        raise DegreeError(f"degree counts disagree across slices: {counts}")
    return counts[0]


def main_degree(m: MapSpec, dom: Domain, seed: int = 0) -> int:
    return main_degree_argument_principle(m, dom, seed=seed)


@dataclass
class StabilityScan:
    eps: list[float]
    certificates: list[StructureCertificate]
    base_degree: int | None
    largest_stable_eps: float | None
    perturbation_bounds: list[float] = field(default_factory=list)


def perturbation_stability_scan(m: MapSpec, dom: Domain, eps_list, seed: int = 0, count: int = 10_000,
                                terms=None) -> StabilityScan:
    """Certify f + eps*h on the shrunk domain D' for each eps and recompute the degree."""
    base = certify_horizontal_like(m, dom, count, seed)
    if not base.is_horizontal_like:
        raise HorizonError("base map is not certified horizontal-like on the domain")
    inner = dom.shrink("D'")
    certs, bounds = [], []
    largest = None
    for eps in eps_list:
        fe = perturb(m, float(eps), terms)
        cert = certify_horizontal_like(fe, inner, count, seed)
        certs.append(cert)
        bounds.append(fe.perturbation_bound(inner))
        if cert.is_horizontal_like and cert.main_degree == base.main_degree:
            largest = float(eps) if largest is None else max(largest, float(eps))
    return StabilityScan([float(e) for e in eps_list], certs, base.main_degree, largest, bounds)
