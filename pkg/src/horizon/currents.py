"""Grid potentials of (1,1)-currents in C^2 and the normalized transfer operators.

A vertical current is carried by a potential u(z, w) with dd^c_z u giving
its slice measures; the normalization dd^c = (1/2 pi) Delta is fixed by
the requirement that log max(|z|, 1) has slice mass 1. A horizontal current
is the mirror image with the roles of z and w exchanged.

Potentials are never differentiated under iteration. The pull-back
L u = d^-1 u o f is evaluated by transporting points, so a grid whose
potential is known in closed form (a "source") stays exact after any number
of pull-backs. Pairings move the Laplacian onto the test form:
<dd^c u, phi> = int u (1/2 pi) Delta phi.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from horizon.errors import ResolutionError
from horizon.geometry import Domain
from horizon.maps import MapSpec
from horizon.report import ExperimentReport, aitken_limit, geometric_rate

FREEZE_NORM = 1e50
BRANCH_CAP = 256
FAR_FACTOR = 8.0
VERTICAL, HORIZONTAL = "vertical", "horizontal"


@dataclass(frozen=True)
class GridSpec:
    """Square lattices in the z-plane and the w-plane: nz^2 x nw^2 nodes."""

    z_half: float
    w_half: float
    nz: int = 96
    nw: int = 48
    z_center: complex = 0j
    w_center: complex = 0j

    def __post_init__(self):
        if self.nz < 4 or self.nw < 4:
            raise ValueError("grids need at least 4 nodes per axis")

    @classmethod
    def for_domain(cls, dom: Domain, nz: int = 96, nw: int = 48, pad: float = 1.1) -> "GridSpec":
        if dom.k != 2 or dom.p != 1:
            raise ValueError("grid potentials are implemented for k=2, p=1")
        return cls(pad * dom.M.radius, pad * dom.N.radius, nz, nw)

    def axis(self, which: str) -> np.ndarray:
        half, n = (self.z_half, self.nz) if which == "z" else (self.w_half, self.nw)
        return np.linspace(-half, half, n)

    @property
    def hz(self) -> float:
        return 2 * self.z_half / (self.nz - 1)

    @property
    def hw(self) -> float:
        return 2 * self.w_half / (self.nw - 1)

    def plane(self, which: str) -> np.ndarray:
        """Complex node array of shape (n, n) indexed [real, imag]."""
        a = self.axis(which)
        c = self.z_center if which == "z" else self.w_center
        return c + a[:, None] + 1j * a[None, :]

    def cell_diagonal(self) -> float:
        return math.sqrt(2 * self.hz ** 2 + 2 * self.hw ** 2)

    def describe(self) -> dict:
        return {"z_half": self.z_half, "w_half": self.w_half, "nz": self.nz, "nw": self.nw}


# ---------------------------------------------------------------- base potentials


@dataclass(frozen=True)
class Potential:
    """A closed-form potential u(x) with log growth kappa * log|x| at infinity.

    ``func`` takes points (..., 2). ``depends`` is 0 or 1 when u is a
    function of that coordinate alone, which lets the push-forward trace
    merge inverse branches that agree in it.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    kappa: float = 1.0
    depends: int | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.func(x)


def _var(x, i):
    return x[..., i]


def log_plus(variable: int = 0) -> Potential:
    return Potential(f"log_plus[{variable}]", lambda x: np.log(np.maximum(np.abs(_var(x, variable)), 1.0)),
                     depends=variable)


def fubini_study(variable: int = 0, center: complex = 0j, scale: float = 1.0) -> Potential:
    """(1/2) log(scale^2 + |t - center|^2), t the chosen coordinate."""
    s2 = float(scale) ** 2
    return Potential(f"fubini_study[{variable},{center},{scale}]",
                     lambda x: 0.5 * np.log(s2 + np.abs(_var(x, variable) - center) ** 2), depends=variable)


def mixed_smooth(variable: int = 0, coupling: float = 0.25) -> Potential:
    """(1/2) log(1 + |t|^2 + coupling |s|^2): a smooth potential that also depends on the other coordinate."""
    other = 1 - variable
    return Potential(f"mixed_smooth[{variable},{coupling}]",
                     lambda x: 0.5 * np.log(1 + np.abs(_var(x, variable)) ** 2
                                            + coupling * np.abs(_var(x, other)) ** 2))


def zero_potential() -> Potential:
    return Potential("zero", lambda x: np.zeros(x.shape[:-1]), kappa=0.0)


def green_potential(m: MapSpec, forward: bool = True) -> Potential:
    """G+ (or G-) evaluated pointwise by the escape-rate module."""
    from horizon.green import green_minus, green_plus

    fn = green_plus if forward else green_minus
    return Potential(f"green[{'+' if forward else '-'}]", lambda x: fn(m, x.reshape(-1, 2)).value.reshape(x.shape[:-1]))


BASE_POTENTIALS = {
    "log_plus": log_plus,
    "fubini_study": fubini_study,
    "mixed_smooth": mixed_smooth,
    "zero": lambda variable=0: zero_potential(),
}


# ---------------------------------------------------------------- transport


def _transport_sequence(m: MapSpec, base: Potential, x: np.ndarray, n_max: int, pull: bool,
                        degree: int | None = None):
    """Yield d^-n (f^n)^* base (pull) or d^-n (f^n)_* base (push) at ``x`` for n = 0..n_max.

    Orbits whose sup norm exceeds FREEZE_NORM are continued in log scale:
    the log|y| part of the potential follows the escape rate, which is
    exact to rounding beyond that norm for the supported maps, and the
    bounded remainder is scaled by d^-n.
    """
    d = float(degree or m.main_degree)
    x = np.asarray(x, dtype=complex).reshape(-1, 2)
    npts = x.shape[0]
    # points carry a branch axis for the push-forward trace, with multiplicities
    cur = x[None].copy()
    mult = np.ones((1, npts))
    frozen = np.zeros((1, npts), dtype=bool)
    flog = np.zeros((1, npts))
    frem = np.zeros((1, npts))
    fstep = np.zeros((1, npts))
    for n in range(n_max + 1):
        live = ~frozen
        vals = np.zeros(cur.shape[:2])
        if np.any(live):
            with np.errstate(all="ignore"):
                vals[live] = base(cur[live]) / d ** n
        if np.any(frozen):
            vals[frozen] = flog[frozen] / d ** fstep[frozen] + frem[frozen] / d ** n
        yield (vals * mult).sum(axis=0)
        if n == n_max:
            return
        with np.errstate(all="ignore"):
            if pull:
                nxt = m.eval(cur.reshape(-1, 2)).reshape(cur.shape)
            else:
                br = m.preimages(cur.reshape(-1, 2))
                nb = br.shape[0]
                br = br.reshape((nb,) + cur.shape)
                if base.depends is not None and nb > 1 and np.allclose(
                        br[..., base.depends], br[:1, ..., base.depends], rtol=1e-13, atol=0):
                    # every branch gives the same value: keep one, count it nb times
                    nxt = br[0]
                    mult = mult * nb
                else:
                    if nb * cur.shape[0] > BRANCH_CAP:
                        raise ResolutionError(f"push-forward trace exceeds {BRANCH_CAP} branches; lower n")
                    nxt = br.reshape((nb * cur.shape[0],) + cur.shape[1:])
                    mult, frozen, flog, frem, fstep = (np.tile(a, (nb, 1)) for a in (mult, frozen, flog, frem, fstep))
        # freeze points that just crossed the threshold (their value at this step is final in log scale)
        with np.errstate(all="ignore"):
            nrm = np.max(np.abs(nxt), axis=-1)
        newly = ~frozen & (nrm > FREEZE_NORM) & np.isfinite(nrm)
        if np.any(newly):
            lg = base.kappa * np.log(nrm[newly])
            with np.errstate(all="ignore"):
                u = base(nxt[newly])
            flog[newly] = lg
            frem[newly] = u - lg
            fstep[newly] = n + 1
            frozen |= newly
        bad = ~frozen & ~np.isfinite(nrm)
        if np.any(bad):
            raise ResolutionError("orbit overflowed before reaching the log-scale threshold")
        cur = np.where(frozen[..., None], 0, nxt)


@dataclass(frozen=True)
class Transport:
    """u = d^-n (f^n)^* base (pull) or d^-n (f^n)_* base (push)."""

    base: Potential
    m: MapSpec | None = None
    n: int = 0
    pull: bool = True

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        shape = x.shape[:-1]
        if self.n == 0 or self.m is None:
            return np.asarray(self.base(x.reshape(-1, 2))).reshape(shape)
        out = None
        for out in _transport_sequence(self.m, self.base, x, self.n, self.pull):
            pass
        return out.reshape(shape)

    def sequence(self, x: np.ndarray, extra: int, m: MapSpec, pull: bool):
        """Values of this potential transported further by 0..extra steps of ``m``."""
        if self.n and (m is not self.m or pull != self.pull):
            inner = Potential(f"transport[{self.base.name}]", self, self.base.kappa, None)
            yield from _transport_sequence(m, inner, x, extra, pull)
            return
        for j, v in enumerate(_transport_sequence(m, self.base, x, self.n + extra, pull)):
            if j >= self.n:
                yield v


class _Interpolant:
    """Multilinear interpolation of grid values with log-growth extension outside the box."""

    def __init__(self, grid: "PotentialGrid"):
        self.grid = grid
        self.values = grid.values
        spec = grid.spec
        var = 0 if grid.orientation == VERTICAL else 1
        rim = _rim_points(spec)
        rim_vals = self._inside(rim)
        lg = grid.normalization * np.log(np.maximum(np.abs(rim[:, var]), 1e-300))
        self.var = var
        self.offset = float(np.mean(rim_vals - lg))

    def _coords(self, x):
        s = self.grid.spec
        zc, wc = x[:, 0] - s.z_center, x[:, 1] - s.w_center
        fz = lambda t: (t + s.z_half) / s.hz  # noqa: E731
        fw = lambda t: (t + s.w_half) / s.hw  # noqa: E731
        return np.stack([fw(wc.real), fw(wc.imag), fz(zc.real), fz(zc.imag)])

    def _inside(self, x):
        return ndimage.map_coordinates(self.values, self._coords(x), order=1, mode="nearest")

    def __call__(self, x):
        x = np.asarray(x, dtype=complex).reshape(-1, 2)
        s = self.grid.spec
        inside = (np.abs((x[:, 0] - s.z_center).real) <= s.z_half) & (np.abs((x[:, 0] - s.z_center).imag) <= s.z_half) \
            & (np.abs((x[:, 1] - s.w_center).real) <= s.w_half) & (np.abs((x[:, 1] - s.w_center).imag) <= s.w_half)
        out = np.empty(len(x))
        out[inside] = self._inside(x[inside])
        out_pts = x[~inside]
        if len(out_pts):
            far = np.max(np.abs(out_pts), axis=-1) > FAR_FACTOR * max(s.z_half, s.w_half)
            if far.mean() * len(out_pts) > 0.05 * len(x):
                raise ResolutionError("more than 5% of transported nodes land far outside the sampling box")
            t = np.maximum(np.abs(out_pts[:, self.var]), 1e-300)
            out[~inside] = self.grid.normalization * np.log(t) + self.offset
        return out


def _rim_points(spec: GridSpec) -> np.ndarray:
    z = spec.plane("z")
    edge = np.concatenate([z[0, :], z[-1, :], z[:, 0], z[:, -1]])
    w = spec.plane("w").ravel()[:: max(1, spec.nw)]
    zz, ww = np.meshgrid(edge, w, indexing="ij")
    return np.stack([zz.ravel(), ww.ravel()], axis=-1)


# ---------------------------------------------------------------- the grid type


@dataclass(frozen=True)
class PotentialGrid:
    """A potential on the lattice ``spec``; values[wr, wi, zr, zi].

    Either ``source`` (a callable on points) or ``stored`` (an array) is
    set. ``values`` materializes the whole lattice on demand.
    """

    spec: GridSpec
    orientation: str = VERTICAL
    source: Callable | None = field(default=None, compare=False)
    stored: np.ndarray | None = field(default=None, compare=False, repr=False)
    normalization: float = 1.0
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.orientation not in (VERTICAL, HORIZONTAL):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if (self.source is None) == (self.stored is None):
            raise ValueError("exactly one of source and stored must be given")
        if self.stored is not None:
            shape = (self.spec.nw, self.spec.nw, self.spec.nz, self.spec.nz)
            if self.stored.shape != shape:
                raise ValueError(f"stored values must have shape {shape}")
            if not np.all(np.isfinite(self.stored)):
                raise ValueError("potential values must be finite")

    @classmethod
    def from_potential(cls, spec: GridSpec, pot: Potential, orientation: str = VERTICAL) -> "PotentialGrid":
        return cls(spec, orientation, source=Transport(pot), normalization=1.0 if pot.kappa else 0.0,
                   provenance={"potential": pot.name, "n": 0})

    @classmethod
    def from_values(cls, spec: GridSpec, values: np.ndarray, orientation: str = VERTICAL,
                    normalization: float = 1.0) -> "PotentialGrid":
        return cls(spec, orientation, stored=np.asarray(values, dtype=float), normalization=normalization,
                   provenance={"potential": "array", "n": 0})

    @property
    def variable(self) -> int:
        return 0 if self.orientation == VERTICAL else 1

    def evaluate(self, x) -> np.ndarray:
        """u at arbitrary points (..., 2)."""
        x = np.asarray(x, dtype=complex)
        fn = self.source if self.source is not None else _Interpolant(self)
        return np.asarray(fn(x.reshape(-1, 2))).reshape(x.shape[:-1])

    def nodes(self, w_index=None) -> np.ndarray:
        """Node coordinates (nw, nw, nz, nz, 2), or one z-slice (nz, nz, 2) at w_index=(i, j)."""
        z = self.spec.plane("z")
        w = self.spec.plane("w")
        if w_index is not None:
            wi = w[w_index]
            return np.stack([z, np.full_like(z, wi)], axis=-1)
        zz = np.broadcast_to(z, (self.spec.nw, self.spec.nw) + z.shape)
        ww = np.broadcast_to(w[:, :, None, None], zz.shape)
        return np.stack([zz, ww], axis=-1)

    @property
    def values(self) -> np.ndarray:
        if self.stored is not None:
            return self.stored
        out = np.empty((self.spec.nw, self.spec.nw, self.spec.nz, self.spec.nz))
        w = self.spec.plane("w")
        z = self.spec.plane("z")
        for i in range(self.spec.nw):
            pts = np.stack([np.broadcast_to(z, (self.spec.nw,) + z.shape),
                            np.broadcast_to(w[i][:, None, None], (self.spec.nw,) + z.shape)], axis=-1)
            out[i] = self.evaluate(pts)
        return out

    def slice_values(self, index) -> np.ndarray:
        """The 2-D slice of values at a fixed node of the other coordinate."""
        if self.stored is not None:
            return self.stored[index] if self.orientation == VERTICAL else self.stored[:, :, index[0], index[1]]
        if self.orientation == VERTICAL:
            return self.evaluate(self.nodes(index))
        w = self.spec.plane("w")
        zi = self.spec.plane("z")[index]
        return self.evaluate(np.stack([np.full_like(w, zi), w], axis=-1))


SNAPSHOT_MAGIC = b"HZGRID01"


def export_grid(g: PotentialGrid, path) -> tuple[Path, Path]:
    """Write ``<path>.bin`` and ``<path>.json``.

    The binary file is the 8-byte magic, the four dimensions (nw, nw, nz, nz)
    and the bounding box (z_half, w_half, Re/Im of both centers) as
    little-endian int64 / float64, followed by the values in C order as
    little-endian float64. The sidecar repeats the header in readable form
    together with orientation, normalization and provenance.
    """
    path = Path(path)
    spec = g.spec
    vals = np.ascontiguousarray(g.values, dtype="<f8")
    header = np.array(vals.shape, dtype="<i8").tobytes() + np.array(
        [spec.z_half, spec.w_half, spec.z_center.real, spec.z_center.imag, spec.w_center.real,
         spec.w_center.imag], dtype="<f8").tobytes()
    binp, jsp = path.with_suffix(".bin"), path.with_suffix(".json")
    binp.write_bytes(SNAPSHOT_MAGIC + header + vals.tobytes())
    meta = {"dims": list(vals.shape), "grid": spec.describe(),
            "z_center": [spec.z_center.real, spec.z_center.imag],
            "w_center": [spec.w_center.real, spec.w_center.imag],
            "orientation": g.orientation, "normalization": g.normalization,
            "provenance": g.provenance, "dtype": "float64 little-endian", "order": "wr, wi, zr, zi"}
    jsp.write_text(json.dumps(meta, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8")
    return binp, jsp


def import_grid(path) -> PotentialGrid:
    """Read a snapshot written by :func:`export_grid`."""
    path = Path(path)
    raw = path.with_suffix(".bin").read_bytes()
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    if raw[:8] != SNAPSHOT_MAGIC:
        raise ValueError("not a grid snapshot")
    dims = tuple(int(v) for v in np.frombuffer(raw, "<i8", 4, 8))
    box = np.frombuffer(raw, "<f8", 6, 40)
    vals = np.frombuffer(raw, "<f8", offset=88).reshape(dims).copy()
    spec = GridSpec(float(box[0]), float(box[1]), dims[2], dims[0], complex(box[2], box[3]), complex(box[4], box[5]))
    g = PotentialGrid.from_values(spec, vals, meta["orientation"], meta["normalization"])
    g.provenance.update(meta.get("provenance", {}))
    return g


# ---------------------------------------------------------------- slice mass


@dataclass(frozen=True)
class MassEstimate:
    value: float
    reliable: bool
    contour_radius: float

    def __float__(self) -> float:
        return self.value


def _flux_circle(fn, center: complex, other: complex, variable: int, rho: float, nodes: int = 1024) -> float:
    t = 2 * np.pi * (np.arange(nodes) + 0.5) / nodes
    e = np.exp(1j * t)
    h = 1e-5 * rho

    def pts(r):
        c = center + r * e
        o = np.full_like(c, other)
        return np.stack([c, o] if variable == 0 else [o, c], axis=-1)

    du = (fn(pts(rho + h)) - fn(pts(rho - h))) / (2 * h)
    return float(np.mean(rho * du))


def slice_mass(g: PotentialGrid, at: complex, radius: float | None = None) -> MassEstimate:
    """(1/2 pi) int Delta u over the slice through ``at`` (w0 for vertical, z0 for horizontal).

    With a closed-form source, the mass is the flux of grad u through the
    circle of ``radius`` (default: the outer radius of the factor, taken as
    the grid half-width / 1.1). Without one, it is the discrete flux through
    the largest node square inside that radius. The estimate is flagged
    unreliable when the flux at 0.9 * radius differs by more than 1%, i.e.
    when the Laplacian of u does not vanish near the contour.
    """
    var = g.variable
    spec = g.spec
    half = spec.z_half if var == 0 else spec.w_half
    rho = half / 1.1 if radius is None else float(radius)
    center = spec.z_center if var == 0 else spec.w_center
    if g.source is not None:
        m1 = _flux_circle(g.evaluate, center, at, var, rho)
        m2 = _flux_circle(g.evaluate, center, at, var, 0.9 * rho)
    else:
        if rho > half:
            raise ResolutionError("contour radius exceeds the grid box")
        other_axis = spec.axis("w" if var == 0 else "z")
        oc = spec.w_center if var == 0 else spec.z_center
        i = int(np.argmin(np.abs(other_axis - (at - oc).real)))
        j = int(np.argmin(np.abs(other_axis - (at - oc).imag)))
        sl = g.slice_values((i, j))
        m1 = _box_flux(sl, spec.axis("z" if var == 0 else "w"), rho)
        m2 = _box_flux(sl, spec.axis("z" if var == 0 else "w"), 0.9 * rho)
    rel = abs(m1 - m2) / max(abs(m1), 1e-12)
    return MassEstimate(m1, bool(rel <= 0.01 or abs(m1 - m2) < 1e-9), rho)


def _box_flux(sl: np.ndarray, axis: np.ndarray, rho: float) -> float:
    """Sum of the 5-point Laplacian times cell area over nodes with |re|, |im| < rho, over 2 pi."""
    inside = np.flatnonzero(np.abs(axis) < rho)
    a, b = inside[0], inside[-1]
    if a < 1 or b > len(axis) - 2:
        raise ResolutionError("contour touches the grid edge")
    lap = discrete_laplacian(sl)
    return float(lap[a:b + 1, a:b + 1].sum() * (axis[1] - axis[0]) ** 2 / (2 * np.pi))


def discrete_laplacian(sl: np.ndarray) -> np.ndarray:
    """5-point Laplacian of a uniform-lattice slice; zero on the edge nodes."""
    h = 1.0
    out = np.zeros_like(sl)
    out[1:-1, 1:-1] = (sl[2:, 1:-1] + sl[:-2, 1:-1] + sl[1:-1, 2:] + sl[1:-1, :-2] - 4 * sl[1:-1, 1:-1]) / h ** 2
    return out


def isotropic_laplacian(sl: np.ndarray) -> np.ndarray:
    """9-point Laplacian (4 edges + corners - 20 center) / 6 on unit spacing; zero on the edge nodes.

    Its truncation error vanishes to high order on harmonic functions, so on maxima of
    pluriharmonic pieces (log+ of polynomials) the sign of the stencil is reliable, unlike the
    5-point stencil whose anisotropic O(h^2) error is negative on a quarter of every circle.
    """
    out = np.zeros_like(sl)
    edges = sl[2:, 1:-1] + sl[:-2, 1:-1] + sl[1:-1, 2:] + sl[1:-1, :-2]
    corners = sl[2:, 2:] + sl[:-2, :-2] + sl[2:, :-2] + sl[:-2, 2:]
    out[1:-1, 1:-1] = (4 * edges + corners - 20 * sl[1:-1, 1:-1]) / 6
    return out


def positivity_defect(g: PotentialGrid, index) -> float:
    """Most negative discrete slice Laplacian (9-point, scaled to the true spacing) on a slice; 0 if none."""
    spec = g.spec
    h = spec.hz if g.variable == 0 else spec.hw
    lap = isotropic_laplacian(g.slice_values(index)) / h ** 2
    return float(min(lap.min(), 0.0))


# ---------------------------------------------------------------- transfer operators


def _map_degree(m: MapSpec) -> int:
    d = m.main_degree
    if d is None:
        raise ValueError("map has no main degree; certify it first")
    return int(d)


def pullback_normalized(m: MapSpec, g: PotentialGrid) -> PotentialGrid:
    """L u = d^-1 u o f on a vertical potential."""
    if g.orientation != VERTICAL:
        raise ValueError("pull-back acts on vertical potentials")
    return _transport(m, g, pull=True)


def pushforward_normalized(m: MapSpec, g: PotentialGrid) -> PotentialGrid:
    """d^-1 f_* on a horizontal potential: d^-1 times the sum of u over the preimage branches."""
    if g.orientation != HORIZONTAL:
        raise ValueError("push-forward acts on horizontal potentials")
    return _transport(m, g, pull=False)


def _transport(m: MapSpec, g: PotentialGrid, pull: bool) -> PotentialGrid:
    if m.k != 2 or m.p != 1:
        raise ValueError("grid potentials are implemented for k=2, p=1")
    _map_degree(m)
    src = g.source
    if isinstance(src, Transport) and (src.n == 0 or (src.m is m and src.pull == pull)):
        new = Transport(src.base, m, src.n + 1, pull)
    else:
        inner = src if src is not None else _Interpolant(g)
        if src is None:
            _check_far(m, g, inner, pull)
        new = Transport(Potential("grid", inner, g.normalization), m, 1, pull)
    prov = dict(g.provenance)
    prov["n"] = int(prov.get("n", 0)) + 1
    prov["map"] = m.kind
    return replace(g, source=new, stored=None, provenance=prov)


def _check_far(m: MapSpec, g: PotentialGrid, inner, pull: bool) -> None:
    nodes = g.nodes().reshape(-1, 2)[:: 97]
    with np.errstate(all="ignore"):
        img = m.eval(nodes) if pull else m.eval_inverse(nodes)
    lim = FAR_FACTOR * max(g.spec.z_half, g.spec.w_half)
    if np.mean(~(np.max(np.abs(img), axis=-1) <= lim)) > 0.05:
        raise ResolutionError("more than 5% of transported nodes land far outside the sampling box")


# ---------------------------------------------------------------- test forms and pairing


def _bump(t: np.ndarray, center: complex, radius: float):
    s = np.abs(t - center) ** 2 / radius ** 2
    q = np.clip(1.0 - s, 0.0, None)
    return q


@dataclass(frozen=True)
class TestForm:
    """phi(z, w) = b(z; cz, rz) (alpha + Re(beta (z - cz))) b(w; cw, rw), b = (1 - |t - c|^2 / r^2)^4.

    The bump is C^3 with compact support. For a horizontal pairing the roles
    of z and w are exchanged by ``variable``.
    """

    __test__ = False

    cz: complex = 0j
    rz: float = 1.5
    cw: complex = 0j
    rw: float = 1.0
    alpha: float = 1.0
    beta: complex = 0j
    variable: int = 0

    def _split(self, x):
        a, b = x[..., self.variable], x[..., 1 - self.variable]
        return a, b

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        a, b = self._split(x)
        lin = self.alpha + (self.beta * (a - self.cz)).real
        return _bump(a, self.cz, self.rz) ** 4 * lin * _bump(b, self.cw, self.rw) ** 4

    def laplacian(self, x) -> np.ndarray:
        """Laplacian in the transverse variable (z for vertical currents), in closed form."""
        x = np.asarray(x, dtype=complex)
        a, b = self._split(x)
        r2 = self.rz ** 2
        q = _bump(a, self.cz, self.rz)
        rho2 = np.abs(a - self.cz) ** 2
        lap_f = -16 * q ** 3 / r2 + 48 * rho2 * q ** 2 / r2 ** 2
        lin = self.alpha + (self.beta * (a - self.cz)).real
        cross = -16 * q ** 3 / r2 * (self.beta * (a - self.cz)).real
        return (lin * lap_f + cross) * _bump(b, self.cw, self.rw) ** 4

    def support_box(self) -> tuple[complex, float, complex, float]:
        return self.cz, self.rz, self.cw, self.rw

    def describe(self) -> dict:
        return {"cz": [self.cz.real, self.cz.imag] if isinstance(self.cz, complex) else self.cz,
                "rz": self.rz, "cw": [complex(self.cw).real, complex(self.cw).imag], "rw": self.rw,
                "alpha": self.alpha, "beta": [complex(self.beta).real, complex(self.beta).imag]}


def radial_bump(rz: float = 1.5, rw: float = 1.0, cw: complex = 0j, variable: int = 0) -> TestForm:
    return TestForm(0j, rz, cw, rw, 1.0, 0j, variable)


def test_form_library(dom: Domain, variable: int = 0) -> list[TestForm]:
    """A few bump-times-linear forms supported inside D'."""
    rm = dom.M.radii[1] if variable == 0 else dom.N.radii[1]
    rn = dom.N.radii[1] if variable == 0 else dom.M.radii[1]
    return [
        TestForm(0j, 0.8 * rm, 0j, 0.6 * rn, 1.0, 0j, variable),
        TestForm(0.1 + 0.1j, 0.75 * rm, 0.1j, 0.5 * rn, 1.0, 0.3 - 0.2j, variable),
        TestForm(-0.2j, 0.7 * rm, 0.15, 0.5 * rn, 0.5, 0.4j, variable),
    ]


@dataclass(frozen=True)
class Pairing:
    value: float
    grid_error: float

    def __float__(self) -> float:
        return self.value


def _support_nodes(spec: GridSpec, phi: TestForm, variable: int):
    """Index ranges and node coordinates of the lattice restricted to the support box of phi."""
    ca, ra, cb, rb = phi.support_box()
    names = ("z", "w") if variable == 0 else ("w", "z")
    out = []
    for name, c, r in ((names[0], ca, ra), (names[1], cb, rb)):
        ax = spec.axis(name)
        half = spec.z_half if name == "z" else spec.w_half
        cen = spec.z_center if name == "z" else spec.w_center
        c = complex(c) - cen
        if abs(c.real) + r > half or abs(c.imag) + r > half:
            raise ResolutionError("test form support exceeds the grid box")
        ir = np.flatnonzero(np.abs(ax - c.real) < r)
        ii = np.flatnonzero(np.abs(ax - c.imag) < r)
        out.append((ir, ii, cen + ax[ir][:, None] + 1j * ax[ii][None, :]))
    return out


def _pairing_nodes(g: PotentialGrid, phi: TestForm, shift: bool = False):
    var = g.variable
    if phi.variable != var:
        phi = replace(phi, variable=var)
    (ar, ai, a), (br, bi, b) = _support_nodes(g.spec, phi, var)
    if shift:
        ha, hb = (g.spec.hz, g.spec.hw) if var == 0 else (g.spec.hw, g.spec.hz)
        a = a + 0.5 * ha * (1 + 1j)
        b = b + 0.5 * hb * (1 + 1j)
    A = np.broadcast_to(a[:, :, None, None], a.shape + b.shape)
    B = np.broadcast_to(b[None, None], a.shape + b.shape)
    pts = np.stack([A, B] if var == 0 else [B, A], axis=-1)
    lap = phi.laplacian(pts)
    ha, hb = (g.spec.hz, g.spec.hw) if var == 0 else (g.spec.hw, g.spec.hz)
    # parity masks of the global indices give the every-other-node sub-lattice
    par = ((ar % 2 == 0)[:, None, None, None] & (ai % 2 == 0)[None, :, None, None]
           & (br % 2 == 0)[None, None, :, None] & (bi % 2 == 0)[None, None, None, :])
    return pts, lap, ha, hb, par, (ar, ai, br, bi)


def _pair_sum(u, lap, ha, hb, par, shifted=None) -> Pairing:
    """Fine lattice sum; the error estimate compares with the 2h sub-lattice and the half-shifted lattice."""
    fine = float(np.sum(u * lap)) * (ha * hb) ** 2 / (2 * np.pi)
    coarse = float(np.sum((u * lap)[par])) * (2 * ha * 2 * hb) ** 2 / (2 * np.pi)
    err = abs(fine - coarse)
    if shifted is not None:
        us, laps = shifted
        err = max(err, abs(fine - float(np.sum(us * laps)) * (ha * hb) ** 2 / (2 * np.pi)))
    return Pairing(fine, err)


def pair_with_test_form(g: PotentialGrid, phi: TestForm) -> Pairing:
    """<dd^c u, phi dV> = sum over nodes of u (1/2 pi) Delta phi times the cell volume.

    The grid-error estimate is the larger difference of this sum with the
    same sum on the every-other-node sub-lattice (spacing 2h) and, when the
    potential can be evaluated off the lattice, on the lattice shifted by
    half a cell.
    """
    pts, lap, ha, hb, par, idx = _pairing_nodes(g, phi)
    if g.stored is not None:
        ar, ai, br, bi = idx
        if g.orientation == VERTICAL:
            u = g.stored[np.ix_(br, bi, ar, ai)].transpose(2, 3, 0, 1)
        else:
            u = g.stored[np.ix_(ar, ai, br, bi)]
        return _pair_sum(u, lap, ha, hb, par)
    spts, slap = _pairing_nodes(g, phi, shift=True)[:2]
    return _pair_sum(g.evaluate(pts), lap, ha, hb, par, (g.evaluate(spts), slap))


def pairing_sequence(m: MapSpec, g: PotentialGrid, phi: TestForm, n_max: int) -> list[Pairing]:
    """Pairings of L^n u with phi for n = 0..n_max, transporting each node once per step."""
    pts, lap, ha, hb, par, _ = _pairing_nodes(g, phi)
    spts, slap = _pairing_nodes(g, phi, shift=True)[:2]
    pull = g.orientation == VERTICAL
    both = np.concatenate([pts.reshape(-1, 2), spts.reshape(-1, 2)])
    src = g.source
    if not isinstance(src, Transport):
        src = Transport(Potential("grid", src if src is not None else _Interpolant(g), g.normalization))
    out = []
    half = lap.size
    for v in src.sequence(both, n_max, m, pull):
        out.append(_pair_sum(v[:half].reshape(lap.shape), lap, ha, hb, par,
                             (v[half:].reshape(slap.shape), slap)))
    return out


# ---------------------------------------------------------------- convergence probe


def convergence_rate_probe(m: MapSpec, u0_list: Sequence[PotentialGrid], phi_list: Sequence[TestForm],
                           n_max: int = 10, reference: PotentialGrid | None = None,
                           seed: int | None = None) -> ExperimentReport:
    """a_n = <L^n u0, phi> for every (u0, phi); geometric fit of |a_n - a_inf|.

    a_inf is the pairing with ``reference`` (for example the Green potential)
    when given, else the Aitken extrapolation of the sequence. The fit uses
    the n with |a_n - a_inf| above three grid-error estimates. The
    cross-difference max |a_n(u0) - a_n(u0')| over initial potentials is
    the uniqueness probe.
    """
    if n_max > 12:
        raise ValueError("n_max above 12 exceeds the grid accuracy limit")
    if not u0_list or not phi_list:
        raise ValueError("need at least one initial potential and one test form")
    rep = ExperimentReport("current-converge", m.describe(), {"n_max": n_max,
                                                               "grid": u0_list[0].spec.describe()}, seed=seed)
    ns = list(range(n_max + 1))
    rep.series["n"] = ns
    rates, resolution_limited = [], False
    final = {}
    for j, phi in enumerate(phi_list):
        ref = None
        if reference is not None:
            ref = pair_with_test_form(reference, phi)
        seqs = []
        for i, u0 in enumerate(u0_list):
            seq = pairing_sequence(m, u0, phi, n_max)
            a = np.array([p.value for p in seq])
            ge = np.array([p.grid_error for p in seq])
            seqs.append(a)
            rep.series[f"a[u{i},phi{j}]"] = a
            rep.series[f"grid_error[u{i},phi{j}]"] = ge
            a_inf = ref.value if ref is not None else aitken_limit(a)
            floor = 3 * np.maximum(ge, ref.grid_error if ref is not None else 0.0)
            err = np.abs(a - a_inf)
            use = np.flatnonzero(err > floor)
            # keep the initial run of n above the floor
            run = [n for k, n in enumerate(use) if n == k]
            if len(run) >= 2:
                fit = geometric_rate(np.array(run), err[run])
                lam = math.exp(-fit.slope)
                rates.append(lam)
                rep.scalars[f"rate[u{i},phi{j}]"] = lam
                rep.scalars[f"r2[u{i},phi{j}]"] = fit.r2
            else:
                rep.set_scalar(f"rate[u{i},phi{j}]", None)
            tail = err[len(run):]
            if len(tail) > 2 and np.any(np.diff(tail) > 3 * floor[len(run) + 1:][: len(tail) - 1]):
                resolution_limited = True
            rep.scalars[f"a_inf[u{i},phi{j}]"] = a_inf
            final[(i, j)] = (a, ge)
        if len(seqs) > 1:
            stack = np.stack(seqs)
            cross = stack.max(axis=0) - stack.min(axis=0)
            rep.series[f"cross_difference[phi{j}]"] = cross
            ge_max = np.max([final[(i, j)][1] for i in range(len(u0_list))], axis=0)
            rep.scalars[f"cross_difference_final[phi{j}]"] = float(cross[-1])
            rep.scalars[f"grid_error_final[phi{j}]"] = float(ge_max[-1])
            rep.flags[f"unique[phi{j}]"] = bool(cross[-1] <= 10 * ge_max[-1])
    if rates:
        rep.scalars["rate_min"] = float(min(rates))
    rep.flags["resolution_limited"] = resolution_limited
    return rep


def sup_distance(g: PotentialGrid, target: Callable[[np.ndarray], np.ndarray], mask_fn=None,
                 w_indices: Sequence[tuple[int, int]] | None = None) -> float:
    """max |u - target| over lattice nodes on the chosen slices where ``mask_fn`` holds."""
    spec = g.spec
    if w_indices is None:
        mid = spec.nw // 2
        w_indices = [(0, 0), (mid, mid), (spec.nw - 1, mid)]
    worst = 0.0
    for idx in w_indices:
        pts = g.nodes(idx) if g.orientation == VERTICAL else None
        if pts is None:
            raise ValueError("sup_distance is implemented for vertical grids")
        keep = np.ones(pts.shape[:-1], bool) if mask_fn is None else mask_fn(pts)
        u = g.evaluate(pts[keep])
        worst = max(worst, float(np.max(np.abs(u - target(pts[keep])))))
    return worst
