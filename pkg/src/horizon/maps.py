"""The map zoo: Henon-like maps, regular automorphisms, products, perturbations.

Every map acts on complex arrays of shape (..., k). The first ``p``
coordinates are the expanding (horizontal) ones. Each kind provides
forward and inverse evaluation and its exact holomorphic Jacobian; kinds
that know the covering structure of their graph also provide
``crossed_branches`` (used by the orbit-segment sampler) and ``preimages``
(used by the push-forward of potentials).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from horizon.errors import DimensionError, InverseConvergenceError

NEWTON_TOL = 1e-10


def _as_points(x, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.shape[-1:] != (k,):
        raise DimensionError(f"expected points of C^{k}, got shape {x.shape}")
    return x


def polyval(coeffs: Sequence[complex], z: np.ndarray) -> np.ndarray:
    """Horner evaluation; ``coeffs[i]`` multiplies z**i."""
    out = np.zeros_like(z) + coeffs[-1]
    for c in coeffs[-2::-1]:
        out = out * z + c
    return out


def polyder(coeffs: Sequence[complex]) -> tuple[complex, ...]:
    if len(coeffs) == 1:
        return (0j,)
    return tuple(i * coeffs[i] for i in range(1, len(coeffs)))


def poly_roots(coeffs: Sequence[complex], rhs: np.ndarray) -> np.ndarray:
    """All roots of ``p(z) = rhs`` for each entry of ``rhs``; shape (deg, *rhs.shape).

    Roots are ordered by argument so that a branch index is a deterministic
    label. Quadratics use the closed form; higher degrees use batched
    companion-matrix eigenvalues.
    """
    rhs = np.asarray(rhs, dtype=complex)
    deg = len(coeffs) - 1
    lead = coeffs[-1]
    if deg == 1:
        roots = ((rhs - coeffs[0]) / lead)[None]
    elif deg == 2:
        b, c = coeffs[1] / lead, (coeffs[0] - rhs) / lead
        s = np.sqrt(b * b / 4 - c)
        roots = np.stack([-b / 2 + s, -b / 2 - s])
    else:
        flat = rhs.reshape(-1)
        comp = np.zeros((flat.size, deg, deg), dtype=complex)
        comp[:, 1:, :-1] = np.eye(deg - 1)
        monic = np.array(coeffs[:-1], dtype=complex) / lead
        comp[:, :, -1] = -monic
        comp[:, 0, -1] = -(coeffs[0] - flat) / lead
        roots = np.linalg.eigvals(comp).T.reshape((deg,) + rhs.shape)
    order = np.argsort(np.angle(roots), axis=0, kind="stable")
    return np.take_along_axis(roots, order, axis=0)


class MapSpec:
    """Common interface of all map kinds."""

    kind: str = "abstract"
    k: int
    p: int

    @property
    def d_plus(self) -> int:
        raise NotImplementedError

    @property
    def d_minus(self) -> int:
        raise NotImplementedError

    @property
    def main_degree(self) -> int | None:
        return None

    def eval(self, x) -> np.ndarray:
        raise NotImplementedError

    def eval_inverse(self, y) -> np.ndarray:
        raise NotImplementedError

    def differential(self, x) -> np.ndarray:
        raise NotImplementedError

    def preimages(self, y) -> np.ndarray:
        """All inverse branches stacked on a new leading axis (one for injective maps)."""
        return self.eval_inverse(y)[None]

    def crossed_branches(self, w, z_next) -> tuple[np.ndarray, np.ndarray]:
        """Solve pi_1 f(z, w) = z_next for z; return (z, pi_2 f(z, w)) for every branch.

        ``w`` has shape (..., k - p) and ``z_next`` (..., p); outputs carry a
        leading branch axis of length ``main_degree``.
        """
        raise NotImplementedError(f"{self.kind} maps do not expose crossed branches")

    def inverse_map(self) -> "MapSpec":
        """f^-1 as a map whose first coordinates are its expanding ones."""
        return SwappedInverse(self)

    def iterate(self, x, n: int) -> np.ndarray:
        for _ in range(n):
            x = self.eval(x)
        return x

    def orbit(self, x, n: int) -> np.ndarray:
        """Forward orbit x, f(x), ..., f^n(x) on a new axis -2."""
        x = _as_points(x, self.k)
        out = np.empty(x.shape[:-1] + (n + 1, self.k), dtype=complex)
        out[..., 0, :] = x
        for j in range(n):
            x = self.eval(x)
            out[..., j + 1, :] = x
        return out

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        return x[..., : self.p], x[..., self.p:]

    def join(self, z, w) -> np.ndarray:
        return np.concatenate([z, w], axis=-1)

    def describe(self) -> dict:
        return {"kind": self.kind, "k": self.k, "p": self.p}

    def perturbation_bound(self, dom) -> float:
        return 0.0


def _cplx_tuple(v) -> tuple[complex, ...]:
    return tuple(complex(c) for c in v)


@dataclass(frozen=True)
class HenonMap(MapSpec):
    """f(z, w) = (P(z) - a w, z); ``poly[i]`` is the coefficient of z**i."""

    poly: tuple[complex, ...]
    a: complex
    kind = "henon"
    k = 2
    p = 1

    def __post_init__(self):
        object.__setattr__(self, "poly", _cplx_tuple(self.poly))
        object.__setattr__(self, "a", complex(self.a))
        if len(self.poly) < 3 or self.poly[-1] == 0:
            raise ValueError("Henon polynomial must have degree >= 2 and nonzero leading term")
        if self.a == 0:
            raise ValueError("Henon parameter a must be nonzero")

    @classmethod
    def quadratic(cls, c: complex = 0.0, a: complex = 0.5) -> "HenonMap":
        return cls((c, 0.0, 1.0), a)

    @property
    def degree(self) -> int:
        return len(self.poly) - 1

    d_plus = property(lambda self: self.degree)
    d_minus = property(lambda self: self.degree)
    main_degree = property(lambda self: self.degree)

    @cached_property
    def _dpoly(self):
        return polyder(self.poly)

    def eval(self, x):
        x = _as_points(x, 2)
        z, w = x[..., 0], x[..., 1]
        return np.stack([polyval(self.poly, z) - self.a * w, z], axis=-1)

    def eval_inverse(self, y):
        y = _as_points(y, 2)
        z, w = y[..., 0], y[..., 1]
        return np.stack([w, (polyval(self.poly, w) - z) / self.a], axis=-1)

    def differential(self, x):
        x = _as_points(x, 2)
        z = x[..., 0]
        J = np.zeros(x.shape[:-1] + (2, 2), dtype=complex)
        J[..., 0, 0] = polyval(self._dpoly, z)
        J[..., 0, 1] = -self.a
        J[..., 1, 0] = 1.0
        return J

    def crossed_branches(self, w, z_next):
        w = np.asarray(w, dtype=complex)
        z_next = np.asarray(z_next, dtype=complex)
        roots = poly_roots(self.poly, z_next[..., 0] + self.a * w[..., 0])
        z = roots[..., None]
        w_next = roots[..., None]
        return z, w_next

    def inverse_map(self) -> "HenonMap":
        # swap o f^-1 o swap (z, w) = (P(z)/a - w/a, z)
        return HenonMap(tuple(c / self.a for c in self.poly), 1.0 / self.a)

    def describe(self):
        return {"kind": self.kind, "k": 2, "p": 1, "poly": _encode(self.poly), "a": _encode(self.a)}


@dataclass(frozen=True)
class DiagonalMap(MapSpec):
    """x_i -> coeffs[i] * x_i**powers[i]; the first ``p`` coordinates expand.

    Not invertible when some power exceeds one; ``eval_inverse`` uses the
    principal root and ``preimages`` returns every branch.
    """

    coeffs: tuple[complex, ...]
    powers: tuple[int, ...]
    p: int = 1
    kind = "diagonal"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _cplx_tuple(self.coeffs))
        object.__setattr__(self, "powers", tuple(int(m) for m in self.powers))
        if len(self.coeffs) != len(self.powers) or not self.powers:
            raise ValueError("coeffs and powers must have equal nonzero length")
        if any(m < 1 for m in self.powers) or any(c == 0 for c in self.coeffs):
            raise ValueError("powers must be >= 1 and coefficients nonzero")
        if not 1 <= self.p <= len(self.powers):
            raise ValueError("need 1 <= p <= k")

    @property
    def k(self) -> int:
        return len(self.powers)

    @property
    def main_degree(self) -> int:
        return math.prod(self.powers[: self.p])

    @property
    def d_plus(self) -> int:
        return max(self.powers)

    @property
    def d_minus(self) -> int:
        # chosen so that d_plus**p == d_minus**(k - p) holds for the model maps
        if self.k == self.p:
            return self.main_degree
        return max(1, round(self.main_degree ** (1.0 / (self.k - self.p))))

    def eval(self, x):
        x = _as_points(x, self.k)
        c = np.array(self.coeffs)
        m = np.array(self.powers)
        return c * x ** m

    def eval_inverse(self, y):
        y = _as_points(y, self.k)
        c = np.array(self.coeffs)
        m = np.array(self.powers)
        return (y / c) ** (1.0 / m)

    def differential(self, x):
        x = _as_points(x, self.k)
        c = np.array(self.coeffs)
        m = np.array(self.powers)
        diag = c * m * x ** (m - 1)
        J = np.zeros(x.shape + (self.k,), dtype=complex)
        idx = np.arange(self.k)
        J[..., idx, idx] = diag
        return J

    def _coordinate_roots(self, i: int, y: np.ndarray) -> np.ndarray:
        m = self.powers[i]
        base = (y / self.coeffs[i]) ** (1.0 / m)
        return base[None] * np.exp(2j * np.pi * np.arange(m) / m).reshape((m,) + (1,) * y.ndim)

    def preimages(self, y):
        y = _as_points(y, self.k)
        per = [self._coordinate_roots(i, y[..., i]) for i in range(self.k)]
        grids = np.meshgrid(*[np.arange(len(r)) for r in per], indexing="ij")
        combos = [g.reshape(-1) for g in grids]
        out = np.stack([per[i][combos[i]] for i in range(self.k)], axis=-1)
        return out

    def crossed_branches(self, w, z_next):
        w = np.asarray(w, dtype=complex)
        z_next = np.asarray(z_next, dtype=complex)
        per = [self._coordinate_roots(i, z_next[..., i]) for i in range(self.p)]
        grids = np.meshgrid(*[np.arange(len(r)) for r in per], indexing="ij")
        combos = [g.reshape(-1) for g in grids]
        z = np.stack([per[i][combos[i]] for i in range(self.p)], axis=-1)
        c = np.array(self.coeffs[self.p:])
        m = np.array(self.powers[self.p:])
        w_next = np.broadcast_to(c * w ** m, z.shape[:-1] + (self.k - self.p,))
        return z, np.array(w_next)

    def describe(self):
        return {"kind": self.kind, "k": self.k, "p": self.p,
                "coeffs": _encode(self.coeffs), "powers": list(self.powers)}


def decoupled_model() -> DiagonalMap:
    """g(z, w) = (z^2, w/4): the closed-form model with G+ = log+|z|."""
    return DiagonalMap((1.0, 0.25), (2, 1), p=1)


@dataclass(frozen=True)
class HenonFactor:
    """Planar Henon move on coordinates (i, j): (x_i, x_j) <- (P(x_i) - a x_j, x_i)."""

    i: int
    j: int
    poly: tuple[complex, ...]
    a: complex

    def __post_init__(self):
        object.__setattr__(self, "poly", _cplx_tuple(self.poly))
        object.__setattr__(self, "a", complex(self.a))
        if self.i == self.j:
            raise ValueError("factor needs two distinct coordinates")
        if self.a == 0:
            raise ValueError("factor parameter a must be nonzero")


def _numeric_degree(func, k: int) -> int:
    """Algebraic degree of a polynomial map from its growth along generic rays."""
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    v /= np.linalg.norm(v)
    t1, t2 = 1e3, 1e4
    n1 = np.max(np.abs(func(t1 * v)))
    n2 = np.max(np.abs(func(t2 * v)))
    return int(round(math.log(n2 / n1) / math.log(t2 / t1)))


@dataclass(frozen=True)
class RegularAutomorphism(MapSpec):
    """Composition of planar Henon moves, applied in order.

    The construction is checked against the regularity relation
    d_plus**p == d_minus**(k - p), with both algebraic degrees measured
    from growth at infinity.
    """

    k: int
    p: int
    factors: tuple[HenonFactor, ...]
    kind = "regular_auto"

    def __post_init__(self):
        facs = tuple(f if isinstance(f, HenonFactor) else HenonFactor(*f) for f in self.factors)
        object.__setattr__(self, "factors", facs)
        if not facs:
            raise ValueError("need at least one factor")
        for f in facs:
            if not (0 <= f.i < self.k and 0 <= f.j < self.k):
                raise ValueError("factor coordinate out of range")
        if not 1 <= self.p <= self.k - 1:
            raise ValueError("regular automorphisms need 1 <= p <= k - 1")
        dp, dm = self.d_plus, self.d_minus
        if dp ** self.p != dm ** (self.k - self.p):
            raise ValueError(
                f"not regular: d+^p = {dp}^{self.p} differs from d-^(k-p) = {dm}^{self.k - self.p}")

    @cached_property
    def _degrees(self) -> tuple[int, int]:
        return _numeric_degree(self.eval, self.k), _numeric_degree(self.eval_inverse, self.k)

    d_plus = property(lambda self: self._degrees[0])
    d_minus = property(lambda self: self._degrees[1])

    @property
    def main_degree(self) -> int:
        return self.d_plus ** self.p

    def eval(self, x):
        x = _as_points(x, self.k).copy()
        for f in self.factors:
            xi = x[..., f.i].copy()
            x[..., f.i] = polyval(f.poly, xi) - f.a * x[..., f.j]
            x[..., f.j] = xi
        return x

    def eval_inverse(self, y):
        y = _as_points(y, self.k).copy()
        for f in reversed(self.factors):
            xi = y[..., f.j].copy()
            y[..., f.j] = (polyval(f.poly, xi) - y[..., f.i]) / f.a
            y[..., f.i] = xi
        return y

    def differential(self, x):
        x = _as_points(x, self.k).copy()
        J = np.broadcast_to(np.eye(self.k, dtype=complex), x.shape[:-1] + (self.k, self.k)).copy()
        for f in self.factors:
            step = np.broadcast_to(np.eye(self.k, dtype=complex), J.shape).copy()
            step[..., f.i, f.i] = polyval(polyder(f.poly), x[..., f.i])
            step[..., f.i, f.j] = -f.a
            step[..., f.j, f.i] = 1.0
            step[..., f.j, f.j] = 0.0
            J = step @ J
            xi = x[..., f.i].copy()
            x[..., f.i] = polyval(f.poly, xi) - f.a * x[..., f.j]
            x[..., f.j] = xi
        return J

    def describe(self):
        return {"kind": self.kind, "k": self.k, "p": self.p,
                "factors": [{"i": f.i, "j": f.j, "poly": _encode(f.poly), "a": _encode(f.a)}
                            for f in self.factors]}


def regular_c3_example(a: complex = 0.5, b: complex = 0.5) -> RegularAutomorphism:
    """(x, y, z) -> (x^2 - a z, y^2 - b x, y): regular with p=2, d+=2, d-=4, d=4."""
    return RegularAutomorphism(3, 2, (HenonFactor(0, 2, (0, 0, 1), a), HenonFactor(1, 2, (0, 0, 1), b)))


@dataclass(frozen=True)
class ProductMap(MapSpec):
    """F(x1, x2) = (f1(x1), f2(x2)) with coordinates ordered (z1, z2, w1, w2)."""

    f1: MapSpec
    f2: MapSpec
    kind = "product"

    @property
    def k(self) -> int:
        return self.f1.k + self.f2.k

    @property
    def p(self) -> int:
        return self.f1.p + self.f2.p

    @property
    def main_degree(self) -> int | None:
        d1, d2 = self.f1.main_degree, self.f2.main_degree
        return None if d1 is None or d2 is None else d1 * d2

    d_plus = property(lambda self: max(self.f1.d_plus, self.f2.d_plus))
    d_minus = property(lambda self: max(self.f1.d_minus, self.f2.d_minus))

    @cached_property
    def _perm(self) -> np.ndarray:
        """Indices taking concatenated factor coordinates (x1, x2) to (z1, z2, w1, w2)."""
        k1, p1, k2, p2 = self.f1.k, self.f1.p, self.f2.k, self.f2.p
        return np.array(list(range(p1)) + [k1 + i for i in range(p2)]
                        + list(range(p1, k1)) + [k1 + i for i in range(p2, k2)])

    def _unpack(self, x):
        x = _as_points(x, self.k)
        cat = np.empty_like(x)
        cat[..., self._perm] = x
        return cat[..., : self.f1.k], cat[..., self.f1.k:]

    def _pack(self, x1, x2):
        return np.concatenate([x1, x2], axis=-1)[..., self._perm]

    def eval(self, x):
        x1, x2 = self._unpack(x)
        return self._pack(self.f1.eval(x1), self.f2.eval(x2))

    def eval_inverse(self, y):
        y1, y2 = self._unpack(y)
        return self._pack(self.f1.eval_inverse(y1), self.f2.eval_inverse(y2))

    def differential(self, x):
        x1, x2 = self._unpack(x)
        J1, J2 = self.f1.differential(x1), self.f2.differential(x2)
        k1 = self.f1.k
        J = np.zeros(x.shape[:-1] + (self.k, self.k), dtype=complex)
        J[..., :k1, :k1] = J1
        J[..., k1:, k1:] = J2
        P = self._perm
        return J[..., P, :][..., :, P]

    def preimages(self, y):
        y1, y2 = self._unpack(y)
        b1, b2 = self.f1.preimages(y1), self.f2.preimages(y2)
        n1, n2 = len(b1), len(b2)
        x1 = np.repeat(b1, n2, axis=0)
        x2 = np.tile(b2, (n1,) + (1,) * (b2.ndim - 1))
        return self._pack(x1, x2)

    def crossed_branches(self, w, z_next):
        p1, p2 = self.f1.p, self.f2.p
        q1 = self.f1.k - p1
        z1, w1n = self.f1.crossed_branches(w[..., :q1], z_next[..., :p1])
        z2, w2n = self.f2.crossed_branches(w[..., q1:], z_next[..., p1:])
        n1, n2 = len(z1), len(z2)
        z = np.concatenate([np.repeat(z1, n2, axis=0), np.tile(z2, (n1,) + (1,) * (z2.ndim - 1))], axis=-1)
        wn = np.concatenate([np.repeat(w1n, n2, axis=0), np.tile(w2n, (n1,) + (1,) * (w2n.ndim - 1))], axis=-1)
        return z, wn

    def inverse_map(self) -> "ProductMap":
        return ProductMap(self.f1.inverse_map(), self.f2.inverse_map())

    def describe(self):
        return {"kind": self.kind, "k": self.k, "p": self.p,
                "factors": [self.f1.describe(), self.f2.describe()]}


def make_product(f1: MapSpec, f2: MapSpec) -> ProductMap:
    return ProductMap(f1, f2)


@dataclass(frozen=True)
class SwappedInverse(MapSpec):
    """f^-1 conjugated by the coordinate swap (z, w) -> (w, z)."""

    base: MapSpec
    kind = "inverse"

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def p(self) -> int:
        return self.base.k - self.base.p

    d_plus = property(lambda self: self.base.d_minus)
    d_minus = property(lambda self: self.base.d_plus)
    main_degree = property(lambda self: self.base.main_degree)

    def _swap(self, x):
        q = self.base.p
        return np.concatenate([x[..., q:], x[..., :q]], axis=-1)

    def _unswap(self, x):
        q = self.p
        return np.concatenate([x[..., q:], x[..., :q]], axis=-1)

    def eval(self, x):
        x = _as_points(x, self.k)
        return self._unswap_out(self.base.eval_inverse(self._unswap(x)))

    def _unswap_out(self, y):
        return self._swap(y)

    def eval_inverse(self, y):
        y = _as_points(y, self.k)
        return self._swap(self.base.eval(self._unswap(y)))

    def differential(self, x):
        x = _as_points(x, self.k)
        xb = self._unswap(x)
        pre = self.base.eval_inverse(xb)
        Jinv = np.linalg.inv(self.base.differential(pre))
        q = self.base.p
        perm = np.r_[np.arange(q, self.k), np.arange(q)]
        return Jinv[..., perm, :][..., :, perm]

    def inverse_map(self) -> MapSpec:
        return self.base

    def describe(self):
        return {"kind": self.kind, "k": self.k, "p": self.p, "base": self.base.describe()}


@dataclass(frozen=True)
class IteratedMap(MapSpec):
    """f^n as a map in its own right."""

    base: MapSpec
    n: int
    kind = "iterate"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("iteration count must be >= 1")

    k = property(lambda self: self.base.k)
    p = property(lambda self: self.base.p)
    d_plus = property(lambda self: self.base.d_plus ** self.n)
    d_minus = property(lambda self: self.base.d_minus ** self.n)

    @property
    def main_degree(self):
        d = self.base.main_degree
        return None if d is None else d ** self.n

    def eval(self, x):
        return self.base.iterate(x, self.n)

    def eval_inverse(self, y):
        for _ in range(self.n):
            y = self.base.eval_inverse(y)
        return y

    def differential(self, x):
        x = _as_points(x, self.k)
        J = np.broadcast_to(np.eye(self.k, dtype=complex), x.shape[:-1] + (self.k, self.k)).copy()
        for _ in range(self.n):
            J = self.base.differential(x) @ J
            x = self.base.eval(x)
        return J

    def describe(self):
        return {"kind": self.kind, "k": self.k, "p": self.p, "n": self.n, "base": self.base.describe()}


@dataclass(frozen=True)
class PerturbationTerm:
    """coeff * prod x_i**exponents[i] (kind 'monomial') or coeff * exp(<vector, x>) (kind 'exp'),
    added to output coordinate ``component``."""

    component: int
    kind: str
    coeff: complex
    vector: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "coeff", complex(self.coeff))
        if self.kind == "monomial":
            object.__setattr__(self, "vector", tuple(int(e) for e in self.vector))
            if any(e < 0 for e in self.vector):
                raise ValueError("monomial exponents must be nonnegative")
        elif self.kind == "exp":
            object.__setattr__(self, "vector", _cplx_tuple(self.vector))
        else:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")

    def value(self, x):
        v = np.array(self.vector)
        if self.kind == "monomial":
            return self.coeff * np.prod(x ** v, axis=-1)
        return self.coeff * np.exp(x @ v)

    def gradient(self, x):
        v = np.array(self.vector)
        if self.kind == "exp":
            return self.value(x)[..., None] * v
        k = x.shape[-1]
        g = np.zeros(x.shape, dtype=complex)
        for i in range(k):
            if v[i] == 0:
                continue
            e = v.copy()
            e[i] -= 1
            g[..., i] = self.coeff * v[i] * np.prod(x ** e, axis=-1)
        return g

    def sup_bound(self, radii: np.ndarray) -> float:
        """Upper bound of |term| on the polydisc with the given per-coordinate radii."""
        v = np.array(self.vector)
        if self.kind == "monomial":
            return abs(self.coeff) * float(np.prod(radii ** v))
        return abs(self.coeff) * math.exp(float(np.sum(np.abs(v) * radii)))


@dataclass(frozen=True)
class PerturbedMap(MapSpec):
    """f_eps = f + eps * sum(terms); the inverse is found by Newton from f^-1."""

    base: MapSpec
    terms: tuple[PerturbationTerm, ...]
    eps: float = 0.0
    kind = "perturbed"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    k = property(lambda self: self.base.k)
    p = property(lambda self: self.base.p)
    d_plus = property(lambda self: self.base.d_plus)
    d_minus = property(lambda self: self.base.d_minus)
    main_degree = property(lambda self: self.base.main_degree)

    def _h(self, x):
        out = np.zeros(x.shape, dtype=complex)
        for t in self.terms:
            out[..., t.component] += t.value(x)
        return out

    def _dh(self, x):
        J = np.zeros(x.shape + (self.k,), dtype=complex)
        for t in self.terms:
            J[..., t.component, :] += t.gradient(x)
        return J

    def eval(self, x):
        x = _as_points(x, self.k)
        y = self.base.eval(x)
        if self.eps == 0.0:
            return y
        return y + self.eps * self._h(x)

    def differential(self, x):
        x = _as_points(x, self.k)
        J = self.base.differential(x)
        if self.eps == 0.0:
            return J
        return J + self.eps * self._dh(x)

    def _newton(self, residual, jac, x0, max_iter: int = 50):
        x = x0.copy()
        for _ in range(max_iter):
            r = residual(x)
            if np.all(np.abs(r) < NEWTON_TOL * 1e-2):
                break
            dx = np.linalg.solve(jac(x), r[..., None])[..., 0]
            x = x - dx
        r = residual(x)
        bad = ~np.all(np.abs(r) < NEWTON_TOL, axis=-1) | ~np.all(np.isfinite(x), axis=-1)
        if np.any(bad):
            raise InverseConvergenceError(
                f"Newton inverse failed at {int(np.sum(bad))} point(s); max residual {np.nanmax(np.abs(r)):.3g}")
        return x

    def eval_inverse(self, y):
        y = _as_points(y, self.k)
        x0 = self.base.eval_inverse(y)
        if self.eps == 0.0:
            return x0
        return self._newton(lambda x: self.eval(x) - y, self.differential, x0)

    def crossed_branches(self, w, z_next):
        z0, _ = self.base.crossed_branches(w, z_next)
        if self.eps == 0.0:
            return self.base.crossed_branches(w, z_next)
        p = self.p
        wb = np.broadcast_to(w, z0.shape[:-1] + w.shape[-1:])
        zn = np.broadcast_to(z_next, z0.shape)

        def residual(z):
            return self.eval(np.concatenate([z, wb], axis=-1))[..., :p] - zn

        def jac(z):
            return self.differential(np.concatenate([z, wb], axis=-1))[..., :p, :p]

        z = self._newton(residual, jac, z0)
        w_next = self.eval(np.concatenate([z, wb], axis=-1))[..., p:]
        return z, w_next

    def perturbation_bound(self, dom) -> float:
        """eps times an analytic sup-norm bound of the perturbation on D."""
        radii = np.array([dom.M.radius] * dom.p + [dom.N.radius] * (dom.k - dom.p))
        per = np.zeros(self.k)
        for t in self.terms:
            per[t.component] += t.sup_bound(radii)
        return self.eps * float(per.max(initial=0.0))

    def with_eps(self, eps: float) -> "PerturbedMap":
        return PerturbedMap(self.base, self.terms, eps)

    def describe(self):
        return {"kind": self.kind, "k": self.k, "p": self.p, "eps": self.eps, "base": self.base.describe(),
                "terms": [{"component": t.component, "type": t.kind, "coeff": _encode(t.coeff),
                           "vector": _encode(t.vector)} for t in self.terms]}


def default_perturbation(k: int) -> tuple[PerturbationTerm, ...]:
    """A unit polynomial term in every coordinate plus a damped exponential."""
    terms = [PerturbationTerm(i, "monomial", 1.0, tuple(1 if j == (i + 1) % k else 0 for j in range(k)))
             for i in range(k)]
    terms.append(PerturbationTerm(0, "exp", 0.1, tuple([0.5] + [0.0] * (k - 1))))
    return tuple(terms)


def perturb(m: MapSpec, eps: float, terms: Sequence[PerturbationTerm] | None = None) -> PerturbedMap:
    return PerturbedMap(m, tuple(terms) if terms is not None else default_perturbation(m.k), eps)


def _encode(v):
    """JSON-friendly encoding of complex scalars/sequences as [re, im] pairs."""
    if isinstance(v, (tuple, list)):
        return [_encode(c) for c in v]
    c = complex(v)
    return [c.real, c.imag]


class LinearMap(MapSpec):
    """x -> A x for an invertible complex matrix A; a test map with constant differential."""

    kind = "linear"

    def __init__(self, matrix, p: int = 1):
        A = np.array(matrix, dtype=complex)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("linear map needs a square matrix")
        if abs(np.linalg.det(A)) == 0:
            raise ValueError("linear map must be invertible")
        self.A = A
        self.k = A.shape[0]
        self.p = int(p)

    d_plus = property(lambda self: 1)
    d_minus = property(lambda self: 1)
    main_degree = property(lambda self: 1)

    def eval(self, x):
        return _as_points(x, self.k) @ self.A.T

    def eval_inverse(self, y):
        return _as_points(y, self.k) @ np.linalg.inv(self.A).T

    def differential(self, x):
        x = _as_points(x, self.k)
        return np.broadcast_to(self.A, x.shape[:-1] + (self.k, self.k)).copy()

    def describe(self):
        return {"kind": self.kind, "k": self.k, "p": self.p, "matrix": _encode(self.A.reshape(-1).tolist())}
