"""Product domains D = M x N with nested safety shells.

Points of C^k are complex arrays whose last axis has length k; every
function here is vectorised over the leading axes. The first ``p``
coordinates are the horizontal factor M, the remaining ``k - p`` the
vertical factor N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from horizon.errors import DimensionError
from horizon.rng import make_rng, random_phase, uniform_disc

SHELLS = {"D": 0, "D'": 1, "D''": 2, "D1": 1, "D2": 2}


def shell_index(shell: str | int) -> int:
    if isinstance(shell, int):
        if shell not in (0, 1, 2):
            raise ValueError(f"unknown shell {shell!r}")
        return shell
    try:
        return SHELLS[shell.replace("′", "'").replace("″", "''")]
    except KeyError:
        raise ValueError(f"unknown shell {shell!r}") from None


@dataclass(frozen=True)
class Factor:
    """Concentric polydiscs (or balls) in C^dim with radii outer > mid > inner."""

    dim: int
    radii: tuple[float, float, float]
    shape: str = "polydisc"

    def __post_init__(self):
        if self.dim < 0:
            raise ValueError("dimension must be nonnegative")
        r0, r1, r2 = self.radii
        if not (r0 > r1 > r2 > 0):
            raise ValueError(f"shell radii must be strictly nested, got {self.radii}")
        if self.shape not in ("polydisc", "ball"):
            raise ValueError(f"unknown factor shape {self.shape!r}")

    @property
    def radius(self) -> float:
        return self.radii[0]

    def boundary_distance(self, z: np.ndarray, shell: int = 0) -> np.ndarray:
        """Signed Euclidean distance to the boundary of the chosen shell (> 0 inside)."""
        r = self.radii[shell]
        if self.dim == 0:
            return np.full(z.shape[:-1], np.inf)
        if self.shape == "ball":
            return r - np.linalg.norm(z, axis=-1)
        return r - np.max(np.abs(z), axis=-1)

    def contains(self, z: np.ndarray, shell: int = 0) -> np.ndarray:
        return self.boundary_distance(z, shell) > 0

    def sample(self, rng: np.random.Generator, count: int, shell: int = 0) -> np.ndarray:
        r = self.radii[shell]
        if self.dim == 0:
            return np.zeros((count, 0), dtype=complex)
        if self.shape == "polydisc":
            return uniform_disc(rng, (count, self.dim), r)
        g = rng.standard_normal((count, 2 * self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = r * rng.random(count) ** (1.0 / (2 * self.dim))
        v = g[:, : self.dim] + 1j * g[:, self.dim:]
        return v * rad[:, None]

    def sample_boundary(self, rng: np.random.Generator, count: int, shell: int = 0) -> np.ndarray:
        """Points on the topological boundary of the chosen shell."""
        r = self.radii[shell]
        if self.shape == "ball":
            g = rng.standard_normal((count, 2 * self.dim))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            return r * (g[:, : self.dim] + 1j * g[:, self.dim:])
        z = uniform_disc(rng, (count, self.dim), r)
        axis = rng.integers(0, self.dim, size=count)
        z[np.arange(count), axis] = r * random_phase(rng, count)
        return z

    def sample_near_boundary(self, rng, count: int, width: float, shell: int = 0) -> np.ndarray:
        """Points inside the shell within ``width * radius`` of its boundary."""
        z = self.sample_boundary(rng, count, shell)
        t = 1.0 - width * rng.random(count)
        if self.shape == "ball":
            return z * t[:, None]
        r = self.radii[shell]
        mod = np.abs(z)
        on = np.isclose(mod, r, rtol=1e-12)
        z = np.where(on, z * t[:, None], z)
        return z


@dataclass(frozen=True)
class Domain:
    """D = M x N in C^p x C^(k-p), with shells D'' inside D' inside D."""

    k: int
    p: int
    M: Factor
    N: Factor
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.k < 1 or not (1 <= self.p <= self.k):
            raise ValueError(f"need 1 <= p <= k, got k={self.k}, p={self.p}")
        if self.M.dim != self.p or self.N.dim != self.k - self.p:
            raise ValueError("factor dimensions do not match (p, k - p)")

    @classmethod
    def polydisc(cls, k: int, p: int, r_m: float, r_n: float | None = None, gap: float = 0.1,
                 shape: str = "polydisc") -> "Domain":
        """Shells at ``r``, ``(1 - gap) r`` and ``(1 - 2 gap) r`` in each factor."""
        r_n = r_m if r_n is None else r_n
        radii = lambda r: (r, (1 - gap) * r, (1 - 2 * gap) * r)  # noqa: E731
        return cls(k, p, Factor(p, radii(r_m), shape), Factor(k - p, radii(r_n), shape))

    @classmethod
    def bidisc(cls, r: float = 2.0, gap: float = 0.1) -> "Domain":
        return cls.polydisc(2, 1, r, r, gap)

    @classmethod
    def from_radii(cls, k: int, p: int, m_radii: Sequence[float], n_radii: Sequence[float],
                   shape: str = "polydisc") -> "Domain":
        return cls(k, p, Factor(p, tuple(float(r) for r in m_radii), shape),
                   Factor(k - p, tuple(float(r) for r in n_radii), shape))

    def shrink(self, shell: str | int = "D'") -> "Domain":
        """The domain whose outer shell is the chosen inner shell, same relative gaps."""
        i = shell_index(shell)

        def f(fac: Factor) -> Factor:
            r0 = fac.radii[i]
            scale = r0 / fac.radii[0]
            return Factor(fac.dim, tuple(r * scale for r in fac.radii), fac.shape)

        return Domain(self.k, self.p, f(self.M), f(self.N))

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = self.check(x)
        return x[..., : self.p], x[..., self.p:]

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        if x.shape[-1:] != (self.k,):
            raise DimensionError(f"expected points of C^{self.k}, got shape {x.shape}")
        return x

    def contains(self, x, shell: str | int = "D") -> np.ndarray | bool:
        """True iff pi_1(x) is in the selected M-shell and pi_2(x) in the N-shell."""
        i = shell_index(shell)
        z, w = self.split(x)
        out = self.M.contains(z, i) & self.N.contains(w, i)
        return bool(out) if out.ndim == 0 else out

    def vertical_margin(self, x) -> np.ndarray:
        """Distance of pi_1(x) to the boundary of M."""
        z, _ = self.split(x)
        return self.M.boundary_distance(z)

    def horizontal_margin(self, x) -> np.ndarray:
        """Distance of pi_2(x) to the boundary of N."""
        _, w = self.split(x)
        return self.N.boundary_distance(w)

    def sample(self, count: int, seed: int, shell: str | int = "D", stream: int = 0) -> np.ndarray:
        rng = make_rng(seed, 11, stream)
        i = shell_index(shell)
        return np.concatenate([self.M.sample(rng, count, i), self.N.sample(rng, count, i)], axis=1)

    def sample_vertical_boundary(self, count: int, seed: int) -> np.ndarray:
        """Seeded sample of the vertical boundary dM x N."""
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = make_rng(seed, 12)
        return np.concatenate([self.M.sample_boundary(rng, count), self.N.sample(rng, count)], axis=1)

    def sample_horizontal_boundary(self, count: int, seed: int) -> np.ndarray:
        """Seeded sample of the horizontal boundary M x dN."""
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = make_rng(seed, 13)
        return np.concatenate([self.M.sample(rng, count), self.N.sample_boundary(rng, count)], axis=1)

    def sample_boundary_biased(self, count: int, seed: int, width: float = 0.05) -> np.ndarray:
        """Half uniform in D, half within ``width`` (relative) of dM or dN."""
        rng = make_rng(seed, 14)
        n_uni = count - count // 2
        n_v = (count // 2) // 2
        n_h = count // 2 - n_v
        uni = np.concatenate([self.M.sample(rng, n_uni), self.N.sample(rng, n_uni)], axis=1)
        near_v = np.concatenate([self.M.sample_near_boundary(rng, n_v, width), self.N.sample(rng, n_v)], axis=1)
        near_h = np.concatenate([self.M.sample(rng, n_h), self.N.sample_near_boundary(rng, n_h, width)], axis=1)
        return np.concatenate([uni, near_v, near_h], axis=0)

    def describe(self) -> dict:
        return {
            "k": self.k,
            "p": self.p,
            "shape": self.M.shape,
            "m_radii": list(self.M.radii),
            "n_radii": list(self.N.radii),
        }


def contains(dom: Domain, shell: str | int, x) -> bool | np.ndarray:
    return dom.contains(x, shell)


def sample_vertical_boundary(dom: Domain, count: int, seed: int) -> np.ndarray:
    return dom.sample_vertical_boundary(count, seed)


def orbit_metric_distance(x_orbit, y_orbit) -> float | np.ndarray:
    """Bowen distance max_j |x_j - y_j| between orbit segments.

    Orbits have shape (..., n + 1, k); leading axes broadcast.
    """
    x = np.asarray(x_orbit, dtype=complex)
    y = np.asarray(y_orbit, dtype=complex)
    if x.ndim < 2 or y.ndim < 2 or x.shape[-2:] != y.shape[-2:]:
        raise DimensionError(f"orbit shapes differ: {x.shape} vs {y.shape}")
    d = np.sqrt(np.sum(np.abs(x - y) ** 2, axis=-1)).max(axis=-1)
    return float(d) if np.ndim(d) == 0 else d
