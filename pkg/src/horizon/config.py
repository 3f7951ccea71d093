"""Strict INI configuration for the command line runner.

Grammar (one experiment per file)::

    [run]                      required
    seed = <unsigned 64-bit>   required unless --seed is given
    workers = <int >= 1>       optional, default 1

    [map]                      required
    kind = henon | decoupled | diagonal | regular_c3
    c = <complex>              henon: p(z) = z^2 + c
    a = <complex>              henon and regular_c3
    b = <complex>              regular_c3
    poly = <complex list>      henon: coefficients of p, constant term first (overrides c)
    coeffs = <complex list>    diagonal
    powers = <int list>        diagonal
    p = <int>                  diagonal
    iterate = <int >= 1>       replace f by f^n
    product = none | self | inverse
                               F = f x f or f x f^-1

    [domain]                   optional
    radius = <float>           polydisc radius of both factors (default 2)
    radius_n = <float>         radius of the vertical factor (default: radius)
    gap = <float>              relative shell gap (default 0.1)

    [params]                   optional; keys depend on the subcommand

Lists are comma separated. Complex numbers use Python syntax (``0.5``,
``-1+2j``). Any key or section outside this grammar is an error.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Any, Callable

from horizon.errors import ConfigError
from horizon.geometry import Domain
from horizon.maps import (DiagonalMap, HenonMap, IteratedMap, MapSpec, ProductMap, decoupled_model,
                          regular_c3_example)


def parse_complex(s: str) -> complex:
    try:
        return complex(s.replace(" ", ""))
    except ValueError:
        raise ConfigError(f"not a complex number: {s!r}") from None


def parse_int(s: str) -> int:
    try:
        return int(s.strip())
    except ValueError:
        raise ConfigError(f"not an integer: {s!r}") from None


def parse_float(s: str) -> float:
    try:
        return float(s.strip())
    except ValueError:
        raise ConfigError(f"not a number: {s!r}") from None


def parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def parse_seed(s: str) -> int:
    v = parse_int(s)
    if not 0 <= v < 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {v}")
    return v


def list_of(item: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(s: str) -> list:
        parts = [p for p in (x.strip() for x in s.split(",")) if p]
        if not parts:
            raise ConfigError("empty list")
        return [item(p) for p in parts]

    return parse


def parse_word(s: str) -> str:
    return s.strip()


RUN_KEYS = {"seed": parse_seed, "workers": parse_int}
MAP_KEYS = {
    "kind": parse_word, "c": parse_complex, "a": parse_complex, "b": parse_complex,
    "poly": list_of(parse_complex), "coeffs": list_of(parse_complex), "powers": list_of(parse_int),
    "p": parse_int, "iterate": parse_int, "product": parse_word,
}
DOMAIN_KEYS = {"radius": parse_float, "radius_n": parse_float, "gap": parse_float}

# per-subcommand parameters and their defaults
PARAMS: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "check-structure": {"count": (parse_int, 10_000), "threshold": (parse_float, 0.01)},
    "green": {"points": (parse_int, 10_000), "n_max": (parse_int, 200), "shell": (parse_word, "D'"),
              "series_points": (parse_int, 200)},
    "current-converge": {"potentials": (list_of(parse_word), ["fubini_study", "mixed_smooth"]),
                         "n_max": (parse_int, 10), "nz": (parse_int, 96), "nw": (parse_int, 48),
                         "reference": (parse_word, "none")},
    "measure": {"method": (parse_word, "segments"), "count": (parse_int, 10_000),
                "past": (parse_int, 24), "future": (parse_int, 24), "observables": (parse_int, 10),
                "push": (parse_int, 2), "nz": (parse_int, 96), "nw": (parse_int, 48)},
    "lyapunov": {"orbits": (parse_int, 64), "steps": (parse_int, 400), "count": (parse_int, 10_000)},
    "entropy": {"eps": (parse_float, 0.3), "n_list": (list_of(parse_int), [1, 2, 3, 4, 5]),
                "budget": (parse_int, 20_000), "bowen_eps": (parse_float, 0.3),
                "bowen_n_list": (list_of(parse_int), [0, 1, 2, 3, 4, 5, 6]), "centers": (parse_int, 200),
                "count": (parse_int, 20_000)},
    "mixing": {"phi": (parse_word, "bump_saddle"), "psi": (parse_word, "bump_saddle_wide"),
               "n_max": (parse_int, 10), "count": (parse_int, 10_000)},
    "degrees": {"n_list": (list_of(parse_int), [2, 3, 4, 5, 6, 7, 8]), "samples": (parse_int, 2 ** 15),
                "control": (parse_bool, True)},
    "dashboard": {"count": (parse_int, 10_000), "orbits": (parse_int, 64), "steps": (parse_int, 400),
                  "n_max": (parse_int, 10), "samples": (parse_int, 2 ** 15)},
}


@dataclass
class RunConfig:
    subcommand: str
    seed: int
    workers: int
    map_spec: dict
    domain_spec: dict
    params: dict = field(default_factory=dict)

    def echo(self) -> dict:
        return {"subcommand": self.subcommand, "map": self.map_spec, "domain": self.domain_spec,
                "params": self.params, "workers_ignored_for_results": True}


def _section(cp: configparser.ConfigParser, name: str, keys: dict, required: bool) -> dict:
    if not cp.has_section(name):
        if required:
            raise ConfigError(f"missing section [{name}]")
        return {}
    out = {}
    for k, v in cp.items(name):
        if k not in keys:
            raise ConfigError(f"unknown key {k!r} in [{name}]")
        parser = keys[k][0] if isinstance(keys[k], tuple) else keys[k]
        out[k] = parser(v)
    return out


def parse_config(text: str, subcommand: str, seed_override: int | None = None) -> RunConfig:
    """Parse and validate; raises ConfigError on anything outside the grammar."""
    if subcommand not in PARAMS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cp = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    extra = set(cp.sections()) - {"run", "map", "domain", "params"}
    if extra:
        raise ConfigError(f"unknown section(s): {sorted(extra)}")
    run = _section(cp, "run", RUN_KEYS, True)
    mp = _section(cp, "map", MAP_KEYS, True)
    dm = _section(cp, "domain", DOMAIN_KEYS, False)
    spec = PARAMS[subcommand]
    given = _section(cp, "params", spec, False)
    params = {k: given.get(k, default) for k, (_, default) in spec.items()}
    seed = seed_override if seed_override is not None else run.get("seed")
    if seed is None:
        raise ConfigError("a seed is required: set [run] seed or pass --seed")
    workers = run.get("workers", 1)
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    if "kind" not in mp:
        raise ConfigError("[map] needs a kind")
    build_map(mp)
    build_domain(mp, dm)
    return RunConfig(subcommand, int(seed), int(workers), mp, dm, params)


_MAP_FIELDS = {
    "henon": {"c", "a", "poly"},
    "decoupled": set(),
    "diagonal": {"coeffs", "powers", "p"},
    "regular_c3": {"a", "b"},
}


def build_map(mp: dict) -> MapSpec:
    kind = mp["kind"]
    if kind not in _MAP_FIELDS:
        raise ConfigError(f"unsupported map kind {kind!r}")
    stray = set(mp) - _MAP_FIELDS[kind] - {"kind", "iterate", "product"}
    if stray:
        raise ConfigError(f"keys {sorted(stray)} do not apply to kind {kind!r}")
    try:
        if kind == "henon":
            if "poly" in mp:
                f: MapSpec = HenonMap(tuple(mp["poly"]), mp.get("a", 0.5))
            else:
                f = HenonMap.quadratic(mp.get("c", 0.0), mp.get("a", 0.5))
        elif kind == "decoupled":
            f = decoupled_model()
        elif kind == "diagonal":
            if "coeffs" not in mp or "powers" not in mp:
                raise ConfigError("diagonal maps need coeffs and powers")
            f = DiagonalMap(tuple(mp["coeffs"]), tuple(mp["powers"]), mp.get("p", 1))
        else:
            f = regular_c3_example(mp.get("a", 0.5), mp.get("b", 0.5))
        n = mp.get("iterate", 1)
        if n < 1:
            raise ConfigError("iterate must be >= 1")
        if n > 1:
            f = IteratedMap(f, n)
        prod = mp.get("product", "none")
        if prod == "self":
            f = ProductMap(f, f)
        elif prod == "inverse":
            f = ProductMap(f, f.inverse_map())
        elif prod != "none":
            raise ConfigError(f"product must be none, self or inverse, got {prod!r}")
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(f"invalid map parameters: {e}") from None
    return f


def build_domain(mp: dict, dm: dict) -> Domain:
    f = build_map(mp)
    r = dm.get("radius", 2.0)
    try:
        return Domain.polydisc(f.k, f.p, r, dm.get("radius_n", r), dm.get("gap", 0.1))
    except ValueError as e:
        raise ConfigError(f"invalid domain: {e}") from None
