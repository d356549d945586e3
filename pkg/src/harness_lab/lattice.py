"""Lattice geometry, translation-invariant kernels and height fields.

Everything here is immutable. Kernels and regions are hashable so that the
compiled index tables (:class:`Geometry`) can be cached per pair.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptySupport,
    MissingBoundary,
    NonStochastic,
    RangeViolation,
    RegionError,
    ZeroInteriorMass,
)

Site = tuple[int, ...]

NOISE_LAWS = ("gaussian", "uniform", "rademacher")
STOCHASTIC_TOL = 1e-12


def _as_site(x: Iterable[int]) -> Site:
    return tuple(int(c) for c in x)


def _add(a: Site, b: Site) -> Site:
    return tuple(x + y for x, y in zip(a, b))


def _neg(a: Site) -> Site:
    return tuple(-x for x in a)


@dataclass(frozen=True)
class Kernel:
    """Offset law p(0, .) of a translation-invariant finite-range walk, plus noise.

    ``weights`` is a tuple of ``(offset, probability)`` pairs with distinct
    offsets.  Build one with :meth:`from_mapping` or :meth:`nearest_neighbor`.
    """

    d: int
    weights: tuple[tuple[Site, float], ...]
    noise: str = "gaussian"
    sigma: float = 1.0
    range_v: int | None = None

    @classmethod
    def from_mapping(cls, d: int, weights: Mapping, noise: str = "gaussian",
                     sigma: float = 1.0, range_v: int | None = None) -> "Kernel":
        merged: dict[Site, float] = {}
        for off, p in weights.items():
            off = (int(off),) if isinstance(off, (int, np.integer)) else _as_site(off)
            merged[off] = merged.get(off, 0.0) + float(p)
        items = tuple(sorted(merged.items()))
        return cls(d=d, weights=items, noise=noise, sigma=float(sigma), range_v=range_v)

    @classmethod
    def nearest_neighbor(cls, d: int, noise: str = "gaussian", sigma: float = 1.0) -> "Kernel":
        w = {}
        for c in range(d):
            for s in (-1, 1):
                off = [0] * d
                off[c] = s
                w[tuple(off)] = 1.0 / (2 * d)
        return cls.from_mapping(d, w, noise=noise, sigma=sigma)

    def with_noise(self, noise: str | None = None, sigma: float | None = None) -> "Kernel":
        return Kernel(self.d, self.weights,
                      self.noise if noise is None else noise,
                      self.sigma if sigma is None else float(sigma),
                      self.range_v)

    @property
    def offsets(self) -> tuple[Site, ...]:
        return tuple(o for o, _ in self.weights)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.weights], dtype=float)

    @property
    def v(self) -> int:
        """Range: max-norm of the support unless fixed explicitly."""
        if self.range_v is not None:
            return self.range_v
        return max((max(map(abs, o)) for o, p in self.weights if p > 0), default=0)

    def p(self, offset: Sequence[int]) -> float:
        return dict(self.weights).get(_as_site(offset), 0.0)

    @property
    def self_mass(self) -> float:
        return self.p((0,) * self.d)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        w = dict(self.weights)
        return all(abs(p - w.get(_neg(o), 0.0)) <= tol for o, p in w.items())

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "weights": [{"offset": list(o), "p": p} for o, p in self.weights],
            "noise": self.noise,
            "sigma": self.sigma,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Kernel":
        w = {tuple(item["offset"]): item["p"] for item in doc["weights"]}
        return cls.from_mapping(int(doc["d"]), w, noise=doc.get("noise", "gaussian"),
                                sigma=doc.get("sigma", 1.0))


def validate_kernel(k: Kernel) -> None:
    """Raise unless ``k`` is a finite-range stochastic offset law."""
    if not k.weights or all(p == 0 for _, p in k.weights):
        raise EmptySupport("kernel has no positive weight")
    for o, p in k.weights:
        if len(o) != k.d:
            raise RangeViolation(f"offset {o} has wrong dimension for d={k.d}")
        if p < 0 or not math.isfinite(p):
            raise NonStochastic(f"weight {p} at offset {o}")
    total = math.fsum(p for _, p in k.weights)
    if abs(total - 1.0) > STOCHASTIC_TOL:
        raise NonStochastic(f"weights sum to {total}")
    if k.range_v is not None:
        for o, p in k.weights:
            if p > 0 and max(map(abs, o)) > k.range_v:
                raise RangeViolation(f"offset {o} exceeds range {k.range_v}")
    if k.noise not in NOISE_LAWS:
        raise ValueError(f"unknown noise law {k.noise!r}")
    if not k.sigma >= 0:
        raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class Region:
    """Finite box carrier with optional exclusions, pinned sites and boundary field.

    ``gamma=None`` means the flat boundary (0 on every exterior site); an explicit
    gamma must cover the one-jump exterior shell.
    """

    lo: Site
    hi: Site
    pinned: tuple[Site, ...] = ()
    boundary: str = "fixed"
    gamma: tuple[tuple[Site, float], ...] | None = None
    exclude: tuple[Site, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lo", _as_site(self.lo))
        object.__setattr__(self, "hi", _as_site(self.hi))
        object.__setattr__(self, "pinned", tuple(sorted(_as_site(s) for s in self.pinned)))
        object.__setattr__(self, "exclude", tuple(sorted(_as_site(s) for s in self.exclude)))
        if self.gamma is not None:
            g = tuple(sorted((_as_site(s), float(v)) for s, v in dict(self.gamma).items()))
            object.__setattr__(self, "gamma", g)
        if len(self.lo) != len(self.hi):
            raise RegionError("lo and hi differ in dimension")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise RegionError("empty box")
        if self.boundary not in ("fixed", "free"):
            raise RegionError(f"boundary mode {self.boundary!r}")
        if self.boundary == "free" and self.gamma:
            raise RegionError("free boundary mode takes no gamma")
        for s in self.pinned:
            if not self.contains(s):
                raise RegionError(f"pinned site {s} outside carrier")

    @classmethod
    def box(cls, radius: int | Sequence[int], d: int | None = None, **kw) -> "Region":
        """Centered box {-r..r}^d."""
        if isinstance(radius, int):
            r = (radius,) * (d or 1)
        else:
            r = tuple(radius)
        return cls(lo=tuple(-x for x in r), hi=r, **kw)

    @property
    def d(self) -> int:
        return len(self.lo)

    def contains(self, site: Sequence[int]) -> bool:
        s = _as_site(site)
        return (len(s) == self.d and all(a <= x <= b for a, x, b in zip(self.lo, s, self.hi))
                and s not in self._excluded)

    @functools.cached_property
    def _excluded(self) -> frozenset:
        return frozenset(self.exclude)

    @functools.cached_property
    def sites(self) -> tuple[Site, ...]:
        ranges = [range(a, b + 1) for a, b in zip(self.lo, self.hi)]
        ex = self._excluded
        return tuple(s for s in itertools.product(*ranges) if s not in ex)

    @functools.cached_property
    def index(self) -> dict[Site, int]:
        return {s: i for i, s in enumerate(self.sites)}

    @property
    def free_sites(self) -> tuple[Site, ...]:
        pin = set(self.pinned)
        return tuple(s for s in self.sites if s not in pin)

    def shell(self, k: Kernel) -> tuple[Site, ...]:
        """Exterior sites reachable in one jump of ``k`` from the carrier."""
        out = set()
        for s in self.sites:
            for o, p in k.weights:
                if p > 0:
                    t = _add(s, o)
                    if not self.contains(t):
                        out.add(t)
        return tuple(sorted(out))

    def boundary_value(self, site: Site) -> float:
        if self.gamma is None:
            return 0.0
        g = dict(self.gamma)
        if site not in g:
            raise MissingBoundary(f"no boundary value at {site}")
        return g[site]

    def with_gamma(self, gamma: Mapping[Site, float] | None) -> "Region":
        return Region(self.lo, self.hi, self.pinned, self.boundary,
                      None if gamma is None else tuple(gamma.items()), self.exclude)

    def with_pinned(self, pinned: Iterable[Site]) -> "Region":
        return Region(self.lo, self.hi, tuple(pinned), self.boundary, self.gamma, self.exclude)

    def to_json(self) -> dict:
        doc = {
            "box": {"lo": list(self.lo), "hi": list(self.hi)},
            "pinned": [list(s) for s in self.pinned],
            "boundary": self.boundary,
            "gamma": [] if self.gamma is None else [{"site": list(s), "value": v} for s, v in self.gamma],
        }
        if self.exclude:
            doc["exclude"] = [list(s) for s in self.exclude]
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "Region":
        gamma = doc.get("gamma") or None
        if gamma is not None:
            gamma = tuple((tuple(g["site"]), g["value"]) for g in gamma)
        return cls(lo=tuple(doc["box"]["lo"]), hi=tuple(doc["box"]["hi"]),
                   pinned=tuple(tuple(s) for s in doc.get("pinned", [])),
                   boundary=doc.get("boundary", "fixed"), gamma=gamma,
                   exclude=tuple(tuple(s) for s in doc.get("exclude", [])))


@dataclass(frozen=True, eq=False)
class HeightField:
    """Real heights on the carrier of a region, in ``region.sites`` order."""

    sites: tuple[Site, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.shape != (len(self.sites),):
            raise ValueError(f"expected {len(self.sites)} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("height field has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, region: Region) -> "HeightField":
        return cls(region.sites, np.zeros(len(region.sites)))

    @classmethod
    def from_function(cls, region: Region, fn: Callable[[Site], float]) -> "HeightField":
        return cls(region.sites, np.array([fn(s) for s in region.sites], dtype=float))

    @functools.cached_property
    def _index(self) -> dict[Site, int]:
        return {s: i for i, s in enumerate(self.sites)}

    def __getitem__(self, site) -> float:
        return float(self.values[self._index[_as_site(site)]])

    def __contains__(self, site) -> bool:
        return _as_site(site) in self._index

    def __len__(self) -> int:
        return len(self.sites)

    def as_dict(self) -> dict[Site, float]:
        return dict(zip(self.sites, self.values.tolist()))

    def __add__(self, other: "HeightField") -> "HeightField":
        if other.sites != self.sites:
            raise ValueError("carrier mismatch")
        return HeightField(self.sites, self.values + other.values)

    def __sub__(self, other: "HeightField") -> "HeightField":
        if other.sites != self.sites:
            raise ValueError("carrier mismatch")
        return HeightField(self.sites, self.values - other.values)

    def scaled(self, a: float) -> "HeightField":
        return HeightField(self.sites, a * self.values)


def free_site_kernel(k: Kernel, region: Region, site: Sequence[int]) -> dict[Site, float]:
    """Jump law from ``site`` conditioned to stay in the carrier."""
    site = _as_site(site)
    inside = {}
    for o, p in k.weights:
        t = _add(site, o)
        if p > 0 and region.contains(t):
            inside[t] = inside.get(t, 0.0) + p
    mass = math.fsum(inside.values())
    if mass <= 0:
        raise ZeroInteriorMass(f"no kernel mass from {site} inside the carrier")
    return {t: p / mass for t, p in inside.items()}


def p_average(k: Kernel, field: HeightField, region: Region, site: Sequence[int]) -> float:
    """Kernel average of the juxtaposed configuration (field inside, gamma outside)."""
    site = _as_site(site)
    if not region.contains(site):
        raise ValueError(f"site {site} not in carrier")
    if region.boundary == "free":
        return math.fsum(w * field[t] for t, w in free_site_kernel(k, region, site).items())
    acc = []
    for o, p in k.weights:
        if p == 0:
            continue
        t = _add(site, o)
        h = field[t] if region.contains(t) else region.boundary_value(t)
        acc.append(p * h)
    return math.fsum(acc)


def is_harmonic(k: Kernel, h: HeightField, region: Region, tol: float = 1e-9) -> bool:
    pinned = set(region.pinned)
    return all(abs(p_average(k, h, region, s) - h[s]) <= tol
               for s in region.sites if s not in pinned)


class Geometry:
    """Index tables for one (kernel, region) pair.

    Extended index space: carrier sites ``0..n-1`` in ``region.sites`` order,
    then exterior shell sites ``n..n+m-1``.  ``nbr[i, c]`` and ``w[i, c]`` give
    the jump targets and weights from carrier site ``i`` (free mode uses the
    renormalized law; unused slots point back to ``i`` with weight 0).
    """

    def __init__(self, k: Kernel, region: Region):
        validate_kernel(k)
        if k.d != region.d:
            raise ValueError(f"kernel dimension {k.d} != region dimension {region.d}")
        self.kernel = k
        self.region = region
        self.sites = region.sites
        self.n = len(self.sites)
        self.shell = () if region.boundary == "free" else region.shell(k)
        self.m = len(self.shell)
        offs = [o for o, p in k.weights if p > 0]
        probs = np.array([p for _, p in k.weights if p > 0])
        self.offsets = np.array(offs, dtype=np.int64).reshape(len(offs), k.d)
        self.probs = probs
        index = dict(region.index)
        for j, s in enumerate(self.shell):
            index[s] = self.n + j
        kk = len(offs)
        nbr = np.empty((self.n, kk), dtype=np.int64)
        w = np.empty((self.n, kk), dtype=float)
        for i, s in enumerate(self.sites):
            for c, o in enumerate(offs):
                t = _add(s, o)
                if t in index and (t in region.index or region.boundary == "fixed"):
                    nbr[i, c] = index[t]
                    w[i, c] = probs[c]
                else:
                    nbr[i, c] = i
                    w[i, c] = 0.0
        if region.boundary == "free":
            mass = w.sum(axis=1)
            if np.any(mass <= 0):
                bad = self.sites[int(np.argmin(mass))]
                raise ZeroInteriorMass(f"no kernel mass from {bad} inside the carrier")
            w = w / mass[:, None]
        self.nbr = nbr
        self.w = w
        self.pinned = np.zeros(self.n, dtype=np.bool_)
        for s in region.pinned:
            self.pinned[region.index[s]] = True
        if region.gamma is None:
            self.gamma = np.zeros(self.m)
        else:
            g = dict(region.gamma)
            missing = [s for s in self.shell if s not in g]
            if missing:
                raise MissingBoundary(f"gamma does not cover exterior sites {missing[:3]}...")
            self.gamma = np.array([g[s] for s in self.shell], dtype=float)
        self.coords = np.array(self.sites, dtype=np.int64).reshape(self.n, k.d)

    def index_of(self, site: Sequence[int]) -> int:
        return self.region.index[_as_site(site)]

    def extended_values(self, field: HeightField | np.ndarray) -> np.ndarray:
        vals = field.values if isinstance(field, HeightField) else np.asarray(field, dtype=float)
        return np.concatenate([vals, self.gamma])


@functools.lru_cache(maxsize=256)
def geometry(k: Kernel, region: Region) -> Geometry:
    return Geometry(k, region)
