"""Backward absorbed walk: exact conditional weights and the dual height."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from ._parallel import derive_seeds, pmap
from .engine import EventStream, evolve, generate_events
from .errors import (
    AnchorOutsideCarrier,
    NonNestedBoxes,
    StreamMismatch,
    UnsupportedRegion,
    WindowMismatch,
)
from .lattice import HeightField, Kernel, Region, Site, geometry


@dataclass(frozen=True, eq=False)
class DualWeights:
    """Exact backward-walk weights for one anchor on one stream.

    ``b[q]`` is the walk's mass at the site of event ``lo + q`` just before that
    event is scanned (0 for pinned-site events, which are not epochs).
    ``mass`` is the terminal distribution over the extended index space.
    """

    anchor: Site
    t: float
    s: float
    region: Region
    lo: int
    hi: int
    stream_id: tuple
    b: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    event_site: np.ndarray = field(repr=False)

    def epoch_weights(self) -> dict[tuple[Site, int], float]:
        """Map (site, per-site epoch index within (s, t]) to b for non-pinned sites."""
        sites = self.region.sites
        pinned = set(self.region.pinned)
        seen: dict[int, int] = {}
        out = {}
        for q, i in enumerate(self.event_site):
            i = int(i)
            n = seen.get(i, 0)
            seen[i] = n + 1
            if sites[i] not in pinned:
                out[(sites[i], n)] = float(self.b[q])
        return out

    def terminal_interior(self) -> dict[Site, float]:
        sites = self.region.sites
        pinned = set(self.region.pinned)
        n = len(sites)
        return {sites[j]: float(self.mass[j]) for j in range(n)
                if self.mass[j] != 0.0 and sites[j] not in pinned}

    def terminal_absorbed(self, k: Kernel) -> dict[Site, float]:
        geo = geometry(k, self.region)
        out = {s: float(self.mass[geo.index_of(s)]) for s in self.region.pinned
               if self.mass[geo.index_of(s)] != 0.0}
        for q, s in enumerate(geo.shell):
            if self.mass[geo.n + q] != 0.0:
                out[s] = float(self.mass[geo.n + q])
        return out

    def total_mass(self) -> float:
        return math.fsum(self.mass.tolist())

    def to_json(self, k: Kernel) -> str:
        doc = {
            "anchor": list(self.anchor), "t": self.t, "s": self.s,
            "epochWeights": [{"site": list(s), "n": n, "b": b}
                             for (s, n), b in sorted(self.epoch_weights().items())],
            "terminalInterior": [{"site": list(s), "mass": m}
                                 for s, m in sorted(self.terminal_interior().items())],
            "terminalAbsorbed": [{"site": list(s), "mass": m}
                                 for s, m in sorted(self.terminal_absorbed(k).items())],
        }
        return json.dumps(doc)


def _stream_id(ev: EventStream) -> tuple:
    return (ev.seed, ev.window, len(ev), ev.region)


def _on_region(events: EventStream, region: Region) -> EventStream:
    return events if events.region == region else events.restrict(region)


def _check_window(events: EventStream, s: float, t: float) -> None:
    if not (events.window[0] <= s <= t <= events.window[1]):
        raise WindowMismatch(f"[{s}, {t}] not inside stream window {events.window}")


def backward_weights(events: EventStream, k: Kernel, region: Region, i: Sequence[int],
                     t: float, s: float) -> DualWeights:
    """Scan events in (s, t] backwards from a point mass at ``i``."""
    i = tuple(int(c) for c in i)
    if not region.contains(i):
        raise AnchorOutsideCarrier(f"anchor {i} not in carrier")
    ev = _on_region(events, region)
    _check_window(ev, s, t)
    geo = geometry(k, region)
    lo, hi = ev.window_slice(s, t)
    mass = np.zeros(geo.n + geo.m)
    mass[geo.index_of(i)] = 1.0
    b = K.backward(mass, ev.site, lo, hi, geo.nbr, geo.w, geo.pinned)
    return DualWeights(i, float(t), float(s), region, lo, hi, _stream_id(ev), b, mass,
                       ev.site[lo:hi].copy())


def dual_height(weights: DualWeights, events: EventStream, k: Kernel, region: Region,
                zeta: HeightField) -> float:
    """Noise sum weighted by b, plus terminal mass against zeta inside and gamma outside."""
    ev = _on_region(events, region)
    if _stream_id(ev) != weights.stream_id or weights.region != region:
        raise StreamMismatch("weights were computed on a different stream or region")
    geo = geometry(k, region)
    ext = geo.extended_values(zeta)
    ext[geo.pinned.nonzero()[0]] = 0.0
    noise = k.sigma * math.fsum((ev.eps[weights.lo:weights.hi] * weights.b).tolist())
    return noise + math.fsum((weights.mass * ext).tolist())


def dual_heights_all(events: EventStream, k: Kernel, region: Region, zeta: HeightField,
                     s: float | None = None, t: float | None = None) -> np.ndarray:
    """Dual heights at every carrier site at once (matrix backward pass)."""
    ev = _on_region(events, region)
    s = ev.window[0] if s is None else s
    t = ev.window[1] if t is None else t
    _check_window(ev, s, t)
    geo = geometry(k, region)
    lo, hi = ev.window_slice(s, t)
    mass = np.zeros((geo.n + geo.m, geo.n))
    mass[np.arange(geo.n), np.arange(geo.n)] = 1.0
    b = K.backward_all(mass, ev.site, lo, hi, geo.nbr, geo.w, geo.pinned)
    ext = geo.extended_values(zeta)
    ext[geo.pinned.nonzero()[0]] = 0.0
    return k.sigma * (ev.eps[lo:hi] @ b) + ext @ mass


def terminal_interior_masses(events: EventStream, k: Kernel, region: Region,
                             s: float | None = None, t: float | None = None) -> np.ndarray:
    """Walk mass still on non-pinned carrier sites at time s, per anchor site."""
    ev = _on_region(events, region)
    s = ev.window[0] if s is None else s
    t = ev.window[1] if t is None else t
    _check_window(ev, s, t)
    geo = geometry(k, region)
    lo, hi = ev.window_slice(s, t)
    mass = np.zeros((geo.n + geo.m, geo.n))
    mass[np.arange(geo.n), np.arange(geo.n)] = 1.0
    K.backward_all(mass, ev.site, lo, hi, geo.nbr, geo.w, geo.pinned)
    return mass[:geo.n][~geo.pinned].sum(axis=0)


def representation_residual(events: EventStream, k: Kernel, region: Region, zeta: HeightField,
                            i: Sequence[int], s: float, t: float) -> float:
    """|forward value at i - dual height at i| on the window [s, t]."""
    ev = _on_region(events, region)
    _check_window(ev, s, t)
    sub = ev.restrict(window=(s, t))
    fwd = evolve(sub, k, region, zeta).final[tuple(i)]
    w = backward_weights(ev, k, region, i, t, s)
    return abs(fwd - dual_height(w, ev, k, region, zeta))


def representation_residuals(events: EventStream, k: Kernel, region: Region,
                             zeta: HeightField) -> np.ndarray:
    """Per-site residuals over the whole stream window, via the matrix pass."""
    ev = _on_region(events, region)
    fwd = evolve(ev, k, region, zeta).final.values
    return np.abs(fwd - dual_heights_all(ev, k, region, zeta))


def sampled_path_height(events: EventStream, k: Kernel, region: Region, zeta: HeightField,
                        i: Sequence[int], s: float, t: float) -> float:
    """Dual height along one backward path drawn from the jump marks.

    Demonstration only: its conditional mean given the event times and noises
    is :func:`dual_height`; it is not part of any exact check.
    """
    if region.boundary != "fixed":
        raise UnsupportedRegion("jump marks describe the unconditioned kernel")
    ev = _on_region(events, region)
    _check_window(ev, s, t)
    geo = geometry(k, region)
    lo, hi = ev.window_slice(s, t)
    targets = geo.nbr[ev.site, ev.jump]
    acc, end = K.sampled_path(geo.index_of(tuple(i)), ev.site, ev.eps, targets, lo, hi,
                              geo.n, geo.pinned)
    ext = geo.extended_values(zeta)
    ext[geo.pinned.nonzero()[0]] = 0.0
    return k.sigma * acc + ext[end]


@dataclass(frozen=True)
class MartingaleRun:
    """Flat-start dual heights on nested windows, one stream per replica.

    ``heights[r, m]`` is the value at the anchor for window ``s_grid[m]``;
    ``weight_sq[r, m]`` is the sum of squared weights on that window (the
    conditional variance given the event times).
    """

    s_grid: np.ndarray
    heights: np.ndarray
    weight_sq: np.ndarray

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.heights, axis=1)

    def to_csv(self, path) -> None:
        inc = self.increments
        with open(path, "w") as fh:
            fh.write("replica,m,increment\n")
            for r in range(inc.shape[0]):
                for m in range(inc.shape[1]):
                    fh.write(f"{r},{m},{inc[r, m]!r}\n")


def _window_prefix(ev: EventStream, b: np.ndarray, lo: int, hi: int, t: float,
                   s_grid: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    # scan order is decreasing time, so window [t - s_m, t] is a prefix of it
    eps = ev.eps[lo:hi][::-1]
    bb = b[::-1]
    cs = np.concatenate([[0.0], np.cumsum(sigma * eps * bb)])
    cq = np.concatenate([[0.0], np.cumsum(sigma * sigma * bb * bb)])
    times = ev.time[lo:hi][::-1]
    counts = np.array([np.searchsorted(-times, -(t - sm), side="left") for sm in s_grid])
    return cs[counts], cq[counts]


def _martingale_chunk(k, region, i, t, s_grid, seeds):
    geo = geometry(k, region)
    M = len(s_grid)
    h = np.empty((len(seeds), M))
    q = np.empty((len(seeds), M))
    a = geo.index_of(i)
    smax = float(s_grid[-1])
    for r, sd in enumerate(seeds):
        ev = generate_events(k, region, (t - smax, t), int(sd))
        mass = np.zeros(geo.n + geo.m)
        mass[a] = 1.0
        b = K.backward(mass, ev.site, 0, len(ev), geo.nbr, geo.w, geo.pinned)
        h[r], q[r] = _window_prefix(ev, b, 0, len(ev), t, s_grid, k.sigma)
    return h, q


def _split(seq, size):
    return [seq[j:j + size] for j in range(0, len(seq), size)]


def martingale_increments(k: Kernel, region: Region, i: Sequence[int], t: float,
                          s_grid: Sequence[float], replicas: int, seed: int) -> MartingaleRun:
    """Flat-start heights on the nested windows [t - s_m, t] of one stream per replica."""
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.ndim != 1 or s_grid.size == 0 or np.any(s_grid < 0) or np.any(np.diff(s_grid) <= 0):
        raise ValueError("s_grid must be non-empty, nonnegative and increasing")
    i = tuple(int(c) for c in i)
    if not region.contains(i):
        raise AnchorOutsideCarrier(f"anchor {i} not in carrier")
    seeds = derive_seeds(seed, replicas)
    parts = pmap(_martingale_chunk, [(k, region, i, t, s_grid, c) for c in _split(seeds, 500)])
    return MartingaleRun(s_grid, np.concatenate([p[0] for p in parts]),
                         np.concatenate([p[1] for p in parts]))


def _check_nested(regions: Sequence[Region]) -> None:
    for a, b in zip(regions, regions[1:]):
        if not set(a.sites) <= set(b.sites) or a.boundary != "fixed" or b.boundary != "fixed":
            raise NonNestedBoxes("regions must be increasing fixed-boundary carriers")


def nested_box_weights(events: EventStream, k: Kernel, regions: Sequence[Region],
                       i: Sequence[int], s: float, t: float) -> list[np.ndarray]:
    """Per-box weights aligned on the events of the smallest box.

    Entry ``m`` holds box ``m``'s weight at each event of ``regions[0]``.
    """
    _check_nested(regions)
    big = regions[-1]
    ev = _on_region(events, big)
    out = []
    base = ev.restrict(regions[0], window=(s, t))
    for reg in regions:
        sub = ev.restrict(reg, window=(s, t))
        w = backward_weights(sub, k, reg, i, t, s)
        times = sub.time[w.lo:w.hi]
        pos = np.searchsorted(times, base.time)
        if not np.array_equal(times[pos], base.time):
            raise StreamMismatch("nested streams do not share event times")
        out.append(w.b[pos])
    return out


@dataclass(frozen=True)
class NestedBoxRun:
    """Flat-start heights and squared-weight sums for nested boxes on shared streams."""

    heights: np.ndarray
    weight_sq: np.ndarray
    violations: int


def _nested_chunk(k, regions, i, s, t, seeds):
    M = len(regions)
    h = np.empty((len(seeds), M))
    q = np.empty((len(seeds), M))
    viol = 0
    for r, sd in enumerate(seeds):
        ev = generate_events(k, regions[-1], (s, t), int(sd))
        bs = nested_box_weights(ev, k, regions, i, s, t)
        for a, b in zip(bs, bs[1:]):
            viol += int(np.count_nonzero(a > b))
        for m, reg in enumerate(regions):
            sub = ev.restrict(reg)
            w = backward_weights(sub, k, reg, i, t, s)
            h[r, m] = k.sigma * float(sub.eps[w.lo:w.hi] @ w.b)
            q[r, m] = k.sigma ** 2 * float(w.b @ w.b)
    return h, q, viol


def nested_box_run(k: Kernel, regions: Sequence[Region], i: Sequence[int], s: float, t: float,
                   replicas: int, seed: int) -> NestedBoxRun:
    """Shared-stream comparison across nested boxes; counts weight-order violations."""
    _check_nested(regions)
    i = tuple(int(c) for c in i)
    seeds = derive_seeds(seed, replicas)
    parts = pmap(_nested_chunk, [(k, regions, i, s, t, c) for c in _split(seeds, 200)])
    return NestedBoxRun(np.concatenate([p[0] for p in parts]),
                        np.concatenate([p[1] for p in parts]),
                        sum(p[2] for p in parts))


@dataclass(frozen=True)
class CrossCovariance:
    mc_mean: float
    mc_stderr: float
    weight_mean: float
    weight_stderr: float


def cross_covariance(k: Kernel, small: Region, large: Region, i: Sequence[int],
                     j: Sequence[int], s: float, t: float, replicas: int,
                     seed: int) -> CrossCovariance:
    """Covariance of two flat-start dual heights on shared streams vs the weight overlap.

    The weight overlap sums b_small(i, .) * b_large(j, .) over shared events.
    """
    _check_nested([small, large])
    prod = np.empty(replicas)
    over = np.empty(replicas)
    for r, sd in enumerate(derive_seeds(seed, replicas)):
        ev = generate_events(k, large, (s, t), int(sd))
        sub = ev.restrict(small)
        wa = backward_weights(sub, k, small, i, t, s)
        wb = backward_weights(ev, k, large, j, t, s)
        ha = k.sigma * float(sub.eps[wa.lo:wa.hi] @ wa.b)
        hb = k.sigma * float(ev.eps[wb.lo:wb.hi] @ wb.b)
        prod[r] = ha * hb
        pos = np.searchsorted(ev.time, sub.time[wa.lo:wa.hi])
        over[r] = k.sigma ** 2 * float(wa.b @ wb.b[pos - wb.lo])
    n = replicas
    return CrossCovariance(float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(n)),
                           float(over.mean()), float(over.std(ddof=1) / math.sqrt(n)))
