"""Harris construction: marked Poisson event streams and forward dynamics."""

from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from ._parallel import chunk_plan, pmap
from .errors import (
    InitialMismatch,
    InvalidWindow,
    OriginOutsideCarrier,
    StreamMismatch,
    UnsupportedRegion,
)
from .lattice import Geometry, HeightField, Kernel, Region, Site, geometry


def _check_window(window) -> tuple[float, float]:
    s, t = float(window[0]), float(window[1])
    if not (math.isfinite(s) and math.isfinite(t)) or t < s:
        raise InvalidWindow(f"bad window [{s}, {t}]")
    return s, t


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted events on a carrier.

    ``site`` indexes ``region.sites``, ``jump`` indexes the positive-weight
    offsets of ``kernel`` (``geometry(kernel, region).offsets``).  ``eps`` holds
    unit-variance noise; the update multiplies it by ``kernel.sigma``.
    """

    kernel: Kernel
    region: Region
    window: tuple[float, float]
    seed: int
    site: np.ndarray = field(repr=False)
    time: np.ndarray = field(repr=False)
    eps: np.ndarray = field(repr=False)
    jump: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.time.shape[0])

    @property
    def geometry(self) -> Geometry:
        return geometry(self.kernel, self.region)

    def jump_offsets(self) -> np.ndarray:
        return self.geometry.offsets[self.jump]

    def per_site(self) -> dict[Site, list[tuple[float, float, Site]]]:
        offs = self.geometry.offsets
        out: dict[Site, list] = {s: [] for s in self.region.sites}
        for i, t, e, u in zip(self.site, self.time, self.eps, self.jump):
            out[self.region.sites[i]].append((float(t), float(e), tuple(int(x) for x in offs[u])))
        return out

    def window_slice(self, s: float, t: float) -> tuple[int, int]:
        """Index range of events with time in (s, t]."""
        lo = int(np.searchsorted(self.time, s, side="right"))
        hi = int(np.searchsorted(self.time, t, side="right"))
        return lo, hi

    def restrict(self, region: Region | None = None, window=None) -> "EventStream":
        """Sub-stream on a smaller carrier and/or window; site keys are preserved."""
        region = self.region if region is None else region
        s, t = self.window if window is None else _check_window(window)
        if s < self.window[0] or t > self.window[1]:
            raise StreamMismatch("restricted window exceeds the stream window")
        lo = int(np.searchsorted(self.time, s, side="left"))
        hi = int(np.searchsorted(self.time, t, side="right"))
        idx = np.arange(lo, hi)
        if region != self.region:
            remap = site_remap(self.region, region)
            keep = remap[self.site[idx]] >= 0
            idx = idx[keep]
            new_site = remap[self.site[idx]]
        else:
            new_site = self.site[idx]
        return EventStream(self.kernel, region, (s, t), self.seed, new_site.copy(),
                           self.time[idx].copy(), self.eps[idx].copy(), self.jump[idx].copy())

    def to_jsonl(self, path: str | Path) -> None:
        offs = self.geometry.offsets
        with open(path, "w") as fh:
            header = {"kernel": self.kernel.to_json(), "region": self.region.to_json(),
                      "window": list(self.window), "seed": int(self.seed)}
            fh.write(json.dumps(header) + "\n")
            for i, t, e, u in zip(self.site, self.time, self.eps, self.jump):
                fh.write(json.dumps({"site": list(self.region.sites[i]), "time": float(t),
                                     "eps": float(e), "jump": offs[u].tolist()}) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "EventStream":
        with open(path) as fh:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        k = Kernel.from_json(header["kernel"])
        region = Region.from_json(header["region"])
        geo = geometry(k, region)
        jump_index = {tuple(o): c for c, o in enumerate(geo.offsets.tolist())}
        site = np.array([region.index[tuple(r["site"])] for r in rows], dtype=np.int64)
        time = np.array([r["time"] for r in rows], dtype=float)
        eps = np.array([r["eps"] for r in rows], dtype=float)
        jump = np.array([jump_index[tuple(r["jump"])] for r in rows], dtype=np.int64)
        return cls(k, region, tuple(header["window"]), int(header["seed"]), site, time, eps, jump)


@functools.lru_cache(maxsize=128)
def site_remap(big: Region, small: Region) -> np.ndarray:
    """Index in ``small`` of each site of ``big`` (-1 when absent)."""
    target = small.index
    remap = np.full(len(big.sites), -1, dtype=np.int64)
    for a, coords in enumerate(big.sites):
        b = target.get(coords)
        if b is not None:
            remap[a] = b
    if len(target) > int((remap >= 0).sum()):
        raise StreamMismatch("target carrier is not covered by the stream")
    remap.setflags(write=False)
    return remap


def _resolve_collisions(site, time, coords, seed, s, t) -> None:
    """Resample the later of two equal timestamps inside its own site's gap."""
    attempt = 0
    while True:
        order = np.argsort(time, kind="stable")
        dup = np.nonzero(np.diff(time[order]) == 0)[0]
        if dup.size == 0:
            return
        for q in dup:
            e = order[q + 1]
            i = site[e]
            same = np.nonzero(site == i)[0]
            before = time[same][time[same] < time[e]]
            after = time[same][time[same] > time[e]]
            a = before.max() if before.size else s
            b = after.min() if after.size else t
            key = K.site_key(np.uint64(seed), coords[i])
            u = K.keyed_uniform(key, K.RESAMPLE_BASE + attempt)
            time[e] = a + (b - a) * u
            attempt += 1


def generate_events(k: Kernel, region: Region, window, seed: int) -> EventStream:
    """Rate-1 marked Poisson events per carrier site on ``window``.

    Draws are keyed by (seed, site coordinates), so a site's events do not
    depend on the rest of the carrier.
    """
    s, t = _check_window(window)
    geo = geometry(k, region)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    cum = np.cumsum(geo.probs)
    cum[-1] = 1.0
    counts = K.count_events(geo.coords, np.uint64(seed), s, t)
    site, time, eps, jump = K.fill_events(geo.coords, np.uint64(seed), s, t, counts, cum,
                                          K.NOISE_CODES[k.noise])
    _resolve_collisions(site, time, geo.coords, seed, s, t)
    order = np.argsort(time, kind="stable")
    return EventStream(k, region, (s, t), seed, site[order], time[order], eps[order], jump[order])


@dataclass(frozen=True)
class Trajectory:
    times: tuple[float, ...]
    snapshots: tuple[HeightField, ...]
    final: HeightField

    def to_csv(self, path: str | Path) -> None:
        rows = [(t, h) for t, h in zip(self.times, self.snapshots)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = len(self.final.sites[0]) if self.final.sites else 0
            w.writerow(["time"] + [f"x{c}" for c in range(d)] + ["value"])
            for t, h in rows:
                for s, v in zip(h.sites, h.values):
                    w.writerow([repr(float(t))] + list(s) + [repr(float(v))])


def _stream_for(events: EventStream, region: Region) -> EventStream:
    if events.region == region:
        return events
    return events.restrict(region)


def _check_initial(zeta: HeightField, region: Region) -> None:
    if tuple(zeta.sites) != region.sites:
        raise InitialMismatch("initial field carrier differs from the region carrier")
    for s in region.pinned:
        if zeta[s] != 0.0:
            raise InitialMismatch(f"pinned site {s} must start at 0")


def _sample_array(sample_times, window) -> np.ndarray:
    st = np.sort(np.asarray(list(sample_times), dtype=float))
    if st.size and (st[0] < window[0] or st[-1] > window[1]):
        raise InvalidWindow("sample times outside the window")
    return st


def evolve(events: EventStream, k: Kernel, region: Region, zeta: HeightField,
           variant: str = "standard", sample_times: Sequence[float] = ()) -> Trajectory:
    """Apply every event in time order; pinned-site events are skipped."""
    if variant not in ("standard", "no-noise"):
        raise ValueError(f"unknown variant {variant!r}")
    if region.boundary == "free" and not region.pinned:
        raise UnsupportedRegion("free boundary dynamics needs a pinned site")
    _check_initial(zeta, region)
    ev = _stream_for(events, region)
    geo = geometry(k, region)
    st = _sample_array(sample_times, ev.window)
    ext = geo.extended_values(zeta)
    snaps = np.empty((st.size, geo.n))
    sigma = k.sigma if variant == "standard" else 0.0
    K.forward(ext, ev.site, ev.time, ev.eps, geo.nbr, geo.w, geo.pinned, sigma, st, snaps)
    return Trajectory(tuple(st.tolist()), tuple(HeightField(geo.sites, v) for v in snaps),
                      HeightField(geo.sites, ext[:geo.n]))


def evolve_seen_from_origin(events: EventStream, k: Kernel, region: Region, zeta: HeightField,
                            sample_times: Sequence[float] = ()) -> Trajectory:
    """Heights relative to the origin; an origin update shifts every other site."""
    origin = (0,) * region.d
    if not region.contains(origin):
        raise OriginOutsideCarrier("origin not in carrier")
    if region.pinned:
        raise UnsupportedRegion("seen-from-origin dynamics takes no pinned sites")
    _check_initial(zeta, region)
    if zeta[origin] != 0.0:
        raise InitialMismatch("zeta(0) must be 0")
    ev = _stream_for(events, region)
    geo = geometry(k, region)
    st = _sample_array(sample_times, ev.window)
    ext = geo.extended_values(zeta)
    snaps = np.empty((st.size, geo.n))
    K.forward_shift(ext, ev.site, ev.time, ev.eps, geo.nbr, geo.w, geo.index_of(origin),
                    k.sigma, st, snaps)
    return Trajectory(tuple(st.tolist()), tuple(HeightField(geo.sites, v) for v in snaps),
                      HeightField(geo.sites, ext[:geo.n]))


def sample_batch(k: Kernel, region: Region, u: float, replicas: int, seed: int,
                 out_sites: Sequence[Site] | None = None, x0: np.ndarray | None = None,
                 dynamics: str = "standard") -> np.ndarray:
    """Values at ``out_sites`` after time ``u`` for independent replicas.

    Uses the superposed clock (equal in law to per-site clocks).  ``x0`` gives
    per-replica carrier values (default flat 0).  Returns (replicas, n_out).
    """
    if dynamics not in ("standard", "shift"):
        raise ValueError(f"unknown dynamics {dynamics!r}")
    if u < 0:
        raise InvalidWindow("u must be >= 0")
    geo = geometry(k, region)
    shift = dynamics == "shift"
    origin = -1
    if shift:
        o = (0,) * region.d
        if not region.contains(o):
            raise OriginOutsideCarrier("origin not in carrier")
        if region.pinned:
            raise UnsupportedRegion("seen-from-origin dynamics takes no pinned sites")
        origin = geo.index_of(o)
    elif region.boundary == "free" and not region.pinned:
        raise UnsupportedRegion("free boundary dynamics needs a pinned site")
    sites = region.sites if out_sites is None else out_sites
    out_idx = np.array([geo.index_of(s) for s in sites], dtype=np.int64)
    if x0 is None:
        x0 = np.zeros((replicas, geo.n))
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape != (replicas, geo.n):
        raise InitialMismatch(f"x0 must have shape {(replicas, geo.n)}")
    code = K.NOISE_CODES[k.noise]
    jobs = []
    start = 0
    for size, cseed in chunk_plan(replicas, seed):
        jobs.append((x0[start:start + size], geo.gamma, geo.nbr, geo.w, geo.pinned, k.sigma,
                     code, float(u), shift, origin, out_idx, cseed))
        start += size
    parts = pmap(K.batch_evolve, jobs)
    return np.concatenate(parts, axis=0) if parts else np.empty((0, len(out_idx)))
