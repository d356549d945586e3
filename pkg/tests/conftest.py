"""Shared fixtures and slow-but-obvious reference implementations used as oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from harness_lab import HeightField, Kernel, Region
from harness_lab.lattice import free_site_kernel, p_average


def reference_forward(events, k: Kernel, region: Region, zeta: HeightField,
                      noise: bool = True) -> dict:
    """Event-by-event update through ``p_average`` on a plain dict."""
    field = dict(zeta.as_dict())
    pinned = set(region.pinned)
    for i, e in zip(events.site, events.eps):
        s = events.region.sites[i]
        if s not in field or s in pinned:
            continue
        h = HeightField(region.sites, np.array([field[x] for x in region.sites]))
        field[s] = p_average(k, h, region, s) + (k.sigma * float(e) if noise else 0.0)
    return field


def reference_shift(events, k: Kernel, region: Region, zeta: HeightField) -> dict:
    """Seen-from-origin update: the origin's new value is subtracted everywhere."""
    origin = (0,) * region.d
    field = dict(zeta.as_dict())
    gamma = {s: region.boundary_value(s) for s in region.shell(k)} \
        if region.boundary == "fixed" else {}
    for i, e in zip(events.site, events.eps):
        s = events.region.sites[i]
        if region.boundary == "free":
            acc = sum(w * field[t] for t, w in free_site_kernel(k, region, s).items())
        else:
            acc = 0.0
            for o, p in k.weights:
                t = tuple(a + b for a, b in zip(s, o))
                acc += p * (field[t] if t in field else gamma[t])
        acc += k.sigma * float(e)
        if s == origin:
            for t in field:
                if t != origin:
                    field[t] -= acc
            for t in gamma:
                gamma[t] -= acc
        else:
            field[s] = acc
    return field


def reference_backward(events, k: Kernel, region: Region, anchor, s: float, t: float):
    """Backward walk on dicts: returns (list of (event index, b), terminal mass)."""
    mass = {tuple(anchor): 1.0}
    pinned = set(region.pinned)
    out = []
    for q in range(len(events) - 1, -1, -1):
        tm = events.time[q]
        if not (s < tm <= t):
            continue
        j = events.region.sites[events.site[q]]
        if j in pinned or not region.contains(j):
            out.append((q, 0.0))
            continue
        b = mass.pop(j, 0.0)
        out.append((q, b))
        if b == 0.0:
            continue
        if region.boundary == "free":
            law = free_site_kernel(k, region, j)
        else:
            law = {}
            for o, p in k.weights:
                if p > 0:
                    x = tuple(a + c for a, c in zip(j, o))
                    law[x] = law.get(x, 0.0) + p
        for x, w in law.items():
            mass[x] = mass.get(x, 0.0) + b * w
    return out[::-1], mass


def reference_dual(events, k, region, zeta, anchor, s, t) -> float:
    weights, mass = reference_backward(events, k, region, anchor, s, t)
    pinned = set(region.pinned)
    noise = math.fsum(k.sigma * float(events.eps[q]) * b for q, b in weights)
    term = []
    for x, m in mass.items():
        if region.contains(x):
            term.append(0.0 if x in pinned else m * zeta[x])
        else:
            term.append(m * region.boundary_value(x))
    return noise + math.fsum(term)


@pytest.fixture
def nn1():
    return Kernel.nearest_neighbor(1)


@pytest.fixture
def nn2():
    return Kernel.nearest_neighbor(2)


@pytest.fixture
def nn3():
    return Kernel.nearest_neighbor(3)


@pytest.fixture
def range2():
    return Kernel.from_mapping(1, {1: 0.3, -1: 0.3, 2: 0.2, -2: 0.2})


def random_field(region: Region, seed: int) -> HeightField:
    z = np.random.default_rng(seed).normal(size=len(region.sites))
    for s in region.pinned:
        z[region.index[s]] = 0.0
    return HeightField(region.sites, z)


def random_gamma(region: Region, k: Kernel, seed: int) -> Region:
    shell = region.shell(k)
    vals = np.random.default_rng(seed).normal(size=len(shell))
    return region.with_gamma(dict(zip(shell, vals.tolist())))
