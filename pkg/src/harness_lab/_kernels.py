"""Compiled inner loops.

Random numbers for event streams come from a counter-based hash: every draw is
a pure function of (site key, counter), where the site key hashes the seed and
the site coordinates.  Streams are therefore independent of the carrier, of
iteration order and of thread scheduling.
"""

import math

import numpy as np
from numba import njit

NOISE_CODES = {"gaussian": 0, "uniform": 1, "rademacher": 2}

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_COORD_SHIFT = 1 << 31
_SQRT3 = math.sqrt(3.0)
_TWO_PI = 2.0 * math.pi
# counters at or above this value are reserved for collision resampling
RESAMPLE_BASE = 1 << 60


@njit(cache=True)
def mix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def site_key(seed, coords):
    h = mix64(np.uint64(seed))
    for c in range(coords.shape[0]):
        h = mix64(h ^ np.uint64(coords[c] + _COORD_SHIFT))
    return h


@njit(cache=True)
def keyed_uniform(key, counter):
    x = mix64(key ^ mix64(np.uint64(counter)))
    return ((x >> _S11) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _noise(key, n, code):
    u1 = keyed_uniform(key, 4 * n + 1)
    if code == 0:
        u2 = keyed_uniform(key, 4 * n + 2)
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)
    if code == 1:
        return _SQRT3 * (2.0 * u1 - 1.0)
    return -1.0 if u1 < 0.5 else 1.0


@njit(cache=True)
def _pick(cum, u):
    k = 0
    while k < cum.shape[0] - 1 and u >= cum[k]:
        k += 1
    return k


@njit(cache=True)
def count_events(coords, seed, s, t):
    n_sites = coords.shape[0]
    counts = np.zeros(n_sites, dtype=np.int64)
    for i in range(n_sites):
        key = site_key(seed, coords[i])
        T = s
        n = 0
        while True:
            T -= math.log(keyed_uniform(key, 4 * n))
            if T > t:
                break
            n += 1
        counts[i] = n
    return counts


@njit(cache=True)
def fill_events(coords, seed, s, t, counts, cum, noise_code):
    total = counts.sum()
    site = np.empty(total, dtype=np.int64)
    time = np.empty(total, dtype=np.float64)
    eps = np.empty(total, dtype=np.float64)
    jump = np.empty(total, dtype=np.int64)
    pos = 0
    for i in range(coords.shape[0]):
        key = site_key(seed, coords[i])
        T = s
        for n in range(counts[i]):
            T -= math.log(keyed_uniform(key, 4 * n))
            site[pos] = i
            time[pos] = T
            eps[pos] = _noise(key, n, noise_code)
            jump[pos] = _pick(cum, keyed_uniform(key, 4 * n + 3))
            pos += 1
    return site, time, eps, jump


@njit(cache=True)
def forward(ext, site, time, eps, nbr, w, pinned, sigma, sample_times, snaps):
    """In-place forward sweep over time-sorted events.

    ``snaps[k]`` receives the carrier values at ``sample_times[k]``.
    """
    n = nbr.shape[0]
    kk = nbr.shape[1]
    k = 0
    ns = sample_times.shape[0]
    for e in range(site.shape[0]):
        while k < ns and sample_times[k] < time[e]:
            snaps[k, :] = ext[:n]
            k += 1
        i = site[e]
        if pinned[i]:
            continue
        acc = 0.0
        for c in range(kk):
            acc += w[i, c] * ext[nbr[i, c]]
        ext[i] = acc + sigma * eps[e]
    while k < ns:
        snaps[k, :] = ext[:n]
        k += 1


@njit(cache=True)
def forward_shift(ext, site, time, eps, nbr, w, origin, sigma, sample_times, snaps):
    """Seen-from-origin sweep; shell entries hold boundary minus origin height."""
    n = nbr.shape[0]
    kk = nbr.shape[1]
    k = 0
    ns = sample_times.shape[0]
    for e in range(site.shape[0]):
        while k < ns and sample_times[k] < time[e]:
            snaps[k, :] = ext[:n]
            k += 1
        i = site[e]
        acc = 0.0
        for c in range(kk):
            acc += w[i, c] * ext[nbr[i, c]]
        acc += sigma * eps[e]
        if i == origin:
            for j in range(ext.shape[0]):
                if j != origin:
                    ext[j] -= acc
        else:
            ext[i] = acc
    while k < ns:
        snaps[k, :] = ext[:n]
        k += 1


@njit(cache=True)
def backward(mass, site, lo, hi, nbr, w, pinned):
    """Exact backward dynamic program over events ``lo..hi-1`` in decreasing order.

    ``mass`` (extended index space) is updated in place; returns the weight
    recorded at each event (0 at pinned-site events).
    """
    kk = nbr.shape[1]
    b = np.zeros(hi - lo, dtype=np.float64)
    for e in range(hi - 1, lo - 1, -1):
        j = site[e]
        if pinned[j]:
            continue
        m = mass[j]
        b[e - lo] = m
        if m != 0.0:
            mass[j] = 0.0
            for c in range(kk):
                mass[nbr[j, c]] += w[j, c] * m
    return b


@njit(cache=True)
def backward_all(mass, site, lo, hi, nbr, w, pinned):
    """Matrix version of :func:`backward`: ``mass`` is (n_ext, n_anchors)."""
    kk = nbr.shape[1]
    na = mass.shape[1]
    b = np.zeros((hi - lo, na), dtype=np.float64)
    for e in range(hi - 1, lo - 1, -1):
        j = site[e]
        if pinned[j]:
            continue
        for a in range(na):
            m = mass[j, a]
            b[e - lo, a] = m
            if m != 0.0:
                mass[j, a] = 0.0
                for c in range(kk):
                    mass[nbr[j, c], a] += w[j, c] * m
    return b


@njit(cache=True)
def sampled_path(anchor, site, eps, jump_target, lo, hi, n, pinned):
    """Follow one backward path using the jump marks; returns (noise sum, end index)."""
    pos = anchor
    acc = 0.0
    for e in range(hi - 1, lo - 1, -1):
        if pos >= n or pinned[pos]:
            break
        if site[e] == pos:
            acc += eps[e]
            pos = jump_target[e]
    return acc, pos


@njit(cache=True)
def _draw_noise(code):
    if code == 0:
        return np.random.standard_normal()
    if code == 1:
        return _SQRT3 * (2.0 * np.random.random() - 1.0)
    return -1.0 if np.random.random() < 0.5 else 1.0


@njit(cache=True, nogil=True)
def batch_evolve(x0, gamma, nbr, w, pinned, sigma, noise_code, u, shift, origin,
                 out_idx, seed):
    """Replica batch under the superposed clock: a Poisson(n u) event count,
    each event at a uniform site.

    Draws in law only; not keyed to site coordinates.  ``x0`` is (R, n) carrier
    values; returns (R, len(out_idx)) values at time ``u``.
    """
    np.random.seed(seed)
    R = x0.shape[0]
    n = nbr.shape[0]
    m = gamma.shape[0]
    kk = nbr.shape[1]
    out = np.empty((R, out_idx.shape[0]))
    ext = np.empty(n + m)
    for r in range(R):
        ext[:n] = x0[r]
        ext[n:] = gamma
        # only the number of events up to u matters, not their times
        events = np.random.poisson(n * u)
        for _ in range(events):
            i = min(int(np.random.random() * n), n - 1)
            if not pinned[i]:
                acc = 0.0
                for c in range(kk):
                    acc += w[i, c] * ext[nbr[i, c]]
                acc += sigma * _draw_noise(noise_code)
                if shift and i == origin:
                    for j in range(n + m):
                        if j != origin:
                            ext[j] -= acc
                else:
                    ext[i] = acc
        for q in range(out_idx.shape[0]):
            out[r, q] = ext[out_idx[q]]
    return out


@njit(cache=True, nogil=True)
def dwalk_paths(start, off_steps, off_cum, off_rate, org_steps, org_cum, org_rate,
                grid, replicas, seed):
    """Simulate D-walk paths; per grid time return hit counts and origin-time sums.

    Returns (hits, occ_sum, occ_sumsq) where occ is the time spent at 0 on [0, g].
    """
    np.random.seed(seed)
    G = grid.shape[0]
    d = start.shape[0]
    hits = np.zeros(G)
    occ_sum = np.zeros(G)
    occ_sq = np.zeros(G)
    x = np.empty(d, dtype=np.int64)
    tmax = grid[G - 1]
    for r in range(replicas):
        x[:] = start
        t = 0.0
        occ = 0.0
        g = 0
        while g < G:
            at0 = True
            for c in range(d):
                if x[c] != 0:
                    at0 = False
                    break
            rate = org_rate if at0 else off_rate
            if rate > 0.0:
                tn = t + np.random.exponential(1.0 / rate)
            else:
                tn = tmax + 1.0
            while g < G and grid[g] < tn:
                o = occ + (grid[g] - t if at0 else 0.0)
                if at0:
                    hits[g] += 1.0
                occ_sum[g] += o
                occ_sq[g] += o * o
                g += 1
            if g >= G:
                break
            if at0:
                occ += tn - t
                k = _pick(org_cum, np.random.random())
                for c in range(d):
                    x[c] += org_steps[k, c]
            else:
                k = _pick(off_cum, np.random.random())
                for c in range(d):
                    x[c] += off_steps[k, c]
            t = tn
    return hits, occ_sum, occ_sq
