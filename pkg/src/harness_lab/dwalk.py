"""The symmetrized difference walk and the variance integrals it yields.

Two backends: Monte Carlo paths, and uniformization on a truncated box whose
states are lumped under the lattice symmetries that preserve the jump rates.
Infinite-horizon completions use the Green's function and potential kernel
of the base walk.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import integrate, special, stats

from . import _kernels as K
from ._parallel import chunk_plan, pmap
from .errors import AsymmetricKernel, SelfLoopKernel, TruncationTooSmall
from .lattice import Kernel, Site, validate_kernel

Offset = tuple[int, ...]


def _zero(d: int) -> Offset:
    return (0,) * d


@dataclass(frozen=True)
class DWalkLaw:
    """Jump rates of the difference walk away from and at the origin."""

    kernel: Kernel
    off_site: tuple[tuple[Offset, float], ...]
    at_origin: tuple[tuple[Offset, float], ...]

    @classmethod
    def from_kernel(cls, k: Kernel) -> "DWalkLaw":
        validate_kernel(k)
        p = {o: w for o, w in k.weights if w > 0}
        off: dict[Offset, float] = {}
        for o, w in p.items():
            neg = tuple(-x for x in o)
            off[o] = off.get(o, 0.0) + w
            off[neg] = off.get(neg, 0.0) + w
        off.pop(_zero(k.d), None)
        mu: dict[Offset, float] = {}
        for a, wa in p.items():
            for b, wb in p.items():
                # p(0,a) p(0,a+j) with a+j = b
                j = tuple(y - x for x, y in zip(a, b))
                mu[j] = mu.get(j, 0.0) + wa * wb
        return cls(k, tuple(sorted(off.items())), tuple(sorted(mu.items())))

    @property
    def d(self) -> int:
        return self.kernel.d

    @property
    def off_rate(self) -> float:
        return math.fsum(r for _, r in self.off_site)

    @property
    def origin_rate(self) -> float:
        """Rate of actually leaving the origin (the self-mass is a no-op)."""
        z = _zero(self.d)
        return math.fsum(r for o, r in self.at_origin if o != z)

    @property
    def jump_range(self) -> int:
        offs = [o for o, _ in self.off_site] + [o for o, _ in self.at_origin]
        return max((max(map(abs, o)) for o in offs), default=0)

    def coordinate_rate(self) -> float:
        """Largest per-coordinate second moment of the jump rates."""
        best = 0.0
        for table in (self.off_site, self.at_origin):
            for c in range(self.d):
                best = max(best, math.fsum(r * o[c] ** 2 for o, r in table))
        return best


def d_jump_distribution(law: DWalkLaw, state: Sequence[int]) -> dict[Offset, float]:
    """Rate table at ``state``; at the origin it is a probability law fired at rate 1."""
    if any(int(c) != 0 for c in state):
        return dict(law.off_site)
    return dict(law.at_origin)


class Bound(NamedTuple):
    """A computed value with its error: a standard error (Monte Carlo) or a
    guaranteed truncation bound (uniformization)."""

    value: float
    error: float


@dataclass(frozen=True)
class MonteCarlo:
    replicas: int = 10_000
    seed: int = 0


@dataclass(frozen=True)
class Uniformization:
    radius: int | None = None
    tol: float = 1e-6


# ---------------------------------------------------------------- uniformization

def _signed_permutations(d: int):
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            m = np.zeros((d, d), dtype=np.int64)
            for r, (c, s) in enumerate(zip(perm, signs)):
                m[r, c] = s
            yield m


def symmetry_group(law: DWalkLaw) -> list[np.ndarray]:
    """Signed permutations preserving both rate tables."""
    off = dict(law.off_site)
    org = dict(law.at_origin)
    group = []
    for g in _signed_permutations(law.d):
        ok = all(abs(off.get(tuple((g @ np.array(o)).tolist()), 0.0) - r) <= 1e-14
                 for o, r in off.items())
        ok = ok and all(abs(org.get(tuple((g @ np.array(o)).tolist()), 0.0) - r) <= 1e-14
                        for o, r in org.items())
        if ok:
            group.append(g)
    return group


class _Lumped:
    """Truncated, symmetry-lumped uniformized chain with an absorbing lost state."""

    def __init__(self, law: DWalkLaw, radius: int):
        d = law.d
        R = radius
        self.radius = R
        group = symmetry_group(law)
        flips = all(any(np.array_equal(g, np.diag(s)) for g in group)
                    for s in itertools.product((1, -1), repeat=d))
        if flips:
            self._perms = [g for g in group if np.all(g >= 0)]
            self._abs = True
            axis = np.arange(R + 1)
        else:
            self._perms = group
            self._abs = False
            axis = np.arange(-R, R + 1)
        self._base = (2 * R + 1) ** np.arange(d, dtype=np.int64)
        grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
        codes = self._encode(grid)
        canon = self.canonical_codes(grid)
        reps = grid[codes == canon]
        self.codes = codes[codes == canon]
        order = np.argsort(self.codes)
        self.codes = self.codes[order]
        self.reps = reps[order]
        n = len(self.reps)
        self.n = n
        self.lost = n
        self.target = self.index_of(np.zeros((1, d), dtype=np.int64))[0]
        is0 = np.all(self.reps == 0, axis=1)
        rows, cols, vals = [], [], []
        z = _zero(d)
        for table, src in ((law.off_site, np.nonzero(~is0)[0]),
                           (law.at_origin, np.nonzero(is0)[0])):
            for o, rate in table:
                if o == z or rate == 0.0 or src.size == 0:
                    continue
                y = self.reps[src] + np.array(o, dtype=np.int64)
                out = np.abs(y).max(axis=1) > R
                idx = np.full(src.size, self.lost, dtype=np.int64)
                if np.any(~out):
                    idx[~out] = self.index_of(y[~out])
                rows.append(src)
                cols.append(idx)
                vals.append(np.full(src.size, rate))
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        Q = sp.coo_matrix((vals, (rows, cols)), shape=(n + 1, n + 1)).tocsr()
        out_rate = np.asarray(Q.sum(axis=1)).ravel()
        self.rate = max(float(out_rate.max()), 1e-300)
        self.K = (sp.identity(n + 1, format="csr")
                  + (Q - sp.diags(out_rate)) / self.rate).tocsr()

    def _encode(self, x: np.ndarray) -> np.ndarray:
        return (x + self.radius) @ self._base

    def canonical_codes(self, x: np.ndarray) -> np.ndarray:
        y = np.abs(x) if self._abs else x
        best = None
        for g in self._perms:
            c = self._encode(y @ g.T)
            best = c if best is None else np.minimum(best, c)
        return best

    def index_of(self, x: np.ndarray) -> np.ndarray:
        c = self.canonical_codes(np.asarray(x, dtype=np.int64))
        idx = np.searchsorted(self.codes, c)
        return idx

    def series(self, starts: np.ndarray, steps: int) -> tuple[np.ndarray, np.ndarray]:
        """a[n, q] = P(at origin after n steps | start q); lost[n, q] likewise."""
        f = np.zeros(self.n + 1)
        f[self.target] = 1.0
        g = np.zeros(self.n + 1)
        g[self.lost] = 1.0
        a = np.empty((steps, len(starts)))
        lost = np.empty((steps, len(starts)))
        for n in range(steps):
            a[n] = f[starts]
            lost[n] = g[starts]
            f = self.K @ f
            g = self.K @ g
        return a, lost


@functools.lru_cache(maxsize=16)
def _lumped(law: DWalkLaw, radius: int) -> _Lumped:
    return _Lumped(law, radius)


def _bucket(u: float) -> float:
    return float(2.0 ** max(0, math.ceil(math.log2(max(u, 1.0)))))


def default_radius(law: DWalkLaw, u: float) -> int:
    """Six diffusive standard deviations plus two jump lengths."""
    return int(math.ceil(6.0 * math.sqrt(law.coordinate_rate() * u) + 2 * law.jump_range))


@dataclass(frozen=True)
class _Series:
    rate: float
    a: np.ndarray
    lost: np.ndarray

    def _weights(self, u: float):
        n = np.arange(self.a.shape[0])
        return stats.poisson.pmf(n, self.rate * u), stats.poisson.sf(n[-1], self.rate * u)

    def prob(self, u: float, q: int) -> Bound:
        if u == 0:
            return Bound(float(self.a[0, q]), 0.0)
        w, tail = self._weights(u)
        return Bound(float(w @ self.a[:, q]), float(w @ self.lost[:, q] + tail))

    def integral(self, tau: float, q: int) -> Bound:
        """Integral over [0, tau] of the occupancy; error bounded by tau * leakage(tau)."""
        if tau == 0:
            return Bound(0.0, 0.0)
        n = np.arange(self.a.shape[0])
        sf = stats.poisson.sf(n, self.rate * tau)
        val = float(sf @ self.a[:, q]) / self.rate
        leak = self.prob(tau, q).error
        return Bound(val, tau * leak)


@functools.lru_cache(maxsize=64)
def _series(law: DWalkLaw, starts: tuple[Offset, ...], u_cap: float, radius: int) -> _Series:
    chain = _lumped(law, radius)
    pts = np.array(starts, dtype=np.int64).reshape(len(starts), law.d)
    if np.any(np.abs(pts).max(axis=1) > radius):
        raise TruncationTooSmall("start outside the truncation box")
    idx = chain.index_of(pts)
    mu = chain.rate * u_cap
    steps = int(mu + 10.0 * math.sqrt(mu) + 30)
    a, lost = chain.series(idx, steps)
    return _Series(chain.rate, a, lost)


def _uniformized(law: DWalkLaw, starts: Sequence[Offset], u: float,
                 backend: Uniformization) -> _Series:
    cap = _bucket(u)
    radius = backend.radius if backend.radius is not None else default_radius(law, cap)
    radius = max(radius, max(max(map(abs, s)) for s in starts) + law.jump_range)
    return _series(law, tuple(tuple(int(c) for c in s) for s in starts), cap, radius)


def _checked(b: Bound, tol: float) -> Bound:
    if b.error > tol:
        raise TruncationTooSmall(f"leakage bound {b.error:.3g} exceeds tol {tol:.3g}")
    return b


# ------------------------------------------------------------------ Monte Carlo

def _mc_tables(law: DWalkLaw):
    z = _zero(law.d)
    off = [(o, r) for o, r in law.off_site if r > 0]
    org = [(o, r) for o, r in law.at_origin if o != z and r > 0]

    def pack(items):
        if not items:
            return np.zeros((1, law.d), dtype=np.int64), np.ones(1), 0.0
        steps = np.array([o for o, _ in items], dtype=np.int64).reshape(len(items), law.d)
        rates = np.array([r for _, r in items])
        cum = np.cumsum(rates) / rates.sum()
        cum[-1] = 1.0
        return steps, cum, float(rates.sum())

    return pack(off) + pack(org)


def mc_paths(law: DWalkLaw, start: Sequence[int], grid: Sequence[float],
             backend: MonteCarlo) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per grid time: hit fraction, mean time at 0 and its standard error."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0) or np.any(grid < 0):
        raise ValueError("grid must be sorted and nonnegative")
    off_s, off_c, off_r, org_s, org_c, org_r = _mc_tables(law)
    st = np.array(start, dtype=np.int64)
    jobs = [(st, off_s, off_c, off_r, org_s, org_c, org_r, grid, n, sd)
            for n, sd in chunk_plan(backend.replicas, backend.seed)]
    parts = pmap(K.dwalk_paths, jobs)
    hits = sum(p[0] for p in parts)
    occ = sum(p[1] for p in parts)
    occ2 = sum(p[2] for p in parts)
    n = backend.replicas
    mean = occ / n
    var = np.maximum(occ2 / n - mean ** 2, 0.0) * n / max(n - 1, 1)
    return hits / n, mean, np.sqrt(var / n)


# ------------------------------------------------------------------- public API

def occupancy_probability(law: DWalkLaw, i: Sequence[int], u: float, backend) -> Bound:
    """P(D^i_u = 0), with a binomial standard error or a leakage bound."""
    i = tuple(int(c) for c in i)
    if u < 0:
        raise ValueError("u must be >= 0")
    if u == 0:
        return Bound(1.0 if not any(i) else 0.0, 0.0)
    if isinstance(backend, MonteCarlo):
        frac, _, _ = mc_paths(law, i, [u], backend)
        p = float(frac[0])
        return Bound(p, math.sqrt(max(p * (1 - p), 0.0) / backend.replicas))
    ser = _uniformized(law, [i], u, backend)
    return _checked(ser.prob(u, 0), backend.tol)


def window_variance(law: DWalkLaw, tau: float, backend) -> Bound:
    """Expected time at the origin on [0, tau] for the walk started there."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau == 0:
        return Bound(0.0, 0.0)
    z = _zero(law.d)
    if isinstance(backend, MonteCarlo):
        _, mean, se = mc_paths(law, z, [tau], backend)
        return Bound(float(mean[0]), float(se[0]))
    ser = _uniformized(law, [z], tau, backend)
    return _checked(ser.integral(tau, 0), backend.tol)


def difference_variance(law: DWalkLaw, i: Sequence[int], tau: float, backend) -> Bound:
    """Twice the integral over [0, tau] of P(D^0_u = 0) - P(D^i_u = 0)."""
    i = tuple(int(c) for c in i)
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau == 0 or not any(i):
        return Bound(0.0, 0.0)
    z = _zero(law.d)
    if isinstance(backend, MonteCarlo):
        _, m0, se0 = mc_paths(law, z, [tau], backend)
        other = MonteCarlo(backend.replicas, backend.seed + 1)
        _, mi, sei = mc_paths(law, i, [tau], other)
        return Bound(2.0 * float(m0[0] - mi[0]), 2.0 * math.hypot(se0[0], sei[0]))
    ser = _uniformized(law, [z, i], tau, backend)
    a = _checked(ser.integral(tau, 0), backend.tol)
    b = _checked(ser.integral(tau, 1), backend.tol)
    return Bound(2.0 * (a.value - b.value), 2.0 * (a.error + b.error))


def residual_tail(law: DWalkLaw, s: float, s_max: float, backend,
                  site: Sequence[int] | None = None) -> Bound:
    """Integral of the occupancy over [s, s_max].

    With ``site`` the difference version 2 * (P(D^0) - P(D^i)) is integrated.
    ``s_max = inf`` completes the tail exactly through :func:`green_at_origin`
    or :func:`potential_kernel` (symmetric kernels without self-loops).
    """
    if not 0 < s < s_max:
        raise ValueError("need 0 < s < s_max")
    if math.isinf(s_max):
        if site is None:
            total = green_at_origin(law.kernel)
            w = window_variance(law, s, backend)
        else:
            total = 2.0 * potential_kernel(law.kernel, site)
            w = difference_variance(law, site, s, backend)
        return Bound(total - w.value, w.error)
    if site is None:
        hi = window_variance(law, s_max, backend)
        lo = window_variance(law, s, backend)
    else:
        hi = difference_variance(law, site, s_max, backend)
        lo = difference_variance(law, site, s, backend)
    return Bound(hi.value - lo.value, hi.error + lo.error)


def occupancy_table(law: DWalkLaw, i: Sequence[int], u_grid: Sequence[float], backend,
                    path=None) -> np.ndarray:
    """Rows (u, P(D^0_u=0), P(D^i_u=0), error); optionally written as CSV."""
    rows = []
    for u in u_grid:
        a = occupancy_probability(law, _zero(law.d), u, backend)
        b = occupancy_probability(law, i, u, backend)
        rows.append((u, a.value, b.value, max(a.error, b.error)))
    table = np.array(rows, dtype=float)
    if path is not None:
        np.savetxt(path, table, delimiter=",", header="u,p0,pi,error", comments="")
    return table


# --------------------------------------------------------- infinite horizon

def _require_reversible(k: Kernel) -> None:
    if not k.is_symmetric():
        raise AsymmetricKernel("tail completion needs a symmetric kernel")
    if k.self_mass != 0.0:
        raise SelfLoopKernel("tail completion needs p(0,0) = 0")


def _axis_rates(k: Kernel) -> np.ndarray | None:
    """Per-axis one-sided weights if the kernel only jumps along the axes by 1."""
    q = np.zeros(k.d)
    for o, w in k.weights:
        if w == 0:
            continue
        nz = [c for c, x in enumerate(o) if x != 0]
        if len(nz) != 1 or abs(o[nz[0]]) != 1:
            return None
        q[nz[0]] = w
    return q


def _bessel_green(q: np.ndarray, i: Sequence[int]) -> float:
    active = q > 0
    rates = 2.0 * q[active]
    orders = np.abs(np.asarray(i))[active]

    def f(u):
        return float(np.prod(special.ive(orders, rates * u)))

    # split at 1 to help quad with the algebraic tail
    head, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    tail, _ = integrate.quad(f, 1.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)
    return head + tail


def _char(k: Kernel, theta: np.ndarray) -> float:
    return math.fsum(w * math.cos(float(np.dot(o, theta))) for o, w in k.weights if w > 0)


def green_at_origin(k: Kernel) -> float:
    """Expected visits to 0 of the kernel's walk (transient walks only)."""
    _require_reversible(k)
    q = _axis_rates(k)
    if q is not None and int((q > 0).sum()) >= 3:
        return _bessel_green(q, _zero(k.d))
    if k.d >= 3:
        f = lambda *th: 1.0 / max(1.0 - _char(k, np.array(th)), 1e-300)
        val, _ = integrate.nquad(f, [(-math.pi, math.pi)] * k.d, opts={"limit": 100})
        return val / (2 * math.pi) ** k.d
    raise ValueError("recurrent walk: the Green's function at 0 diverges")


def potential_kernel(k: Kernel, i: Sequence[int]) -> float:
    """a(i) = sum over n of (p^n(0,0) - p^n(0,i))."""
    _require_reversible(k)
    i = np.array(i, dtype=float)
    if not np.any(i):
        return 0.0
    q = _axis_rates(k)
    if q is not None and int((q > 0).sum()) >= 3:
        return _bessel_green(q, _zero(k.d)) - _bessel_green(q, i.astype(int))

    def f(*th):
        th = np.array(th)
        den = 1.0 - _char(k, th)
        if den <= 0:
            return 0.0
        return (1.0 - math.cos(float(th @ i))) / den

    if k.d == 1:
        val, _ = integrate.quad(f, -math.pi, math.pi, epsabs=1e-13, epsrel=1e-12,
                                points=[0.0], limit=200)
    else:
        val, _ = integrate.nquad(f, [(-math.pi, math.pi)] * k.d,
                                 opts={"limit": 200, "epsabs": 1e-11, "epsrel": 1e-10})
    return val / (2 * math.pi) ** k.d
