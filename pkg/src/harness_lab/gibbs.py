"""Gaussian harmonic crystal on a finite box: Green's-function covariance,
exact sampling, the harness property, detailed balance and nested coupling."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as K
from ._parallel import derive_seeds, pmap
from .engine import generate_events, sample_batch, site_remap
from .errors import (
    AsymmetricKernel,
    DimensionMismatch,
    NegativeRadicand,
    NoEscape,
    NonGaussianNoise,
    NonNestedBoxes,
    RegionError,
    SelfLoopKernel,
    UnsupportedRegion,
)
from .lattice import HeightField, Kernel, Region, Site, geometry, validate_kernel

RADICAND_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GibbsModel:
    """Centered Gaussian law on ``free_sites`` with precision Q and covariance Sigma.

    ``dynamics`` names the jump dynamics the law is stationary for: ``standard``
    (heights, pinned sites at 0) or ``shift`` (heights seen from the origin).
    ``source`` is ``gibbs`` for the Green's-function model and ``lyapunov`` for
    a law obtained from the stationary covariance equation.
    """

    kernel: Kernel
    region: Region
    free_sites: tuple[Site, ...]
    precision: np.ndarray = field(repr=False)
    covariance: np.ndarray = field(repr=False)
    factor: np.ndarray = field(repr=False)
    dynamics: str = "standard"
    source: str = "gibbs"

    @property
    def n(self) -> int:
        return len(self.free_sites)

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Carrier-indexed arrays (zeros off the free sites) from free-site rows."""
        geo = geometry(self.kernel, self.region)
        idx = np.array([geo.index_of(s) for s in self.free_sites], dtype=np.int64)
        x = np.atleast_2d(x)
        out = np.zeros((x.shape[0], geo.n))
        out[:, idx] = x
        return out

    def to_json(self) -> str:
        return json.dumps({"freeSites": [list(s) for s in self.free_sites],
                           "covariance": self.covariance.ravel().tolist()})


def _free_sites(region: Region, exclude: Sequence[Site] = ()) -> tuple[Site, ...]:
    skip = set(region.pinned) | set(exclude)
    return tuple(s for s in region.sites if s not in skip)


def _transfer(k: Kernel, region: Region, free: Sequence[Site]) -> np.ndarray:
    """Kernel (renormalized in free mode) restricted to ``free``; other mass dropped."""
    geo = geometry(k, region)
    pos = {s: q for q, s in enumerate(free)}
    P = np.zeros((len(free), len(free)))
    for q, s in enumerate(free):
        i = geo.index_of(s)
        for c in range(geo.nbr.shape[1]):
            j = geo.nbr[i, c]
            if geo.w[i, c] == 0 or j >= geo.n:
                continue
            r = pos.get(geo.sites[j])
            if r is not None:
                P[q, r] += geo.w[i, c]
    return P


def _flat_gamma(region: Region) -> None:
    if region.gamma is not None and any(v != 0.0 for _, v in region.gamma):
        raise RegionError("the Gaussian model takes the flat boundary only")


def build_model(k: Kernel, region: Region) -> GibbsModel:
    """Precision Q = I - P on the free sites and covariance Sigma = Q^{-1}."""
    validate_kernel(k)
    if not k.is_symmetric():
        raise AsymmetricKernel("kernel must satisfy p(0,o) = p(0,-o)")
    if k.self_mass != 0.0:
        raise SelfLoopKernel("kernel must have p(0,0) = 0")
    _flat_gamma(region)
    if region.boundary == "free" and not region.pinned:
        raise NoEscape("free boundary without a pinned site has no escape")
    free = _free_sites(region)
    P = _transfer(k, region, free)
    Q = np.eye(len(free)) - P
    if not np.allclose(Q, Q.T, atol=1e-12, rtol=0):
        raise AsymmetricKernel("the restricted kernel is not symmetric on this carrier")
    Q = 0.5 * (Q + Q.T)
    try:
        cf = la.cho_factor(Q, lower=True)
    except la.LinAlgError as exc:
        raise NoEscape("precision matrix is singular") from exc
    cov = la.cho_solve(cf, np.eye(len(free)))
    cov = 0.5 * (cov + cov.T)
    return GibbsModel(k, region, free, Q, cov, np.linalg.cholesky(cov))


def green_power_series(k: Kernel, region: Region, tol: float = 1e-15,
                       max_terms: int = 1_000_000) -> np.ndarray:
    """Sum over n of P^n on the free sites, truncated once terms fall below ``tol``."""
    free = _free_sites(region)
    P = _transfer(k, region, free)
    S = np.eye(len(free))
    term = np.eye(len(free))
    rho = max(abs(np.linalg.eigvals(P))) if len(free) else 0.0
    if rho >= 1.0:
        raise NoEscape("walk is not absorbed")
    for _ in range(max_terms):
        term = term @ P
        S += term
        if np.abs(term).max() * (1.0 / (1.0 - rho)) < tol:
            break
    return S


def _jump_system(k: Kernel, region: Region, free: Sequence[Site], shift: bool):
    """(A_k, b_k) pairs of the linear jump dynamics on the free sites."""
    geo = geometry(k, region)
    n = len(free)
    P = _transfer(k, region, free)
    pos = {s: q for q, s in enumerate(free)}
    systems = []
    for s in region.sites:
        if s in region.pinned:
            continue
        if shift and s not in pos:
            # origin update: every other site drops by the origin's new value
            i = geo.index_of(s)
            w0 = np.zeros(n)
            for c in range(geo.nbr.shape[1]):
                j = geo.nbr[i, c]
                if j < geo.n and geo.sites[j] in pos:
                    w0[pos[geo.sites[j]]] += geo.w[i, c]
            A = np.eye(n) - np.outer(np.ones(n), w0)
            b = -k.sigma * np.ones(n)
        else:
            q = pos[s]
            A = np.eye(n)
            A[q] = P[q]
            b = np.zeros(n)
            b[q] = k.sigma
        systems.append((A, b))
    return systems


def stationary_covariance(k: Kernel, region: Region, dynamics: str = "standard") -> tuple:
    """Exact stationary covariance of the jump dynamics (linear solve, small carriers).

    Returns (free_sites, C).  For ``shift`` the free sites omit the origin.
    """
    validate_kernel(k)
    _flat_gamma(region)
    if dynamics == "shift":
        origin = (0,) * region.d
        if region.pinned or region.boundary != "free":
            raise UnsupportedRegion("stationary shift dynamics needs a free box without pins")
        if not region.contains(origin):
            raise RegionError("origin not in carrier")
        free = _free_sites(region, exclude=[origin])
    elif dynamics == "standard":
        if region.boundary == "free" and not region.pinned:
            raise NoEscape("free boundary without a pinned site has no stationary law")
        free = _free_sites(region)
    else:
        raise ValueError(f"unknown dynamics {dynamics!r}")
    n = len(free)
    if n > 80:
        raise ValueError("stationary covariance solve is limited to 80 free sites")
    systems = _jump_system(k, region, free, dynamics == "shift")
    L = -len(systems) * sp.identity(n * n, format="csr")
    B = np.zeros((n, n))
    for A, b in systems:
        As = sp.csr_matrix(A)
        L = L + sp.kron(As, As, format="csr")
        B += np.outer(b, b)
    C = spla.spsolve(L.tocsc(), -B.ravel()).reshape(n, n)
    return free, 0.5 * (C + C.T)


def stationary_model(k: Kernel, region: Region, dynamics: str = "standard") -> GibbsModel:
    """Gaussian law with the exact stationary covariance of the jump dynamics.

    Serves regions and kernels outside :func:`build_model` (free boundaries,
    asymmetric kernels, shift dynamics).
    """
    free, C = stationary_covariance(k, region, dynamics)
    L = np.linalg.cholesky(C)
    Q = la.cho_solve((L, True), np.eye(len(free)))
    return GibbsModel(k, region, free, 0.5 * (Q + Q.T), C, L, dynamics, "lyapunov")


def _free_vector(model: GibbsModel, field) -> np.ndarray:
    if isinstance(field, HeightField):
        try:
            return np.array([field[s] for s in model.free_sites])
        except KeyError as exc:
            raise DimensionMismatch("field does not cover the free sites") from exc
    x = np.asarray(field, dtype=float)
    if x.shape != (model.n,):
        raise DimensionMismatch(f"expected {model.n} values, got {x.shape}")
    return x


def log_density(model: GibbsModel, field) -> float:
    """-x^T Q x / 2 up to the normalizing constant."""
    x = _free_vector(model, field)
    return -0.5 * float(x @ model.precision @ x)


def sample_field(model: GibbsModel, n: int, seed: int) -> np.ndarray:
    """``n`` independent draws as rows of an (n, free sites) array."""
    z = np.random.default_rng(seed).standard_normal((n, model.n))
    return z @ model.factor.T


def as_fields(model: GibbsModel, samples: np.ndarray) -> list[HeightField]:
    """Carrier height fields (pinned and reference sites at 0) from sample rows."""
    full = model.embed(samples)
    return [HeightField(model.region.sites, row) for row in full]


def conditional_mean_weights(model: GibbsModel, site: Sequence[int]) -> dict[Site, float]:
    """Weights of the other free sites in the conditional mean at ``site``."""
    site = tuple(int(c) for c in site)
    q = model.free_sites.index(site)
    row = model.precision[q]
    return {s: -row[j] / row[q] for j, s in enumerate(model.free_sites)
            if j != q and row[j] != 0.0}


# ------------------------------------------------------------ detailed balance

def probe_battery(model: GibbsModel, kind: str = "local") -> tuple[list[str], list]:
    """Names and (a, b) index pairs of probe functions on the free sites.

    ``None`` entries stand for the constant; ``(a, None)`` is a coordinate and
    ``(a, b)`` a product.  ``local`` keeps products within the kernel range.
    """
    names = ["1"]
    specs: list = [(None, None)]
    n = model.n
    for a in range(n):
        names.append(f"x{model.free_sites[a]}")
        specs.append((a, None))
    v = model.kernel.v
    for a in range(n):
        for b in range(a, n):
            sa, sb = model.free_sites[a], model.free_sites[b]
            if kind == "local" and max(abs(x - y) for x, y in zip(sa, sb)) > v:
                continue
            names.append(f"x{sa}*x{sb}")
            specs.append((a, b))
    return names, specs


def _features(x: np.ndarray, specs) -> np.ndarray:
    cols = []
    for a, b in specs:
        if a is None:
            cols.append(np.ones(x.shape[0]))
        elif b is None:
            cols.append(x[:, a])
        else:
            cols.append(x[:, a] * x[:, b])
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class BalanceTable:
    names: list
    asymmetry: np.ndarray
    stderr: np.ndarray

    @property
    def statistic(self) -> float:
        mask = self.stderr > 0
        iu = np.triu(np.ones_like(mask, dtype=bool), 1) & mask
        if not iu.any():
            return 0.0
        return float(np.max(np.abs(self.asymmetry[iu]) / self.stderr[iu]))


def detailed_balance_table(model: GibbsModel, k: Kernel, region: Region, u: float,
                           replicas: int, seed: int, probes: str = "local",
                           initial: GibbsModel | None = None) -> BalanceTable:
    """Asymmetries mean[f(x0) g(xu) - g(x0) f(xu)] with standard errors.

    ``initial`` overrides the law of x0 (for deliberate-violation controls);
    the probe battery and dynamics always come from ``model``.
    """
    if k.noise != "gaussian":
        warnings.warn("reversibility is only expected for Gaussian noise", NonGaussianNoise)
    names, specs = probe_battery(model, probes)
    P = len(specs)
    if u == 0:
        return BalanceTable(names, np.zeros((P, P)), np.zeros((P, P)))
    s_init, s_run = (int(x) for x in derive_seeds(seed, 2))
    start = model if initial is None else initial
    x0 = sample_field(start, replicas, s_init)
    xu = sample_batch(k, region, u, replicas, s_run, out_sites=model.free_sites,
                      x0=model.embed(x0), dynamics=model.dynamics)
    F0 = _features(x0, specs)
    Fu = _features(xu, specs)
    n = replicas
    m = (F0.T @ Fu - Fu.T @ F0) / n
    # second moment of d = f0 gu - g0 fu, expanded into matrix products
    s0, su, c = F0 ** 2, Fu ** 2, F0 * Fu
    ed2 = (s0.T @ su + su.T @ s0 - 2.0 * (c.T @ c)) / n
    var = np.maximum(ed2 - m ** 2, 0.0) * n / (n - 1)
    return BalanceTable(names, m, np.sqrt(var / n))


def detailed_balance_statistic(model: GibbsModel, k: Kernel, region: Region, u: float,
                               replicas: int, seed: int, probes: str = "local",
                               initial: GibbsModel | None = None) -> float:
    """Largest studentized asymmetry over the probe pairs."""
    return detailed_balance_table(model, k, region, u, replicas, seed, probes,
                                  initial).statistic


# --------------------------------------------------------------- nested coupling

@dataclass(frozen=True)
class NestedFields:
    """Coupled per-box values at the anchors.

    ``xi[m, a]`` is the coupled field on box ``m``; ``dual[m, a]`` is the box-m
    dual height driven by the stream's own noise; ``sq_weights[m, a]`` is the
    sum of squared box-m weights; ``telescoping`` is the largest deviation of
    the cumulative squared increments from the squared weights.
    """

    xi: np.ndarray
    dual: np.ndarray
    sq_weights: np.ndarray
    telescoping: float


def _check_boxes(boxes: Sequence[Region]) -> None:
    if not boxes:
        raise NonNestedBoxes("no boxes")
    for a, b in zip(boxes, boxes[1:]):
        if not set(a.sites) < set(b.sites):
            raise NonNestedBoxes("boxes must be strictly increasing")
    for b in boxes:
        if b.boundary != "fixed" or b.pinned:
            raise NonNestedBoxes("nested coupling uses fixed flat boxes without pins")
        _flat_gamma(b)


def coupled_nested_fields(k: Kernel, boxes: Sequence[Region], window, anchors: Sequence[Site],
                          seed: int) -> NestedFields:
    """One coupled draw of the per-box fields on a truncated window.

    Event times come from the largest box; box ``m`` uses the events inside it.
    Increments a^m = sqrt(b_m^2 - b_{m-1}^2) multiply independent Gaussians
    Z^m per event, and the box-m field sums the first ``m`` layers.
    """
    if k.noise != "gaussian":
        warnings.warn("the coupled fields match the box laws only for Gaussian noise",
                      NonGaussianNoise)
    _check_boxes(boxes)
    s, t = float(window[0]), float(window[1])
    big = boxes[-1]
    ev = generate_events(k, big, (s, t), seed)
    lo, hi = ev.window_slice(s, t)
    E = hi - lo
    M = len(boxes)
    A = len(anchors)
    B = np.zeros((M, A, E))
    for m, box in enumerate(boxes):
        geo = geometry(k, box)
        remap = site_remap(big, box)
        local = remap[ev.site[lo:hi]]
        keep = np.nonzero(local >= 0)[0]
        sub_site = local[keep]
        mass = np.zeros((geo.n + geo.m, A))
        for a, site in enumerate(anchors):
            mass[geo.index_of(site), a] = 1.0
        b = K.backward_all(mass, sub_site, 0, keep.size, geo.nbr, geo.w, geo.pinned)
        B[m][:, keep] = b.T
    sq = B ** 2
    rad = np.diff(sq, axis=0, prepend=0.0)
    if np.any(rad < -RADICAND_TOL):
        raise NegativeRadicand(f"weights decrease across boxes by {-rad.min():.3g}")
    inc = np.sqrt(np.maximum(rad, 0.0))
    tele = float(np.abs(np.cumsum(inc ** 2, axis=0) - sq).max()) if sq.size else 0.0
    z = np.random.default_rng(int(derive_seeds(seed, 1)[0])).standard_normal((M, E))
    W = np.cumsum(inc * z[:, None, :], axis=0)
    xi = k.sigma * W.sum(axis=2)
    dual = k.sigma * (B @ ev.eps[lo:hi])
    return NestedFields(xi, dual, k.sigma ** 2 * sq.sum(axis=2), tele)


@dataclass(frozen=True)
class NestedBatch:
    xi: np.ndarray          # (replicas, M, A)
    dual: np.ndarray
    sq_weights: np.ndarray
    telescoping: float


def coupled_nested_batch(k: Kernel, boxes: Sequence[Region], window, anchors: Sequence[Site],
                         replicas: int, seed: int) -> NestedBatch:
    seeds = derive_seeds(seed, replicas)

    def run(chunk):
        return [coupled_nested_fields(k, boxes, window, anchors, int(sd)) for sd in chunk]

    chunks = [(seeds[j:j + 100],) for j in range(0, replicas, 100)]
    res = [r for part in pmap(run, chunks) for r in part]
    return NestedBatch(np.stack([r.xi for r in res]), np.stack([r.dual for r in res]),
                       np.stack([r.sq_weights for r in res]),
                       max(r.telescoping for r in res))
