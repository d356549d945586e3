"""Named, seeded experiments with pass/fail criteria and JSON/CSV reports."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from ._parallel import derive_seeds
from .dual import (
    martingale_increments,
    nested_box_run,
    representation_residuals,
    terminal_interior_masses,
)
from .dwalk import (
    DWalkLaw,
    MonteCarlo,
    Uniformization,
    difference_variance,
    green_at_origin,
    potential_kernel,
    residual_tail,
    window_variance,
)
from .engine import evolve, generate_events, sample_batch
from .errors import SchemaError, UnknownExperiment
from .gibbs import (
    GibbsModel,
    build_model,
    conditional_mean_weights,
    coupled_nested_batch,
    detailed_balance_table,
    green_power_series,
    sample_field,
    stationary_model,
)
from .lattice import NOISE_LAWS, HeightField, Kernel, Region, geometry, is_harmonic
from .stats import estimate, fit_power_law

SCHEMA_VERSION = 1

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["experiment", "kernel", "region", "seed"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"type": "string"},
        "kernel": {
            "type": "object",
            "required": ["d", "weights"],
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "weights": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "required": ["offset", "p"],
                    "properties": {"offset": {"type": "array", "items": {"type": "integer"}},
                                   "p": {"type": "number"}}}},
                "noise": {"enum": list(NOISE_LAWS)},
                "sigma": {"type": "number", "minimum": 0},
            },
        },
        "region": {
            "type": "object",
            "required": ["box"],
            "properties": {
                "box": {"type": "object", "required": ["lo", "hi"],
                        "properties": {"lo": {"type": "array", "items": {"type": "integer"}},
                                       "hi": {"type": "array", "items": {"type": "integer"}}}},
                "pinned": {"type": "array", "items": {"type": "array",
                                                      "items": {"type": "integer"}}},
                "boundary": {"enum": ["fixed", "free"]},
                "gamma": {"type": "array"},
                "exclude": {"type": "array"},
            },
        },
        "window": {"type": "number", "minimum": 0},
        "s_grid": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "replicas": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "backend": {
            "type": "object",
            "properties": {"kind": {"enum": ["uniformization", "mc"]},
                           "radius": {"type": ["integer", "null"]},
                           "tol": {"type": "number", "exclusiveMinimum": 0},
                           "replicas": {"type": "integer", "minimum": 1},
                           "seed": {"type": "integer", "minimum": 0}},
        },
        "tolerances": {"type": "object", "additionalProperties": {"type": "number"}},
        "params": {"type": "object"},
        "output": {"type": ["string", "null"]},
    },
}

DEFAULT_TOLERANCES = {"exact": 1e-9, "strict": 1e-12, "se": 3.0, "slope": 0.15}


@dataclass
class ExperimentConfig:
    experiment: str
    kernel: Kernel
    region: Region
    seed: int
    window: float = 1.0
    s_grid: list = field(default_factory=list)
    replicas: int = 0
    backend: dict = field(default_factory=lambda: {"kind": "uniformization"})
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    output: str | None = None

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise SchemaError(exc.message) from exc
        cfg = cls(experiment=doc["experiment"], kernel=Kernel.from_json(doc["kernel"]),
                  region=Region.from_json(doc["region"]), seed=int(doc["seed"]),
                  window=float(doc.get("window", 1.0)), s_grid=list(doc.get("s_grid", [])),
                  replicas=int(doc.get("replicas", 0)),
                  backend=dict(doc.get("backend", {"kind": "uniformization"})),
                  tolerances=dict(doc.get("tolerances", {})), params=dict(doc.get("params", {})),
                  output=doc.get("output"))
        cfg._check_sites()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {"experiment": self.experiment, "kernel": self.kernel.to_json(),
                "region": self.region.to_json(), "seed": self.seed, "window": self.window,
                "s_grid": self.s_grid, "replicas": self.replicas, "backend": self.backend,
                "tolerances": self.tolerances, "params": self.params, "output": self.output}

    def _check_sites(self) -> None:
        if self.kernel.d != self.region.d:
            raise SchemaError("kernel and region dimensions differ")
        for key in ("anchor", "site"):
            if key in self.params:
                s = tuple(self.params[key])
                if len(s) != self.region.d:
                    raise SchemaError(f"params.{key} has the wrong dimension")
                if key == "anchor" and not self.region.contains(s):
                    raise SchemaError(f"params.{key} {s} is outside the region")

    def tol(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))

    def uniformization(self) -> Uniformization:
        b = self.backend
        return Uniformization(b.get("radius"), float(b.get("tol", 1e-6)))

    def dwalk_backend(self):
        b = self.backend
        if b.get("kind", "uniformization") == "mc":
            return MonteCarlo(int(b.get("replicas", 10_000)), int(b.get("seed", self.seed)))
        return self.uniformization()

    def anchor(self) -> tuple:
        return tuple(self.params.get("anchor", (0,) * self.region.d))


@dataclass
class Outcome:
    criteria: list = field(default_factory=list)
    numbers: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def check(self, name: str, ok: bool, value: Any = None, threshold: Any = None) -> None:
        self.criteria.append({"name": name, "pass": bool(ok), "value": _plain(value),
                              "threshold": _plain(threshold)})

    def table(self, name: str, header: list, rows: list) -> None:
        self.tables[name] = (header, rows)


def _plain(x):
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    return x


@dataclass(frozen=True)
class _Entry:
    fn: Callable[[ExperimentConfig], Outcome]
    identity: str


REGISTRY: dict[str, _Entry] = {}


def register(name: str, identity: str):
    def deco(fn):
        REGISTRY[name] = _Entry(fn, identity)
        return fn
    return deco


def list_experiments() -> list[tuple[str, str]]:
    return [(k, v.identity) for k, v in sorted(REGISTRY.items())]


# ------------------------------------------------------------------ experiments

@register("representation-check",
          "forward sweep equals the exact backward-walk sum of noises and boundary terms")
def _representation(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    seeds = derive_seeds(cfg.seed, cfg.replicas)
    base = cfg.region
    d = base.d
    sides = [h - l + 1 for l, h in zip(base.lo, base.hi)]
    origin = (0,) * d
    rows = []
    worst = 0.0
    for r in range(cfg.replicas):
        noise = NOISE_LAWS[r % 3] if p.get("cycle_noise", True) else cfg.kernel.noise
        k = cfg.kernel.with_noise(noise)
        if p.get("random_box", True):
            side = [int(rng.integers(1, s + 1)) for s in sides]
            lo = tuple(-(x // 2) for x in side)
            hi = tuple(l + x - 1 for l, x in zip(lo, side))
        else:
            lo, hi = base.lo, base.hi
        pinned = ((origin,) if (r // 3) % 2 == 1 else ()) if p.get("cycle_pinned", True) \
            else base.pinned
        reg = Region(lo, hi, pinned=pinned, boundary="fixed")
        if p.get("random_gamma", True):
            shell = reg.shell(k)
            reg = reg.with_gamma({s: float(v) for s, v in zip(shell, rng.normal(size=len(shell)))})
        z = rng.normal(size=len(reg.sites))
        for s in reg.pinned:
            z[reg.index[s]] = 0.0
        zeta = HeightField(reg.sites, z)
        ev = generate_events(k, reg, (0.0, cfg.window), int(seeds[r]))
        res = float(representation_residuals(ev, k, reg, zeta).max())
        worst = max(worst, res)
        rows.append([r, noise, int(bool(reg.pinned)), len(reg.sites), len(ev), res])
    out.table("residuals", ["run", "noise", "pinned", "sites", "events", "max_residual"], rows)
    out.numbers["max_residual"] = worst
    out.check("max-residual", worst <= cfg.tol("exact"), worst, cfg.tol("exact"))
    return out


@register("martingale",
          "nested-window flat-start heights form a martingale with nondecreasing variance")
def _martingale(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    anchor = cfg.anchor()
    t = float(cfg.params.get("t", 0.0))
    z = cfg.tol("se")
    run = martingale_increments(k, reg, anchor, t, cfg.s_grid, cfg.replicas, cfg.seed)
    rows, worst = [], 0.0
    for m in range(run.increments.shape[1]):
        e = estimate(run.increments[:, m])
        zval = abs(e.mean) / e.stderr if e.stderr > 0 else 0.0
        worst = max(worst, zval)
        rows.append([m, cfg.s_grid[m], cfg.s_grid[m + 1], e.mean, e.stderr])
    out.table("increments", ["m", "s_from", "s_to", "mean", "stderr"], rows)
    out.check("increment-means", worst <= z, worst, z)
    sq = run.heights ** 2
    var_rows, dips = [], []
    for m in range(sq.shape[1]):
        var_rows.append([cfg.s_grid[m], float(sq[:, m].mean()), float(run.weight_sq[:, m].mean())])
    for m in range(sq.shape[1] - 1):
        e = estimate(sq[:, m + 1] - sq[:, m])
        dips.append(-e.mean / e.stderr if e.stderr > 0 else 0.0)
    out.table("window_variance", ["s", "empirical", "conditional"], var_rows)
    out.check("variance-nondecreasing-in-window", max(dips, default=0.0) <= z,
              max(dips, default=0.0), z)
    mono = bool(np.all(np.diff(run.weight_sq, axis=1) >= 0))
    out.check("conditional-variance-monotone-in-window", mono, mono, True)
    radii = cfg.params.get("box_radii")
    if radii:
        boxes = [Region.box(int(r), reg.d) for r in radii]
        s = float(cfg.params.get("box_window", cfg.s_grid[-1]))
        nb = nested_box_run(k, boxes, anchor, t - s, t, cfg.replicas, cfg.seed + 1)
        out.check("weight-order-violations", nb.violations == 0, nb.violations, 0)
        hs = nb.heights ** 2
        dips = []
        for m in range(hs.shape[1] - 1):
            e = estimate(hs[:, m + 1] - hs[:, m])
            dips.append(-e.mean / e.stderr if e.stderr > 0 else 0.0)
        out.check("variance-nondecreasing-in-box", max(dips) <= z, max(dips), z)
        mono = bool(np.all(np.diff(nb.weight_sq, axis=1) >= 0))
        out.check("conditional-variance-monotone-in-box", mono, mono, True)
        out.table("box_variance", ["radius", "empirical", "conditional"],
                  [[r, float(hs[:, m].mean()), float(nb.weight_sq[:, m].mean())]
                   for m, r in enumerate(radii)])
    return out


@register("window-variance",
          "flat-start variance equals the expected time the difference walk spends at 0")
def _window_variance(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    law = DWalkLaw.from_kernel(k)
    anchor = cfg.anchor()
    x = sample_batch(k, reg, cfg.window, cfg.replicas, cfg.seed, out_sites=[anchor])[:, 0]
    e = estimate(x ** 2)
    oracle = window_variance(law, cfg.window, cfg.dwalk_backend())
    scale = k.sigma ** 2
    zval = abs(e.mean - scale * oracle.value) / e.stderr
    out.numbers.update(mc=e.mean, mc_stderr=e.stderr, oracle=scale * oracle.value,
                       oracle_error=scale * oracle.error)
    out.check("mc-vs-oracle", zval <= cfg.tol("se"), zval, cfg.tol("se"))
    taus = cfg.params.get("limit_taus")
    if taus:
        vals = [window_variance(law, float(tau), cfg.uniformization()).value for tau in taus]
        inc = np.diff(vals)
        limit = green_at_origin(k) if k.d >= 3 and k.is_symmetric() else math.inf
        ok = bool(np.all(inc > 0) and np.all(np.diff(inc) < 0) and vals[-1] < limit)
        out.table("limit", ["tau", "value"], [[t_, v] for t_, v in zip(taus, vals)])
        out.numbers["limit"] = limit
        out.check("increasing-and-converging", ok, vals, limit)
    return out


def _gibbs_limit(k: Kernel, site: tuple, radii: list) -> float:
    """Pinned-box variance at ``site`` extrapolated in the box radius (error ~ 1/(m+1))."""
    vals = []
    for m in radii:
        model = build_model(k, Region.box(int(m), k.d, pinned=[(0,) * k.d]))
        q = model.free_sites.index(site)
        vals.append(model.covariance[q, q])
    m1, m2 = radii
    return ((m2 + 1) * vals[1] - (m1 + 1) * vals[0]) / (m2 - m1)


@register("difference-variance",
          "flat-start variance of height differences equals twice the occupation gap "
          "of the difference walk; the limit is the pinned Green's function")
def _difference_variance(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    law = DWalkLaw.from_kernel(k)
    site = tuple(cfg.params.get("site", [1] + [0] * (k.d - 1)))
    origin = (0,) * k.d
    taus = [float(x) for x in cfg.params.get("windows", [cfg.window])]
    seeds = derive_seeds(cfg.seed, len(taus))
    z = cfg.tol("se")
    scale = k.sigma ** 2
    rows, ys, ses, worst = [], [], [], 0.0
    for tau, sd in zip(taus, seeds):
        x = sample_batch(k, reg, tau, cfg.replicas, int(sd), out_sites=[site, origin])
        e = estimate((x[:, 0] - x[:, 1]) ** 2)
        o = scale * difference_variance(law, site, tau, cfg.uniformization()).value
        zval = abs(e.mean - o) / e.stderr
        worst = max(worst, zval)
        ys.append(e.mean)
        ses.append(e.stderr)
        rows.append([tau, e.mean, e.stderr, o])
    out.table("difference_variance", ["tau", "mc", "stderr", "oracle"], rows)
    out.check("mc-vs-oracle", worst <= z, worst, z)
    radii = cfg.params.get("gibbs_radii", [100, 200])
    g = scale * _gibbs_limit(k, site, radii)
    pk = scale * 2.0 * potential_kernel(k, site)
    out.numbers.update(gibbs_limit=g, potential_kernel_limit=pk)
    out.check("oracles-agree", abs(g - pk) <= 1e-6, abs(g - pk), 1e-6)
    if len(taus) >= 2:
        # weighted fit y = L - c / sqrt(tau); tail of the occupation gap decays as tau^(-d/2)
        X = np.stack([np.ones(len(taus)), -np.array(taus) ** (-k.d / 2.0)], axis=1)
        W = np.diag(1.0 / np.array(ses) ** 2)
        cov = np.linalg.inv(X.T @ W @ X)
        coef = cov @ X.T @ W @ np.array(ys)
        L, seL = float(coef[0]), float(math.sqrt(cov[0, 0]))
        zval = abs(L - g) / seL
        out.numbers.update(extrapolated_limit=L, extrapolated_stderr=seL)
        out.check("limit-vs-gibbs", zval <= z, zval, z)
    return out


@register("convergence-rate",
          "log-log slope of the distance to the limit matches the diffusive exponent")
def _convergence_rate(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k = cfg.kernel
    law = DWalkLaw.from_kernel(k)
    p = cfg.params
    site = tuple(p["site"]) if p.get("site") is not None else None
    s_max = math.inf if p.get("s_max", "inf") == "inf" else float(p["s_max"])
    theory = (1.0 - k.d / 2.0) if site is None else (-k.d / 2.0)
    pts = []
    for s in cfg.s_grid:
        b = residual_tail(law, float(s), s_max, cfg.uniformization(), site=site)
        pts.append((float(s), b.value))
    fit = fit_power_law(pts, float(p.get("s_min", 0.0)))
    out.table("tail", ["s", "residual"], [list(x) for x in pts])
    out.numbers.update(slope=fit.exponent, slope_stderr=fit.stderr, theory=theory)
    out.check("slope", abs(fit.exponent - theory) <= cfg.tol("slope"), fit.exponent,
              [theory - cfg.tol("slope"), theory + cfg.tol("slope")])
    return out


@register("space-convergence",
          "coupled nested-box fields: telescoping weights, per-box laws, shrinking L2 steps")
def _space_convergence(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k = cfg.kernel
    radii = [int(r) for r in cfg.params["radii"]]
    boxes = [Region.box(r, k.d) for r in radii]
    anchor = cfg.anchor()
    batch = coupled_nested_batch(k, boxes, (-cfg.window, 0.0), [anchor], cfg.replicas, cfg.seed)
    xi = batch.xi[:, :, 0]
    dual = batch.dual[:, :, 0]
    out.check("telescoping", batch.telescoping <= cfg.tol("strict"), batch.telescoping,
              cfg.tol("strict"))
    z = cfg.tol("se")
    rows, worst = [], 0.0
    for m, r in enumerate(radii):
        e = estimate(xi[:, m] ** 2 - dual[:, m] ** 2)
        zval = abs(e.mean) / e.stderr
        worst = max(worst, zval)
        rows.append([r, float((xi[:, m] ** 2).mean()), float((dual[:, m] ** 2).mean()),
                     float(batch.sq_weights[:, m, 0].mean()), e.stderr])
    out.table("box_variance", ["radius", "coupled", "dual", "conditional", "diff_stderr"], rows)
    out.check("variance-matches-dual", worst <= z, worst, z)
    steps = [float(((xi[:, m + 1] - xi[:, m]) ** 2).mean()) for m in range(len(radii) - 1)]
    out.table("l2_steps", ["from_radius", "to_radius", "l2"],
              [[radii[m], radii[m + 1], v] for m, v in enumerate(steps)])
    ok = bool(np.all(np.diff(steps) < 0))
    out.check("l2-steps-decreasing", ok, steps, "strictly decreasing")
    return out


@register("gibbs-covariance",
          "precision inverse equals the absorbed-walk expected-visit matrix")
def _gibbs_covariance(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    model = build_model(k, reg)
    series = green_power_series(k, reg)
    err = float(np.abs(series - model.covariance).max())
    out.check("power-series", err <= 1e-8, err, 1e-8)
    z = cfg.tol("se")
    if cfg.replicas:
        x = sample_field(model, cfg.replicas, cfg.seed)
        n = model.n
        worst = 0.0
        for a in range(n):
            for b in range(a, n):
                e = estimate(x[:, a] * x[:, b])
                worst = max(worst, abs(e.mean - model.covariance[a, b]) / e.stderr)
        out.check("sample-covariance", worst <= z, worst, z)
        mz = float(np.max(np.abs(x.mean(axis=0)) / np.sqrt(np.diag(model.covariance) / cfg.replicas)))
        out.check("sample-mean", mz <= z, mz, z)
    m = cfg.params.get("closed_form_radius")
    if m:
        nn = Kernel.nearest_neighbor(1)
        half = build_model(nn, Region.box(int(m), 1, pinned=[(0,)]))
        rows, lit, fin = [], 0.0, 0.0
        for i in cfg.params.get("closed_form_sites", range(1, 11)):
            q = half.free_sites.index((int(i),))
            v = half.covariance[q, q]
            exact = 2.0 * i * (m + 1 - i) / (m + 1)
            lit = max(lit, abs(v - 2.0 * i))
            fin = max(fin, abs(v - exact))
            rows.append([i, v, 2.0 * i, exact])
        out.table("pinned_variance", ["i", "model", "half_line", "finite_box"], rows)
        out.check("half-line-closed-form", lit <= 1e-6, lit, 1e-6)
        out.check("finite-box-closed-form", fin <= 1e-6, fin, 1e-6)
    return out


def _model_for(k: Kernel, reg: Region, dynamics: str) -> GibbsModel:
    if dynamics == "standard" and k.is_symmetric() and k.self_mass == 0 and reg.boundary == "fixed":
        return build_model(k, reg)
    return stationary_model(k, reg, dynamics)


@register("detailed-balance",
          "stationary start gives time-symmetric two-point statistics")
def _detailed_balance(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    p = cfg.params
    dynamics = p.get("dynamics", "standard")
    model = _model_for(k, reg, dynamics)
    initial = None
    if p.get("control") == "scaled":
        f = float(p.get("scale", 2.0))
        initial = GibbsModel(k, reg, model.free_sites, model.precision / f, model.covariance * f,
                             model.factor * math.sqrt(f), model.dynamics, "scaled")
    u = float(p.get("u", cfg.window))
    tab = detailed_balance_table(model, k, reg, u, cfg.replicas, cfg.seed,
                                 p.get("probes", "local"), initial)
    stat = tab.statistic
    z = np.where(tab.stderr > 0, np.abs(tab.asymmetry) / np.where(tab.stderr > 0, tab.stderr, 1), 0)
    iu = np.argwhere(np.triu(np.ones_like(z, dtype=bool), 1))
    top = sorted(((float(z[a, b]), tab.names[a], tab.names[b]) for a, b in iu), reverse=True)[:10]
    out.table("top_pairs", ["z", "f", "g"], [list(t) for t in top])
    out.numbers.update(statistic=stat, model_source=model.source)
    if p.get("expect", "reversible") == "reversible":
        out.check("statistic-below", stat < 4.0, stat, 4.0)
    else:
        out.check("statistic-above", stat > 5.0, stat, 5.0)
    return out


@register("harness-property",
          "conditional means of the Gaussian field are kernel averages")
def _harness_property(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    model = build_model(k, reg)
    free = set(model.free_sites)
    worst = 0.0
    for s in model.free_sites:
        got = conditional_mean_weights(model, s)
        want = {}
        for o, w in k.weights:
            t = tuple(a + b for a, b in zip(s, o))
            if w > 0 and t in free:
                want[t] = want.get(t, 0.0) + w
        for t in set(got) | set(want):
            worst = max(worst, abs(got.get(t, 0.0) - want.get(t, 0.0)))
    diag = float(np.abs(np.diag(model.precision) - 1.0).max())
    out.check("weights-equal-kernel", worst <= cfg.tol("strict"), worst, cfg.tol("strict"))
    out.check("unit-conditional-variance", diag <= cfg.tol("strict"), diag, cfg.tol("strict"))
    return out


@register("no-noise-harmonic",
          "harmonic data are fixed by the noiseless dynamics; noise and data separate additively")
def _no_noise(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    slope = np.array(cfg.params.get("slope", [1.0] * reg.d), dtype=float)
    c = float(cfg.params.get("intercept", 0.5))
    h = lambda s: float(slope @ np.array(s)) + c
    shell = reg.shell(k)
    hreg = reg.with_gamma({s: h(s) for s in shell})
    hfield = HeightField.from_function(hreg, h)
    out.check("initial-is-harmonic", is_harmonic(k, hfield, hreg, 1e-12), True, True)
    flat = reg.with_gamma(None)
    rng = np.random.default_rng(cfg.seed)
    inv, dec, zero = 0.0, 0.0, 0.0
    for sd in derive_seeds(cfg.seed, cfg.replicas):
        ev = generate_events(k, hreg, (0.0, cfg.window), int(sd))
        fin = evolve(ev, k, hreg, hfield, "no-noise").final
        inv = max(inv, float(np.abs(fin.values - hfield.values).max()))
        evf = ev.restrict(flat) if flat != hreg else ev
        z = HeightField(flat.sites, rng.normal(size=len(flat.sites)))
        zero_f = HeightField.zeros(flat)
        a = evolve(evf, k, flat, z, "standard").final.values
        b = evolve(evf, k, flat, zero_f, "standard").final.values
        cc = evolve(evf, k, flat, z, "no-noise").final.values
        dec = max(dec, float(np.abs(a - b - cc).max()))
        zero = max(zero, float(np.abs(evolve(evf, k, flat, zero_f, "no-noise").final.values).max()))
    out.check("harmonic-invariance", inv <= cfg.tol("strict"), inv, cfg.tol("strict"))
    out.check("decomposition", dec <= cfg.tol("exact"), dec, cfg.tol("exact"))
    out.check("flat-invariance", zero == 0.0, zero, 0.0)
    return out


@register("uniqueness-finite",
          "two initial fields on one stream contract by the surviving walk mass")
def _uniqueness(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    windows = [float(w) for w in (cfg.s_grid or [cfg.window])]
    target = float(cfg.params.get("mass_target", 1e-3))
    rng = np.random.default_rng(cfg.seed)
    free = ~geometry(k, reg).pinned
    masses = np.zeros((cfg.replicas, len(windows)))
    worst_excess = -math.inf
    for r, sd in enumerate(derive_seeds(cfg.seed, cfg.replicas)):
        ev = generate_events(k, reg, (-windows[-1], 0.0), int(sd))
        z1 = rng.normal(size=len(reg.sites)) * free
        z2 = rng.normal(size=len(reg.sites)) * free
        gap = float(np.abs(z1 - z2).max())
        for q, w in enumerate(windows):
            sub = ev.restrict(window=(-w, 0.0))
            a = evolve(sub, k, reg, HeightField(reg.sites, z1)).final.values
            b = evolve(sub, k, reg, HeightField(reg.sites, z2)).final.values
            mass = terminal_interior_masses(ev, k, reg, -w, 0.0)
            diff = np.abs(a - b)
            worst_excess = max(worst_excess, float((diff - mass * gap).max()))
            masses[r, q] = float(mass.max())
    mean_mass = masses.mean(axis=0)
    out.table("mass", ["window", "mean_max_interior_mass"],
              [[w, m] for w, m in zip(windows, mean_mass)])
    out.check("contraction-bound", worst_excess <= cfg.tol("exact"), worst_excess,
              cfg.tol("exact"))
    out.check("mass-decreasing", bool(np.all(np.diff(mean_mass) < 0)), mean_mass.tolist(),
              "strictly decreasing")
    out.check("mass-small", mean_mass[-1] < target, mean_mass[-1], target)
    return out


@register("stationarity",
          "a stationary start keeps coordinate means and variances")
def _stationarity(cfg: ExperimentConfig) -> Outcome:
    out = Outcome()
    k, reg = cfg.kernel, cfg.region
    dynamics = cfg.params.get("dynamics", "standard")
    model = _model_for(k, reg, dynamics)
    s0, s1 = (int(x) for x in derive_seeds(cfg.seed, 2))
    x0 = sample_field(model, cfg.replicas, s0)
    xu = sample_batch(k, reg, cfg.window, cfg.replicas, s1, out_sites=model.free_sites,
                      x0=model.embed(x0), dynamics=dynamics)
    rows, wm, wv = [], 0.0, 0.0
    for a, s in enumerate(model.free_sites):
        em = estimate(xu[:, a])
        ev = estimate(xu[:, a] ** 2)
        zm = abs(em.mean) / em.stderr
        zv = abs(ev.mean - model.covariance[a, a]) / ev.stderr
        wm, wv = max(wm, zm), max(wv, zv)
        rows.append([list(s), em.mean, ev.mean, model.covariance[a, a], zm, zv])
    out.table("coordinates", ["site", "mean", "second_moment", "model_variance", "z_mean",
                              "z_var"], rows)
    out.check("means-preserved", wm <= cfg.tol("se"), wm, cfg.tol("se"))
    out.check("variances-preserved", wv <= cfg.tol("se"), wv, cfg.tol("se"))
    return out


# ---------------------------------------------------------------------- runner

def run_experiment(cfg: ExperimentConfig | dict, out_dir: str | Path | None = None) -> dict:
    """Run a registered experiment; write report.json and data/*.csv when a
    directory is given (argument or ``cfg.output``)."""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_json(cfg)
    entry = REGISTRY.get(cfg.experiment)
    if entry is None:
        raise UnknownExperiment(f"unknown experiment {cfg.experiment!r}")
    outcome = entry.fn(cfg)
    report = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "identity": entry.identity,
        "config": cfg.to_json(),
        "seeds": {"seed": cfg.seed, "backend_seed": cfg.backend.get("seed")},
        "criteria": outcome.criteria,
        "numbers": _plain(outcome.numbers),
        "status": "pass" if all(c["pass"] for c in outcome.criteria) else "fail",
        "data": sorted(f"data/{name}.csv" for name in outcome.tables),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    target = out_dir if out_dir is not None else cfg.output
    if target is not None:
        write_report(report, outcome.tables, target)
    report["_tables"] = outcome.tables
    return report


def report_json(report: dict) -> str:
    return json.dumps({k: v for k, v in report.items() if not k.startswith("_")},
                      indent=2, sort_keys=True)


def write_report(report: dict, tables: dict, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "data").mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(report) + "\n")
    for name, (header, rows) in tables.items():
        with open(out / "data" / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(x) if isinstance(x, float) else x for x in _plain(row)])
