"""Acceptance suite: runs the shipped configs and prints one pass/fail line per criterion."""

from __future__ import annotations

import functools
import time
from pathlib import Path

import pytest

from harness_lab.experiments import ExperimentConfig, run_experiment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

CRITERIA = {
    1: ("pathwise forward/backward identity, d=1,2,3",
        ["representation_d1", "representation_d2", "representation_d3"]),
    2: ("flat-start window variance vs uniformization, d=3", ["window_variance_d3"]),
    3: ("difference variance converges to the Green's-function limit, d=1",
        ["difference_variance_d1"]),
    4: ("convergence exponents, d=3 window and d=1 difference",
        ["convergence_rate_d3", "convergence_rate_d1_difference"]),
    5: ("martingale increments and variance monotonicity", ["martingale_d2"]),
    6: ("Gaussian covariance: power series, sampling, pinned closed form",
        ["gibbs_covariance_d1", "gibbs_covariance_d2"]),
    7: ("harness property on the test kernels",
        ["harness_property_d1", "harness_property_d2", "harness_property_d1_range2"]),
    8: ("detailed balance and violation controls",
        ["detailed_balance_standard", "detailed_balance_pinned", "detailed_balance_free_pinned",
         "detailed_balance_free_shift", "detailed_balance_control_scaled",
         "detailed_balance_control_asymmetric"]),
    9: ("stationarity and finite-box uniqueness", ["stationarity_d1", "uniqueness_d2"]),
    10: ("nested-box coupling, d=3 radii 2..8", ["space_convergence_d3"]),
    11: ("noiseless harmonic invariance and decomposition", ["no_noise_harmonic_d2"]),
}

# wall-clock budgets in seconds, per criterion
BUDGETS = {1: 60.0, 2: 300.0}


@functools.lru_cache(maxsize=None)
def _report(name: str) -> tuple[dict, float]:
    t0 = time.perf_counter()
    rep = run_experiment(ExperimentConfig.load(CONFIGS / f"{name}.json"))
    return rep, time.perf_counter() - t0


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list) and len(v) > 4:
        return f"[{', '.join(_fmt(x) for x in v[:2])}, ..., {_fmt(v[-1])}]"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    title, names = CRITERIA[number]
    lines, failed = [], []
    total = 0.0
    for name in names:
        rep, secs = _report(name)
        total += secs
        for c in rep["criteria"]:
            tag = "ok  " if c["pass"] else "FAIL"
            lines.append(f"      {tag} {name}/{c['name']}: {_fmt(c['value'])} "
                         f"(threshold {_fmt(c['threshold'])})")
            if not c["pass"]:
                failed.append(f"{name}/{c['name']}")
    if number in BUDGETS:
        ok = total <= BUDGETS[number]
        lines.append(f"      {'ok  ' if ok else 'FAIL'} runtime: {total:.1f}s "
                     f"(threshold {BUDGETS[number]:.0f}s)")
        if not ok:
            failed.append("runtime")
    status = "PASS" if not failed else "FAIL"
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {status} {title} ({total:.1f}s)")
        print("\n".join(lines))
    assert not failed, f"failed checks: {failed}"
