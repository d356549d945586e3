"""Write the shipped experiment configs under configs/ (fixed seeds)."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from harness_lab import Kernel, Region


def nn(d: int) -> dict:
    return Kernel.nearest_neighbor(d).to_json()


def box(r: int, d: int, **kw) -> dict:
    return Region.box(r, d, **kw).to_json()


RANGE2 = Kernel.from_mapping(1, {1: 0.3, -1: 0.3, 2: 0.2, -2: 0.2}).to_json()
ASYM = Kernel.from_mapping(1, {1: 0.9, -1: 0.1}).to_json()
LINE3 = {"box": {"lo": [-3], "hi": [3]}, "boundary": "fixed"}


def configs() -> dict[str, dict]:
    out = {}
    for d, seed in ((1, 101), (2, 102), (3, 103)):
        out[f"representation_d{d}"] = {
            "experiment": "representation-check", "kernel": nn(d), "region": box(4, d),
            "window": 5.0, "replicas": 100, "seed": seed}
    out["window_variance_d3"] = {
        "experiment": "window-variance", "kernel": nn(3), "region": box(10, 3), "window": 20.0,
        "replicas": 10_000, "seed": 201, "params": {"anchor": [0, 0, 0],
                                                   "limit_taus": [20, 50, 100, 200]}}
    out["difference_variance_d1"] = {
        "experiment": "difference-variance", "kernel": nn(1), "region": box(150, 1),
        "replicas": 10_000, "seed": 301,
        "params": {"site": [1], "windows": [10, 40, 160], "gibbs_radii": [100, 200]}}
    grid = [10, 15, 22, 33, 50, 75, 110, 165, 250]
    out["convergence_rate_d3"] = {
        "experiment": "convergence-rate", "kernel": nn(3), "region": box(1, 3), "seed": 401,
        "s_grid": grid, "params": {"s_max": "inf"}}
    out["convergence_rate_d1_difference"] = {
        "experiment": "convergence-rate", "kernel": nn(1), "region": box(1, 1), "seed": 402,
        "s_grid": grid, "params": {"s_max": "inf", "site": [1]}}
    out["martingale_d2"] = {
        "experiment": "martingale", "kernel": nn(2), "region": box(4, 2), "seed": 501,
        "s_grid": [1, 2, 4, 8, 16, 32], "replicas": 10_000,
        "params": {"anchor": [0, 0], "box_radii": [2, 3, 4], "box_window": 8}}
    out["gibbs_covariance_d1"] = {
        "experiment": "gibbs-covariance", "kernel": nn(1),
        "region": box(2, 1, pinned=[(0,)]), "replicas": 100_000, "seed": 601,
        "params": {"closed_form_radius": 200, "closed_form_sites": list(range(1, 11))}}
    out["gibbs_covariance_d2"] = {
        "experiment": "gibbs-covariance", "kernel": nn(2), "region": box(2, 2),
        "replicas": 0, "seed": 602}
    for name, k, reg in (("harness_property_d1", nn(1), box(5, 1)),
                         ("harness_property_d2", nn(2), box(3, 2, pinned=[(0, 0)])),
                         ("harness_property_d1_range2", RANGE2, box(6, 1))):
        out[name] = {"experiment": "harness-property", "kernel": k, "region": reg, "seed": 0}
    db = {"experiment": "detailed-balance", "kernel": nn(1), "replicas": 100_000}
    out["detailed_balance_standard"] = {**db, "region": LINE3, "seed": 801,
                                        "params": {"u": 1.0}}
    out["detailed_balance_pinned"] = {**db, "region": {**LINE3, "pinned": [[0]]}, "seed": 802,
                                      "params": {"u": 1.0}}
    out["detailed_balance_free_pinned"] = {
        **db, "region": {**LINE3, "boundary": "free", "pinned": [[0]]}, "seed": 803,
        "params": {"u": 1.0}}
    out["detailed_balance_free_shift"] = {
        **db, "region": {**LINE3, "boundary": "free"}, "seed": 804,
        "params": {"u": 1.0, "dynamics": "shift"}}
    out["detailed_balance_control_scaled"] = {
        **db, "region": LINE3, "seed": 805,
        "params": {"u": 1.0, "control": "scaled", "scale": 2.0, "expect": "violation"}}
    out["detailed_balance_control_asymmetric"] = {
        **db, "kernel": ASYM, "region": LINE3, "seed": 806,
        "params": {"u": 1.0, "expect": "violation"}}
    out["stationarity_d1"] = {
        "experiment": "stationarity", "kernel": nn(1), "region": LINE3, "window": 2.0,
        "replicas": 100_000, "seed": 901}
    out["uniqueness_d2"] = {
        "experiment": "uniqueness-finite", "kernel": nn(2),
        "region": {"box": {"lo": [0, 0], "hi": [3, 3]}, "boundary": "fixed"},
        "s_grid": [10, 25, 50], "replicas": 200, "seed": 902}
    out["space_convergence_d3"] = {
        "experiment": "space-convergence", "kernel": nn(3), "region": box(8, 3), "window": 10.0,
        "replicas": 2000, "seed": 1001,
        "params": {"anchor": [0, 0, 0], "radii": [2, 3, 4, 5, 6, 7, 8]}}
    out["no_noise_harmonic_d2"] = {
        "experiment": "no-noise-harmonic", "kernel": nn(2), "region": box(3, 2), "window": 5.0,
        "replicas": 20, "seed": 1101, "params": {"slope": [0.7, -0.3], "intercept": 0.1}}
    return out


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dir", default=str(Path(__file__).resolve().parents[1] / "configs"))
    args = p.parse_args(argv)
    target = Path(args.dir)
    target.mkdir(parents=True, exist_ok=True)
    for name, doc in configs().items():
        (target / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(configs())} configs to {target}")


if __name__ == "__main__":
    main()
