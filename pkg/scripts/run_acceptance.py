"""Run every shipped config, write reports under results/, print a status table."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from harness_lab.experiments import ExperimentConfig, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--configs", default=str(ROOT / "configs"))
    p.add_argument("--out", default=str(ROOT / "results"))
    p.add_argument("--only", nargs="*", default=None, help="config stems to run")
    args = p.parse_args(argv)
    paths = sorted(Path(args.configs).glob("*.json"))
    if args.only:
        paths = [q for q in paths if q.stem in set(args.only)]
    failures = 0
    for path in paths:
        t0 = time.perf_counter()
        rep = run_experiment(ExperimentConfig.load(path), Path(args.out) / path.stem)
        secs = time.perf_counter() - t0
        bad = [c["name"] for c in rep["criteria"] if not c["pass"]]
        failures += bool(bad)
        note = f"  failed: {', '.join(bad)}" if bad else ""
        print(f"{rep['status'].upper():4s} {path.stem:38s} {secs:7.1f}s{note}", flush=True)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
