"""Command line entry point: run configs, list experiments, replay event streams."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .engine import EventStream, evolve
from .errors import HarnessError
from .experiments import ExperimentConfig, list_experiments, report_json, run_experiment
from .lattice import HeightField


def _run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = args.out if args.out is not None else cfg.output
    report = run_experiment(cfg, out)
    if args.quiet:
        print(f"{report['experiment']}: {report['status']}")
    else:
        print(report_json(report))
    return 0 if report["status"] == "pass" else 1


def _list(args) -> int:
    for name, identity in list_experiments():
        print(f"{name:22s} {identity}")
    return 0


def _replay(args) -> int:
    ev = EventStream.from_jsonl(args.events)
    reg = ev.region
    if args.initial is not None:
        doc = json.loads(Path(args.initial).read_text())
        vals = {tuple(r["site"]): float(r["value"]) for r in doc}
        zeta = HeightField(reg.sites, np.array([vals.get(s, 0.0) for s in reg.sites]))
    else:
        zeta = HeightField.zeros(reg)
    traj = evolve(ev, ev.kernel, reg, zeta, args.variant)
    if args.csv is not None:
        traj.to_csv(args.csv)
    rows = [{"site": list(s), "value": float(v)} for s, v in zip(reg.sites, traj.final.values)]
    print(json.dumps({"events": len(ev), "window": list(ev.window), "final": rows}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harness-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (overrides config.output)")
    r.add_argument("--quiet", action="store_true", help="print only the status line")
    r.set_defaults(fn=_run)
    ls = sub.add_parser("list-experiments", help="list registered experiments")
    ls.set_defaults(fn=_list)
    rp = sub.add_parser("replay", help="evolve a stored event stream")
    rp.add_argument("events")
    rp.add_argument("--initial", default=None, help="JSON list of {site, value}")
    rp.add_argument("--variant", choices=["standard", "no-noise"], default="standard")
    rp.add_argument("--csv", default=None, help="write the trajectory as CSV")
    rp.set_defaults(fn=_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except HarnessError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
