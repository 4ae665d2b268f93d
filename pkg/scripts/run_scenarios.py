#!/usr/bin/env python3
"""Run every bundled scenario and summarise verdicts and key annotations.

    python scripts/run_scenarios.py --seed 3 --out reports/
"""

import argparse
import os
import sys
import time

from chaosflow.bundle import builtin_library, load_scenario, scenario_names
from chaosflow.clock import parse_duration
from chaosflow.metrics import export_report
from chaosflow.workflow import run_experiment

KEY_TEXT = ("role-swap", "suspend", "kill", "fault-inject", "fault-revoke")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("names", nargs="*", help="scenario names (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--until", default="30m", help="simulated time limit per run")
    p.add_argument("--out", help="directory for JSON reports and per-series CSV")
    p.add_argument("-q", "--quiet", action="store_true", help="verdicts only")
    args = p.parse_args(argv)

    lib = builtin_library()
    names = args.names or scenario_names()
    unknown = sorted(set(names) - set(scenario_names()))
    if unknown:
        p.error(f"unknown scenarios: {', '.join(unknown)}")
    for name in names:
        spec, _ = load_scenario(name, lib)
        start = time.perf_counter()
        report = run_experiment(spec, lib, seed=args.seed, until=parse_duration(args.until))
        elapsed = time.perf_counter() - start
        v = report["verdict"]
        print(f"{name:20s} {v['status']:7s} {elapsed:5.2f}s  {v['reason']}")
        if not args.quiet:
            for a in report["annotations"]:
                if a["kind"] in KEY_TEXT or a["text"].startswith(KEY_TEXT) or a["kind"] == "alert":
                    print(f"    {a['t']:8.1f}s  {a['kind']:12s} {a['text']}")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            export_report(report, os.path.join(args.out, f"{name}.json"), os.path.join(args.out, name))
    return 0


if __name__ == "__main__":
    sys.exit(main())
