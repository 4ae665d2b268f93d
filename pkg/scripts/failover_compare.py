#!/usr/bin/env python3
"""Compare the three failover fixtures side by side.

For each of failover-off, failover-on and failover-sentinel, prints the
partition windows, any role swap, and how long the client kept failing
after each partition was revoked.

    python scripts/failover_compare.py --seed 0
"""

import argparse
import sys

from chaosflow.bundle import builtin_library, load_scenario
from chaosflow.workflow import run_experiment

VARIANTS = ("failover-off", "failover-on", "failover-sentinel")
FAILED_OPS = "clients.clients-0.failed_ops"


def first_clean(series, after):
    """First sample time after ``after`` with no failed operations."""
    for t, v in series:
        if t > after and v == 0:
            return t
    return None


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    lib = builtin_library()
    for name in VARIANTS:
        report = run_experiment(load_scenario(name, lib)[0], lib, seed=args.seed)
        ann = report["annotations"]
        injects = [a["t"] for a in ann if a["kind"] == "fault-inject"]
        revokes = [a["t"] for a in ann if a["kind"] == "fault-revoke"]
        swaps = [(a["t"], a["text"]) for a in ann if a["text"].startswith("role-swap")]
        series = report["metrics"]["series"].get(FAILED_OPS, [])
        v = report["verdict"]
        print(f"{name}: {v['status']}" + (f" ({v['reason']})" if v["reason"] else ""))
        for inj, rev in zip(injects, revokes):
            clean = first_clean(series, rev)
            lag = "never" if clean is None else f"{clean - rev:.0f}s"
            print(f"  partition {inj:6.0f}s .. {rev:6.0f}s   client clean again after revoke: {lag}")
        for t, text in swaps:
            print(f"  {t:6.0f}s  {text}")
        if not swaps:
            print("  roles unchanged")
    return 0


if __name__ == "__main__":
    sys.exit(main())
