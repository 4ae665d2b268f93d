#!/usr/bin/env python3
"""Served rate and latency of one server as clients are added.

Prints the throughput/latency curve for 1..N clients of fixed demand
against a server of fixed capacity, measured on the simulated cluster
after each configuration settles.

    python scripts/saturation_curve.py --clients 8 --demand 4000 --capacity 16000
"""

import argparse
import csv
import sys

import numpy as np

from chaosflow.clock import SECOND
from chaosflow.model import ProfileRef, Resources, ServiceSpec
from chaosflow.sim import Cluster, default_cluster, default_profiles

GB = 10**9


def measure(n, demand, capacity, exponent, seconds=10):
    cluster = Cluster(default_cluster(), default_profiles(), np.random.default_rng(0))
    server = ServiceSpec("srv", Resources(8, 8 * GB),
                         profile=ProfileRef("server", {"capacity": str(capacity), "contentionExponent": str(exponent)}))
    cluster.request(server, "server", {}, 0, ("ops_per_sec", "latency_ms"))
    for i in range(n):
        spec = ServiceSpec(f"c{i}", Resources(1, GB), profile=ProfileRef("ycsb", {"target": "srv", "demand": str(demand)}))
        cluster.request(spec, "clients", {}, 0, ("throughput",))
    samples = []
    for t in range(1, seconds + 1):
        samples += cluster.tick(t * SECOND)
    last = {name: v for name, _, v in samples}
    return last["server.srv.ops_per_sec"], last["server.srv.latency_ms"]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--clients", type=int, default=8)
    p.add_argument("--demand", type=float, default=4000)
    p.add_argument("--capacity", type=float, default=16000)
    p.add_argument("--exponent", type=float, default=1.0, help="contention exponent of the latency curve")
    p.add_argument("--csv", help="also write the curve as CSV")
    args = p.parse_args(argv)

    rows = []
    print(f"{'clients':>7} {'demand':>9} {'served':>9} {'latency_ms':>10}")
    for n in range(1, args.clients + 1):
        served, latency = measure(n, args.demand, args.capacity, args.exponent)
        rows.append((n, n * args.demand, served, latency))
        print(f"{n:7d} {n * args.demand:9.0f} {served:9.0f} {latency:10.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clients", "demand", "served", "latency_ms"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
