"""End-to-end acceptance criteria.

Each test prints one ``PASS``/``FAIL`` line; the lines are repeated in the
terminal summary so they survive output capture.
"""

import json
import math
import time

import numpy as np
import pytest

from chaosflow.bundle import builtin_library, load_scenario, scenario_names
from chaosflow.clock import MINUTE, SECOND, EndOfExperiment, EventBus, parse_timer
from chaosflow.groups import GroupState, Member, resolve_macro
from chaosflow.metrics import MetricStore, dumps_report, percent_diff, reduce
from chaosflow.model import GroupSpec
from chaosflow.sim import FAILED, PENDING, RUNNING, SUCCESS
from chaosflow.workflow import OWNER, WorkflowController, run_experiment

from test_clock import CRON_FIXTURES, DAY, brute_cron_firings
from test_groups import brute_macro
from test_workflow import CHAOS, KILL_ONE, MASTERS, leftovers, revoke_before_stop, wf

RESULTS: list[str] = []


def verdict(n, title, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title}" + (f" ({detail})" if detail else "")
    print(line)
    RESULTS.append(line)
    assert ok, line


def at(report, kind, obj, prefix):
    for e in report["timeline"]:
        if e["kind"] == kind and e["object"] == obj and e["detail"].startswith(prefix):
            return (e["t"], e["seq"])
    return None


# 1 ---------------------------------------------------------------------------------

def test_dependency_gating_100_seeds():
    spec, lib = load_scenario("redis-failover")
    bad, start = [], time.perf_counter()
    for seed in range(100):
        ctl = WorkflowController(spec, lib, seed=seed)
        # step until the runners have been dispatched; the masters run forever
        horizon = MINUTE
        while ctl.actions["runners"].dispatched_at is None and not ctl.ended:
            ctl.advance(horizon)
            horizon += MINUTE
        r = ctl.report()
        d = {n: (st.dispatched_at / SECOND, st.dispatch_seq) for n, st in ctl.actions.items()
             if st.dispatched_at is not None}
        running = [at(r, "state", g, "running") for g in ("masters", "slaves", "sentinel")]
        loaders_ok = at(r, "state", "loaders", "success")
        if None in running or loaders_ok is None or "runners" not in d:
            bad.append(seed)
            continue
        if not (d["loaders"] > max(running) and d["runners"] > loaders_ok):
            bad.append(seed)
    elapsed = time.perf_counter() - start
    verdict(1, "dependency gating over 100 seeds", not bad and elapsed < 5.0,
            f"violations={bad}, {elapsed:.2f}s")


# 2 ---------------------------------------------------------------------------------

def fire_times(spec_text, until):
    bus = EventBus()
    bus.schedule(parse_timer(spec_text), "t")
    out = []
    while True:
        try:
            ev = bus.next()
        except EndOfExperiment:
            return out
        if ev.t > until:
            return out
        out.append(ev.t)


def test_timer_semantics():
    repeat = fire_times("3m@5", 60 * MINUTE)
    every = fire_times("@every 2m", 10 * MINUTE)
    cron_ok = all(
        fire_times(expr, (d0 + days) * DAY) == brute_cron_firings(expr, 0, (d0 + days) * DAY)
        for expr, d0, days in CRON_FIXTURES if d0 == 0
    )
    ok = repeat == [k * 3 * MINUTE for k in range(1, 6)] and len(every) == 5 and cron_ok
    verdict(2, "timer semantics (3m@5, @every 2m, cron)", ok,
            f"3m@5 at {[t // MINUTE for t in repeat]} min, @every 2m x{len(every)}, cron exact={cron_ok}")


# 3 ---------------------------------------------------------------------------------

def test_saturation_detection():
    spec, lib = load_scenario("saturation")
    start = time.perf_counter()
    ctl = WorkflowController(spec, lib, seed=0)
    r = ctl.run()
    elapsed = time.perf_counter() - start
    served = r["metrics"]["series"]["server.server-0.ops_per_sec"]
    peak = max(v for _, v in served)
    plateau = next(t for t, v in served if v >= peak)
    rule = ctl.alerts.alerts["saturation"].rule
    fired = [a["t"] for a in r["alerts"] if a["state"] == "Firing"]
    ann = r["annotations"]
    suspend = [a["t"] for a in ann if a["text"] == "suspend clients"]
    creates = [a for a in ann if a["kind"] == "create" and a["object"].startswith("clients-")]
    kills = [a for a in ann if a["kind"] == "kill"]
    checks = {
        "capacity anchor": peak == 16000,
        "alert timing": len(fired) == 1 and plateau <= fired[0] <= plateau + (rule.interval + rule.window_from) / SECOND,
        "suspend": len(suspend) == 1 and all(c["t"] <= suspend[0] for c in creates),
        "one kill on recent": len(kills) == 1 and kills[0]["object"] == max(creates, key=lambda c: (c["t"], c["seq"]))["object"],
        "post-kill stable": False,
        "runtime": elapsed < 10.0,
    }
    if kills:
        after = [v for t, v in served if t > kills[0]["t"]]
        checks["post-kill stable"] = bool(after) and (max(after) - min(after)) < 0.10 * min(after)
    detail = f"plateau {plateau:.0f}s, alert {fired}, kill {[k['object'] for k in kills]}, {elapsed:.2f}s"
    failing = [k for k, v in checks.items() if not v]
    verdict(3, "saturation detection, suspend and shed-load", not failing,
            detail + (f"; failing: {failing}" if failing else ""))


# 4 ---------------------------------------------------------------------------------

def series(r, name):
    return r["metrics"]["series"].get(name, [])


def swaps(r):
    return [a for a in r["annotations"] if a["text"].startswith("role-swap")]


def windows(r):
    inj = [a["t"] for a in r["annotations"] if a["kind"] == "fault-inject"]
    rev = [a["t"] for a in r["annotations"] if a["kind"] == "fault-revoke"]
    return list(zip(inj, rev))


def test_failover_reproduction():
    lib = builtin_library()
    reports = {n: run_experiment(load_scenario(f"failover-{n}", lib)[0], lib, seed=0) for n in ("off", "on", "sentinel")}
    failed_ops = "clients.clients-0.failed_ops"

    off = reports["off"]
    roles = {s: {v for _, v in series(off, f"{g}.{s}.role")} for g, s in (("masters", "masters-0"), ("slaves", "slaves-0"))}
    recover = True
    for inj, rev in windows(off):
        after = [v for t, v in series(off, failed_ops) if rev + 2 <= t <= rev + 30]
        during = [v for t, v in series(off, failed_ops) if inj < t < rev]
        recover &= bool(after) and all(v == 0 for v in after) and all(v > 0 for v in during)
    a_ok = not swaps(off) and roles == {"masters-0": {1.0}, "slaves-0": {0.0}} and recover and len(windows(off)) == 2

    on = reports["on"]
    (inj1, rev1), *_ = windows(on)
    in_first = [s for s in swaps(on) if inj1 <= s["t"] <= rev1]
    after = [v for t, v in series(on, failed_ops) if t > rev1]
    b_ok = len(swaps(on)) == 1 and len(in_first) == 1 and bool(after) and all(v > 0 for v in after)

    sen = reports["sentinel"]
    sw = swaps(sen)
    c_ok = False
    if len(sw) == 1:
        t_swap = sw[0]["t"]
        detection = 10.0
        ok_ticks = [t for (t, v), (_, f) in zip(series(sen, "clients.clients-0.throughput"), series(sen, failed_ops))
                    if t_swap <= t <= t_swap + detection and v > 0 and f == 0]
        c_ok = bool(ok_ticks)
    verdict(4, "failover reproduction (off / on / sentinel-aware)", a_ok and b_ok and c_ok,
            f"off={a_ok}, on={b_ok}, sentinel={c_ok}; verdicts "
            + ",".join(f"{k}:{v['verdict']['status']}" for k, v in reports.items()))


# 5 ---------------------------------------------------------------------------------

LATER = """
- action: Stop
  name: later
  depends: {expr: "workflow.now >= 300"}
  stop: {targets: masters}
"""

ANY_KILL = KILL_ONE.replace(".group.masters.last", ".group.masters.any")


def test_expected_vs_unexpected_failures():
    lib = builtin_library()
    expected_spec, rogue_spec = wf(ANY_KILL), wf(MASTERS, LATER)
    bad = []
    for seed in range(100):
        r = run_experiment(expected_spec, lib, seed=seed)
        if r["verdict"]["status"] != "passed" or sum(a["kind"] == "kill" for a in r["annotations"]) != 1:
            bad.append(("expected", seed))
        rng = np.random.default_rng(seed)
        ctl = WorkflowController(rogue_spec, lib, seed=seed)
        t_kill = int(rng.integers(5, 290)) * SECOND
        ctl.advance(t_kill)
        victim = f"masters-{int(rng.integers(2))}"
        ctl.cluster.kill(victim)  # no action announced this failure
        r = ctl.run()
        late = [a for a in r["annotations"] if a["text"].startswith("dispatch") and a["t"] * SECOND >= t_kill]
        if r["verdict"]["status"] != "failed" or late or r["actions"]["later"]["phase"] != "skipped":
            bad.append(("unexpected", seed))
    verdict(5, "expected vs unexpected failures over 100 seeds", not bad, f"violations={bad[:5]}")


# 6 ---------------------------------------------------------------------------------

def test_cleanup_orphan_freedom():
    lib = builtin_library()
    rng = np.random.default_rng(2024)
    horizon = 240
    bad = []
    for i in range(200):
        mode = "Teardown" if i % 2 == 0 else "Destroy"
        point = int(rng.integers(0, horizon + 1))
        ctl = WorkflowController(wf(CHAOS % (mode, point)), lib, seed=i)
        r = ctl.run()
        left = leftovers(ctl)
        try:
            revoke_before_stop(r)
            ordered = True
        except AssertionError:
            ordered = False
        if any(left.values()) or ctl.bus.pending() or not ordered:
            bad.append((i, mode, point, left, ordered))
    verdict(6, "cleanup orphan-freedom over 200 fuzzed teardown points", not bad, f"violations={bad[:3]}")


# 7 ---------------------------------------------------------------------------------

def random_group(rng):
    n = int(rng.integers(0, 15))
    ids = rng.permutation(n)
    members = []
    t = 0
    for i in range(n):
        t += int(rng.integers(0, 3)) * SECOND
        members.append(Member(f"g-{ids[i]}", t, i, [PENDING, RUNNING, SUCCESS, FAILED][int(rng.integers(4))]))
    g = GroupState("g", GroupSpec("redis/master", 1, address_failed=bool(rng.integers(2))))
    g.members = members
    return g


def test_macro_filters_1000_states():
    rng = np.random.default_rng(7)
    bad = 0
    for k in range(1000):
        g = random_group(rng)
        tuples = [(m.id, m.created_at, m.phase, m.index) for m in g.members]
        running = {m.id for m in g.members if m.phase == RUNNING}
        for filt in ("first", "last", "oldest", "recent", "all"):
            bad += resolve_macro(f".group.g.{filt}", {"g": g}, rng) != brute_macro(filt, None, tuples, g.spec.address_failed)
        pct = int(rng.integers(0, 101))
        got = resolve_macro(f".group.g.percent({pct})", {"g": g}, rng)
        bad += len(got) != brute_macro("percent", pct, tuples, False) or not set(got) <= running or len(set(got)) != len(got)
        anyone = resolve_macro(".group.g.any", {"g": g}, rng)
        bad += (anyone != []) if not running else (len(anyone) != 1 or anyone[0] not in running)
    verdict(7, "macro filters vs brute force over 1000 group states", bad == 0, f"mismatches={bad}")


# 8 ---------------------------------------------------------------------------------

def test_reducers_1000_windows():
    rng = np.random.default_rng(11)
    worst = 0.0
    checked = 0
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        values = rng.normal(1000, 400, n)
        values[values == 0] = 1.0
        store = MetricStore()
        for t, v in enumerate(values):
            store.record("g.s.m", t * SECOND, float(v))
        now = int(rng.integers(1, n + 10))
        frm = int(rng.integers(1, n + 5))
        to = int(rng.integers(0, frm))
        got = [v for _, v in store.query("g.s.m", frm * SECOND, to * SECOND, now * SECOND)]
        window = [float(v) for t, v in enumerate(values) if now - frm <= t <= now - to]
        if got != window:
            worst = math.inf
            continue
        if window:
            brute_avg = sum(window) / len(window)
            worst = max(worst, abs(reduce("avg", window) - brute_avg) / max(abs(brute_avg), 1e-300))
            checked += 1
        if len(window) >= 2:
            brute_pd = (window[-1] - window[0]) * 100.0 / abs(window[0])
            worst = max(worst, abs(percent_diff(window) - brute_pd) / max(abs(brute_pd), 1e-300)) if brute_pd else worst
    verdict(8, "percent_diff and avg vs brute force over 1000 windows", worst <= 1e-9 and checked > 500,
            f"max relative error {worst:.2e}, {checked} non-empty windows")


# 9 ---------------------------------------------------------------------------------

def diff_paths(a, b, path=""):
    if type(a) is not type(b):
        return [path]
    if isinstance(a, dict):
        out = []
        for k in sorted(set(a) | set(b)):
            out += diff_paths(a.get(k), b.get(k), f"{path}.{k}")
        return out
    if isinstance(a, list):
        if len(a) != len(b):
            return [path]
        out = []
        for x, y in zip(a, b):
            out += diff_paths(x, y, path + "[]")
        return out
    return [] if a == b else [path]


def test_determinism():
    lib = builtin_library()
    identical, seed_only = [], []
    for name in scenario_names():
        spec = load_scenario(name, lib)[0]
        runs = [dumps_report(run_experiment(spec, lib, seed=s, until=30 * MINUTE)) for s in (7, 7, 8)]
        identical.append(runs[0] == runs[1])
        # the bundled fixtures draw no randomness that reaches the report (single-member any(),
        # zero startup jitter, no lossy links), so a different seed changes only the seed field
        seed_only.append(set(diff_paths(json.loads(runs[0]), json.loads(runs[2]))) <= {".seed"})
    # a fixture whose outcome does depend on the rng: percent() over ten members
    spec = wf("""
- action: DistributedGroup
  name: fleet
  distributedGroup: {templateRef: redis/sentinel, instances: 10}
- action: Stop
  name: trim
  depends: {running: [fleet]}
  stop: {targets: .group.fleet.percent(30)}
- action: Teardown
  name: end
  depends: {success: [trim]}
""")
    runs = {s: run_experiment(spec, lib, seed=s) for s in range(6)}
    again = run_experiment(spec, lib, seed=0)
    stopped = {s: tuple(sorted(a["object"] for a in r["annotations"] if a["text"].startswith("stop "))) for s, r in runs.items()}
    allowed = {".seed", ".timeline[].object", ".timeline[].detail", ".annotations[].object", ".annotations[].text"}
    rng_fields_only = all(set(diff_paths(runs[0], r)) <= allowed for r in runs.values())
    ok = (all(identical) and all(seed_only) and dumps_report(again) == dumps_report(runs[0])
          and len(set(stopped.values())) > 1 and all(len(v) == 3 for v in stopped.values()) and rng_fields_only)
    verdict(9, "determinism of every fixture", ok,
            f"byte-identical={sum(identical)}/{len(identical)}, seed-only diffs={sum(seed_only)}/{len(seed_only)}, "
            f"percent(30) picks across seeds={len(set(stopped.values()))}")
