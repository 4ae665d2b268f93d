import csv
import json
import math
import pathlib

import jsonschema
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosflow.clock import SECOND
from chaosflow.expr import Selector, parse_alert
from chaosflow.metrics import (
    AlertManager,
    InsufficientData,
    MetricStore,
    OutOfOrder,
    dumps_report,
    empty_report,
    export_report,
    percent_diff,
    reduce,
)

SCHEMA = json.loads((pathlib.Path(__file__).parent.parent / "docs" / "schemas" / "report.schema.json").read_text())


def test_out_of_order_rejected():
    m = MetricStore()
    m.record("g.s.x", 5, 1.0)
    with pytest.raises(OutOfOrder):
        m.record("g.s.x", 5, 2.0)
    with pytest.raises(OutOfOrder):
        m.record("g.s.x", 4, 2.0)
    m.record("g.t.x", 1, 0.0)  # other series are independent


def test_query_examples():
    m = MetricStore()
    for t, v in ((1, 1.0), (2, 2.0), (3, 3.0)):
        m.record("g.s.x", t * SECOND, v)
    assert len(m.query("g.s.x", 10 * SECOND, 0, 3 * SECOND)) == 3
    assert m.query("g.s.x", 100 * SECOND, 50 * SECOND, 3 * SECOND) == []
    assert m.query("g.nope.x", 10 * SECOND, 0, 3 * SECOND) == []
    with pytest.raises(ValueError):
        m.query("g.s.x", SECOND, SECOND, 3 * SECOND)


def test_pointwise_avg_selector():
    m = MetricStore()
    for name, vals in (("svc-1.ops", (10, 20)), ("svc-2.ops", (30, 40)), ("other.ops", (1000, 1000))):
        for t, v in enumerate(vals):
            m.record(name, t, v)
    assert m.range(Selector("svc-*.ops", True), 0, 10) == [(0, 20.0), (1, 30.0)]
    assert m.range(Selector("svc-", True), 0, 10) == [(0, 20.0), (1, 30.0)]


def test_query_window_inclusive():
    m = MetricStore()
    for t in range(0, 11):
        m.record("a.b.c", t * SECOND, t)
    got = m.query("a.b.c", 5 * SECOND, 2 * SECOND, 10 * SECOND)
    assert [t // SECOND for t, _ in got] == [5, 6, 7, 8]


def test_percent_diff_examples():
    assert percent_diff([100, 103, 105]) == pytest.approx(5)
    assert percent_diff([7, 7]) == 0
    with pytest.raises(InsufficientData):
        percent_diff([100])
    with pytest.raises(InsufficientData):
        reduce("avg", [])


def brute_window(samples, start, end):
    return [v for t, v in samples if start <= t <= end]


@settings(max_examples=1000)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False).filter(lambda v: abs(v) > 1e-3), min_size=0, max_size=40),
       st.integers(0, 45), st.integers(0, 45), st.integers(0, 60))
def test_reducers_match_brute_force(values, a, b, now):
    m = MetricStore()
    samples = [(t * SECOND, v) for t, v in enumerate(values)]
    for t, v in samples:
        m.record("g.s.m", t, v)
    frm, to = max(a, b) + 1, min(a, b)
    window = brute_window(samples, (now - frm) * SECOND, (now - to) * SECOND)
    got = [v for _, v in m.query("g.s.m", frm * SECOND, to * SECOND, now * SECOND)]
    assert got == window
    if window:
        assert math.isclose(reduce("avg", window), sum(window) / len(window), rel_tol=1e-9, abs_tol=1e-9)
    if len(window) >= 2:
        expect = (window[-1] - window[0]) / abs(window[0]) * 100
        assert math.isclose(percent_diff(window), expect, rel_tol=1e-9, abs_tol=1e-9)


def manager(rule_text, samples, name="g.s.m"):
    m = MetricStore()
    for t, v in samples:
        m.record(name, t * SECOND, v)
    return AlertManager(m, {"a": parse_alert(rule_text)})


def test_alert_fires_on_small_diff():
    mgr = manager("WHEN percent_diff() OF query(g.s.m, 10s, now-0s) IS BELOW 10", [(1, 100), (5, 105)])
    (tr,) = mgr.evaluate_alerts(6 * SECOND)
    assert tr.value == pytest.approx(5) and tr.state == "Firing"


def test_alert_flat_series_fires():
    mgr = manager("WHEN percent_diff() OF query(g.s.m, 10s, now-0s) IS BELOW 10", [(1, 50), (2, 50)])
    assert len(mgr.evaluate_alerts(3 * SECOND)) == 1


def test_alert_single_sample_no_transition():
    mgr = manager("WHEN percent_diff() OF query(g.s.m, 10s, now-0s) IS BELOW 10", [(1, 50)])
    assert mgr.evaluate_alerts(3 * SECOND) == []
    assert mgr.alerts["a"].state == "OK" and mgr.transitions == []


@settings(max_examples=100)
@given(st.lists(st.booleans(), min_size=1, max_size=40))
def test_edge_triggered(conditions):
    """Each maximal run of true evaluations yields exactly one firing event."""
    m = MetricStore()
    mgr = AlertManager(m, {"a": parse_alert("WHEN last() OF query(g.s.m, 1s, now-0s) IS ABOVE 0")})
    events = 0
    for k, cond in enumerate(conditions):
        t = (k + 1) * SECOND
        m.record("g.s.m", t, 1.0 if cond else -1.0)
        events += len(mgr.evaluate_alerts(t))
    runs = sum(1 for i, c in enumerate(conditions) if c and (i == 0 or not conditions[i - 1]))
    assert events == runs
    assert mgr.alerts["a"].fired == runs


def test_empty_window_keeps_state():
    m = MetricStore()
    mgr = AlertManager(m, {"a": parse_alert("WHEN max() OF query(g.s.m, 5s, now-0s) IS ABOVE 0")})
    m.record("g.s.m", SECOND, 1.0)
    assert len(mgr.evaluate_alerts(2 * SECOND)) == 1
    # data gap (e.g. partitioned emitter): no evidence either way, stay Firing
    assert mgr.evaluate_alerts(30 * SECOND) == []
    assert mgr.alerts["a"].state == "Firing"


def test_empty_report_valid(tmp_path):
    r = empty_report("wf", 3)
    jsonschema.validate(r, SCHEMA)
    assert r["timeline"] == [] and r["annotations"] == [] and r["metrics"]["series"] == {}
    path = tmp_path / "r.json"
    export_report(r, str(path))
    assert json.loads(path.read_text()) == r


def test_export_unwritable(tmp_path):
    with pytest.raises(OSError):
        export_report(empty_report(), str(tmp_path / "missing" / "r.json"))


def test_saturation_report_shape(tmp_path):
    from chaosflow.bundle import load_scenario
    from chaosflow.workflow import run_experiment

    wf, lib = load_scenario("saturation")
    r = run_experiment(wf, lib, seed=0)
    jsonschema.validate(r, SCHEMA)
    kinds = [a["kind"] for a in r["annotations"]]
    assert "fault-revoke" not in kinds
    assert kinds.count("kill") == 1
    assert [a["state"] for a in r["alerts"]] == ["Firing"]
    export_report(r, str(tmp_path / "r.json"), str(tmp_path / "csv"))
    name = "server.server-0.ops_per_sec"
    with open(tmp_path / "csv" / f"{name}.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["timestamp", "value"]
    assert len(rows) - 1 == r["metrics"]["index"][name]["samples"]
    assert dumps_report(r) == (tmp_path / "r.json").read_text()
