"""Embedded time-series store, reducers, alert lifecycle and report export.

Series are named ``<group>.<service>.<metric>``.  Selectors are either an
exact name, or (inside ``avg(...)``) a prefix; a ``*`` anywhere switches to
glob matching.
"""

from __future__ import annotations

import bisect
import csv
import fnmatch
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable

from .clock import SECOND
from .expr import AlertRule, Selector

REPORT_SCHEMA = 1
ANNOTATION_KINDS = ("create", "stop", "kill", "fault-inject", "fault-revoke", "alert", "custom")


class OutOfOrder(ValueError):
    pass


@dataclass
class Series:
    name: str
    times: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def append(self, t: int, v: float) -> None:
        if self.times and t <= self.times[-1]:
            raise OutOfOrder(f"{self.name}: sample at {t} not after {self.times[-1]}")
        self.times.append(t)
        self.values.append(float(v))

    def between(self, start: int, end: int) -> list[tuple[int, float]]:
        lo = bisect.bisect_left(self.times, start)
        hi = bisect.bisect_right(self.times, end)
        return list(zip(self.times[lo:hi], self.values[lo:hi]))


def _matches(pattern: str, name: str, prefix: bool) -> bool:
    if "*" in pattern:
        return fnmatch.fnmatchcase(name, pattern)
    return name.startswith(pattern) if prefix else name == pattern


class MetricStore:
    def __init__(self):
        self.series: dict[str, Series] = {}

    def record(self, name: str, t: int, v: float) -> None:
        s = self.series.get(name)
        if s is None:
            s = self.series[name] = Series(name)
        s.append(t, v)

    def names(self, selector: Selector) -> list[str]:
        return sorted(n for n in self.series if _matches(selector.pattern, n, selector.aggregate))

    def range(self, selector: Selector | str, start: int, end: int) -> list[tuple[int, float]]:
        """Samples with ``start <= t <= end``; ``avg(...)`` selectors average pointwise."""
        if isinstance(selector, str):
            selector = Selector(selector)
        names = self.names(selector)
        if not selector.aggregate:
            return self.series[names[0]].between(start, end) if names else []
        buckets: dict[int, list[float]] = {}
        for n in names:
            for t, v in self.series[n].between(start, end):
                buckets.setdefault(t, []).append(v)
        return [(t, math.fsum(vs) / len(vs)) for t, vs in sorted(buckets.items())]

    def query(self, selector: Selector | str, window_from: int, window_to: int, now: int) -> list[tuple[int, float]]:
        """Samples in ``[now - window_from, now - window_to]``."""
        if window_from <= window_to:
            raise ValueError("query window needs from > to")
        return self.range(selector, now - window_from, now - window_to)


# -- reducers ---------------------------------------------------------------

class InsufficientData(ValueError):
    pass


def percent_diff(values: list[float]) -> float:
    if len(values) < 2:
        raise InsufficientData("percent_diff needs at least 2 samples")
    first, last = values[0], values[-1]
    if first == 0:
        raise InsufficientData("percent_diff undefined for first sample 0")
    return 100.0 * (last - first) / abs(first)


def reduce(reducer: str, values: list[float]) -> float:
    if reducer == "percent_diff":
        return percent_diff(values)
    if not values:
        raise InsufficientData(f"{reducer} over empty window")
    if reducer == "avg":
        return math.fsum(values) / len(values)
    if reducer == "min":
        return min(values)
    if reducer == "max":
        return max(values)
    if reducer == "last":
        return values[-1]
    raise ValueError(f"unknown reducer {reducer!r}")


# -- alerts -----------------------------------------------------------------

@dataclass
class AlertInstance:
    name: str
    rule: AlertRule
    state: str = "OK"
    last_eval: int | None = None
    last_value: float | None = None
    fired: int = 0

    def env_fields(self) -> dict:
        return {
            "firing": self.state == "Firing",
            "fired": self.fired,
            "value": 0.0 if self.last_value is None else self.last_value,
        }


@dataclass(frozen=True)
class AlertTransition:
    t: int
    alert: str
    state: str
    value: float


class AlertManager:
    def __init__(self, store: MetricStore, rules: dict[str, AlertRule] | None = None):
        self.store = store
        self.alerts = {n: AlertInstance(n, r) for n, r in (rules or {}).items()}
        self.transitions: list[AlertTransition] = []

    def evaluate(self, name: str, now: int) -> AlertTransition | None:
        """Evaluate one rule; returns the transition if its state changed."""
        inst = self.alerts[name]
        rule = inst.rule
        inst.last_eval = now
        samples = self.store.query(rule.selector, rule.window_from, rule.window_to, now)
        try:
            value = reduce(rule.reducer, [v for _, v in samples])
        except InsufficientData:
            return None
        inst.last_value = value
        new = "Firing" if rule.holds(value) else "OK"
        if new == inst.state:
            return None
        inst.state = new
        if new == "Firing":
            inst.fired += 1
        tr = AlertTransition(now, name, new, value)
        self.transitions.append(tr)
        return tr

    def evaluate_alerts(self, now: int) -> list[AlertTransition]:
        """Evaluate every rule; returns only OK->Firing transitions."""
        out = []
        for name in sorted(self.alerts):
            tr = self.evaluate(name, now)
            if tr is not None and tr.state == "Firing":
                out.append(tr)
        return out


# -- annotations & report ---------------------------------------------------

@dataclass(frozen=True)
class AnnotationRecord:
    t: int
    seq: int
    kind: str
    object: str
    text: str


def seconds(t: int) -> float:
    return t / SECOND


def build_report(*, workflow: str, seed: int, verdict: dict, timeline: list[dict],
                 annotations: Iterable[AnnotationRecord], transitions: Iterable[AlertTransition],
                 store: MetricStore, actions: dict | None = None) -> dict:
    series = {n: [[seconds(t), v] for t, v in zip(s.times, s.values)] for n, s in sorted(store.series.items())}
    return {
        "schema": REPORT_SCHEMA,
        "workflow": workflow,
        "seed": seed,
        "verdict": verdict,
        "actions": actions or {},
        "timeline": timeline,
        "annotations": [{**asdict(a), "t": seconds(a.t)} for a in annotations],
        "alerts": [{**asdict(tr), "t": seconds(tr.t)} for tr in transitions],
        "metrics": {
            "index": {n: {"samples": len(v)} for n, v in series.items()},
            "series": series,
        },
    }


def empty_report(workflow: str = "", seed: int = 0) -> dict:
    return build_report(workflow=workflow, seed=seed, verdict={"status": "passed", "reason": ""},
                        timeline=[], annotations=[], transitions=[], store=MetricStore())


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def export_report(report: dict, path: str, csv_dir: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(report))
    if csv_dir is not None:
        os.makedirs(csv_dir, exist_ok=True)
        for name, samples in report["metrics"]["series"].items():
            with open(os.path.join(csv_dir, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["timestamp", "value"])
                w.writerows(samples)
