"""Simulated clock, timers and the experiment event bus.

Time is an integer count of nanoseconds since experiment start.  Every
event carries ``(t, seq)`` where ``seq`` is a global publication counter, so
delivery order is total and reproducible.
"""

from __future__ import annotations

import calendar
import heapq
import re
import time as _walltime
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Union

NS = 1
US = 1_000
MS = 1_000_000
SECOND = 1_000_000_000
MINUTE = 60 * SECOND
HOUR = 60 * MINUTE

DEFAULT_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)

_UNITS = {"ns": NS, "us": US, "µs": US, "ms": MS, "s": SECOND, "m": MINUTE, "h": HOUR}
_DURATION_PART = re.compile(r"(\d+)(ns|us|µs|ms|s|m|h)")


class TimerError(ValueError):
    pass


def parse_duration(text: str | int) -> int:
    """Parse a Go-style duration ("10s", "1m30s", "250ms") into nanoseconds."""
    if isinstance(text, bool):
        raise TimerError(f"malformed duration: {text!r}")
    if isinstance(text, int):
        return text
    s = str(text).strip()
    if s == "0":
        return 0
    pos, total = 0, 0
    while pos < len(s):
        m = _DURATION_PART.match(s, pos)
        if m is None:
            raise TimerError(f"malformed duration: {text!r}")
        total += int(m.group(1)) * _UNITS[m.group(2)]
        pos = m.end()
    if not s:
        raise TimerError("empty duration")
    return total


def format_duration(ns: int) -> str:
    """Inverse of :func:`parse_duration` producing the shortest compound form."""
    if ns == 0:
        return "0s"
    out = []
    for unit, size in (("h", HOUR), ("m", MINUTE), ("s", SECOND), ("ms", MS), ("us", US), ("ns", NS)):
        q, ns = divmod(ns, size)
        if q:
            out.append(f"{q}{unit}")
    return "".join(out)


# -- cron -------------------------------------------------------------------

_MONTHS = {n.lower(): i for i, n in enumerate(calendar.month_abbr) if n}
_DAYS = {n.lower(): (i + 1) % 7 for i, n in enumerate(calendar.day_abbr)}
_CRON_FIELDS = (
    ("minute", 0, 59, {}),
    ("hour", 0, 23, {}),
    ("day-of-month", 1, 31, {}),
    ("month", 1, 12, _MONTHS),
    ("day-of-week", 0, 7, _DAYS),
)


def _cron_value(token: str, lo: int, hi: int, names: dict, fname: str) -> int:
    value = names.get(token.lower())
    if value is None:
        if not token.isdigit():
            raise TimerError(f"cron {fname}: bad value {token!r}")
        value = int(token)
    if not lo <= value <= hi:
        raise TimerError(f"cron {fname}: {value} out of range {lo}-{hi}")
    return value


def _cron_field(text: str, lo: int, hi: int, names: dict, fname: str) -> frozenset[int]:
    values: set[int] = set()
    for item in text.split(","):
        rng, _, step_s = item.partition("/")
        step = 1
        if step_s:
            if not step_s.isdigit() or int(step_s) == 0:
                raise TimerError(f"cron {fname}: bad step {step_s!r}")
            step = int(step_s)
        if rng == "*":
            start, stop = lo, hi
        elif "-" in rng:
            a, b = rng.split("-", 1)
            start = _cron_value(a, lo, hi, names, fname)
            stop = _cron_value(b, lo, hi, names, fname)
            if start > stop:
                raise TimerError(f"cron {fname}: empty range {rng!r}")
        else:
            start = _cron_value(rng, lo, hi, names, fname)
            stop = hi if step_s else start
        values.update(range(start, stop + 1, step))
    return frozenset(values)


@dataclass(frozen=True)
class CronExpr:
    source: str
    minutes: frozenset[int]
    hours: frozenset[int]
    days: frozenset[int]
    months: frozenset[int]
    weekdays: frozenset[int]
    dom_any: bool
    dow_any: bool

    @classmethod
    def parse(cls, text: str) -> CronExpr:
        parts = text.split()
        if len(parts) != 5:
            raise TimerError(f"cron expression needs 5 fields, got {len(parts)}: {text!r}")
        sets = [_cron_field(p, lo, hi, names, fname) for p, (fname, lo, hi, names) in zip(parts, _CRON_FIELDS)]
        weekdays = frozenset(d % 7 for d in sets[4])
        return cls(" ".join(parts), sets[0], sets[1], sets[2], sets[3], weekdays,
                   parts[2] == "*", parts[4] == "*")

    def _day_matches(self, dt: datetime) -> bool:
        dom = dt.day in self.days
        dow = (dt.weekday() + 1) % 7 in self.weekdays
        if self.dom_any or self.dow_any:
            return dom and dow
        return dom or dow

    def next_after(self, dt: datetime) -> datetime:
        """First matching minute strictly after ``dt``."""
        t = dt.replace(second=0, microsecond=0) + timedelta(minutes=1)
        limit = t + timedelta(days=366 * 5)
        while t < limit:
            if t.month not in self.months:
                year, month = (t.year + 1, 1) if t.month == 12 else (t.year, t.month + 1)
                t = t.replace(year=year, month=month, day=1, hour=0, minute=0)
            elif not self._day_matches(t):
                t = (t + timedelta(days=1)).replace(hour=0, minute=0)
            elif t.hour not in self.hours:
                t = (t + timedelta(hours=1)).replace(minute=0)
            elif t.minute not in self.minutes:
                t += timedelta(minutes=1)
            else:
                return t
        raise TimerError(f"cron expression never fires: {self.source!r}")


# -- timers -----------------------------------------------------------------

@dataclass(frozen=True)
class Once:
    delay: int


@dataclass(frozen=True)
class Repeat:
    interval: int
    count: int | None  # None: unbounded


@dataclass(frozen=True)
class Cron:
    expr: CronExpr


TimerSpec = Union[Once, Repeat, Cron]


def parse_timer(text: str) -> TimerSpec:
    s = str(text).strip()
    if s.startswith("@every"):
        interval = parse_duration(s[len("@every"):].strip())
        if interval <= 0:
            raise TimerError(f"interval must be positive: {text!r}")
        return Repeat(interval, None)
    if len(s.split()) == 5:
        return Cron(CronExpr.parse(s))
    if "@" in s:
        dur, _, count_s = s.partition("@")
        if not count_s.isdigit():
            raise TimerError(f"malformed repeat count: {text!r}")
        count = int(count_s)
        if count == 0:
            raise TimerError(f"repeat count must be >= 1: {text!r}")
        interval = parse_duration(dur)
        if interval <= 0:
            raise TimerError(f"interval must be positive: {text!r}")
        return Repeat(interval, count)
    return Once(parse_duration(s))


def timer_firings(spec: TimerSpec, start: int, until: int, epoch: datetime = DEFAULT_EPOCH) -> list[int]:
    """All firing instants of ``spec`` scheduled at ``start``, up to ``until`` inclusive."""
    out = []
    k, t = 0, _next_firing(spec, start, 0, None, epoch)
    while t is not None and t <= until:
        out.append(t)
        k += 1
        t = _next_firing(spec, start, k, t, epoch)
    return out


def _next_firing(spec: TimerSpec, start: int, k: int, prev: int | None, epoch: datetime) -> int | None:
    """Instant of firing number ``k`` (0-based), or None when the timer retires."""
    if isinstance(spec, Once):
        return start + spec.delay if k == 0 else None
    if isinstance(spec, Repeat):
        if spec.count is not None and k >= spec.count:
            return None
        return start + (k + 1) * spec.interval
    base = epoch + timedelta(microseconds=(start if prev is None else prev) // US)
    nxt = spec.expr.next_after(base)
    return (nxt - epoch) // timedelta(microseconds=1) * US


# -- events -----------------------------------------------------------------

@dataclass(frozen=True)
class Time:
    timer: int
    firing: int
    origin: str


@dataclass(frozen=True)
class State:
    object: str
    phase: str


@dataclass(frozen=True)
class Performance:
    alert: str
    value: float


@dataclass(frozen=True)
class Annotation:
    key: str
    payload: str
    target: str


Body = Union[Time, State, Performance, Annotation]


@dataclass(frozen=True)
class Event:
    t: int
    seq: int
    body: Body

    @property
    def kind(self) -> str:
        return type(self.body).__name__.lower()


class EndOfExperiment(Exception):
    """Raised by :meth:`EventBus.next` once nothing is left to deliver."""


@dataclass
class _Timer:
    id: int
    spec: TimerSpec
    origin: str
    owner: str | None
    internal: bool
    start: int
    fired: int = 0
    due: int | None = None


@dataclass
class EventBus:
    """Single-queue discrete-event core.

    Timers are materialised lazily: only the next firing of each timer sits in
    the queue, so unbounded ``@every`` timers cost O(1) memory.
    """

    epoch: datetime = DEFAULT_EPOCH
    speed: float = 0.0
    now: int = 0
    _seq: int = 0
    _queue: list = field(default_factory=list)
    _timers: dict[int, _Timer] = field(default_factory=dict)
    _next_timer: int = 1

    def _push(self, t: int, body: Body) -> Event:
        ev = Event(t, self._seq, body)
        self._seq += 1
        heapq.heappush(self._queue, (ev.t, ev.seq, ev))
        return ev

    def publish(self, body: Body, t: int | None = None) -> Event:
        t = self.now if t is None else t
        if t < self.now:
            raise ValueError(f"cannot publish into the past: {t} < {self.now}")
        return self._push(t, body)

    def schedule(self, spec: TimerSpec, origin: str, owner: str | None = None, internal: bool = False) -> int:
        tid = self._next_timer
        self._next_timer += 1
        timer = _Timer(tid, spec, origin, owner, internal, self.now)
        self._timers[tid] = timer
        self._arm(timer, None)
        return tid

    def _arm(self, timer: _Timer, prev: int | None) -> None:
        due = _next_firing(timer.spec, timer.start, timer.fired, prev, self.epoch)
        if due is None:
            del self._timers[timer.id]
            return
        timer.due = due
        self._push(due, Time(timer.id, timer.fired + 1, timer.origin))

    def cancel(self, timer_id: int) -> None:
        if self._timers.pop(timer_id, None) is None:
            return
        self._queue = [q for q in self._queue if not (isinstance(q[2].body, Time) and q[2].body.timer == timer_id)]
        heapq.heapify(self._queue)

    def cancel_owned(self, owner_prefix: str) -> list[int]:
        ids = [t.id for t in self._timers.values() if t.owner and t.owner.startswith(owner_prefix)]
        for tid in ids:
            self.cancel(tid)
        return ids

    def timer(self, timer_id: int) -> _Timer | None:
        return self._timers.get(timer_id)

    def timers(self, owner_prefix: str | None = None, internal: bool | None = None) -> list[_Timer]:
        out = []
        for t in self._timers.values():
            if owner_prefix is not None and not (t.owner or "").startswith(owner_prefix):
                continue
            if internal is not None and t.internal != internal:
                continue
            out.append(t)
        return out

    def is_internal(self, ev: Event) -> bool:
        if not isinstance(ev.body, Time):
            return False
        t = self._timers.get(ev.body.timer)
        return bool(t and t.internal) or ev.body.origin.startswith("_")

    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def next(self) -> Event:
        if not self._queue:
            raise EndOfExperiment
        t, _, ev = heapq.heappop(self._queue)
        if self.speed > 0 and t > self.now:
            _walltime.sleep((t - self.now) / SECOND / self.speed)
        self.now = t
        if isinstance(ev.body, Time):
            timer = self._timers.get(ev.body.timer)
            if timer is not None:
                timer.fired += 1
                self._arm(timer, t)
        return ev
