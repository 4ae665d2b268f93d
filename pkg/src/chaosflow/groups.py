"""Logical groups: member creation, macro resolution and lifecycle oracles."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Mapping

import numpy as np

from .clock import EventBus, State, parse_timer
from .expr import OracleExpr, StateEnv, eval_bool
from .model import GroupSpec, Macro, SpecError, TemplateLibrary, is_macro, macro_problem, parse_macro
from .sim import FAILED, PENDING, RUNNING, SUCCESS, Cluster
from .templating import PackageRegistry, TemplateError, bound_series, instantiate, resolve_observability

TERMINAL = (SUCCESS, FAILED)


class MacroError(LookupError):
    pass


@dataclass
class Member:
    id: str
    created_at: int
    index: int
    phase: str = PENDING


@dataclass
class GroupState:
    name: str
    spec: GroupSpec
    members: list[Member] = field(default_factory=list)
    pending_inputs: deque = field(default_factory=deque)
    suspended: bool = False
    expected_failures: set[str] = field(default_factory=set)
    phase: str = PENDING
    reached_running: bool = False
    timer: int | None = None
    next_index: int = 0
    overrides: dict[str, str] = field(default_factory=dict)

    def member(self, sid: str) -> Member | None:
        for m in self.members:
            if m.id == sid:
                return m
        return None

    def counts(self) -> dict[str, int]:
        running = succeeded = failed = expected = 0
        for m in self.members:
            if m.phase == RUNNING:
                running += 1
            elif m.phase == SUCCESS:
                succeeded += 1
            elif m.phase == FAILED:
                failed += 1
                expected += m.id in self.expected_failures
        return {
            "running": running,
            "succeeded": succeeded,
            "failed": failed,
            "expectedFailed": expected,
            "createdTotal": len(self.members),
        }

    def env_fields(self) -> dict:
        return {"phase": self.phase, "suspended": self.suspended, "pending": len(self.pending_inputs), **self.counts()}


# -- macros -----------------------------------------------------------------

def addressable(g: GroupState) -> list[Member]:
    return [m for m in g.members if m.phase == RUNNING or (g.spec.address_failed and m.phase == FAILED)]


def percent_count(k: float, n: int) -> int:
    return int((Decimal(str(k)) * n / 100).to_integral_value(rounding=ROUND_HALF_UP))


def resolve_macro(macro: str | Macro, groups: Mapping[str, GroupState], rng: np.random.Generator) -> list[str]:
    m = parse_macro(macro) if isinstance(macro, str) else macro
    problem = macro_problem(m)
    if problem:
        raise MacroError(f"{m.source}: {problem}")
    g = groups.get(m.group)
    if g is None:
        raise MacroError(f"{m.source}: no such group {m.group!r}")
    pool = addressable(g)
    if m.filter in ("any", "percent"):
        running = [x for x in g.members if x.phase == RUNNING]
        if not running:
            return []
        if m.filter == "any":
            return [running[int(rng.integers(len(running)))].id]
        n = percent_count(m.arg, len(running))
        picked = sorted(int(i) for i in rng.choice(len(running), size=n, replace=False))
        return [running[i].id for i in picked]
    if not pool:
        return []
    if m.filter == "first":
        return [min(pool, key=lambda x: x.id).id]
    if m.filter == "last":
        return [max(pool, key=lambda x: x.id).id]
    if m.filter == "oldest":
        return [min(pool, key=lambda x: (x.created_at, x.index)).id]
    if m.filter == "recent":
        return [max(pool, key=lambda x: (x.created_at, x.index)).id]
    return [x.id for x in pool]


# -- lifecycle --------------------------------------------------------------

@lru_cache(maxsize=None)
def _oracle(text: str | None) -> OracleExpr | None:
    return OracleExpr.parse(text) if text else None


def group_phase(g: GroupState, env: StateEnv | None = None) -> str:
    """Phase implied by the members and the group's fail/success oracles.

    Terminal phases are sticky.  Expected (pre-announced) failures do not
    fail the group under the default lifecycle.
    """
    if g.phase in TERMINAL:
        return g.phase
    c = g.counts()
    fail = _oracle(g.spec.oracles.fail)
    success = _oracle(g.spec.oracles.success)
    if fail is not None or success is not None:
        env = (env or StateEnv()).with_object(g.name, g.env_fields())
    if fail is not None:
        if eval_bool(fail, env):
            return FAILED
    elif any(m.phase == FAILED and m.id not in g.expected_failures for m in g.members):
        return FAILED
    if success is not None:
        if eval_bool(success, env):
            return SUCCESS
    elif g.members and not g.pending_inputs and all(m.phase in TERMINAL for m in g.members):
        if all(m.phase == SUCCESS or m.id in g.expected_failures for m in g.members):
            return SUCCESS
    if c["running"] or g.reached_running:
        return RUNNING
    return PENDING


def annotate_expected_failure(g: GroupState, targets: Iterable[str]) -> None:
    targets = list(targets)
    ids = {m.id for m in g.members}
    for t in targets:
        if t not in ids:
            raise MacroError(f"{t!r} is not a member of group {g.name!r}")
    g.expected_failures.update(targets)


class GroupController:
    def __init__(self, library: TemplateLibrary, cluster: Cluster, bus: EventBus, rng: np.random.Generator,
                 packages: PackageRegistry, annotate: Callable[[str, str, str], object], owner: str = "workflow"):
        self.library = library
        self.cluster = cluster
        self.bus = bus
        self.rng = rng
        self.packages = packages
        self.annotate = annotate
        self.owner = owner
        self.groups: dict[str, GroupState] = {}
        self._member_group: dict[str, str] = {}

    def create_group(self, name: str, spec: GroupSpec) -> GroupState:
        g = GroupState(name, spec, pending_inputs=deque(spec.input_list()))
        self.groups[name] = g
        if spec.creation_model == "parallel":
            while g.pending_inputs:
                self._create_next(g)
        else:
            self._create_next(g)
            if spec.creation_model == "scheduled" and g.pending_inputs:
                g.timer = self.bus.schedule(parse_timer(spec.schedule), f"group:{name}", owner=f"{self.owner}/group:{name}")
        return g

    def group_of(self, sid: str) -> GroupState | None:
        name = self._member_group.get(sid)
        return self.groups.get(name) if name else None

    def resolve(self, macro: str) -> list[str]:
        return resolve_macro(macro, self.groups, self.rng)

    def _create_next(self, g: GroupState) -> Member | None:
        if g.suspended or not g.pending_inputs:
            return None
        now = self.bus.now
        params = {**g.pending_inputs.popleft(), **g.overrides}
        idx = g.next_index
        g.next_index += 1
        sid = f"{g.name}-{idx}"
        member = Member(sid, now, idx)
        g.members.append(member)
        self._member_group[sid] = g.name
        self.annotate("create", sid, f"create {sid} from {g.spec.template_ref}")
        try:
            for k, v in list(params.items()):
                if is_macro(v):
                    ids = self.resolve(v)
                    if not ids:
                        raise TemplateError(f"macro {v!r} resolved to no services")
                    params[k] = ",".join(ids)
            template, variant = self.library.get(g.spec.template_ref)
            spec = instantiate(template, variant.name, params, sid)
            series = bound_series(resolve_observability(spec, self.packages))
            self.cluster.request(spec, g.name, g.spec.placement_labels, now, series)
        except (TemplateError, SpecError, MacroError, KeyError) as e:
            member.phase = FAILED
            self.annotate("custom", sid, f"render-failure {sid}: {e}")
            self.bus.publish(State(sid, FAILED))
        return member

    def on_timer(self, name: str) -> None:
        g = self.groups[name]
        if g.phase in TERMINAL:
            return
        self._create_next(g)
        if not g.pending_inputs and g.timer is not None:
            self.bus.cancel(g.timer)
            g.timer = None

    def on_service_phase(self, sid: str, phase: str) -> GroupState | None:
        g = self.group_of(sid)
        if g is None:
            return None
        m = g.member(sid)
        if m.phase in TERMINAL:
            return g
        m.phase = phase
        if phase == RUNNING:
            g.reached_running = True
            if g.spec.creation_model == "sequential" and m is g.members[-1]:
                self._create_next(g)
        return g

    def refresh(self, env: StateEnv) -> list[tuple[str, str]]:
        """Recompute phases and suspend flags; returns ``(group, new_phase)`` changes."""
        changes = []
        for g in self.groups.values():
            if g.phase in TERMINAL:
                continue
            suspend = _oracle(g.spec.oracles.suspend)
            if suspend is not None and not g.suspended and eval_bool(suspend, env.with_object(g.name, g.env_fields())):
                g.suspended = True
                self.annotate("custom", g.name, f"suspend {g.name}")
            new = group_phase(g, env)
            if new != g.phase:
                g.phase = new
                changes.append((g.name, new))
                if new in TERMINAL and g.timer is not None:
                    self.bus.cancel(g.timer)
                    g.timer = None
        return changes

    def resume(self, name: str) -> None:
        g = self.groups.get(name)
        if g is None or not g.suspended:
            return
        g.suspended = False
        if g.spec.creation_model == "parallel":
            while g.pending_inputs:
                self._create_next(g)
        elif g.spec.creation_model == "sequential" and (not g.members or g.members[-1].phase == RUNNING):
            self._create_next(g)

    def update(self, name: str, parameters: Mapping[str, str]) -> None:
        g = self.groups.get(name)
        if g is None:
            raise MacroError(f"no such group {name!r}")
        g.overrides.update(parameters)
