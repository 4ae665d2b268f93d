"""The experiment driver: dependency gating, dispatch, oracles and cleanup.

Everything runs inside one event loop.  After each delivered event the
controller *settles*: it publishes backend state changes, refreshes group
phases, then dispatches every Waiting action whose dependency expression
has become true, repeating until nothing changes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable

import numpy as np

from .clock import DEFAULT_EPOCH, HOUR, SECOND, Annotation, Event, EventBus, Performance, Repeat, State, Time, parse_timer
from .expr import ExprError, OracleExpr, StateEnv, desugar_depends, eval_bool, parse_alert
from .faults import FaultError, FaultInjector
from .groups import GroupController, MacroError, annotate_expected_failure
from .metrics import AlertManager, AnnotationRecord, MetricStore, build_report
from .model import (
    TRANSIENT_FAULTS,
    ActionSpec,
    FaultSpec,
    TemplateLibrary,
    WorkflowSpec,
    dependency_edges,
    is_macro,
)
from .sim import FAILED, RUNNING, SUCCESS, Cluster, ClusterConfig, ProfileRegistry, default_cluster, default_profiles

log = logging.getLogger(__name__)

WAITING, DISPATCHED, ACTIVE, DONE, ERROR, SKIPPED = "waiting", "dispatched", "running", "success", "failed", "skipped"
FINISHED = (DONE, ERROR, SKIPPED)
OWNER = "workflow"

WrapperHandler = Callable[[ActionSpec, "WorkflowController"], bool]


@dataclass
class ActionState:
    spec: ActionSpec
    phase: str = WAITING
    dispatched_at: int | None = None
    dispatch_seq: int | None = None
    finished_at: int | None = None
    reason: str = ""
    timer: int | None = None
    firings: int = 0
    firing_done: bool = False
    faults: list[str] = field(default_factory=list)

    def env_phase(self) -> str:
        if self.phase in (DISPATCHED, ACTIVE):
            return "running"
        if self.phase in (DONE, ERROR):
            return self.phase
        return "pending"

    def summary(self) -> dict:
        sec = lambda t: None if t is None else t / SECOND  # noqa: E731
        return {"kind": self.spec.kind, "phase": self.phase, "dispatched": sec(self.dispatched_at),
                "finished": sec(self.finished_at), "reason": self.reason}


@dataclass
class Verdict:
    status: str = "in-progress"
    reason: str = ""

    def fail(self, reason: str) -> None:
        if self.status == "in-progress":
            self.status, self.reason = "failed", reason

    def as_dict(self) -> dict:
        return {"status": self.status, "reason": self.reason}


_ZERO = {"running": 0, "succeeded": 0, "failed": 0, "expectedFailed": 0, "createdTotal": 0,
         "pending": 0, "suspended": False}


class WorkflowController:
    def __init__(self, spec: WorkflowSpec, library: TemplateLibrary, *, cluster: ClusterConfig | None = None,
                 profiles: ProfileRegistry | None = None, seed: int = 0, epoch: datetime = DEFAULT_EPOCH,
                 speed: float = 0.0, grace: int | None = None, until: int = HOUR,
                 wrapper: WrapperHandler | None = None):
        self.spec = spec
        self.seed = seed
        self.until = until
        self.wrapper = wrapper
        self.rng = np.random.default_rng(seed)
        self.bus = EventBus(epoch, speed)
        profiles = profiles or default_profiles()
        self.config = (cluster or default_cluster()).with_grace(grace)
        self.cluster = Cluster(self.config, profiles, self.rng)
        self.store = MetricStore()
        self.alerts = AlertManager(self.store, {n: parse_alert(t) for n, t in spec.alerts.items()})
        self.faults = FaultInjector(self.cluster, self.bus, owner=OWNER)
        self.groups = GroupController(library, self.cluster, self.bus, self.rng, profiles.packages,
                                      self._annotate, owner=OWNER)
        self.actions = {a.name: ActionState(a) for a in spec.actions}
        self._depends = {a.name: desugar_depends(a.depends) for a in spec.actions}
        self._oracles = {a.name: OracleExpr.parse(a.oracle) for a in spec.actions if a.oracle}
        self.observed: dict[str, str] = {}
        self.timeline: list[dict] = []
        self.annotations: list[AnnotationRecord] = []
        self.verdict = Verdict()
        self.cleaned = False
        self.ended = False
        self._started = False
        self._terminating = False
        self._ticker: list[int] = []

    # -- environment ---------------------------------------------------------

    def env(self) -> StateEnv:
        objs: dict[str, dict] = {}
        for name, st in self.actions.items():
            if st.spec.kind == "DistributedGroup":
                g = self.groups.groups.get(name)
                fields = g.env_fields() if g else dict(_ZERO)
                fields["phase"] = self.observed.get(name, "pending")
            else:
                fields = {**_ZERO, "phase": st.env_phase(), "firings": st.firings}
            objs[name] = fields
        for name, inst in self.alerts.alerts.items():
            objs[name] = {**inst.env_fields(), "phase": "firing" if inst.state == "Firing" else "ok"}
        objs["workflow"] = {"now": self.bus.now / SECOND, "phase": self.verdict.status}
        return StateEnv(objs)

    # -- event plumbing ------------------------------------------------------

    def _annotate(self, kind: str, obj: str, text: str) -> Event:
        ev = self.bus.publish(Annotation(kind, text, obj))
        self.annotations.append(AnnotationRecord(ev.t, ev.seq, kind, obj, text))
        return ev

    def _publish_backend(self) -> None:
        for item in self.cluster.drain():
            if item[0] == "state":
                self.bus.publish(State(item[1], item[2]))
            else:
                self._annotate(item[1], item[2], item[3])

    def _record(self, ev: Event) -> None:
        if self.bus.is_internal(ev):
            return
        b = ev.body
        if isinstance(b, Time):
            obj, detail = b.origin, f"firing {b.firing}"
        elif isinstance(b, State):
            obj, detail = b.object, b.phase
        elif isinstance(b, Performance):
            obj, detail = b.alert, f"{b.value:.6g}"
        else:
            obj, detail = b.target, f"{b.key}: {b.payload}"
        self.timeline.append({"t": ev.t / SECOND, "seq": ev.seq, "kind": ev.kind, "object": obj, "detail": detail})

    # -- main loop -----------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self._settle()

    def advance(self, until: int) -> None:
        """Process every event at or before ``until`` without ending the run."""
        self.start()
        while not self.ended:
            t = self.bus.peek_time()
            if t is None:
                self._finish()
                return
            if t > until:
                return
            ev = self.bus.next()
            self._record(ev)
            self._handle(ev)
            if not self.ended:
                self._settle()

    def run(self) -> dict:
        self.advance(self.until)
        if not self.ended:
            self.bus.now = max(self.bus.now, self.until)
            self._finish(limit=True)
        return self.report()

    def _handle(self, ev: Event) -> None:
        b = ev.body
        now = ev.t
        if isinstance(b, Time):
            o = b.origin
            if o == "_tick":
                for name, t, v in self.cluster.tick(now):
                    self.store.record(name, t, v)
            elif o.startswith("_alert:"):
                name = o[len("_alert:"):]
                tr = self.alerts.evaluate(name, now)
                if tr is not None and tr.state == "Firing":
                    self.bus.publish(Performance(name, tr.value))
                    self._annotate("alert", name, f"{name} firing: {self.alerts.alerts[name].rule.source} (value {tr.value:.6g})")
                elif tr is not None:
                    self._annotate("custom", name, f"{name} resolved (value {tr.value:.6g})")
            elif o.startswith("group:"):
                self.groups.on_timer(o[len("group:"):])
            elif o.startswith("action:"):
                self._fire(o[len("action:"):], b.firing)
            elif o.startswith("fault:"):
                self._revoke(o[len("fault:"):])
        elif isinstance(b, State):
            if self.groups.on_service_phase(b.object, b.phase) is None and b.object in self.actions:
                self._on_group_phase(b.object, b.phase)

    def _on_group_phase(self, name: str, phase: str) -> None:
        self.observed[name] = phase
        st = self.actions[name]
        if st.phase in FINISHED:
            return
        if phase == RUNNING:
            st.phase = ACTIVE
        elif phase == SUCCESS:
            self._finish_action(st, DONE)
        elif phase == FAILED:
            self._finish_action(st, ERROR, f"group {name} failed")

    def _settle(self) -> None:
        while True:
            self._publish_backend()
            if self._terminating:
                return
            env = self.env()
            try:
                changes = self.groups.refresh(env)
            except ExprError as e:
                self.verdict.fail(f"group oracle configuration error: {e}")
                changes = []
            for name, phase in changes:
                self.bus.publish(State(name, phase))
                if phase == FAILED:
                    self.verdict.fail(f"group {name} failed")
            self._check_oracles(env)
            if self.verdict.status == "failed":
                self._publish_backend()
                self._finish()
                return
            if not self._dispatch_ready():
                break
        self._publish_backend()
        if all(st.phase in FINISHED for st in self.actions.values()):
            self._finish()
            return
        self._update_ticker()

    def _dispatch_ready(self) -> bool:
        progressed = False
        env = None
        for name, st in self.actions.items():
            if st.phase != WAITING or self.ended or self._terminating:
                continue
            env = env or self.env()
            try:
                ready = eval_bool(self._depends[name], env)
            except ExprError as e:
                self.verdict.fail(f"dependency of {name} cannot be evaluated: {e}")
                return False
            if ready:
                self._dispatch(st)
                progressed = True
                env = None
                if self.verdict.status == "failed":
                    return False
        return progressed

    def _update_ticker(self) -> None:
        busy = bool(self.cluster.live() or self.faults.active() or self.bus.timers(OWNER, internal=False))
        if busy and not self._ticker:
            self._ticker.append(self.bus.schedule(Repeat(self.config.tick, None), "_tick", owner=OWNER, internal=True))
            for name, inst in sorted(self.alerts.alerts.items()):
                self._ticker.append(self.bus.schedule(Repeat(inst.rule.interval, None), f"_alert:{name}",
                                                      owner=OWNER, internal=True))
        elif not busy and self._ticker:
            for tid in self._ticker:
                self.bus.cancel(tid)
            self._ticker = []

    # -- dispatch ------------------------------------------------------------

    def _dispatch(self, st: ActionState) -> None:
        a = st.spec
        st.phase = DISPATCHED
        st.dispatched_at = self.bus.now
        st.dispatch_seq = self._annotate("custom", a.name, f"dispatch {a.kind} {a.name}").seq
        if a.kind == "DistributedGroup":
            self.groups.create_group(a.name, a.payload)
        elif a.kind in ("Teardown", "Destroy"):
            self._finish_action(st, DONE)
            self._check_oracles(self.env())
            self._finish(mode=a.kind)
        elif a.kind == "Revoke":
            faults = self.faults.of_action(a.payload.fault)
            if not faults:
                self._finish_action(st, ERROR, f"fault {a.payload.fault!r} was never injected")
            else:
                for f in faults:
                    self._revoke(f.id)
                self._finish_action(st, DONE)
        elif a.kind == "Update":
            self.groups.update(a.payload.group, a.payload.parameters)
            self._finish_action(st, DONE)
        elif a.kind == "Wrapper":
            if self.wrapper is None:
                self._finish_action(st, ERROR, "extension point not configured")
            elif self.wrapper(a, self):
                self._finish_action(st, DONE)
            else:
                self._finish_action(st, ERROR, "wrapper handler reported failure")
        elif a.schedule is not None:
            st.phase = ACTIVE
            st.timer = self.bus.schedule(parse_timer(a.schedule), f"action:{a.name}", owner=f"{OWNER}/action:{a.name}")
        else:
            st.firing_done = True
            self._execute(st, 1)

    def _fire(self, name: str, firing: int) -> None:
        st = self.actions[name]
        if st.phase in FINISHED or self._terminating:
            return
        if self.bus.timer(st.timer) is None:
            st.firing_done = True
        self._execute(st, firing)

    def _targets(self, a: ActionSpec) -> list[str]:
        text = a.payload.targets
        if is_macro(text):
            return self.groups.resolve(text)
        g = self.groups.groups.get(text)
        if g is None:
            return []
        return [m.id for m in g.members if m.phase == RUNNING]

    def _execute(self, st: ActionState, firing: int) -> None:
        a = st.spec
        st.firings = firing
        try:
            targets = self._targets(a)
        except MacroError as e:
            self._finish_action(st, ERROR, str(e))
            return
        if a.kind == "Resume":
            groups = {a.payload.targets} if a.payload.targets in self.groups.groups else set()
            groups |= {self.groups.group_of(t).name for t in targets}
            for t in targets:
                if self.cluster.resume(t):
                    self._annotate("custom", t, f"resume {t}")
            for g in sorted(groups):
                self.groups.resume(g)
            if st.firing_done:
                self._finish_action(st, DONE)
            return
        if not targets:
            if firing > 1 or a.allow_empty_target:
                self._stop_timer(st)
                self._complete_if_done(st, force=True)
            else:
                self._finish_action(st, ERROR, f"{a.payload.targets!r} resolved to no services")
            return
        if a.kind == "Stop":
            for t in targets:
                if self.cluster.stop(t):
                    self._annotate("stop", t, f"stop {t}")
        elif a.kind == "Pause":
            for t in targets:
                if self.cluster.pause(t):
                    self._annotate("custom", t, f"pause {t}")
        else:
            self._inject(st, targets)
            if st.phase in FINISHED:
                return
        self._complete_if_done(st)

    def _inject(self, st: ActionState, targets: list[str]) -> None:
        a = st.spec
        spec: FaultSpec = a.payload
        by_group: dict[str, list[str]] = {}
        for t in targets:
            g = self.groups.group_of(t)
            if g is not None:
                by_group.setdefault(g.name, []).append(t)
        for name, ids in sorted(by_group.items()):
            annotate_expected_failure(self.groups.groups[name], ids)
            self._annotate("custom", name, f"expected-failure {','.join(ids)} ({a.kind} by {a.name})")
        fid = a.name if not st.faults else f"{a.name}#{len(st.faults) + 1}"
        try:
            self.faults.inject(fid, spec, targets, action=a.name)
        except FaultError as e:
            self._finish_action(st, ERROR, str(e))
            return
        if a.kind == "Kill":
            for t in targets:
                self._annotate("kill", t, f"kill {t}")
            return
        st.faults.append(fid)
        self._annotate("fault-inject", ",".join(targets), f"{a.kind} {fid} on {','.join(targets)}")

    def _revoke(self, fid: str) -> None:
        f = self.faults.table.get(fid)
        if f is None or f.revoked:
            return
        self.faults.revoke(fid)
        self._annotate("fault-revoke", ",".join(f.targets), f"{f.kind} {fid} revoked")
        st = self.actions.get(f.action)
        if st is not None:
            self._complete_if_done(st)

    def _stop_timer(self, st: ActionState) -> None:
        if st.timer is not None:
            self.bus.cancel(st.timer)
            st.timer = None
        st.firing_done = True

    def _complete_if_done(self, st: ActionState, force: bool = False) -> None:
        if st.phase in FINISHED or not (st.firing_done or force):
            return
        if st.spec.kind in TRANSIENT_FAULTS:
            if any(not self.faults.table[f].revoked for f in st.faults):
                st.phase = ACTIVE
                return
        self._finish_action(st, DONE)

    def _finish_action(self, st: ActionState, phase: str, reason: str = "") -> None:
        if st.phase in FINISHED:
            return
        st.phase = phase
        st.reason = reason
        st.finished_at = self.bus.now
        if st.timer is not None:
            self.bus.cancel(st.timer)
            st.timer = None
        if phase == ERROR and not self._terminating:
            self.verdict.fail(f"action {st.spec.name} failed: {reason}")

    def _check_oracles(self, env: StateEnv) -> None:
        for name, oracle in self._oracles.items():
            st = self.actions[name]
            if st.phase not in (DONE, ERROR):
                continue
            self._apply_oracle(name, oracle, env)

    def _apply_oracle(self, name: str, oracle: OracleExpr, env: StateEnv) -> None:
        try:
            ok = eval_bool(oracle, env)
        except ExprError as e:
            self.verdict.fail(f"oracle of {name} misconfigured: {e}")
            return
        if not ok:
            self.verdict.fail(f"oracle of {name} violated: {oracle.source}")

    # -- termination ---------------------------------------------------------

    def _finish(self, mode: str = "Teardown", limit: bool = False) -> None:
        if self.ended:
            return
        explicit = mode in ("Teardown", "Destroy") and any(
            st.spec.kind == mode and st.phase == DONE for st in self.actions.values())
        if self.verdict.status == "in-progress":
            env = self.env()
            for name, oracle in self._oracles.items():
                if self.actions[name].phase in (DISPATCHED, ACTIVE):
                    self._apply_oracle(name, oracle, env)
            waiting = [n for n, st in self.actions.items() if st.phase == WAITING]
            if waiting and not explicit:
                why = "time limit reached" if limit else "deadlock: unsatisfied dependencies"
                self.verdict.fail(f"{why} ({', '.join(waiting)})")
        for st in self.actions.values():
            if st.phase == WAITING:
                st.phase = SKIPPED
        self.cleanup(mode)
        if self.verdict.status == "in-progress":
            self.verdict.status = "passed"
        self._flush()
        self.ended = True

    def cleanup(self, mode: str = "Teardown") -> None:
        """Revoke faults, cancel timers, then remove services depth-first."""
        if self.cleaned:
            return
        self._terminating = True
        for f in list(self.faults.active()):
            self._revoke(f.id)
        self.bus.cancel_owned(OWNER)
        self._ticker = []
        for action in self.ownership()[f"{OWNER}:{self.spec.name}"]:
            for child in self.ownership().get(action, []):
                for sid in self.ownership().get(child, []):
                    svc = self.cluster.services.get(sid)
                    if svc is None:
                        continue
                    if svc.live:
                        if mode == "Destroy":
                            self.cluster.kill(sid)
                            self._annotate("kill", sid, f"destroy {sid}")
                        else:
                            self.cluster.stop(sid)
                            self._annotate("stop", sid, f"teardown {sid}")
                    self.cluster.remove(sid)
        self._publish_backend()
        self.faults.clear()
        for st in self.actions.values():
            if st.phase in (DISPATCHED, ACTIVE):
                st.phase, st.finished_at, st.reason = SKIPPED, self.bus.now, "cleaned up"
        self.cleaned = True

    def _flush(self) -> None:
        """Deliver what is still queued to the timeline, without acting on it."""
        while self.bus.pending():
            ev = self.bus.next()
            self._record(ev)

    def ownership(self) -> dict[str, list[str]]:
        """Parent -> children edges: workflow, actions, groups and faults, services."""
        root = f"{OWNER}:{self.spec.name}"
        tree: dict[str, list[str]] = {root: []}
        for name, st in self.actions.items():
            node = f"action:{name}"
            tree[root].append(node)
            kids = []
            g = self.groups.groups.get(name)
            if g is not None:
                kids.append(f"group:{name}")
                tree[f"group:{name}"] = [m.id for m in g.members]
            for f in self.faults.of_action(name):
                kids.append(f"fault:{f.id}")
                tree[f"fault:{f.id}"] = []
            tree[node] = kids
        return tree

    # -- output --------------------------------------------------------------

    def report(self) -> dict:
        return build_report(
            workflow=self.spec.name, seed=self.seed, verdict=self.verdict.as_dict(), timeline=self.timeline,
            annotations=self.annotations, transitions=self.alerts.transitions, store=self.store,
            actions={n: st.summary() for n, st in self.actions.items()},
        )


def run_experiment(spec: WorkflowSpec, library: TemplateLibrary, **kw) -> dict:
    return WorkflowController(spec, library, **kw).run()


def to_dot(wf: WorkflowSpec) -> str:
    """Graphviz rendering of the action DAG; edge labels carry the demanded phase."""
    lines = [f'digraph "{wf.name}" {{', "  rankdir=LR;"]
    for a in wf.actions:
        lines.append(f'  "{a.name}" [label="{a.name}\\n{a.kind}"];')
    for e in dependency_edges(wf):
        label = e.label.replace("\\", "\\\\").replace('"', '\\"')
        style = ", style=dashed" if e.dashed else ""
        lines.append(f'  "{e.source}" -> "{e.target}" [label="{label}"{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
