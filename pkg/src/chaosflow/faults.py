"""Apply and revoke chaos faults on simulated services."""

from __future__ import annotations

from dataclasses import dataclass

from .clock import EventBus, Once
from .model import FaultSpec
from .sim import Cluster


class FaultError(RuntimeError):
    pass


@dataclass
class ActiveFault:
    id: str
    kind: str
    action: str
    targets: tuple[str, ...]
    params: dict
    injected_at: int
    expires_at: int | None = None
    revoked: bool = False
    revoked_at: int | None = None
    timer: int | None = None


class FaultInjector:
    """Fault table keyed by fault id; auto-revoke timers go through the bus.

    A Kill is applied immediately and never enters the table.  Same-kind
    faults on the same target are rejected; different kinds compose.
    """

    def __init__(self, cluster: Cluster, bus: EventBus, owner: str = "workflow"):
        self.cluster = cluster
        self.bus = bus
        self.owner = owner
        self.table: dict[str, ActiveFault] = {}

    def active(self) -> list[ActiveFault]:
        return [f for f in self.table.values() if not f.revoked]

    def inject(self, fault_id: str, spec: FaultSpec, targets: list[str], action: str | None = None) -> ActiveFault | None:
        now = self.bus.now
        for t in targets:
            svc = self.cluster.services.get(t)
            if svc is None or not svc.live:
                raise FaultError(f"{spec.kind} on dead or unknown target {t!r}")
        if spec.kind == "Kill":
            for t in targets:
                self.cluster.kill(t)
            return None
        if fault_id in self.table and not self.table[fault_id].revoked:
            raise FaultError(f"fault {fault_id!r} is already active")
        for f in self.active():
            clash = set(f.targets) & set(targets)
            if f.kind == spec.kind and clash:
                raise FaultError(f"{spec.kind} already active on {sorted(clash)[0]!r} (fault {f.id!r})")
        fault = ActiveFault(fault_id, spec.kind, action or fault_id, tuple(targets), dict(spec.params), now)
        for t in targets:
            if spec.kind == "Partition":
                self.cluster.isolate(t, now)
            elif spec.kind == "Netem":
                self.cluster.set_netem(t, dict(spec.params))
            elif spec.kind == "IO":
                self.cluster.set_io(t, dict(spec.params))
        if spec.duration is not None:
            fault.expires_at = now + spec.duration
            fault.timer = self.bus.schedule(Once(spec.duration), f"fault:{fault_id}", owner=f"{self.owner}/fault:{fault_id}")
        self.table[fault_id] = fault
        return fault

    def revoke(self, fault_id: str) -> ActiveFault:
        fault = self.table.get(fault_id)
        if fault is None:
            raise FaultError(f"unknown fault {fault_id!r}")
        if fault.revoked:
            return fault
        for t in fault.targets:
            if fault.kind == "Partition":
                self.cluster.restore(t)
            elif fault.kind == "Netem":
                self.cluster.set_netem(t, None)
            elif fault.kind == "IO":
                self.cluster.set_io(t, None)
        fault.revoked = True
        fault.revoked_at = self.bus.now
        if fault.timer is not None:
            self.bus.cancel(fault.timer)
            fault.timer = None
        return fault

    def of_action(self, action: str) -> list[ActiveFault]:
        return [f for f in self.table.values() if f.action == action]

    def clear(self) -> None:
        """Drop every fault record; only valid once all are revoked."""
        if self.active():
            raise FaultError("cannot clear the fault table while faults are active")
        self.table.clear()
