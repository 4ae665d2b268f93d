"""Deterministic simulated cluster.

Nodes host services under group-exclusive placement.  Every tick, client
profiles push demand at server profiles; a server of capacity ``C`` facing
total demand ``D`` serves ``min(D, C)`` split proportionally, with latency
following a smooth contention curve.  Faults manipulate per-service network
and disk state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources as _resources
from typing import Any, Mapping

import numpy as np

from .clock import MS, SECOND, parse_duration
from .model import ServiceSpec, SpecError, load_yaml, parse_bytes
from .templating import PackageRegistry

PENDING, RUNNING, SUCCESS, FAILED = "pending", "running", "success", "failed"
LIVE = (PENDING, RUNNING)
FAIL_FAST_LATENCY_MS = 0.05


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class Node:
    name: str
    cpu: float
    mem: int
    labels: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ClusterConfig:
    nodes: tuple[Node, ...]
    tick: int = SECOND
    startup: int = 2 * SECOND
    startup_jitter: int = 0
    grace: int = 60 * SECOND

    @classmethod
    def from_mapping(cls, raw: Mapping) -> ClusterConfig:
        nodes = []
        for n in raw.get("nodes") or ():
            cpu, mem = float(n["cpu"]), parse_bytes(n["mem"])
            if cpu <= 0 or mem <= 0:
                raise SpecError(f"node {n.get('name')!r}: capacity must be positive")
            nodes.append(Node(str(n["name"]), cpu, mem, {str(k): str(v) for k, v in (n.get("labels") or {}).items()}))
        if not nodes:
            raise SpecError("cluster config declares no nodes")
        kw = {}
        for key, attr in (("tick", "tick"), ("startup", "startup"), ("startupJitter", "startup_jitter"), ("grace", "grace")):
            if key in raw:
                kw[attr] = parse_duration(raw[key])
        return cls(tuple(nodes), **kw)

    def with_grace(self, grace: int | None) -> ClusterConfig:
        if grace is None:
            return self
        return ClusterConfig(self.nodes, self.tick, self.startup, self.startup_jitter, grace)


def _data(name: str) -> str:
    return _resources.files("chaosflow").joinpath("data", name).read_text(encoding="utf-8")


def load_cluster(text: str) -> ClusterConfig:
    return ClusterConfig.from_mapping(load_yaml(text) or {})


def default_cluster() -> ClusterConfig:
    return load_cluster(_data("cluster.yaml"))


@dataclass(frozen=True)
class ProfileRegistry:
    profiles: dict[str, dict[str, str]]
    packages: PackageRegistry

    @classmethod
    def from_mapping(cls, raw: Mapping) -> ProfileRegistry:
        profiles = {}
        for name, body in (raw.get("profiles") or {}).items():
            body = {str(k): str(v) for k, v in (body or {}).items()}
            if body.get("type") not in PROFILE_TYPES:
                raise SpecError(f"profile {name!r}: unknown type {body.get('type')!r}")
            profiles[str(name)] = body
        return cls(profiles, PackageRegistry.from_mapping(raw.get("packages") or {}))


def load_profiles(text: str) -> ProfileRegistry:
    return ProfileRegistry.from_mapping(load_yaml(text) or {})


def default_profiles() -> ProfileRegistry:
    return load_profiles(_data("profiles.yaml"))


# -- behaviour profiles -----------------------------------------------------

def _num(params: Mapping[str, str], key: str, default: float | None = None) -> float | None:
    if key not in params or params[key] == "":
        return default
    try:
        return float(params[key])
    except ValueError:
        raise SpecError(f"profile parameter {key}={params[key]!r} is not a number") from None


def _flag(params: Mapping[str, str], key: str) -> bool:
    return str(params.get(key, "false")).strip().lower() in ("1", "true", "yes", "on")


def _dur(params: Mapping[str, str], key: str, default: int | None = None) -> int | None:
    if key not in params or params[key] == "":
        return default
    return parse_duration(params[key])


@dataclass
class ServerProfile:
    capacity: float
    base_latency: float  # seconds
    exponent: float = 1.0
    fail_after: int | None = None


@dataclass
class KVProfile(ServerProfile):
    role: str = "master"
    master: str = ""
    failover: bool = False
    detection: int = 10 * SECOND


@dataclass
class ClientProfile:
    target: str
    demand: float
    read_fraction: float = 0.5
    sentinel_aware: bool = False
    ops: float | None = None
    cpu: float | None = None  # cpu needed for full demand
    fail_after: int | None = None


@dataclass
class IdleProfile:
    fail_after: int | None = None


PROFILE_TYPES = ("server", "kv", "client", "idle")


def build_profile(spec: ServiceSpec, registry: ProfileRegistry):
    if spec.profile is None:
        return IdleProfile()
    base = registry.profiles.get(spec.profile.name)
    if base is None:
        raise SpecError(f"service {spec.name!r}: unknown behaviour profile {spec.profile.name!r}")
    p = {**base, **spec.profile.params}
    kind = p["type"]
    fail_after = _dur(p, "failAfter")
    if kind in ("server", "kv"):
        capacity = _num(p, "capacity")
        if capacity is None or capacity <= 0:
            raise SpecError(f"service {spec.name!r}: capacity must be > 0")
        latency = _dur(p, "baseLatency", MS) / SECOND
        exponent = _num(p, "contentionExponent", 1.0)
        if kind == "server":
            return ServerProfile(capacity, latency, exponent, fail_after)
        role = p.get("role", "master")
        if role not in ("master", "slave"):
            raise SpecError(f"service {spec.name!r}: role must be master or slave")
        return KVProfile(capacity, latency, exponent, fail_after, role, p.get("master", ""),
                         _flag(p, "failover"), _dur(p, "detection", 10 * SECOND))
    if kind == "client":
        demand = _num(p, "demand")
        if demand is None or demand <= 0:
            raise SpecError(f"service {spec.name!r}: demand must be > 0")
        read = _num(p, "readFraction", 0.5)
        if not 0 <= read <= 1:
            raise SpecError(f"service {spec.name!r}: readFraction must be within [0, 1]")
        return ClientProfile(p.get("target", ""), demand, read, _flag(p, "sentinelAware"),
                             _num(p, "ops"), _num(p, "cpu"), fail_after)
    return IdleProfile(fail_after)


# -- services ---------------------------------------------------------------

@dataclass(frozen=True)
class LinkState:
    up: bool
    delay: int = 0
    loss: float = 0.0  # percent
    dup: float = 0.0  # percent


@dataclass
class PlacedService:
    id: str
    group: str
    spec: ServiceSpec
    profile: Any
    series: tuple[str, ...]
    requested_at: int
    phase: str = PENDING
    node: str | None = None
    ready_at: int | None = None
    started_at: int | None = None
    paused: bool = False
    isolated: int = 0
    isolated_since: int | None = None
    netem: dict | None = None
    io: dict | None = None
    done_ops: float = 0.0
    reason: str = ""
    labels: dict[str, str] = field(default_factory=dict)

    @property
    def live(self) -> bool:
        return self.phase in LIVE

    @property
    def active(self) -> bool:
        return self.phase == RUNNING and not self.paused


class Cluster:
    """Service registry plus the traffic model.

    Phase changes and annotations are queued on :attr:`outbox` as
    ``("state", id, phase)`` / ``("annotation", kind, object, text)`` for the
    owning controller to publish.
    """

    def __init__(self, config: ClusterConfig, profiles: ProfileRegistry, rng: np.random.Generator):
        self.config = config
        self.profiles = profiles
        self.rng = rng
        self.services: dict[str, PlacedService] = {}
        self.outbox: list[tuple] = []

    # registry ---------------------------------------------------------------

    def request(self, spec: ServiceSpec, group: str, labels: Mapping[str, str], now: int,
                series: tuple[str, ...] = ()) -> PlacedService:
        if spec.name in self.services:
            raise ValueError(f"duplicate service id {spec.name!r}")
        svc = PlacedService(spec.name, group, spec, build_profile(spec, self.profiles), series, now,
                            labels=dict(labels))
        self.services[svc.id] = svc
        self._set_phase(svc, PENDING)
        if self.place(svc):
            self._schedule_ready(svc, now)
        return svc

    def _schedule_ready(self, svc: PlacedService, now: int) -> None:
        jitter = 0
        if self.config.startup_jitter:
            jitter = int(self.rng.integers(0, self.config.startup_jitter + 1))
        svc.ready_at = now + self.config.startup + jitter

    def tenants(self, node: str) -> list[PlacedService]:
        return [s for s in self.services.values() if s.node == node and s.live]

    def place(self, svc: PlacedService) -> bool:
        """Bind ``svc`` to the first node that satisfies labels, capacity and group exclusivity."""
        res = svc.spec.resources
        for node in self.config.nodes:
            if any(node.labels.get(k) != v for k, v in svc.labels.items()):
                continue
            tenants = [t for t in self.tenants(node.name) if t is not svc]
            if any(t.group != svc.group for t in tenants):
                continue
            cpu = sum(t.spec.resources.cpu for t in tenants)
            mem = sum(t.spec.resources.mem for t in tenants)
            if cpu + res.cpu > node.cpu + 1e-9 or mem + res.mem > node.mem:
                continue
            svc.node = node.name
            return True
        return False

    def _set_phase(self, svc: PlacedService, phase: str, reason: str = "") -> None:
        svc.phase = phase
        if reason:
            svc.reason = reason
        self.outbox.append(("state", svc.id, phase))

    def _annotate(self, kind: str, obj: str, text: str) -> None:
        self.outbox.append(("annotation", kind, obj, text))

    def drain(self) -> list[tuple]:
        out, self.outbox = self.outbox, []
        return out

    def stop(self, sid: str) -> bool:
        svc = self.services.get(sid)
        if svc is None or not svc.live:
            return False
        self._set_phase(svc, SUCCESS, "stopped")
        return True

    def kill(self, sid: str) -> bool:
        svc = self.services.get(sid)
        if svc is None or not svc.live:
            return False
        self._set_phase(svc, FAILED, "killed")
        return True

    def pause(self, sid: str) -> bool:
        svc = self.services.get(sid)
        if svc is None or svc.phase != RUNNING or svc.paused:
            return False
        svc.paused = True
        return True

    def resume(self, sid: str) -> bool:
        svc = self.services.get(sid)
        if svc is None or not svc.paused:
            return False
        svc.paused = False
        return True

    def remove(self, sid: str) -> None:
        self.services.pop(sid, None)

    def live(self) -> list[PlacedService]:
        return [s for s in self.services.values() if s.live]

    # fault hooks ------------------------------------------------------------

    def isolate(self, sid: str, now: int) -> None:
        svc = self.services[sid]
        if svc.isolated == 0:
            svc.isolated_since = now
        svc.isolated += 1

    def restore(self, sid: str) -> None:
        svc = self.services.get(sid)
        if svc is None or svc.isolated == 0:
            return
        svc.isolated -= 1
        if svc.isolated == 0:
            svc.isolated_since = None

    def set_netem(self, sid: str, params: dict | None) -> None:
        if sid in self.services:
            self.services[sid].netem = params

    def set_io(self, sid: str, params: dict | None) -> None:
        if sid in self.services:
            self.services[sid].io = params

    def link(self, a: str, b: str) -> LinkState:
        sa, sb = self.services.get(a), self.services.get(b)
        if sa is None or sb is None:
            return LinkState(False)
        if sa.isolated or sb.isolated:
            return LinkState(False)
        delay, keep, dup = 0, 1.0, 0.0
        for s in (sa, sb):
            if s.netem:
                delay += s.netem.get("delay", 0)
                keep *= 1 - s.netem.get("loss", 0.0) / 100
                dup = max(dup, s.netem.get("duplicate", 0.0))
        return LinkState(True, delay, 100 * (1 - keep), dup)

    # simulation -------------------------------------------------------------

    def _lifecycle(self, now: int) -> None:
        for svc in list(self.services.values()):
            if svc.phase == PENDING:
                if svc.node is None:
                    if self.place(svc):
                        self._schedule_ready(svc, now)
                    elif now - svc.requested_at > self.config.grace:
                        self._set_phase(svc, FAILED, "unschedulable")
                        self._annotate("custom", svc.id, f"unschedulable {svc.id}: no feasible node")
                elif now >= svc.ready_at:
                    svc.started_at = now
                    self._set_phase(svc, RUNNING)
            elif svc.active:
                fail_after = getattr(svc.profile, "fail_after", None)
                if fail_after is not None and now - svc.started_at >= fail_after:
                    self._set_phase(svc, FAILED, "crashed")

    def failover_step(self, now: int) -> None:
        for m in list(self.services.values()):
            p = m.profile
            if not (isinstance(p, KVProfile) and p.role == "master" and p.failover and m.active):
                continue
            if not m.isolated or now - m.isolated_since < p.detection:
                continue
            slaves = sorted(
                (s for s in self.services.values()
                 if isinstance(s.profile, KVProfile) and s.profile.role == "slave"
                 and s.profile.master == m.id and s.active and not s.isolated),
                key=lambda s: s.id,
            )
            if not slaves:
                continue
            new = slaves[0]
            new.profile.role, new.profile.master = "master", ""
            p.role, p.master = "slave", new.id
            for s in self.services.values():
                if isinstance(s.profile, KVProfile) and s.profile.master == m.id:
                    s.profile.master = new.id
            self._annotate("custom", new.id, f"role-swap {m.id} -> {new.id}")

    def _retarget(self) -> None:
        for c in self.services.values():
            p = c.profile
            if not (isinstance(p, ClientProfile) and p.sentinel_aware and c.active):
                continue
            tgt = self.services.get(p.target)
            if tgt is not None and isinstance(tgt.profile, KVProfile) and tgt.profile.role == "slave" and tgt.profile.master:
                p.target = tgt.profile.master

    def _draw(self, rate: float, prob: float, dt: float) -> float:
        if prob <= 0 or rate <= 0:
            return 0.0
        if prob >= 1:
            return rate
        return float(self.rng.binomial(int(round(rate * dt)), prob)) / dt

    def tick(self, now: int) -> list[tuple[str, int, float]]:
        """Advance one tick ending at ``now``; returns metric samples ``(series, t, value)``."""
        dt = self.config.tick / SECOND
        self._lifecycle(now)
        self.failover_step(now)
        self._retarget()
        active = [s for s in self.services.values() if s.active]
        servers = {s.id: s for s in active if isinstance(s.profile, ServerProfile)}
        clients = [s for s in active if isinstance(s.profile, ClientProfile)]
        stats = {c.id: {"ok": 0.0, "failed": 0.0, "latency": FAIL_FAST_LATENCY_MS} for c in clients}
        entries: dict[str, list] = {sid: [] for sid in servers}
        for c in clients:
            p = c.profile
            eff = p.demand
            if p.cpu:
                eff *= min(1.0, c.spec.resources.cpu / p.cpu)
            tgt = servers.get(p.target)
            link = self.link(c.id, p.target) if tgt else LinkState(False)
            if tgt is None or not link.up:
                stats[c.id]["failed"] = eff
                continue
            lost = self._draw(eff, link.loss / 100, dt)
            rest = eff - lost
            write_fail = 0.0
            if isinstance(tgt.profile, KVProfile) and tgt.profile.role == "slave":
                write_fail = rest * (1 - p.read_fraction)
            useful = rest - write_fail
            stats[c.id]["failed"] = lost + write_fail
            entries[tgt.id].append((c, useful * (1 + link.dup / 100), link))
        server_metrics = {}
        for sid, srv in servers.items():
            p = srv.profile
            demand = sum(load for _, load, _ in entries[sid])
            served = min(demand, p.capacity)
            util = demand / p.capacity
            latency = p.base_latency * (1.0 / (1.0 - min(util, 0.999))) ** p.exponent
            io = srv.io or {}
            for c, load, link in entries[sid]:
                share = served * load / demand if demand > 0 else 0.0
                ok = share / (1 + link.dup / 100)
                err = self._draw(ok, io.get("errorRate", 0.0), dt)
                ok -= err
                st = stats[c.id]
                st["ok"] = ok
                st["failed"] += err
                rf = c.profile.read_fraction
                io_lat = (rf * io.get("readLatency", 0) + (1 - rf) * io.get("writeLatency", 0)) / SECOND
                if ok > 0:
                    st["latency"] = 1000 * (latency + io_lat) + link.delay / MS
            role = 1.0
            if isinstance(p, KVProfile):
                role = 1.0 if p.role == "master" else 0.0
            server_metrics[sid] = {
                "ops_per_sec": served,
                "latency_ms": 1000 * latency,
                "role": role,
                "cpu_usage": srv.spec.resources.cpu * min(util, 1.0),
                "mem_usage": srv.spec.resources.mem * (0.2 + 0.6 * min(util, 1.0)),
            }
        samples = []
        for svc in active:
            if isinstance(svc.profile, ClientProfile):
                st = stats[svc.id]
                p = svc.profile
                svc.done_ops += st["ok"] * dt
                values = {
                    "throughput": st["ok"],
                    "failed_ops": st["failed"],
                    "latency_ms": st["latency"],
                    "cpu_usage": svc.spec.resources.cpu * min(1.0, (st["ok"] + st["failed"]) / p.demand),
                    "mem_usage": svc.spec.resources.mem * 0.1,
                }
            elif svc.id in server_metrics:
                values = server_metrics[svc.id]
            else:
                values = {"cpu_usage": 0.0, "mem_usage": svc.spec.resources.mem * 0.05}
            if not svc.isolated:
                for metric in svc.series:
                    if metric in values:
                        samples.append((f"{svc.group}.{svc.id}.{metric}", now, values[metric]))
            if isinstance(svc.profile, ClientProfile) and svc.profile.ops is not None and svc.done_ops >= svc.profile.ops:
                self._set_phase(svc, SUCCESS, "completed")
        return samples
