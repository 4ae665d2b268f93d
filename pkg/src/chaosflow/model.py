"""Experiment documents: templates, workflows, actions, groups and faults.

Documents are YAML with the envelope ``kind`` / ``metadata.name`` / ``spec``.
Everything here is immutable once parsed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import yaml

from . import holes
from .clock import TimerError, format_duration, parse_duration, parse_timer
from .expr import ExprError, OracleExpr, parse_alert

ACTION_KINDS = (
    "DistributedGroup", "Update", "Stop", "Pause", "Resume", "Teardown", "Destroy",
    "Kill", "Partition", "Netem", "IO", "Revoke", "Wrapper",
)
FAULT_KINDS = ("Kill", "Partition", "Netem", "IO")
TRANSIENT_FAULTS = ("Partition", "Netem", "IO")
TARGET_KINDS = ("Stop", "Pause", "Resume")
SCHEDULABLE = TARGET_KINDS + FAULT_KINDS
CREATION_MODELS = ("sequential", "parallel", "scheduled")
MACRO_FILTERS = ("first", "last", "oldest", "recent", "all", "any", "percent")
RESERVED_OBJECTS = ("workflow",)


class SpecError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None, cycle: list[str] | None = None):
        self.line, self.column, self.cycle = line, column, cycle
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Diagnostic:
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.where}: {self.message}"


# -- services ---------------------------------------------------------------

@dataclass(frozen=True)
class Port:
    name: str
    number: int


@dataclass(frozen=True)
class Resources:
    cpu: float
    mem: int
    disk_iops: float | None = None
    net_bw: float | None = None


@dataclass(frozen=True)
class ProfileRef:
    name: str
    params: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    resources: Resources
    ports: tuple[Port, ...] = ()
    agents: tuple[str, ...] = ()
    profile: ProfileRef | None = None
    labels: dict[str, str] = field(default_factory=dict)


_MEM_UNITS = {
    "": 1, "b": 1, "k": 10**3, "kb": 10**3, "m": 10**6, "mb": 10**6, "g": 10**9, "gb": 10**9,
    "t": 10**12, "tb": 10**12, "ki": 2**10, "kib": 2**10, "mi": 2**20, "mib": 2**20,
    "gi": 2**30, "gib": 2**30, "ti": 2**40, "tib": 2**40,
}


def parse_bytes(value: Any) -> int:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return int(value)
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([A-Za-z]*)\s*", str(value))
    if m is None or m.group(2).lower() not in _MEM_UNITS:
        raise SpecError(f"bad memory quantity {value!r}")
    return int(float(m.group(1)) * _MEM_UNITS[m.group(2).lower()])


def _positive(value: Any, what: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise SpecError(f"{what} must be a number, got {value!r}") from None
    if not v > 0:
        raise SpecError(f"{what} must be > 0, got {value!r}")
    return v


def parse_service(text: str, name: str) -> ServiceSpec:
    """Parse a rendered template body into a validated ServiceSpec."""
    doc = load_yaml(text)
    if not isinstance(doc, dict):
        raise SpecError("service body must be a mapping")
    res = doc.get("resources") or {}
    if "cpu" not in res or "mem" not in res:
        raise SpecError("resources need cpu and mem")
    mem = parse_bytes(res["mem"])
    if mem <= 0:
        raise SpecError("mem must be > 0")
    resources = Resources(
        cpu=_positive(res["cpu"], "cpu"),
        mem=mem,
        disk_iops=_positive(res["diskIops"], "diskIops") if "diskIops" in res else None,
        net_bw=_positive(res["netBw"], "netBw") if "netBw" in res else None,
    )
    raw_ports = doc.get("ports")
    if raw_ports is None:
        raw_ports = (doc.get("container") or {}).get("ports") or []
    ports = []
    for p in raw_ports:
        number = p.get("number", p.get("containerPort"))
        try:
            number = int(number)
        except (TypeError, ValueError):
            raise SpecError(f"port {p.get('name')!r} has non-numeric number {number!r}") from None
        ports.append(Port(str(p.get("name", "")), number))
    numbers = [p.number for p in ports]
    if len(set(numbers)) != len(numbers):
        raise SpecError(f"duplicate port numbers in {numbers}")
    agents = doc.get("agents") or ()
    if isinstance(agents, dict):
        agents = [a for group in agents.values() for a in (group or ())]
    profile = doc.get("profile")
    if isinstance(profile, str):
        profile = ProfileRef(profile)
    elif isinstance(profile, dict):
        params = {k: str(v) for k, v in profile.items() if k != "name"}
        if "name" not in profile:
            raise SpecError("profile needs a name")
        profile = ProfileRef(str(profile["name"]), params)
    elif profile is not None:
        raise SpecError("profile must be a name or a mapping")
    labels = {str(k): str(v) for k, v in (doc.get("labels") or {}).items()}
    return ServiceSpec(name, resources, tuple(ports), tuple(str(a) for a in agents), profile, labels)


# -- templates --------------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    name: str
    parameters: dict[str, str]
    body: str


@dataclass(frozen=True)
class TemplateSpec:
    name: str
    variants: dict[str, Variant]


class TemplateLibrary:
    def __init__(self, templates: Mapping[str, TemplateSpec] | None = None):
        self.templates: dict[str, TemplateSpec] = dict(templates or {})

    def add(self, t: TemplateSpec) -> None:
        if t.name in self.templates:
            raise SpecError(f"duplicate template name {t.name!r}")
        self.templates[t.name] = t

    def paths(self) -> list[str]:
        return sorted(f"{t.name}/{v}" for t in self.templates.values() for v in t.variants)

    def __contains__(self, ref: str) -> bool:
        try:
            self.get(ref)
        except KeyError:
            return False
        return True

    def get(self, ref: str) -> tuple[TemplateSpec, Variant]:
        name, _, variant = ref.partition("/")
        t = self.templates[name]
        return t, t.variants[variant]

    def __len__(self) -> int:
        return len(self.templates)

    def __eq__(self, other) -> bool:
        return isinstance(other, TemplateLibrary) and self.templates == other.templates


# libyaml's loader when compiled in; same safe subset, much faster
YAML_LOADER = getattr(yaml, "CSafeLoader", yaml.SafeLoader)


def load_yaml(text: str) -> Any:
    """Parse YAML, turning syntax errors into positioned SpecErrors."""
    try:
        return yaml.load(text, Loader=YAML_LOADER)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        raise SpecError(f"syntax error: {e.problem or e}", mark.line + 1 if mark else None,
                        mark.column + 1 if mark else None) from None
    except yaml.YAMLError as e:
        raise SpecError(f"syntax error: {e}") from None


def _envelope(doc: Any, kind: str) -> tuple[str, Any]:
    if not isinstance(doc, dict):
        raise SpecError("document must be a mapping")
    got = doc.get("kind", doc.get("Kind"))
    if got != kind:
        raise SpecError(f"expected kind {kind!r}, got {got!r}")
    name = (doc.get("metadata") or {}).get("name")
    if not isinstance(name, str) or not name:
        raise SpecError("metadata.name is required")
    return name, doc.get("spec")


def document_kind(text: str) -> str | None:
    doc = load_yaml(text)
    if isinstance(doc, dict):
        return doc.get("kind", doc.get("Kind"))
    return None


def parse_template(text: str) -> TemplateSpec:
    name, spec = _envelope(load_yaml(text), "Template")
    if not isinstance(spec, dict) or not spec:
        raise SpecError(f"template {name!r} declares no variants")
    variants = {}
    for vname, body in spec.items():
        if not isinstance(body, dict):
            raise SpecError(f"{name}/{vname}: variant must be a mapping")
        params = ((body.get("inputs") or {}).get("parameters")) or {}
        params = {str(k): "" if v is None else str(v) for k, v in params.items()}
        text_body = body.get("spec", "")
        if not isinstance(text_body, str):
            text_body = yaml.safe_dump(text_body, sort_keys=False)
        try:
            spans = holes.find_holes(text_body)
        except holes.HoleError as e:
            raise SpecError(f"{name}/{vname}: {e}", _line_of(text_body, e.offset)) from None
        for start, _, node in spans:
            missing = holes.references(node) - params.keys()
            if missing:
                raise SpecError(f"{name}/{vname}: hole references undeclared parameter {sorted(missing)[0]!r}",
                                _line_of(text_body, start))
        variants[str(vname)] = Variant(str(vname), params, text_body)
    return TemplateSpec(name, variants)


def _line_of(body: str, offset: int | None) -> int | None:
    return None if offset is None else body.count("\n", 0, offset) + 1


def parse_library(documents: Iterable[str]) -> TemplateLibrary:
    lib = TemplateLibrary()
    for text in documents:
        lib.add(parse_template(text))
    return lib


def render_template(t: TemplateSpec) -> str:
    spec = {}
    for v in t.variants.values():
        spec[v.name] = {"inputs": {"parameters": dict(v.parameters)}, "spec": v.body}
    return yaml.safe_dump({"kind": "Template", "metadata": {"name": t.name}, "spec": spec}, sort_keys=False)


# -- macros -----------------------------------------------------------------

_MACRO = re.compile(
    r"\.(?:group\.)?(?P<group>[A-Za-z0-9_-]+)\.(?P<filter>\*|[A-Za-z_]+)(?:\((?P<arg>[^)]*)\))?\Z"
)


@dataclass(frozen=True)
class Macro:
    group: str
    filter: str
    arg: float | None = None
    source: str = ""


def is_macro(value: Any) -> bool:
    return isinstance(value, str) and value.startswith(".")


def parse_macro(text: str) -> Macro:
    """Parse ``.group.<name>.<filter>`` (or the ``.<name>.<filter>`` alias)."""
    m = _MACRO.match(text.strip())
    if m is None:
        raise SpecError(f"malformed macro {text!r}")
    flt = "all" if m.group("filter") == "*" else m.group("filter")
    arg = m.group("arg")
    value = None
    if arg is not None and arg.strip():
        try:
            value = float(arg)
        except ValueError:
            raise SpecError(f"bad macro argument in {text!r}") from None
    return Macro(m.group("group"), flt, value, text)


def macro_problem(m: Macro) -> str | None:
    if m.filter not in MACRO_FILTERS:
        return f"unknown filter {m.filter!r}"
    if m.filter == "percent":
        if m.arg is None or not 0 <= m.arg <= 100:
            return "percent(k) needs 0 <= k <= 100"
    elif m.arg is not None:
        return f"filter {m.filter!r} takes no argument"
    return None


# -- workflow ---------------------------------------------------------------

@dataclass(frozen=True)
class DependsSpec:
    running: tuple[str, ...] = ()
    success: tuple[str, ...] = ()
    expr: str | None = None

    def names(self) -> set[str]:
        if self.expr is not None:
            return OracleExpr.parse(self.expr).objects()
        return set(self.running) | set(self.success)


@dataclass(frozen=True)
class GroupOracles:
    fail: str | None = None
    success: str | None = None
    suspend: str | None = None


@dataclass(frozen=True)
class GroupSpec:
    template_ref: str
    instances: int | None = None
    inputs: tuple[dict[str, str], ...] | None = None
    schedule: str | None = None
    creation_model: str = "parallel"
    oracles: GroupOracles = GroupOracles()
    placement_labels: dict[str, str] = field(default_factory=dict)
    address_failed: bool = False

    def input_list(self) -> list[dict[str, str]]:
        """Parameter maps, one per instance (inputs are cycled when both are given)."""
        if self.inputs is None:
            return [{} for _ in range(self.instances or 0)]
        n = self.instances if self.instances is not None else len(self.inputs)
        return [dict(self.inputs[k % len(self.inputs)]) for k in range(n)]


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    targets: str
    duration: int | None = None
    params: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class TargetSpec:
    targets: str


@dataclass(frozen=True)
class RevokeSpec:
    fault: str


@dataclass(frozen=True)
class UpdateSpec:
    group: str
    parameters: dict[str, str]


@dataclass(frozen=True)
class WrapperSpec:
    body: dict[str, Any]


@dataclass(frozen=True)
class ActionSpec:
    name: str
    kind: str
    payload: Any = None
    depends: DependsSpec | None = None
    oracle: str | None = None
    schedule: str | None = None
    allow_empty_target: bool = False


@dataclass(frozen=True)
class WorkflowSpec:
    name: str
    actions: tuple[ActionSpec, ...]
    alerts: dict[str, str] = field(default_factory=dict)

    def action(self, name: str) -> ActionSpec:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    def groups(self) -> list[str]:
        return [a.name for a in self.actions if a.kind == "DistributedGroup"]


_NAME = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_-]*\Z")
_NETEM_DEFAULTS = {"delay": 0, "loss": 0.0, "duplicate": 0.0}
_IO_DEFAULTS = {"readLatency": 0, "writeLatency": 0, "errorRate": 0.0}


def _percent(value: Any, what: str) -> float:
    s = str(value).strip().rstrip("%")
    try:
        v = float(s)
    except ValueError:
        raise SpecError(f"{what}: bad percentage {value!r}") from None
    if not 0 <= v <= 100:
        raise SpecError(f"{what}: percentage out of range {value!r}")
    return v


def _duration(value: Any, what: str) -> int:
    try:
        return parse_duration(value)
    except TimerError as e:
        raise SpecError(f"{what}: {e}") from None


def _fault_params(kind: str, body: dict, where: str) -> dict[str, Any]:
    if kind == "Netem":
        return {
            "delay": _duration(body.get("delay", 0), f"{where}.delay"),
            "loss": _percent(body.get("loss", 0), f"{where}.loss"),
            "duplicate": _percent(body.get("duplicate", 0), f"{where}.duplicate"),
        }
    if kind == "IO":
        rate = float(body.get("errorRate", 0))
        if not 0 <= rate <= 1:
            raise SpecError(f"{where}.errorRate must be within [0, 1]")
        return {
            "readLatency": _duration(body.get("readLatency", 0), f"{where}.readLatency"),
            "writeLatency": _duration(body.get("writeLatency", 0), f"{where}.writeLatency"),
            "errorRate": rate,
        }
    return {}


def _parse_depends(raw: Any, where: str) -> DependsSpec | None:
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = {"expr": raw}
    if not isinstance(raw, dict):
        raise SpecError(f"{where}: depends must be a mapping or an expression")
    unknown = set(raw) - {"running", "success", "expr"}
    if unknown:
        raise SpecError(f"{where}: unknown depends keys {sorted(unknown)}")
    if "expr" in raw and (raw.get("running") or raw.get("success")):
        raise SpecError(f"{where}: use either sugar or expr, not both")
    if "expr" in raw:
        return DependsSpec(expr=str(raw["expr"]))
    return DependsSpec(tuple(str(n) for n in raw.get("running") or ()),
                       tuple(str(n) for n in raw.get("success") or ()))


def _parse_group(body: Any, where: str) -> GroupSpec:
    if not isinstance(body, dict):
        raise SpecError(f"{where}: distributedGroup must be a mapping")
    ref = body.get("templateRef")
    if not isinstance(ref, str) or "/" not in ref:
        raise SpecError(f"{where}: templateRef must be <template>/<variant>")
    instances = body.get("instances")
    inputs = body.get("inputs")
    if instances is None and inputs is None:
        raise SpecError(f"{where}: one of instances or inputs is required")
    if instances is not None:
        if isinstance(instances, bool) or not isinstance(instances, int) or instances < 1:
            raise SpecError(f"{where}: instances must be an integer >= 1")
    if inputs is not None:
        if not isinstance(inputs, list) or not inputs or not all(isinstance(i, dict) for i in inputs):
            raise SpecError(f"{where}: inputs must be a non-empty list of parameter maps")
        inputs = tuple({str(k): "" if v is None else str(v) for k, v in i.items()} for i in inputs)
    schedule = body.get("schedule")
    model = body.get("creationModel")
    if schedule is not None:
        schedule = str(schedule)
        try:
            parse_timer(schedule)
        except TimerError as e:
            raise SpecError(f"{where}.schedule: {e}") from None
        model = model or "scheduled"
        if model != "scheduled":
            raise SpecError(f"{where}: schedule requires creationModel 'scheduled'")
    elif model == "scheduled":
        raise SpecError(f"{where}: creationModel 'scheduled' requires a schedule")
    model = model or "parallel"
    if model not in CREATION_MODELS:
        raise SpecError(f"{where}: unknown creationModel {model!r}")
    orc = body.get("oracles") or {}
    unknown = set(orc) - {"fail", "success", "suspend"}
    if unknown:
        raise SpecError(f"{where}: unknown oracle kinds {sorted(unknown)}")
    oracles = GroupOracles(**{k: str(v) for k, v in orc.items()})
    for k, v in orc.items():
        _check_expr(str(v), f"{where}.oracles.{k}")
    labels = body.get("placementLabels")
    if labels is None:
        labels = (body.get("placement") or {}).get("labels") or {}
    return GroupSpec(ref, instances, inputs, schedule, model, oracles,
                     {str(k): str(v) for k, v in labels.items()}, bool(body.get("addressFailed", False)))


def _check_expr(text: str, where: str) -> OracleExpr:
    try:
        return OracleExpr.parse(text)
    except ExprError as e:
        raise SpecError(f"{where}: {e}") from None


def _parse_action(raw: Any, index: int, declared: dict[str, ActionSpec]) -> ActionSpec:
    where = f"spec[{index}]"
    if not isinstance(raw, dict):
        raise SpecError(f"{where}: action must be a mapping")
    kind = raw.get("action")
    name = raw.get("name")
    if not isinstance(name, str) or not _NAME.match(name):
        raise SpecError(f"{where}: action needs a valid name, got {name!r}")
    where = f"action {name!r}"
    if kind not in ACTION_KINDS:
        raise SpecError(f"{where}: unknown action kind {kind!r}")
    if name in declared:
        raise SpecError(f"{where}: duplicate action name")
    if name in RESERVED_OBJECTS:
        raise SpecError(f"{where}: {name!r} is reserved")
    key = "io" if kind == "IO" else kind[0].lower() + kind[1:]
    body = raw.get(key)
    allow_empty = False
    if kind == "DistributedGroup":
        payload = _parse_group(body, where)
    elif kind in FAULT_KINDS or kind in TARGET_KINDS:
        if isinstance(body, str):
            body = {"targets": body}
        if not isinstance(body, dict) or not isinstance(body.get("targets"), str):
            raise SpecError(f"{where}: {key}.targets is required")
        allow_empty = bool(body.get("allowEmptyTarget", False))
        if kind in TARGET_KINDS:
            payload = TargetSpec(body["targets"])
        else:
            duration = None
            if body.get("duration") is not None:
                if kind == "Kill":
                    raise SpecError(f"{where}: Kill is permanent and takes no duration")
                duration = _duration(body["duration"], f"{where}.duration")
                if duration <= 0:
                    raise SpecError(f"{where}: duration must be positive")
            payload = FaultSpec(kind, body["targets"], duration, _fault_params(kind, body, f"{where}.{key}"))
    elif kind == "Revoke":
        fault = body.get("fault") if isinstance(body, dict) else body
        if not isinstance(fault, str):
            raise SpecError(f"{where}: revoke needs the name of a fault action")
        target = declared.get(fault)
        if target is None or target.kind not in TRANSIENT_FAULTS:
            raise SpecError(f"{where}: {fault!r} is not a previously declared transient fault action")
        payload = RevokeSpec(fault)
    elif kind == "Update":
        if not isinstance(body, dict) or not isinstance(body.get("group"), str):
            raise SpecError(f"{where}: update.group is required")
        grp = declared.get(body["group"])
        if grp is None or grp.kind != "DistributedGroup":
            raise SpecError(f"{where}: {body['group']!r} is not a previously declared group")
        payload = UpdateSpec(body["group"], {str(k): str(v) for k, v in (body.get("parameters") or {}).items()})
    elif kind == "Wrapper":
        payload = WrapperSpec(dict(body or {}))
    else:
        payload = None
    schedule = raw.get("schedule")
    if schedule is not None:
        if kind not in SCHEDULABLE:
            raise SpecError(f"{where}: {kind} actions cannot be scheduled")
        schedule = str(schedule)
        try:
            parse_timer(schedule)
        except TimerError as e:
            raise SpecError(f"{where}.schedule: {e}") from None
    oracle = raw.get("oracle")
    if oracle is not None:
        oracle = str(oracle)
        _check_expr(oracle, f"{where}.oracle")
    depends = _parse_depends(raw.get("depends"), where)
    if depends is not None and depends.expr is not None:
        _check_expr(depends.expr, f"{where}.depends")
    return ActionSpec(name, kind, payload, depends, oracle, schedule, allow_empty)


def parse_workflow(document: str, library: TemplateLibrary | None = None) -> WorkflowSpec:
    name, spec = _envelope(load_yaml(document), "Workflow")
    alerts_raw: dict = {}
    if isinstance(spec, dict):
        alerts_raw = spec.get("alerts") or {}
        spec = spec.get("actions")
    if not isinstance(spec, list):
        raise SpecError("workflow spec must be a list of actions")
    declared: dict[str, ActionSpec] = {}
    for i, raw in enumerate(spec):
        a = _parse_action(raw, i, declared)
        declared[a.name] = a
    alerts = {}
    for aname, text in alerts_raw.items():
        aname = str(aname)
        if aname in declared or aname in RESERVED_OBJECTS or not _NAME.match(aname):
            raise SpecError(f"alert {aname!r}: name collides with an action or is invalid")
        try:
            parse_alert(str(text))
        except ExprError as e:
            raise SpecError(f"alert {aname!r}: {e}") from None
        alerts[aname] = str(text)
    wf = WorkflowSpec(name, tuple(declared.values()), alerts)
    known = set(declared) | set(alerts) | set(RESERVED_OBJECTS)
    for a in wf.actions:
        if a.depends is not None:
            missing = sorted(a.depends.names() - known)
            if missing:
                raise SpecError(f"action {a.name!r}: unknown dependency {missing[0]!r}")
        if library is not None and a.kind == "DistributedGroup" and a.payload.template_ref not in library:
            raise SpecError(f"action {a.name!r}: unknown templateRef {a.payload.template_ref!r}")
    topological_order(wf)
    return wf


@dataclass(frozen=True)
class Edge:
    source: str  # the dependency
    target: str  # the dependent action
    label: str
    dashed: bool = False


def dependency_edges(wf: WorkflowSpec) -> list[Edge]:
    names = {a.name for a in wf.actions}
    edges = []
    for a in wf.actions:
        d = a.depends
        if d is None:
            continue
        if d.expr is not None:
            for obj in sorted(d.names() & names):
                edges.append(Edge(obj, a.name, d.expr, True))
        else:
            edges += [Edge(n, a.name, "running") for n in d.running if n in names]
            edges += [Edge(n, a.name, "success") for n in d.success if n in names]
    return edges


def topological_order(wf: WorkflowSpec) -> list[str]:
    """Kahn's algorithm in declaration order; raises SpecError naming one cycle."""
    order = [a.name for a in wf.actions]
    preds: dict[str, set[str]] = {n: set() for n in order}
    for e in dependency_edges(wf):
        preds[e.target].add(e.source)
    done: list[str] = []
    remaining = list(order)
    while remaining:
        ready = [n for n in remaining if preds[n] <= set(done)]
        if not ready:
            cycle = _find_cycle(remaining, preds)
            raise SpecError("dependency cycle: " + " -> ".join(cycle), cycle=cycle)
        done.extend(ready)
        remaining = [n for n in remaining if n not in ready]
    return done


def _find_cycle(nodes: list[str], preds: dict[str, set[str]]) -> list[str]:
    node, path = nodes[0], []
    while node not in path:
        path.append(node)
        node = sorted(p for p in preds[node] if p in nodes)[0]
    cycle = path[path.index(node):]
    cycle.reverse()
    return cycle + [cycle[0]]


def validate_macros(wf: WorkflowSpec) -> list[Diagnostic]:
    groups = set(wf.groups())
    out = []

    def check(text: str, where: str) -> None:
        try:
            m = parse_macro(text)
        except SpecError as e:
            out.append(Diagnostic(where, str(e)))
            return
        if m.group not in groups:
            out.append(Diagnostic(where, f"unknown group {m.group!r} in {text!r}"))
        problem = macro_problem(m)
        if problem:
            out.append(Diagnostic(where, f"{problem} in {text!r}"))

    for a in wf.actions:
        p = a.payload
        if isinstance(p, GroupSpec) and p.inputs:
            for i, inp in enumerate(p.inputs):
                for k, v in inp.items():
                    if is_macro(v):
                        check(v, f"{a.name}.inputs[{i}].{k}")
        elif isinstance(p, (TargetSpec, FaultSpec)):
            if is_macro(p.targets):
                check(p.targets, f"{a.name}.targets")
            elif a.kind in TARGET_KINDS and p.targets in groups:
                continue
            else:
                out.append(Diagnostic(f"{a.name}.targets", f"target {p.targets!r} is neither a macro nor a group"))
    return out


# -- canonical rendering ----------------------------------------------------

def _render_action(a: ActionSpec) -> dict:
    out: dict[str, Any] = {"action": a.kind, "name": a.name}
    if a.depends is not None:
        d = a.depends
        out["depends"] = {"expr": d.expr} if d.expr is not None else {"running": list(d.running), "success": list(d.success)}
    key = "io" if a.kind == "IO" else a.kind[0].lower() + a.kind[1:]
    p = a.payload
    if isinstance(p, GroupSpec):
        body: dict[str, Any] = {"templateRef": p.template_ref}
        if p.instances is not None:
            body["instances"] = p.instances
        if p.inputs is not None:
            body["inputs"] = [dict(i) for i in p.inputs]
        if p.schedule is not None:
            body["schedule"] = p.schedule
        body["creationModel"] = p.creation_model
        orc = {k: v for k, v in (("fail", p.oracles.fail), ("success", p.oracles.success),
                                 ("suspend", p.oracles.suspend)) if v is not None}
        if orc:
            body["oracles"] = orc
        if p.placement_labels:
            body["placementLabels"] = dict(p.placement_labels)
        body["addressFailed"] = p.address_failed
        out[key] = body
    elif isinstance(p, (TargetSpec, FaultSpec)):
        body = {"targets": p.targets, "allowEmptyTarget": a.allow_empty_target}
        if isinstance(p, FaultSpec):
            if p.duration is not None:
                body["duration"] = format_duration(p.duration)
            for k, v in p.params.items():
                body[k] = format_duration(v) if k in ("delay", "readLatency", "writeLatency") else v
        out[key] = body
    elif isinstance(p, RevokeSpec):
        out[key] = {"fault": p.fault}
    elif isinstance(p, UpdateSpec):
        out[key] = {"group": p.group, "parameters": dict(p.parameters)}
    elif isinstance(p, WrapperSpec):
        out[key] = dict(p.body)
    if a.schedule is not None:
        out["schedule"] = a.schedule
    if a.oracle is not None:
        out["oracle"] = a.oracle
    return out


def render_workflow(wf: WorkflowSpec) -> str:
    actions = [_render_action(a) for a in wf.actions]
    spec: Any = {"actions": actions, "alerts": dict(wf.alerts)} if wf.alerts else actions
    return yaml.safe_dump({"kind": "Workflow", "metadata": {"name": wf.name}, "spec": spec}, sort_keys=False)
