"""Template instantiation and observability-package binding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import holes
from .model import (
    Diagnostic,
    GroupSpec,
    ServiceSpec,
    SpecError,
    TemplateLibrary,
    TemplateSpec,
    WorkflowSpec,
    is_macro,
    parse_service,
)

MACRO_PLACEHOLDER = "placeholder-0"


class TemplateError(ValueError):
    pass


def render(template: TemplateSpec, variant: str, params: Mapping[str, str] | None = None) -> str:
    """Substitute every hole of ``template/variant``; unspecified parameters take their defaults."""
    if variant not in template.variants:
        raise TemplateError(f"template {template.name!r} has no variant {variant!r}")
    v = template.variants[variant]
    params = dict(params or {})
    unknown = sorted(set(params) - set(v.parameters))
    if unknown:
        raise TemplateError(f"{template.name}/{variant}: undeclared parameter {unknown[0]!r}")
    values = {**v.parameters, **params}
    try:
        return holes.render(v.body, values)
    except holes.HoleError as e:
        raise TemplateError(f"{template.name}/{variant}: {e}") from None


def instantiate(template: TemplateSpec, variant: str, params: Mapping[str, str] | None = None,
                name: str | None = None) -> ServiceSpec:
    text = render(template, variant, params)
    try:
        return parse_service(text, name or f"{template.name}-{variant}")
    except SpecError as e:
        raise TemplateError(f"{template.name}/{variant}: rendered body is not a valid service: {e}") from None


@dataclass(frozen=True)
class Package:
    name: str
    series: tuple[str, ...]
    panels: tuple[str, ...] = ()


@dataclass(frozen=True)
class Binding:
    service: str
    package: str
    series: tuple[str, ...]
    panels: tuple[str, ...]


class PackageRegistry:
    def __init__(self, packages: Mapping[str, Package] | None = None):
        self.packages = dict(packages or {})

    @classmethod
    def from_mapping(cls, raw: Mapping) -> PackageRegistry:
        pkgs = {}
        for name, body in (raw or {}).items():
            body = body or {}
            pkgs[name] = Package(name, tuple(body.get("series") or ()), tuple(body.get("panels") or ()))
        return cls(pkgs)


def resolve_observability(spec: ServiceSpec, registry: PackageRegistry) -> list[Binding]:
    out = []
    for agent in spec.agents:
        pkg = registry.packages.get(agent)
        if pkg is None:
            raise TemplateError(f"service {spec.name!r}: unknown observability package {agent!r}")
        out.append(Binding(spec.name, pkg.name, pkg.series, pkg.panels))
    return out


def bound_series(bindings: list[Binding]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for b in bindings:
        for s in b.series:
            seen[s] = None
    return tuple(seen)


def dry_run(wf: WorkflowSpec, library: TemplateLibrary, registry: PackageRegistry | None = None) -> list[Diagnostic]:
    """Render every group's inputs with defaults, macros replaced by a placeholder id."""
    out = []
    for a in wf.actions:
        if not isinstance(a.payload, GroupSpec):
            continue
        g: GroupSpec = a.payload
        try:
            template, variant = library.get(g.template_ref)
        except KeyError:
            out.append(Diagnostic(a.name, f"unknown templateRef {g.template_ref!r}"))
            continue
        inputs = g.inputs or ({},)
        for i, inp in enumerate(inputs):
            params = {k: MACRO_PLACEHOLDER if is_macro(v) else v for k, v in inp.items()}
            try:
                svc = instantiate(template, variant.name, params, f"{a.name}-{i}")
                if registry is not None:
                    resolve_observability(svc, registry)
            except TemplateError as e:
                out.append(Diagnostic(f"{a.name}.inputs[{i}]", str(e)))
    return out
