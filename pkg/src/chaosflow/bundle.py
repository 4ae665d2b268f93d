"""Loading template libraries and workflows from disk or the bundled scenarios."""

from __future__ import annotations

import os
from importlib import resources

from .model import TemplateLibrary, WorkflowSpec, document_kind, parse_library, parse_template, parse_workflow


def _scenarios():
    return resources.files("chaosflow").joinpath("scenarios")


def builtin_library() -> TemplateLibrary:
    tdir = _scenarios().joinpath("templates")
    docs = [p.read_text(encoding="utf-8") for p in sorted(tdir.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".yaml")]
    return parse_library(docs)


def scenario_names() -> list[str]:
    return sorted(p.name[:-5] for p in _scenarios().iterdir() if p.name.endswith(".yaml"))


def scenario_text(name: str) -> str:
    return _scenarios().joinpath(f"{name}.yaml").read_text(encoding="utf-8")


def load_scenario(name: str, library: TemplateLibrary | None = None) -> tuple[WorkflowSpec, TemplateLibrary]:
    library = library or builtin_library()
    return parse_workflow(scenario_text(name), library), library


def yaml_files(path: str) -> list[str]:
    if os.path.isdir(path):
        return sorted(os.path.join(path, f) for f in os.listdir(path) if f.endswith((".yaml", ".yml")))
    return [path]


def load_library(paths: list[str]) -> TemplateLibrary:
    """Every Template document found under ``paths`` (files or directories)."""
    lib = TemplateLibrary()
    for path in paths:
        for f in yaml_files(path):
            with open(f, encoding="utf-8") as fh:
                text = fh.read()
            if document_kind(text) == "Template":
                lib.add(parse_template(text))
    return lib
