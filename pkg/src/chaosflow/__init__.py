"""Declarative chaos and performance experiments on a simulated cluster."""

from .clock import EventBus, parse_duration, parse_timer
from .expr import OracleExpr, StateEnv, evaluate, parse_alert
from .model import SpecError, TemplateLibrary, parse_library, parse_template, parse_workflow
from .workflow import WorkflowController, run_experiment, to_dot

__all__ = [
    "EventBus",
    "OracleExpr",
    "SpecError",
    "StateEnv",
    "TemplateLibrary",
    "WorkflowController",
    "evaluate",
    "parse_alert",
    "parse_duration",
    "parse_library",
    "parse_template",
    "parse_timer",
    "parse_workflow",
    "run_experiment",
    "to_dot",
]
