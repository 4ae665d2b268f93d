"""Command-line entry points: validate, run, graph.

Exit codes: 0 on success/pass, 1 on validation problems or a failed
experiment, 2 on usage or IO errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime, timezone

from .bundle import builtin_library, load_library, scenario_names, scenario_text
from .clock import DEFAULT_EPOCH, TimerError, parse_duration
from .metrics import export_report
from .model import SpecError, TemplateLibrary, document_kind, parse_template, parse_workflow, validate_macros
from .sim import default_cluster, default_profiles, load_cluster, load_profiles
from .templating import dry_run
from .workflow import WorkflowController, to_dot

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    if path.startswith("builtin:"):
        name = path[len("builtin:"):]
        if name not in scenario_names():
            raise UsageError(f"no bundled scenario {name!r} (have: {', '.join(scenario_names())})")
        return scenario_text(name)
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise UsageError(f"{path}: {e.strerror}") from None


def _library(args, extra_docs: list[str]) -> TemplateLibrary:
    if args.templates:
        for p in args.templates:
            if not os.path.exists(p):
                raise UsageError(f"{p}: no such file or directory")
        lib = load_library(args.templates)
    else:
        lib = builtin_library()
    for text in extra_docs:
        t = parse_template(text)
        if t.name not in lib.templates:
            lib.add(t)
    return lib


def _split(paths: list[str]) -> tuple[list[tuple[str, str]], list[str]]:
    """Partition input files into workflow documents and template documents."""
    workflows, templates = [], []
    for p in paths:
        text = _read(p)
        kind = document_kind(text)
        if kind == "Template":
            templates.append(text)
        else:
            workflows.append((p, text))
    return workflows, templates


def _epoch(text: str | None) -> datetime:
    if text is None:
        return DEFAULT_EPOCH
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return dt if dt.tzinfo else dt.replace(tzinfo=timezone.utc)


def cmd_validate(args) -> int:
    workflows, templates = _split(args.paths)
    lib = _library(args, templates)
    profiles = default_profiles() if args.profiles is None else load_profiles(_read(args.profiles))
    problems = 0
    for path, text in workflows:
        try:
            wf = parse_workflow(text, lib)
        except SpecError as e:
            print(f"{path}: {e}", file=sys.stderr)
            problems += 1
            continue
        diags = validate_macros(wf) + dry_run(wf, lib, profiles.packages)
        for d in diags:
            print(f"{path}: {d}", file=sys.stderr)
        problems += len(diags)
        if not diags:
            print(f"{path}: ok ({len(wf.actions)} actions)")
    return EXIT_FAIL if problems else EXIT_OK


def cmd_run(args) -> int:
    workflows, templates = _split([args.workflow])
    if len(workflows) != 1:
        raise UsageError(f"{args.workflow}: not a workflow document")
    lib = _library(args, templates)
    path, text = workflows[0]
    try:
        wf = parse_workflow(text, lib)
    except SpecError as e:
        print(f"{path}: {e}", file=sys.stderr)
        return EXIT_FAIL
    diags = validate_macros(wf)
    if diags:
        for d in diags:
            print(f"{path}: {d}", file=sys.stderr)
        return EXIT_FAIL
    cluster = default_cluster() if args.cluster is None else load_cluster(_read(args.cluster))
    profiles = default_profiles() if args.profiles is None else load_profiles(_read(args.profiles))
    ctl = WorkflowController(
        wf, lib, cluster=cluster, profiles=profiles, seed=args.seed, epoch=_epoch(args.epoch),
        speed=args.speed, grace=None if args.grace is None else parse_duration(args.grace),
        until=parse_duration(args.until),
    )
    report = ctl.run()
    if args.report:
        export_report(report, args.report, args.csv_dir)
    v = report["verdict"]
    print(f"verdict: {v['status']}" + (f" ({v['reason']})" if v["reason"] else ""))
    return EXIT_OK if v["status"] == "passed" else EXIT_FAIL


def cmd_graph(args) -> int:
    workflows, templates = _split([args.workflow])
    if len(workflows) != 1:
        raise UsageError(f"{args.workflow}: not a workflow document")
    try:
        wf = parse_workflow(workflows[0][1])
    except SpecError as e:
        print(f"{args.workflow}: {e}", file=sys.stderr)
        return EXIT_FAIL
    sys.stdout.write(to_dot(wf))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaosflow", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log debug output")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--templates", action="append", metavar="PATH",
                        help="template file or directory (repeatable; default: bundled templates)")
        sp.add_argument("--profiles", metavar="PATH", help="behaviour profiles and observability packages (default: bundled)")

    v = sub.add_parser("validate", help="parse, check macros and the DAG, dry-run every template")
    v.add_argument("paths", nargs="+", help="workflow/template files; builtin:<name> for bundled scenarios")
    common(v)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="execute a workflow on the simulated cluster")
    r.add_argument("workflow", help="workflow file, or builtin:<name>")
    common(r)
    r.add_argument("--cluster", metavar="PATH", help="cluster config (default: bundled 5-node cluster)")
    r.add_argument("--seed", type=int, default=0, help="experiment seed (default: 0)")
    r.add_argument("--speed", type=float, default=0.0,
                   help="wall seconds per simulated second; 0 runs as fast as possible (default: 0)")
    r.add_argument("--epoch", help="ISO-8601 instant that simulated t=0 maps to (default: 2020-01-01T00:00:00Z)")
    r.add_argument("--report", metavar="PATH", help="write the JSON report here")
    r.add_argument("--csv-dir", metavar="DIR", help="also export one CSV per metric series")
    r.add_argument("--grace", help="placement grace period before a pending service fails (default: cluster config)")
    r.add_argument("--until", default="1h", help="simulated time limit (default: 1h)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("graph", help="print the action DAG as Graphviz DOT")
    g.add_argument("workflow", help="workflow file, or builtin:<name>")
    g.set_defaults(func=cmd_graph)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "speed", 0) < 0:
        print("chaosflow: --speed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"chaosflow: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SpecError, TimerError, ValueError) as e:
        print(f"chaosflow: {e}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as e:
        print(f"chaosflow: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
