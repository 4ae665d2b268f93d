"""Embedded-script holes: ``{{ .inputs.parameters.port }}``, ``{{ add .inputs.parameters.port 10000 }}``.

Grammar (Go-template flavoured)::

    hole   = "{{" expr "}}"
    expr   = call | atom
    call   = NAME atom { atom }
    atom   = path | INT | STRING | "(" call ")"
    path   = ".inputs.parameters." NAME
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

BUILTINS = {"add": 2, "sub": 2, "default": 2, "concat": None}
_PARAM_PREFIX = ".inputs.parameters."


class HoleError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (at offset {offset})")


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Const:
    value: str | int


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


HoleExpr = Union[Param, Const, Call]

_TOKEN = re.compile(r'\s+|(?P<path>(?:\.[A-Za-z_][\w-]*)+)|(?P<int>-?\d+)|(?P<str>"(?:[^"\\]|\\.)*")|(?P<name>[A-Za-z_]\w*)|(?P<paren>[()])')


def _tokens(src: str, base: int) -> list[tuple[str, str, int]]:
    out, pos = [], 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise HoleError(f"unexpected {src[pos]!r} in hole", base + pos)
        if m.lastgroup:
            out.append((m.lastgroup, m.group(), base + pos))
        pos = m.end()
    return out


def parse_hole(src: str, base: int = 0) -> HoleExpr:
    toks = _tokens(src, base)
    if not toks:
        raise HoleError("empty hole", base)
    pos = 0

    def atom() -> HoleExpr:
        nonlocal pos
        kind, text, off = toks[pos]
        pos += 1
        if kind == "path":
            if not text.startswith(_PARAM_PREFIX) or text.count(".") != 3:
                raise HoleError(f"unsupported path {text!r}; use .inputs.parameters.<name>", off)
            return Param(text[len(_PARAM_PREFIX):])
        if kind == "int":
            return Const(int(text))
        if kind == "str":
            return Const(bytes(text[1:-1], "utf-8").decode("unicode_escape"))
        if text == "(":
            node = call()
            if pos >= len(toks) or toks[pos][1] != ")":
                raise HoleError("missing ')'", off)
            pos += 1
            return node
        raise HoleError(f"unexpected {text!r}", off)

    def call() -> HoleExpr:
        nonlocal pos
        if pos >= len(toks):
            raise HoleError("unexpected end of hole", base + len(src))
        kind, text, off = toks[pos]
        if kind != "name":
            return atom()
        pos += 1
        if text not in BUILTINS:
            raise HoleError(f"unknown function {text!r}", off)
        args = []
        while pos < len(toks) and toks[pos][1] != ")":
            args.append(atom())
        arity = BUILTINS[text]
        if arity is not None and len(args) != arity:
            raise HoleError(f"{text} takes {arity} arguments, got {len(args)}", off)
        return Call(text, tuple(args))

    node = call()
    if pos != len(toks):
        raise HoleError(f"unexpected {toks[pos][1]!r}", toks[pos][2])
    return node


def find_holes(body: str) -> list[tuple[int, int, HoleExpr]]:
    """Locate and parse every hole; returns ``(start, end, expr)`` spans."""
    out, pos = [], 0
    while True:
        open_ = body.find("{{", pos)
        close = body.find("}}", pos)
        if open_ < 0:
            if close >= 0:
                raise HoleError("'}}' without matching '{{'", close)
            return out
        if 0 <= close < open_:
            raise HoleError("'}}' without matching '{{'", close)
        end = body.find("}}", open_ + 2)
        if end < 0:
            raise HoleError("unterminated '{{'", open_)
        inner = body[open_ + 2:end]
        if "{{" in inner:
            raise HoleError("nested '{{'", open_ + 2 + inner.index("{{"))
        out.append((open_, end + 2, parse_hole(inner, open_ + 2)))
        pos = end + 2


def references(node: HoleExpr) -> set[str]:
    if isinstance(node, Param):
        return {node.name}
    if isinstance(node, Call):
        return set().union(*(references(a) for a in node.args)) if node.args else set()
    return set()


def _as_int(v: str | int, func: str) -> int:
    if isinstance(v, int):
        return v
    try:
        return int(v.strip())
    except ValueError:
        raise HoleError(f"{func}: {v!r} is not an integer") from None


def evaluate(node: HoleExpr, params: Mapping[str, str]) -> str | int:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Param):
        if node.name not in params:
            raise HoleError(f"undeclared parameter {node.name!r}")
        return params[node.name]
    args = [evaluate(a, params) for a in node.args]
    if node.func == "add":
        return _as_int(args[0], "add") + _as_int(args[1], "add")
    if node.func == "sub":
        return _as_int(args[0], "sub") - _as_int(args[1], "sub")
    if node.func == "default":
        return args[0] if str(args[0]) != "" else args[1]
    return "".join(str(a) for a in args)


def render(body: str, params: Mapping[str, str]) -> str:
    parts, pos = [], 0
    for start, end, node in find_holes(body):
        parts.append(body[pos:start])
        parts.append(str(evaluate(node, params)))
        pos = end
    parts.append(body[pos:])
    return "".join(parts)
