"""C-like boolean expressions over object state, and the alert-rule language.

Expressions follow govaluate conventions::

    masters.running >= 1 && loaders.failed == 0
    !(g.failed - g.expectedFailed > 0)
    [redis-1].phase == "running"

Variables are always ``<object>.<field>``; object names that are not plain
identifiers are written in brackets.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Any, Mapping, Union

from .clock import TimerError, parse_duration

log = logging.getLogger(__name__)


class ExprError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class UnboundVariable(ExprError):
    pass


class TypeMismatch(ExprError):
    pass


# -- tokenizer --------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*|\[[^\]]+\])
  | (?P<op>&&|\|\||==|!=|<=|>=|[<>!+\-*/().])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(src: str) -> list[_Tok]:
    out, pos = [], 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ExprError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    out.append(_Tok("end", "", len(src)))
    return out


# -- AST --------------------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class Var:
    object: str
    field: str
    offset: int = 0


@dataclass(frozen=True)
class Unary:
    op: str
    operand: Node
    offset: int = 0


@dataclass(frozen=True)
class Binary:
    op: str
    left: Node
    right: Node
    offset: int = 0


Node = Union[Literal, Var, Unary, Binary]

_COMPARE = ("==", "!=", "<", "<=", ">", ">=")


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            raise ExprError(f"expected {text!r}, found {self.tok.text or 'end of input'!r}", self.tok.offset)
        return self.take()

    def parse(self) -> Node:
        node = self.or_()
        if self.tok.kind != "end":
            raise ExprError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def _binary_chain(self, ops, sub) -> Node:
        node = sub()
        while self.tok.kind == "op" and self.tok.text in ops:
            op = self.take()
            node = Binary(op.text, node, sub(), op.offset)
        return node

    def or_(self) -> Node:
        return self._binary_chain(("||",), self.and_)

    def and_(self) -> Node:
        return self._binary_chain(("&&",), self.cmp)

    def cmp(self) -> Node:
        node = self.add()
        if self.tok.kind == "op" and self.tok.text in _COMPARE:
            op = self.take()
            node = Binary(op.text, node, self.add(), op.offset)
            if self.tok.kind == "op" and self.tok.text in _COMPARE:
                raise ExprError("comparisons do not chain", self.tok.offset)
        return node

    def add(self) -> Node:
        return self._binary_chain(("+", "-"), self.mul)

    def mul(self) -> Node:
        return self._binary_chain(("*", "/"), self.unary)

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text in ("!", "-"):
            op = self.take()
            return Unary(op.text, self.unary(), op.offset)
        return self.primary()

    def primary(self) -> Node:
        tok = self.take()
        if tok.kind == "num":
            return Literal(float(tok.text) if "." in tok.text else int(tok.text))
        if tok.kind == "str":
            return Literal(bytes(tok.text[1:-1], "utf-8").decode("unicode_escape"))
        if tok.kind == "op" and tok.text == "(":
            node = self.or_()
            self.expect(")")
            return node
        if tok.kind == "name":
            if tok.text in ("true", "false"):
                return Literal(tok.text == "true")
            obj = tok.text[1:-1] if tok.text.startswith("[") else tok.text
            if self.tok.text != ".":
                raise ExprError(f"variable {tok.text!r} must have the form <object>.<field>", tok.offset)
            self.take()
            fld = self.take()
            if fld.kind != "name" or fld.text.startswith("["):
                raise ExprError("expected field name after '.'", fld.offset)
            if self.tok.text == ".":
                raise ExprError("variables have exactly one field", self.tok.offset)
            return Var(obj, fld.text, tok.offset)
        raise ExprError(f"unexpected {tok.text or 'end of input'!r}", tok.offset)


@dataclass(frozen=True)
class OracleExpr:
    source: str
    ast: Node

    @classmethod
    def parse(cls, source: str) -> OracleExpr:
        return cls(source, _Parser(source).parse())

    def variables(self) -> set[tuple[str, str]]:
        out: set[tuple[str, str]] = set()
        stack = [self.ast]
        while stack:
            n = stack.pop()
            if isinstance(n, Var):
                out.add((n.object, n.field))
            elif isinstance(n, Unary):
                stack.append(n.operand)
            elif isinstance(n, Binary):
                stack.extend((n.left, n.right))
        return out

    def objects(self) -> set[str]:
        return {o for o, _ in self.variables()}

    def __str__(self) -> str:
        return self.source


TRUE = OracleExpr("true", Literal(True))


# -- evaluation -------------------------------------------------------------

class StateEnv:
    """Per-object variables visible to expressions (read-only view)."""

    def __init__(self, objects: Mapping[str, Mapping[str, Any]] | None = None):
        self.objects = dict(objects or {})

    def lookup(self, obj: str, fld: str, offset: int = 0) -> Any:
        try:
            return self.objects[obj][fld]
        except KeyError:
            raise UnboundVariable(f"unbound variable {obj}.{fld}", offset) from None

    def with_object(self, name: str, fields: Mapping[str, Any]) -> StateEnv:
        env = StateEnv(self.objects)
        env.objects[name] = fields
        return env


def _is_num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _type_name(v: Any) -> str:
    if isinstance(v, bool):
        return "bool"
    if _is_num(v):
        return "number"
    return type(v).__name__


def evaluate(expr: OracleExpr | Node, env: StateEnv) -> Any:
    node = expr.ast if isinstance(expr, OracleExpr) else expr
    return _eval(node, env)


def eval_bool(expr: OracleExpr, env: StateEnv) -> bool:
    v = _eval(expr.ast, env)
    if not isinstance(v, bool):
        raise TypeMismatch(f"expression yields {_type_name(v)}, not bool")
    return v


def _want_bool(v: Any, op: str, offset: int) -> bool:
    if not isinstance(v, bool):
        raise TypeMismatch(f"operator {op} needs bool, got {_type_name(v)}", offset)
    return v


def _eval(n: Node, env: StateEnv) -> Any:
    if isinstance(n, Literal):
        return n.value
    if isinstance(n, Var):
        return env.lookup(n.object, n.field, n.offset)
    if isinstance(n, Unary):
        v = _eval(n.operand, env)
        if n.op == "!":
            return not _want_bool(v, "!", n.offset)
        if not _is_num(v):
            raise TypeMismatch(f"unary - needs number, got {_type_name(v)}", n.offset)
        return -v
    op = n.op
    if op == "&&":
        return _want_bool(_eval(n.left, env), op, n.offset) and _want_bool(_eval(n.right, env), op, n.offset)
    if op == "||":
        return _want_bool(_eval(n.left, env), op, n.offset) or _want_bool(_eval(n.right, env), op, n.offset)
    a, b = _eval(n.left, env), _eval(n.right, env)
    if op in ("==", "!="):
        if _type_name(a) != _type_name(b):
            raise TypeMismatch(f"cannot compare {_type_name(a)} with {_type_name(b)}", n.offset)
        return (a == b) if op == "==" else (a != b)
    if op in ("<", "<=", ">", ">="):
        if not ((_is_num(a) and _is_num(b)) or (isinstance(a, str) and isinstance(b, str))):
            raise TypeMismatch(f"cannot order {_type_name(a)} and {_type_name(b)}", n.offset)
        return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]
    if op == "+" and isinstance(a, str) and isinstance(b, str):
        return a + b
    if not (_is_num(a) and _is_num(b)):
        raise TypeMismatch(f"operator {op} needs numbers, got {_type_name(a)} and {_type_name(b)}", n.offset)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        raise ExprError("division by zero", n.offset)
    return a / b


# -- dependencies -----------------------------------------------------------

_PLAIN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def quote_object(name: str) -> str:
    return name if _PLAIN.match(name) and name not in ("true", "false") else f"[{name}]"


def desugar_depends(depends) -> OracleExpr:
    """Turn ``{running: [...], success: [...]}`` into a conjunction of phase checks.

    ``depends`` is anything with ``running``, ``success`` and ``expr``
    attributes; the free-form ``expr`` wins when present.
    """
    if depends is None:
        return TRUE
    if depends.expr is not None:
        return OracleExpr.parse(depends.expr)
    terms = [f'{quote_object(n)}.phase == "running"' for n in depends.running]
    terms += [f'{quote_object(n)}.phase == "success"' for n in depends.success]
    if not terms:
        return TRUE
    return OracleExpr.parse(" && ".join(terms))


# -- alert rules ------------------------------------------------------------

REDUCERS = ("avg", "percent_diff", "min", "max", "last")


@dataclass(frozen=True)
class Selector:
    pattern: str
    aggregate: bool = False  # avg(...) across matching series

    def __str__(self) -> str:
        return f"avg({self.pattern})" if self.aggregate else self.pattern


@dataclass(frozen=True)
class AlertRule:
    reducer: str
    selector: Selector
    window_from: int  # ns before now, start of window
    window_to: int  # ns before now, end of window
    comparator: str  # ABOVE | BELOW
    threshold: float
    interval: int
    source: str = ""

    def holds(self, value: float) -> bool:
        return value > self.threshold if self.comparator == "ABOVE" else value < self.threshold


DEFAULT_ALERT_INTERVAL = 15 * 1_000_000_000


class _Scanner:
    def __init__(self, text: str):
        self.text, self.pos = text, 0

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def keyword(self, word: str) -> None:
        self.skip()
        if self.text[self.pos:self.pos + len(word)].upper() != word:
            raise ExprError(f"expected {word}", self.pos)
        self.pos += len(word)

    def char(self, c: str) -> None:
        self.skip()
        if not self.text.startswith(c, self.pos):
            raise ExprError(f"expected {c!r}", self.pos)
        self.pos += 1

    def until(self, stops: str) -> tuple[str, int]:
        self.skip()
        start, depth = self.pos, 0
        while self.pos < len(self.text):
            c = self.text[self.pos]
            if c == "(":
                depth += 1
            elif c == ")" and depth:
                depth -= 1
            elif c in stops and depth == 0:
                break
            self.pos += 1
        return self.text[start:self.pos].strip(), start

    def word(self) -> tuple[str, int]:
        self.skip()
        m = re.compile(r"[^\s()]+").match(self.text, self.pos)
        if m is None:
            raise ExprError("unexpected end of rule", self.pos)
        self.pos = m.end()
        return m.group(), m.start()


def _parse_selector(text: str, offset: int) -> Selector:
    m = re.fullmatch(r"avg\s*\(\s*([^()\s]+)\s*\)", text)
    if m:
        return Selector(m.group(1), True)
    if not text or re.search(r"[\s(),]", text):
        raise ExprError(f"bad series selector {text!r}", offset)
    return Selector(text)


def parse_alert(text: str) -> AlertRule:
    """Parse ``WHEN <reducer>() OF query(<sel>, <from>, now-<to>) IS ABOVE|BELOW <n> [EVERY <dur>]``."""
    sc = _Scanner(text)
    sc.keyword("WHEN")
    reducer, roff = sc.word()
    if reducer not in REDUCERS:
        raise ExprError(f"unknown reducer {reducer!r}", roff)
    sc.char("(")
    sc.char(")")
    sc.keyword("OF")
    sc.keyword("QUERY")
    sc.char("(")
    sel_text, soff = sc.until(",")
    selector = _parse_selector(sel_text, soff)
    sc.char(",")
    from_text, foff = sc.until(",")
    sc.char(",")
    sc.keyword("NOW")
    sc.char("-")
    to_text, toff = sc.until(")")
    sc.char(")")
    try:
        start = parse_duration(from_text)
    except TimerError as e:
        raise ExprError(str(e), foff) from None
    try:
        end = parse_duration(to_text)
    except TimerError as e:
        raise ExprError(str(e), toff) from None
    sc.keyword("IS")
    cmp_text, coff = sc.word()
    comparator = cmp_text.upper()
    if comparator not in ("ABOVE", "BELOW"):
        raise ExprError(f"expected ABOVE or BELOW, found {cmp_text!r}", coff)
    num, noff = sc.word()
    try:
        threshold = float(num)
    except ValueError:
        raise ExprError(f"bad threshold {num!r}", noff) from None
    if not math.isfinite(threshold):
        raise ExprError("threshold must be finite", noff)
    interval = DEFAULT_ALERT_INTERVAL
    sc.skip()
    if sc.pos < len(text):
        sc.keyword("EVERY")
        every, eoff = sc.word()
        try:
            interval = parse_duration(every)
        except TimerError as e:
            raise ExprError(str(e), eoff) from None
        if interval <= 0:
            raise ExprError("evaluation interval must be positive", eoff)
        sc.skip()
        if sc.pos < len(text):
            raise ExprError("trailing input", sc.pos)
    if start == end:
        raise ExprError("empty query window: from == to", foff)
    if start < end:
        log.warning("alert window given as (%s, now-%s); normalising to [now-%s, now-%s]",
                    from_text, to_text, to_text, from_text)
        start, end = end, start
    return AlertRule(reducer, selector, start, end, comparator, threshold, interval, text.strip())
