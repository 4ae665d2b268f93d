import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosflow.clock import MINUTE, SECOND
from chaosflow.expr import (
    DEFAULT_ALERT_INTERVAL,
    TRUE,
    ExprError,
    OracleExpr,
    Selector,
    StateEnv,
    TypeMismatch,
    UnboundVariable,
    desugar_depends,
    eval_bool,
    evaluate,
    parse_alert,
    quote_object,
)
from chaosflow.model import DependsSpec


def ev(src, **objs):
    return evaluate(OracleExpr.parse(src), StateEnv(objs))


def test_hand_evaluated_examples():
    assert ev("masters.running >= 1 && loaders.failed == 0", masters={"running": 1}, loaders={"failed": 0}) is True
    assert ev("!(x.failed > 0)", x={"failed": 0}) is True
    assert ev("g.failed - g.expectedFailed > 0", g={"failed": 2, "expectedFailed": 2}) is False


def test_arithmetic_and_precedence():
    assert ev("a.x + a.y * 2 == 7", a={"x": 1, "y": 3}) is True
    assert ev("(a.x + a.y) * 2", a={"x": 1, "y": 3}) == 8
    assert ev("-a.x + 10 / 4", a={"x": 1}) == 1.5
    assert ev("(1 < 2) == true") is True
    with pytest.raises(ExprError):
        OracleExpr.parse("1 < 2 == true")  # comparisons do not chain


def test_strings_and_brackets():
    assert ev('[redis-1].phase == "running"', **{"redis-1": {"phase": "running"}}) is True
    assert ev("'a' + \"b\" == 'ab'") is True
    assert ev('"abc" < "abd"') is True


def test_short_circuit_skips_unbound():
    assert ev("false && nope.x") is False
    assert ev("true || nope.x") is True
    with pytest.raises(UnboundVariable):
        ev("true && nope.x")


def test_type_errors():
    with pytest.raises(TypeMismatch):
        ev('a.x == "1"', a={"x": 1})
    with pytest.raises(TypeMismatch):
        ev("a.x && true", a={"x": 1})
    with pytest.raises(TypeMismatch):
        eval_bool(OracleExpr.parse("1 + 1"), StateEnv())
    with pytest.raises(ExprError):
        ev("1 / 0")


@pytest.mark.parametrize("src,offset", [("a.x >", 5), ("a.x == == 1", 7), ("(a.x", 4), ("a.x # 1", 4), ("a", 0)])
def test_parse_errors_carry_offsets(src, offset):
    with pytest.raises(ExprError) as e:
        OracleExpr.parse(src)
    assert e.value.offset == offset


def test_unbound_variable_has_offset():
    with pytest.raises(UnboundVariable) as e:
        ev("a.x == 1 && b.y == 2", a={"x": 1})
    assert e.value.offset == 12


def test_variables_and_objects():
    e = OracleExpr.parse('masters.running >= 1 && [run-ners].phase == "success"')
    assert e.variables() == {("masters", "running"), ("run-ners", "phase")}
    assert e.objects() == {"masters", "run-ners"}


# -- structural properties --------------------------------------------------

NAMES = ["a", "b", "c"]


@st.composite
def bool_exprs(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        kind = draw(st.sampled_from(["lit", "var", "cmp"]))
        if kind == "lit":
            return draw(st.sampled_from(["true", "false"]))
        if kind == "var":
            return f"{draw(st.sampled_from(NAMES))}.flag"
        return f"{draw(st.sampled_from(NAMES))}.n {draw(st.sampled_from(['<', '<=', '>', '>=', '==', '!=']))} {draw(st.integers(0, 3))}"
    op = draw(st.sampled_from(["&&", "||", "!"]))
    if op == "!":
        return f"!({draw(bool_exprs(depth - 1))})"
    return f"({draw(bool_exprs(depth - 1))} {op} {draw(bool_exprs(depth - 1))})"


envs = st.fixed_dictionaries({n: st.fixed_dictionaries({"flag": st.booleans(), "n": st.integers(0, 3)}) for n in NAMES})


@settings(max_examples=300)
@given(bool_exprs(), bool_exprs(), envs)
def test_de_morgan(a, b, objs):
    env = StateEnv(objs)
    lhs = eval_bool(OracleExpr.parse(f"!(({a}) && ({b}))"), env)
    rhs = eval_bool(OracleExpr.parse(f"!({a}) || !({b})"), env)
    assert lhs == rhs


@given(bool_exprs(), envs)
def test_eval_is_pure(a, objs):
    e = OracleExpr.parse(a)
    env = StateEnv(objs)
    assert eval_bool(e, env) == eval_bool(e, env)


def python_eval(src, objs):
    """Reference semantics: translate to Python and let it evaluate."""
    py = src.replace("&&", " and ").replace("||", " or ").replace("!(", " not (")
    py = py.replace("true", "True").replace("false", "False")
    for n in NAMES:
        py = py.replace(f"{n}.flag", f"objs['{n}']['flag']").replace(f"{n}.n", f"objs['{n}']['n']")
    return eval(py)  # noqa: S307 - test oracle over generated input


@settings(max_examples=300)
@given(bool_exprs(), envs)
def test_agrees_with_python_semantics(a, objs):
    assert eval_bool(OracleExpr.parse(a), StateEnv(objs)) == python_eval(a, objs)


# -- dependency sugar --------------------------------------------------------

def test_desugar_examples():
    assert str(desugar_depends(DependsSpec(("masters",)))) == 'masters.phase == "running"'
    e = desugar_depends(DependsSpec(("masters", "slaves"), ("loaders",)))
    assert str(e) == 'masters.phase == "running" && slaves.phase == "running" && loaders.phase == "success"'
    assert desugar_depends(DependsSpec()) is TRUE
    assert desugar_depends(None) is TRUE
    assert str(desugar_depends(DependsSpec(expr="workflow.now > 3"))) == "workflow.now > 3"


def test_desugar_quotes_dashed_names():
    assert quote_object("run-ners") == "[run-ners]"
    assert quote_object("true") == "[true]"
    e = desugar_depends(DependsSpec(("run-ners",)))
    assert eval_bool(e, StateEnv({"run-ners": {"phase": "running"}}))


names_st = st.lists(st.from_regex(r"[a-z][a-z0-9-]{0,6}", fullmatch=True), min_size=1, max_size=5, unique=True)


@given(names_st, st.data())
def test_desugar_true_exactly_in_demanded_phase(names, data):
    split = data.draw(st.integers(0, len(names)))
    running, success = tuple(names[:split]), tuple(names[split:])
    e = desugar_depends(DependsSpec(running, success))
    demanded = {n: ("running" if n in running else "success") for n in names}
    assert eval_bool(e, StateEnv({n: {"phase": p} for n, p in demanded.items()}))
    flip = data.draw(st.sampled_from(names))
    other = data.draw(st.sampled_from([p for p in ("pending", "running", "success", "failed") if p != demanded[flip]]))
    objs = {n: {"phase": p} for n, p in demanded.items()}
    objs[flip] = {"phase": other}
    assert not eval_bool(e, StateEnv(objs))


# -- alert rules ---------------------------------------------------------------

def test_parse_alert_example():
    r = parse_alert("WHEN percent_diff() OF query(A, 15m, now-5m) IS ABOVE 20")
    assert (r.reducer, r.selector, r.window_from, r.window_to, r.comparator, r.threshold) == (
        "percent_diff", Selector("A"), 15 * MINUTE, 5 * MINUTE, "ABOVE", 20.0)
    assert r.interval == DEFAULT_ALERT_INTERVAL


def test_parse_alert_aggregate_and_every():
    r = parse_alert("WHEN avg() OF query(avg(redis_ops_per_sec), 3m, now-0m) IS BELOW 10 EVERY 5s")
    assert r.selector == Selector("redis_ops_per_sec", True)
    assert (r.window_from, r.window_to, r.interval) == (3 * MINUTE, 0, 5 * SECOND)
    assert r.holds(9.9) and not r.holds(10)


def test_parse_alert_swaps_reversed_window(caplog):
    r = parse_alert("WHEN max() OF query(x, 1m, now-5m) IS ABOVE 1")
    assert (r.window_from, r.window_to) == (5 * MINUTE, MINUTE)
    assert "normalising" in caplog.text


@pytest.mark.parametrize("bad", [
    "WHEN median() OF query(x, 1m, now-0m) IS ABOVE 1",
    "WHEN avg() OF query(x, 1m, now-1m) IS ABOVE 1",
    "WHEN avg() OF query(x, 1m, now-0m) IS NEAR 1",
    "WHEN avg() OF query(x, 1m, now-0m) IS ABOVE one",
    "WHEN avg() OF query(x, 1q, now-0m) IS ABOVE 1",
    "WHEN avg() OF query(x y, 1m, now-0m) IS ABOVE 1",
    "WHEN avg() OF query(x, 1m, now-0m) IS ABOVE 1 EVERY 0s",
    "WHEN avg() OF query(x, 1m, now-0m) IS ABOVE 1 extra",
])
def test_parse_alert_rejects(bad):
    with pytest.raises(ExprError):
        parse_alert(bad)
