import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import exprgen
from sbc_lab import expr as ex
from sbc_lab.errors import ExprEvalError, ExprSyntaxError
from sbc_lab.jet import Jet, JetOrderError

TRAJ = "piecewise(t <= 5: sin(2*pi*t)*tanh(t^3), t > 5: sin(2*pi*t)*tanh(t^3)*(1 - tanh((t-5)^3)))"


def env(t=0.0, *x):
    return ex.EvalEnv(t, x)


def test_parse_examples():
    node = ex.parse("x1^2 + x2^2")
    assert node == ex.BinOp(
        "+", ex.BinOp("^", ex.Var(1), ex.Const(2.0)), ex.BinOp("^", ex.Var(2), ex.Const(2.0))
    )
    prod = ex.parse("sin(2*pi*t)*tanh(t^3)")
    assert isinstance(prod, ex.BinOp) and prod.op == "*"
    assert prod.left.fn == "sin" and prod.right.fn == "tanh"


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as info:
        ex.parse("x1 +")
    assert info.value.offset == 4
    assert "offset 4" in str(info.value)


@pytest.mark.parametrize(
    "text",
    ["", "x0", "y1", "foo(t)", "2 3", "sin t", "(x1", "x1 ** 2",
     "piecewise(t < 1: 1)", "piecewise(t <= 1: 1, t >= 1: 2)", "piecewise(t < 1: 1, t > 1: 2)",
     "piecewise(x1 < 1: 1, x1 >= 1: 2)"],
)
def test_rejects_malformed(text):
    with pytest.raises(ExprSyntaxError):
        ex.parse(text)


def test_offsets_are_bytes():
    with pytest.raises(ExprSyntaxError) as info:
        ex.parse("1 + é")
    assert info.value.offset == 4
    with pytest.raises(ExprSyntaxError) as info:
        ex.parse("é")
    assert info.value.offset == 0


@pytest.mark.parametrize(
    "text, value",
    [("2^3^2", 512.0), ("-2^2", -4.0), ("8/4/2", 1.0), ("1-2-3", -4.0), ("2*3+4", 10.0),
     ("2+3*4", 14.0), ("-(1+2)*3", -9.0), ("2^-1", 0.5), ("1e-3*1000", 1.0), ("pi", math.pi)],
)
def test_precedence_and_associativity(text, value):
    assert ex.eval(ex.parse(text), env()) == pytest.approx(value, rel=1e-15)


def test_eval_examples():
    assert ex.eval(ex.parse("x1^3"), env(0.0, 2.0)) == 8.0
    assert ex.eval(ex.parse("x1^2 + x2^2"), env(0.0, 1.0, 2.0)) == 5.0
    assert ex.eval(ex.parse("sin(2*pi*t)*tanh(t^3)"), env(0.0)) == 0.0


def test_domain_errors_carry_node_location():
    with pytest.raises(ExprEvalError) as info:
        ex.eval(ex.parse("1 + sqrt(x1)"), env(0.0, -1.0))
    assert info.value.offset == 4
    with pytest.raises(ExprEvalError) as info:
        ex.eval(ex.parse("x1 / (x1 - x1)"), env(0.0, 1.0))
    assert info.value.offset == 3
    with pytest.raises(ExprEvalError):
        ex.eval(ex.parse("(x1 - 1)^0.5"), env(0.0, 0.5))
    with pytest.raises(ExprEvalError):
        ex.eval(ex.parse("x2"), env(0.0, 1.0))


def test_eval_jet_examples():
    assert ex.eval_jet(ex.parse("sin(t)"), ex.EvalEnv(Jet([0, 1, 0])), 2) == Jet([0, 1, 0])
    x = Jet([2, 1, 0])
    assert ex.eval_jet(ex.parse("x1^3"), ex.EvalEnv(Jet.variable(0, 2), [x]), 2) == Jet([8, 12, 12])
    assert ex.eval_jet(ex.parse("2.5"), ex.EvalEnv(Jet.variable(3, 3), [x]), 3) == Jet([2.5, 0, 0, 0])


def test_eval_jet_order_mismatch():
    with pytest.raises(JetOrderError):
        ex.eval_jet(ex.parse("x1"), ex.EvalEnv(Jet.variable(0, 2), [Jet([1, 2])]), 2)


def test_eval_jet_domain_errors():
    with pytest.raises(ExprEvalError):
        ex.eval_jet(ex.parse("sqrt(x1)"), ex.EvalEnv(Jet.variable(0, 1), [Jet([0.0, 1.0])]), 1)
    with pytest.raises(ExprEvalError):
        ex.eval_jet(ex.parse("1/x1"), ex.EvalEnv(Jet.variable(0, 1), [Jet([0.0, 1.0])]), 1)


def test_piecewise_selects_active_branch():
    node = ex.parse(TRAJ)
    assert ex.eval(node, env(0.25)) == pytest.approx(math.tanh(0.015625), rel=1e-14)
    late = ex.eval(node, env(9.25))
    assert abs(late) < 1e-12
    guard_lo = ex.parse("piecewise(t < 1: 1, t >= 1: 2)")
    assert ex.eval(guard_lo, env(1.0)) == 2.0
    assert ex.eval(guard_lo, env(0.999)) == 1.0


def test_render_round_trip_trajectory():
    node = ex.parse(TRAJ)
    assert ex.parse(ex.render(node)) == node


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_render_round_trip_random(seed):
    rng = np.random.default_rng(seed)
    node = ex.parse(exprgen.random_text(rng, 4))
    text = ex.render(node)
    assert ex.parse(text) == node
    assert ex.render(ex.parse(text)) == text


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_order_zero_jet_equals_eval(seed):
    rng = np.random.default_rng(seed)
    node = ex.parse(exprgen.random_text(rng, 4))
    t, x, v, acc = exprgen.random_point(rng)
    try:
        want = ex.eval(node, ex.EvalEnv(t, tuple(x)))
    except ExprEvalError:
        return
    got = exprgen.jet_at(node, t, x, v, acc, order=0)
    assert got.value == want or (math.isnan(want) and math.isnan(got.value))


def test_first_coefficient_matches_central_difference():
    rng = np.random.default_rng(11)
    for _, _, _, _, _, j, d1, _ in exprgen.samples(rng, 500):
        assert exprgen.relerr(d1, j[1]) < 1e-6


def test_tanh_derivative_table():
    d = ex.FUNCTIONS["tanh"].derivs(0.3, 4)
    y = math.tanh(0.3)
    assert d[1] == pytest.approx(1 - y * y, rel=1e-15)
    assert d[2] == pytest.approx(-2 * y * (1 - y * y), rel=1e-14)


def test_state_indices_and_time_use():
    node = ex.parse("x1 * x3 + t")
    assert ex.state_indices(node) == {1, 3}
    assert ex.uses_time(node)
    assert not ex.uses_time(ex.parse("x2^2"))
