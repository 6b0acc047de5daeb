import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sbc_lab import expr as ex
from sbc_lab.jet import MAX_ORDER, Jet, JetDivisionError, JetOrderError, compose, div, mul


def close(a, b, tol=1e-12):
    return all(abs(x - y) <= tol * max(1.0, abs(y)) for x, y in zip(a, b))


def test_linear_examples():
    assert Jet([1, 2]) + Jet([3, 4]) == Jet([4, 6])
    assert Jet([1, 2]) - Jet([1, 2]) == Jet([0, 0])
    assert 2 * Jet([1, 2, 3]) == Jet([2, 4, 6])
    assert Jet([1, 2, 3]).scale(2) == Jet([2, 4, 6])


def test_scalar_offsets_touch_value_only():
    assert Jet([1, 2]) + 3 == Jet([4, 2])
    assert 3 - Jet([1, 2]) == Jet([2, -2])


def test_mul_examples():
    assert mul(Jet([2, 1]), Jet([3, 0])) == Jet([6, 3])
    assert mul(Jet([0, 1, 0]), Jet([0, 1, 0])) == Jet([0, 0, 2])
    assert mul(Jet([1, 1, 1]), Jet([1, 1, 1])) == Jet([1, 2, 4])


def test_div_examples():
    assert div(Jet([6, 3]), Jet([3, 0])) == Jet([2, 1])
    assert div(Jet([1, 0]), Jet([1, 0])) == Jet([1, 0])
    assert div(Jet([1, 1]), Jet([1, -1])) == Jet([1, 2])


def test_compose_examples():
    assert compose([1.0, 1.0], Jet([0, 1])) == Jet([1, 1])
    assert compose([0.0, 1.0], Jet([0, 2])) == Jet([0, 2])
    tanh = ex.FUNCTIONS["tanh"].derivs(0.0, 3)
    assert close(compose(tanh, Jet([0, 1, 0, 0])), [0, 1, 0, -2])


def test_order_mismatch_and_limits():
    with pytest.raises(JetOrderError):
        Jet([1, 2]) + Jet([1, 2, 3])
    with pytest.raises(JetOrderError):
        mul(Jet([1]), Jet([1, 2]))
    with pytest.raises(JetOrderError):
        Jet([0.0] * (MAX_ORDER + 2))
    with pytest.raises(JetOrderError):
        Jet([1, 2]).truncate(2)
    with pytest.raises(JetOrderError):
        Jet([1]).derivative()


def test_division_by_zero_value():
    with pytest.raises(JetDivisionError):
        div(Jet([1, 1]), Jet([0, 1]))
    with pytest.raises(JetDivisionError):
        Jet([1, 1]) / 0


def test_constructors_and_shift():
    assert Jet.constant(3.0, 2) == Jet([3, 0, 0])
    assert Jet.variable(0.5, 2) == Jet([0.5, 1, 0])
    assert Jet([1, 2, 3]).derivative() == Jet([2, 3])
    assert Jet([1, 2, 3]).truncate(1) == Jet([1, 2])


def test_values_are_raw_derivatives():
    # t^3 at t = 2: (8, 12, 12, 6)
    t = Jet.variable(2.0, 3)
    assert t * t * t == Jet([8, 12, 12, 6])


coeff = st.floats(-10, 10, allow_nan=False)


@st.composite
def jet_triple(draw):
    m = draw(st.integers(0, 6))
    return [Jet(draw(st.lists(coeff, min_size=m + 1, max_size=m + 1))) for _ in range(3)]


@settings(max_examples=300, deadline=None)
@given(jet_triple())
def test_mul_commutative_and_associative(js):
    a, b, c = js
    for left, right in ((mul(a, b), mul(b, a)), (mul(mul(a, b), c), mul(a, mul(b, c)))):
        scale = max(1.0, *(abs(v) for v in left))
        assert all(abs(x - y) <= 1e-12 * scale for x, y in zip(left, right))


@settings(max_examples=300, deadline=None)
@given(jet_triple(), st.floats(0.5, 4.0), st.booleans())
def test_div_inverts_mul(js, b0, neg):
    a, b, _ = js
    b = Jet((-b0 if neg else b0,) + b.c[1:])
    if b.order > 4:
        b, a = b.truncate(4), a.truncate(4)
    back = div(mul(a, b), b)
    # well conditioned for these orders and |b0|
    assert all(abs(x - y) <= 1e-9 * max(1.0, abs(y)) for x, y in zip(back, a))


def test_mul_matches_sympy_leibniz():
    t = sp.symbols("t")
    rng = np.random.default_rng(1)
    for m in range(6):
        ca, cb = rng.normal(size=m + 1), rng.normal(size=m + 1)
        fa = sum(ca[i] * t**i / math.factorial(i) for i in range(m + 1))
        fb = sum(cb[i] * t**i / math.factorial(i) for i in range(m + 1))
        want = [float(sp.diff(fa * fb, t, i).subs(t, 0)) for i in range(m + 1)]
        assert close(mul(Jet(ca), Jet(cb)), want, 1e-12)


@pytest.mark.parametrize("fn", ["sin", "cos", "tanh", "exp", "sqrt"])
def test_compose_matches_sympy(fn):
    t = sp.symbols("t")
    f = {"sin": sp.sin, "cos": sp.cos, "tanh": sp.tanh, "exp": sp.exp, "sqrt": sp.sqrt}[fn]
    rng = np.random.default_rng(2)
    for m in range(1, 6):
        u = rng.uniform(-1, 1, m + 1)
        u[0] = abs(u[0]) + 0.5
        series = sum(sp.Float(u[i]) * t**i / math.factorial(i) for i in range(m + 1))
        want = [float(sp.diff(f(series), t, i).subs(t, 0)) for i in range(m + 1)]
        got = compose(ex.FUNCTIONS[fn].derivs(u[0], m), Jet(u))
        assert close(got, want, 1e-10)


def test_compose_agrees_with_eval_jet():
    rng = np.random.default_rng(3)
    worst = 0.0
    nodes = {fn: ex.parse(f"{fn}(x1)") for fn in ("sin", "cos", "tanh", "exp", "abs", "sqrt")}
    for _ in range(10_000):
        fn = list(nodes)[rng.integers(len(nodes))]
        m = int(rng.integers(0, 6))
        u = rng.uniform(-2, 2, m + 1)
        if fn == "sqrt":
            u[0] = abs(u[0]) + 0.1
        direct = compose(ex.FUNCTIONS[fn].derivs(u[0], m), Jet(u))
        via_ast = ex.eval_jet(nodes[fn], ex.EvalEnv(Jet.variable(0.0, m), [Jet(u)]), m)
        worst = max(worst, max(abs(a - b) / max(1.0, abs(b)) for a, b in zip(direct, via_ast)))
    assert worst < 1e-10


def test_prefix_is_independent_of_total_order():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=8), rng.normal(size=8)
    b[0] = 1.5
    for m in range(1, 8):
        short_a, short_b = Jet(a[: m + 1]), Jet(b[: m + 1])
        full = (Jet(a) * Jet(b), Jet(a) / Jet(b), compose(ex.FUNCTIONS["tanh"].derivs(a[0], 7), Jet(a)))
        part = (short_a * short_b, short_a / short_b, compose(ex.FUNCTIONS["tanh"].derivs(a[0], m), short_a))
        for f, p in zip(full, part):
            assert f.c[: m + 1] == p.c
