"""Expression language for plant regressors, input gains and reference trajectories.

Grammar (whitespace is insignificant)::

    expr      := term (("+" | "-") term)*
    term      := unary (("*" | "/") unary)*
    unary     := "-" unary | power
    power     := atom ("^" unary)?              # right-associative
    atom      := NUMBER | "t" | "pi" | "x" INDEX
               | FUNC "(" expr ")"
               | "piecewise" "(" clause ("," clause)* ")"
               | "(" expr ")"
    clause    := guard ":" expr
    guard     := "t" REL BOUND | BOUND REL "t" REL BOUND
    REL       := "<" | "<=" | ">" | ">="
    BOUND     := ["-"] NUMBER
    FUNC      := sin | cos | tanh | exp | abs | sqrt

Precedence from tightest: ``^``, unary minus, ``* /``, ``+ -``. Multiplication
is always explicit. Piecewise guards constrain ``t`` only and must partition
``[0, inf)`` into disjoint intervals.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

from .errors import ExprEvalError, ExprSyntaxError
from .jet import Jet, JetDivisionError, JetOrderError, compose


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    index: int  # 1-based state index
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Time:
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    arg: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True)
class Guard:
    """Interval of ``t``; infinite ends are open."""

    lo: float
    hi: float
    lo_closed: bool
    hi_closed: bool

    def contains(self, t: float) -> bool:
        if t < self.lo or (t == self.lo and not self.lo_closed):
            return False
        if t > self.hi or (t == self.hi and not self.hi_closed):
            return False
        return True


@dataclass(frozen=True)
class Piecewise:
    branches: tuple  # of (Guard, Node)
    pos: int = field(default=-1, compare=False, repr=False)

    def active(self, t: float):
        for guard, node in self.branches:
            if guard.contains(t):
                return node
        raise ExprEvalError(f"no piecewise branch covers t={t!r}", self.pos)


Node = Union[Const, Var, Time, Neg, BinOp, Call, Piecewise]
ExprAst = Node


# --------------------------------------------------------------------------
# function registry


def _sign(x: float) -> float:
    return float(x > 0) - float(x < 0)


def _sin_d(u: float, m: int) -> list:
    s, c = math.sin(u), math.cos(u)
    cyc = (s, c, -s, -c)
    return [cyc[j % 4] for j in range(m + 1)]


def _cos_d(u: float, m: int) -> list:
    s, c = math.sin(u), math.cos(u)
    cyc = (c, -s, -c, s)
    return [cyc[j % 4] for j in range(m + 1)]


def _exp_d(u: float, m: int) -> list:
    return [_exp(u)] * (m + 1)


def _tanh_d(u: float, m: int) -> list:
    y = math.tanh(u)
    out = [y]
    poly = [0.0, 1.0]  # d^j tanh = poly_j(tanh)
    for _ in range(m):
        dp = [i * poly[i] for i in range(1, len(poly))]
        # multiply by (1 - y^2)
        nxt = dp + [0.0, 0.0]
        for i, v in enumerate(dp):
            nxt[i + 2] -= v
        poly = nxt
        acc = 0.0
        for coef in reversed(poly):
            acc = acc * y + coef
        out.append(acc)
    return out


def _abs_d(u: float, m: int) -> list:
    out = [abs(u)]
    if m >= 1:
        out.append(float(_sign(u)))
    out.extend([0.0] * (m - 1))
    return out


def _sqrt_d(u: float, m: int) -> list:
    if u < 0:
        raise ValueError("sqrt of negative value")
    out = [math.sqrt(u)]
    if m == 0:
        return out
    if u == 0:
        raise ValueError("sqrt is not differentiable at 0")
    coef = 1.0
    for j in range(1, m + 1):
        coef *= 0.5 - (j - 1)
        out.append(coef * u ** (0.5 - j))
    return out


def _ln_d(u: float, m: int) -> list:
    if u <= 0:
        raise ValueError("non-integer power of non-positive base")
    out = [math.log(u)]
    for j in range(1, m + 1):
        out.append((-1) ** (j - 1) * math.factorial(j - 1) / u**j)
    return out


def _exp(u: float) -> float:
    try:
        return math.exp(u)
    except OverflowError:
        return math.inf


def _sqrt(u: float) -> float:
    if u < 0:
        raise ValueError("sqrt of negative value")
    return math.sqrt(u)


@dataclass(frozen=True)
class Function:
    name: str
    fid: int
    scalar: Callable[[float], float]
    derivs: Callable[[float, int], list]


FUNCTIONS: dict[str, Function] = {
    f.name: f
    for f in (
        Function("sin", 0, math.sin, _sin_d),
        Function("cos", 1, math.cos, _cos_d),
        Function("tanh", 2, math.tanh, _tanh_d),
        Function("exp", 3, _exp, _exp_d),
        Function("abs", 4, abs, _abs_d),
        Function("sqrt", 5, _sqrt, _sqrt_d),
    )
}

LN_FID = 6


# --------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<rel><=|>=|<|>)
  | (?P<op>[-+*/^(),:])
    """,
    re.VERBOSE,
)

_VAR_RE = re.compile(r"x([1-9][0-9]*)\Z")


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int  # byte offset


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[i]!r}", _byte_offset(text, i), text)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), _byte_offset(text, i)))
        i = m.end()
    toks.append(_Tok("eof", "", _byte_offset(text, len(text))))
    return toks


def _byte_offset(text: str, i: int) -> int:
    return len(text[:i].encode("utf-8"))


# --------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: _Tok | None = None):
        tok = tok or self.tok
        return ExprSyntaxError(message, tok.pos, self.text)

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind == "eof":
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
            raise self.error(f"expected {text!r}, found {found}")
        return self.advance()

    def parse(self) -> Node:
        if self.tok.kind == "eof":
            raise self.error("empty expression")
        node = self.expr()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance()
            node = BinOp(op.text, node, self.term(), op.pos)
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance()
            node = BinOp(op.text, node, self.unary(), op.pos)
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            op = self.advance()
            return Neg(self.unary(), op.pos)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            op = self.advance()
            return BinOp("^", base, self.unary(), op.pos)
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text), tok.pos)
        if tok.kind == "ident":
            self.advance()
            name = tok.text
            if name == "t":
                return Time(tok.pos)
            if name == "pi":
                return Const(math.pi, tok.pos)
            m = _VAR_RE.match(name)
            if m:
                return Var(int(m.group(1)), tok.pos)
            if name == "piecewise":
                return self.piecewise(tok)
            if name in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(name, arg, tok.pos)
            raise self.error(f"unknown identifier {name!r}", tok)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "eof":
            raise self.error("unexpected end of input")
        raise self.error(f"unexpected {tok.text!r}")

    def bound(self) -> float:
        neg = False
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            neg = True
        if self.tok.kind != "num":
            raise self.error("malformed piecewise: expected a numeric guard bound")
        v = float(self.advance().text)
        return -v if neg else v

    def rel(self) -> str:
        if self.tok.kind != "rel":
            raise self.error("malformed piecewise: expected a comparison")
        return self.advance().text

    def guard(self) -> Guard:
        inf = math.inf
        if self.tok.kind == "ident" and self.tok.text == "t":
            self.advance()
            rel = self.rel()
            b = self.bound()
            return {
                "<": Guard(-inf, b, False, False),
                "<=": Guard(-inf, b, False, True),
                ">": Guard(b, inf, False, False),
                ">=": Guard(b, inf, True, False),
            }[rel]
        lo = self.bound()
        r1 = self.rel()
        tok = self.tok
        if not (tok.kind == "ident" and tok.text == "t"):
            raise self.error("malformed piecewise: guards may only constrain t")
        self.advance()
        r2 = self.rel()
        hi = self.bound()
        if r1 not in ("<", "<=") or r2 not in ("<", "<="):
            raise self.error("malformed piecewise: two-sided guard must read lo < t < hi", tok)
        return Guard(lo, hi, r1 == "<=", r2 == "<=")

    def piecewise(self, head: _Tok) -> Node:
        self.expect("(")
        branches = []
        while True:
            gtok = self.tok
            g = self.guard()
            if g.lo > g.hi or (g.lo == g.hi and not (g.lo_closed and g.hi_closed)):
                raise self.error("malformed piecewise: empty guard interval", gtok)
            self.expect(":")
            branches.append((g, self.expr()))
            if self.tok.text == "," and self.tok.kind == "op":
                self.advance()
                continue
            self.expect(")")
            break
        _check_partition([g for g, _ in branches], head, self)
        return Piecewise(tuple(branches), head.pos)


def _check_partition(guards: list[Guard], head: _Tok, parser: _Parser) -> None:
    """Guards restricted to [0, inf) must be disjoint and cover it."""
    clipped = []
    for g in guards:
        if g.hi < 0 or (g.hi == 0 and not g.hi_closed):
            raise parser.error("malformed piecewise: guard lies entirely before t=0", head)
        if g.lo < 0 or (g.lo == 0 and g.lo_closed):
            clipped.append(Guard(0.0, g.hi, True, g.hi_closed))
        else:
            clipped.append(g)
    clipped.sort(key=lambda g: (g.lo, not g.lo_closed))
    if not (clipped[0].lo == 0.0 and clipped[0].lo_closed):
        raise parser.error("malformed piecewise: guards do not cover t=0", head)
    for prev, nxt in zip(clipped, clipped[1:]):
        if prev.hi != nxt.lo or prev.hi_closed == nxt.lo_closed:
            raise parser.error(
                f"malformed piecewise: guards overlap or leave a gap near t={prev.hi!r}", head
            )
    if clipped[-1].hi != math.inf:
        raise parser.error("malformed piecewise: guards do not cover t -> inf", head)


def parse(text: str) -> Node:
    """Parse expression text into an AST. Raises :class:`ExprSyntaxError`."""
    if not isinstance(text, str):
        raise TypeError("expression must be a string")
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# rendering and inspection


def _fmt(v: float) -> str:
    return repr(float(v))


def _render_guard(g: Guard) -> str:
    if g.lo == -math.inf:
        return f"t {'<=' if g.hi_closed else '<'} {_fmt(g.hi)}"
    if g.hi == math.inf:
        return f"t {'>=' if g.lo_closed else '>'} {_fmt(g.lo)}"
    return f"{_fmt(g.lo)} {'<=' if g.lo_closed else '<'} t {'<=' if g.hi_closed else '<'} {_fmt(g.hi)}"


def render(node: Node) -> str:
    """Canonical, fully parenthesised text; ``parse(render(a)) == a``."""
    if isinstance(node, Const):
        return _fmt(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Time):
        return "t"
    if isinstance(node, Neg):
        return f"(-{render(node.arg)})"
    if isinstance(node, BinOp):
        return f"({render(node.left)} {node.op} {render(node.right)})"
    if isinstance(node, Call):
        return f"{node.fn}({render(node.arg)})"
    if isinstance(node, Piecewise):
        parts = ", ".join(f"{_render_guard(g)}: {render(b)}" for g, b in node.branches)
        return f"piecewise({parts})"
    raise TypeError(f"not an expression node: {node!r}")


def children(node: Node) -> tuple:
    if isinstance(node, Neg):
        return (node.arg,)
    if isinstance(node, BinOp):
        return (node.left, node.right)
    if isinstance(node, Call):
        return (node.arg,)
    if isinstance(node, Piecewise):
        return tuple(b for _, b in node.branches)
    return ()


def state_indices(node: Node) -> set[int]:
    out: set[int] = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.index)
        stack.extend(children(n))
    return out


def uses_time(node: Node) -> bool:
    if isinstance(node, Time):
        return True
    if isinstance(node, Piecewise):
        return True
    return any(uses_time(c) for c in children(node))


def integer_exponent(node: Node) -> int | None:
    """Integer value of a constant exponent, else None."""
    sign = 1
    while isinstance(node, Neg):
        sign = -sign
        node = node.arg
    if isinstance(node, Const) and math.isfinite(node.value) and node.value == int(node.value):
        return sign * int(node.value)
    return None


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalEnv:
    """Binding of ``t`` and ``x1..xn``; values are floats or jets."""

    t: float | Jet
    x: Sequence = ()


def _ipow(base, k: int, one):
    """Binary exponentiation shared by the float and jet evaluators."""
    if k == 0:
        return one
    if k < 0:
        return one / _ipow(base, -k, one)
    result = None
    while k:
        if k & 1:
            result = base if result is None else result * base
        k >>= 1
        if k:
            base = base * base
    return result


def eval(node: Node, env: EvalEnv) -> float:  # noqa: A001 - mirrors the operation name
    """Evaluate in IEEE double precision."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return _lookup(env, node)
    if isinstance(node, Time):
        return float(env.t)
    if isinstance(node, Neg):
        return -eval(node.arg, env)
    if isinstance(node, BinOp):
        op = node.op
        if op == "^":
            k = integer_exponent(node.right)
            base = eval(node.left, env)
            if k is not None:
                try:
                    return _ipow(base, k, 1.0)
                except ZeroDivisionError:
                    raise ExprEvalError("division by zero in negative power", node.pos) from None
            expo = eval(node.right, env)
            if base <= 0:
                raise ExprEvalError("non-integer power of non-positive base", node.pos)
            return _exp(expo * math.log(base))
        a = eval(node.left, env)
        b = eval(node.right, env)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if b == 0.0:
            raise ExprEvalError("division by zero", node.pos)
        return a / b
    if isinstance(node, Call):
        u = eval(node.arg, env)
        try:
            return FUNCTIONS[node.fn].scalar(u)
        except ValueError as exc:
            raise ExprEvalError(str(exc), node.pos) from None
    if isinstance(node, Piecewise):
        return eval(node.active(float(env.t)), env)
    raise TypeError(f"not an expression node: {node!r}")


def _lookup(env: EvalEnv, node: Var):
    k = node.index
    if k > len(env.x) or env.x[k - 1] is None:
        raise ExprEvalError(f"state variable x{k} is not bound", node.pos)
    return env.x[k - 1]


def eval_jet(node: Node, env: EvalEnv, order: int) -> Jet:
    """Evaluate along time: coefficient ``i`` is the ``i``-th time derivative.

    ``env.t`` and every referenced ``env.x[k]`` must be jets of order ``>= order``;
    they are truncated to ``order``.
    """
    if isinstance(node, Const):
        return Jet.constant(node.value, order)
    if isinstance(node, Var):
        return _truncated(_lookup(env, node), order, node)
    if isinstance(node, Time):
        return _truncated(env.t, order, node)
    if isinstance(node, Neg):
        return -eval_jet(node.arg, env, order)
    if isinstance(node, BinOp):
        op = node.op
        if op == "^":
            k = integer_exponent(node.right)
            base = eval_jet(node.left, env, order)
            if k is not None:
                try:
                    return _ipow(base, k, Jet.constant(1.0, order))
                except JetDivisionError:
                    raise ExprEvalError("division by zero in negative power", node.pos) from None
            expo = eval_jet(node.right, env, order)
            try:
                ln = compose(_ln_d(base.value, order), base)
            except ValueError as exc:
                raise ExprEvalError(str(exc), node.pos) from None
            arg = expo * ln
            return compose(_exp_d(arg.value, order), arg)
        a = eval_jet(node.left, env, order)
        b = eval_jet(node.right, env, order)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        try:
            return a / b
        except JetDivisionError:
            raise ExprEvalError("division by zero", node.pos) from None
    if isinstance(node, Call):
        u = eval_jet(node.arg, env, order)
        try:
            derivs = FUNCTIONS[node.fn].derivs(u.value, order)
        except ValueError as exc:
            raise ExprEvalError(str(exc), node.pos) from None
        return compose(derivs, u)
    if isinstance(node, Piecewise):
        t = env.t.value if isinstance(env.t, Jet) else float(env.t)
        return eval_jet(node.active(t), env, order)
    raise TypeError(f"not an expression node: {node!r}")


def _truncated(j, order: int, node) -> Jet:
    if not isinstance(j, Jet):
        raise ExprEvalError("jet evaluation needs jet-valued variables", node.pos)
    if j.order < order:
        raise JetOrderError(f"variable jet has order {j.order}, need {order}")
    return j if j.order == order else j.truncate(order)
