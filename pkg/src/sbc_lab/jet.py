"""Truncated Taylor jets in time.

A :class:`Jet` of order ``m`` holds a signal value followed by its first ``m``
time derivatives, stored as raw derivatives (not divided by ``i!``) so that
diagnostics stay in physical units. Products use the Leibniz rule with
binomial weights; univariate composition uses Faa di Bruno through a power
series of the centred inner jet.

Coefficient ``i`` of every operation depends only on coefficients ``<= i`` of
its operands, and is computed by the same floating-point sequence regardless
of the total order. Lower coefficients are therefore bit-stable when a jet is
evaluated at a higher order.
"""

from __future__ import annotations

import math
from numbers import Real
from typing import Iterable, Sequence

MAX_ORDER = 16

_FACT = [float(math.factorial(i)) for i in range(MAX_ORDER + 1)]
_BINOM = [[float(math.comb(i, j)) for j in range(i + 1)] for i in range(MAX_ORDER + 1)]


class JetOrderError(ValueError):
    """Raised when jets of different orders are combined or an order is out of range."""


class JetDivisionError(ZeroDivisionError):
    """Raised when dividing by a jet whose value is zero."""


class Jet:
    """Value plus time derivatives up to a fixed order."""

    __slots__ = ("c",)

    def __init__(self, coeffs: Iterable[float]):
        c = tuple(float(v) for v in coeffs)
        if not 1 <= len(c) <= MAX_ORDER + 1:
            raise JetOrderError(f"jet needs 1..{MAX_ORDER + 1} coefficients, got {len(c)}")
        self.c = c

    @classmethod
    def _raw(cls, c: tuple) -> "Jet":
        j = cls.__new__(cls)
        j.c = c
        return j

    @classmethod
    def constant(cls, value: float, order: int) -> "Jet":
        _check_order(order)
        return cls._raw((float(value),) + (0.0,) * order)

    @classmethod
    def variable(cls, value: float, order: int) -> "Jet":
        """Jet of the independent variable itself: (value, 1, 0, ...)."""
        _check_order(order)
        if order == 0:
            return cls._raw((float(value),))
        return cls._raw((float(value), 1.0) + (0.0,) * (order - 1))

    @property
    def order(self) -> int:
        return len(self.c) - 1

    @property
    def value(self) -> float:
        return self.c[0]

    def __len__(self) -> int:
        return len(self.c)

    def __getitem__(self, i):
        return self.c[i]

    def __iter__(self):
        return iter(self.c)

    def __eq__(self, other) -> bool:
        if isinstance(other, Jet):
            return self.c == other.c
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.c)

    def __repr__(self) -> str:
        return f"Jet({list(self.c)!r})"

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.c)

    def truncate(self, order: int) -> "Jet":
        if order > self.order or order < 0:
            raise JetOrderError(f"cannot truncate order {self.order} jet to order {order}")
        return Jet._raw(self.c[: order + 1])

    def derivative(self) -> "Jet":
        """Jet of the time derivative; drops one order."""
        if self.order == 0:
            raise JetOrderError("order-0 jet has no derivative coefficients")
        return Jet._raw(self.c[1:])

    # arithmetic -----------------------------------------------------------

    def _match(self, other: "Jet") -> None:
        if len(other.c) != len(self.c):
            raise JetOrderError(f"order mismatch: {self.order} vs {other.order}")

    def __add__(self, other):
        if isinstance(other, Jet):
            self._match(other)
            return Jet._raw(tuple(a + b for a, b in zip(self.c, other.c)))
        if isinstance(other, Real):
            return Jet._raw((self.c[0] + other,) + self.c[1:])
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return Jet._raw(tuple(-a for a in self.c))

    def __sub__(self, other):
        if isinstance(other, Jet):
            self._match(other)
            return Jet._raw(tuple(a - b for a, b in zip(self.c, other.c)))
        if isinstance(other, Real):
            return Jet._raw((self.c[0] - other,) + self.c[1:])
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, Real):
            return Jet._raw((other - self.c[0],) + tuple(-a for a in self.c[1:]))
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Jet):
            self._match(other)
            return Jet._raw(_mul(self.c, other.c))
        if isinstance(other, Real):
            return self.scale(other)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            self._match(other)
            return Jet._raw(_div(self.c, other.c))
        if isinstance(other, Real):
            if other == 0:
                raise JetDivisionError("division of jet by zero")
            return Jet._raw(tuple(a / other for a in self.c))
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, Real):
            return Jet.constant(other, self.order) / self
        return NotImplemented

    def scale(self, k: float) -> "Jet":
        return Jet._raw(tuple(k * a for a in self.c))


def _check_order(order: int) -> None:
    if not 0 <= order <= MAX_ORDER:
        raise JetOrderError(f"order must be in 0..{MAX_ORDER}, got {order}")


def _mul(a: Sequence[float], b: Sequence[float]) -> tuple:
    out = []
    for i in range(len(a)):
        row = _BINOM[i]
        s = 0.0
        for j in range(i + 1):
            s += row[j] * a[j] * b[i - j]
        out.append(s)
    return tuple(out)


def _div(a: Sequence[float], b: Sequence[float]) -> tuple:
    b0 = b[0]
    if b0 == 0.0:
        raise JetDivisionError("division by a jet with zero value")
    q: list[float] = []
    for i in range(len(a)):
        row = _BINOM[i]
        s = a[i]
        for j in range(i):
            s -= row[j] * q[j] * b[i - j]
        q.append(s / b0)
    return tuple(q)


def mul(a: Jet, b: Jet) -> Jet:
    return a * b


def div(a: Jet, b: Jet) -> Jet:
    return a / b


def compose(derivs: Sequence[float], u: Jet) -> Jet:
    """Jet of ``f(u(t))`` given ``f(u0), f'(u0), ..., f^(m)(u0)``."""
    m = u.order
    if len(derivs) < m + 1:
        raise JetOrderError(f"need {m + 1} derivative values, got {len(derivs)}")
    out = [float(derivs[0])]
    if m == 0:
        return Jet._raw(tuple(out))
    # centred inner series in normalised Taylor form
    d = [0.0] + [u.c[i] / _FACT[i] for i in range(1, m + 1)]
    acc = [0.0] * (m + 1)
    power = d[:]
    for j in range(1, m + 1):
        w = derivs[j] / _FACT[j]
        for i in range(j, m + 1):
            acc[i] += w * power[i]
        if j < m:
            power = _series_mul(power, d)
    for i in range(1, m + 1):
        out.append(acc[i] * _FACT[i])
    return Jet._raw(tuple(out))


def _series_mul(p: list, d: list) -> list:
    m = len(p) - 1
    q = [0.0] * (m + 1)
    for i in range(1, m + 1):
        s = 0.0
        for l in range(i):
            s += p[l] * d[i - l]
        q[i] = s
    return q
