"""Strict-feedback plant with linearly parameterised drift.

Subsystem ``k`` obeys::

    theta_k1 * dx_k/dt = sum_{z>=2} theta_kz * gamma_kz(x_1..x_k) + g_k(x_1..x_k) * x_{k+1}

with ``x_{n+1} = u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from . import expr as ex
from .errors import ConfigError, NonFiniteError
from .jet import Jet, JetOrderError


@dataclass(frozen=True)
class SubsystemSpec:
    """One subsystem: ``theta[0]`` multiplies the derivative, ``theta[1:]`` the regressors."""

    theta: tuple
    regressors: tuple = ()
    gain: ex.Node = field(default_factory=lambda: ex.Const(1.0))

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "regressors", tuple(self.regressors))
        if len(self.theta) != len(self.regressors) + 1:
            raise ConfigError(
                f"subsystem needs {len(self.regressors) + 1} theta values "
                f"(one per regressor plus theta_k1), got {len(self.theta)}"
            )
        if not all(math.isfinite(v) and v > 0 for v in self.theta):
            raise ConfigError(f"plant parameters must be positive, got {self.theta}")

    @property
    def j(self) -> int:
        return len(self.theta)


@dataclass(frozen=True)
class SffModel:
    subsystems: tuple

    def __post_init__(self):
        subs = tuple(self.subsystems)
        object.__setattr__(self, "subsystems", subs)
        if not subs:
            raise ConfigError("model needs at least one subsystem")
        if len(subs) > 16:
            raise ConfigError("model order is limited to 16")
        for k, sub in enumerate(subs, start=1):
            for node in sub.regressors + (sub.gain,):
                bad = [i for i in ex.state_indices(node) if i > k]
                if bad:
                    raise ConfigError(
                        f"subsystem {k} expression {ex.render(node)} references x{max(bad)}; "
                        f"strict-feedback form allows only x1..x{k}"
                    )

    @property
    def n(self) -> int:
        return len(self.subsystems)

    def append(self, sub: SubsystemSpec) -> "SffModel":
        return SffModel(self.subsystems + (sub,))

    @classmethod
    def from_strings(cls, subsystems: Sequence[dict]) -> "SffModel":
        """Build from ``{"theta": [...], "regressors": [...], "gain": "..."}`` dicts."""
        specs = []
        for d in subsystems:
            specs.append(
                SubsystemSpec(
                    theta=d["theta"],
                    regressors=tuple(ex.parse(r) for r in d.get("regressors", ())),
                    gain=ex.parse(d.get("gain", "1")),
                )
            )
        return cls(tuple(specs))


def validation_model(a1: float = 5.0, a2: float = 5.0) -> SffModel:
    """Third-order benchmark: x1' = a1 x1^3 + x2, x2' = a2 (x1^2 + x2^2) + x3, x3' = u."""
    return SffModel.from_strings(
        [
            {"theta": [1.0, a1], "regressors": ["x1^3"], "gain": "1"},
            {"theta": [1.0, a2], "regressors": ["x1^2 + x2^2"], "gain": "1"},
            {"theta": [1.0], "regressors": [], "gain": "1"},
        ]
    )


def f_k(model: SffModel, k: int, x: Sequence[float], t: float = 0.0) -> float:
    """Drift ``sum_z theta_kz gamma_kz`` of subsystem ``k`` (1-based)."""
    if not 1 <= k <= model.n:
        raise IndexError(f"subsystem index {k} outside 1..{model.n}")
    if len(x) < k:
        raise ValueError(f"need x1..x{k}, got {len(x)} values")
    sub = model.subsystems[k - 1]
    env = ex.EvalEnv(t, x)
    total = 0.0
    for theta, gamma in zip(sub.theta[1:], sub.regressors):
        total += theta * ex.eval(gamma, env)
    return total


def g_k(model: SffModel, k: int, x: Sequence[float], t: float = 0.0) -> float:
    return ex.eval(model.subsystems[k - 1].gain, ex.EvalEnv(t, x))


def rhs(model: SffModel, state: Sequence[float], u: float, t: float = 0.0) -> list[float]:
    """State derivative ``dx/dt`` for input ``u``."""
    n = model.n
    if len(state) != n:
        raise ValueError(f"state has length {len(state)}, model order is {n}")
    out = []
    for k in range(1, n + 1):
        nxt = state[k] if k < n else u
        sub = model.subsystems[k - 1]
        v = (f_k(model, k, state, t) + g_k(model, k, state, t) * nxt) / sub.theta[0]
        if not math.isfinite(v):
            raise NonFiniteError(f"non-finite derivative in subsystem {k}", t, f"x{k}")
        out.append(v)
    return out


def _rhs_k_jet(model: SffModel, k: int, xj: Sequence, nxt: Jet, tj: Jet, order: int) -> Jet:
    sub = model.subsystems[k - 1]
    env = ex.EvalEnv(tj, xj)
    acc = ex.eval_jet(sub.gain, env, order) * nxt
    for theta, gamma in zip(sub.theta[1:], sub.regressors):
        acc = acc + theta * ex.eval_jet(gamma, env, order)
    return acc / sub.theta[0]


def state_jets(
    model: SffModel, state: Sequence[float], u_jet: Jet | None, order: int, t: float = 0.0
) -> list[Jet]:
    """Jets of ``x_1..x_n`` obtained by repeatedly differentiating the dynamics.

    Coefficient ``i+1`` of ``x_k`` is coefficient ``i`` of the right-hand side
    evaluated on the order-``i`` jets. ``u_jet`` needs order ``>= order - 1``
    (it may be None when ``order == 0``).
    """
    n = model.n
    if order < 0 or order > n:
        raise JetOrderError(f"state jet order must be in 0..{n}, got {order}")
    if order > 0 and (u_jet is None or u_jet.order < order - 1):
        raise JetOrderError(f"u jet of order >= {order - 1} required")
    coeffs = [[float(v)] for v in state]
    for i in range(order):
        xj = [Jet(c) for c in coeffs]
        tj = Jet.variable(t, i)
        new = []
        for k in range(1, n + 1):
            nxt = xj[k] if k < n else u_jet.truncate(i)
            new.append(_rhs_k_jet(model, k, xj, nxt, tj, i).c[i])
        for c, v in zip(coeffs, new):
            c.append(v)
    return [Jet(c) for c in coeffs]


def feedback_jets(model: SffModel, state: Sequence[float], t: float = 0.0) -> list[Jet]:
    """Triangular state jets: ``x_k`` to order ``n-k``, which never needs ``u``.

    These are exactly the derivatives consumed by the control cascade: stage
    ``k`` differentiates ``x_1..x_k`` up to order ``n-k``.
    """
    n = model.n
    coeffs = [[float(v)] for v in state]
    for i in range(n - 1):
        # x_k gains coefficient i+1 only while its target order n-k exceeds i
        xj = [Jet(c[: i + 1]) if len(c) > i else None for c in coeffs]
        tj = Jet.variable(t, i)
        new = {}
        for k in range(1, n - i):
            new[k] = _rhs_k_jet(model, k, xj, xj[k], tj, i).c[i]
        for k, v in new.items():
            coeffs[k - 1].append(v)
    return [Jet(c) for c in coeffs]
