"""Smooth parameter projection.

An estimate ``P`` follows ``dP/dt = rho * (p + sigma * kappa(P))`` where the
correction ``kappa`` vanishes on ``[a, b]``, equals the distance back to the
bound beyond ``a - c`` / ``b + c``, and blends in between through the
switching functions ``S_a`` / ``S_b``. Every derivative of ``S_a``/``S_b``
vanishes at both ends of its activation interval, so ``kappa`` is smooth and
the estimate inherits the smoothness of the drive ``p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError
from .expr import FUNCTIONS
from .jet import Jet, compose

# beyond this |argument| every derivative of tanh underflows to zero
_TANH_FLAT = 380.0


@dataclass(frozen=True)
class ProjectionConfig:
    rho: float
    sigma: float
    a: float
    b: float
    c: float
    smoothness_order: int = 0

    def __post_init__(self):
        vals = (self.rho, self.sigma, self.a, self.b, self.c)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ConfigError(f"projection parameters must be finite: {vals}")
        if self.rho <= 0 or self.sigma <= 0:
            raise ConfigError(f"rho and sigma must be positive, got rho={self.rho}, sigma={self.sigma}")
        if not (self.c + self.b > self.b >= self.a > self.a - self.c > 0):
            raise ConfigError(
                f"projection bounds need c + b > b >= a > a - c > 0, got a={self.a}, b={self.b}, c={self.c}"
            )
        if self.smoothness_order < 0:
            raise ConfigError("smoothness_order must be >= 0")


@dataclass
class ProjectionState:
    value: float


def switch_a(cfg: ProjectionConfig, P: float) -> float:
    """Strictly decreasing from 1 at ``a-c`` to 0 at ``a``."""
    a, c = cfg.a, cfg.c
    if not a - c < P < a:
        raise ValueError(f"S_a defined on ({a - c}, {a}), got {P}")
    return 0.5 * (1.0 - math.tanh(1.0 / (a - c - P) + 1.0 / (a - P)))


def switch_b(cfg: ProjectionConfig, P: float) -> float:
    """Strictly increasing from 0 at ``b`` to 1 at ``b+c``."""
    b, c = cfg.b, cfg.c
    if not b < P < b + c:
        raise ValueError(f"S_b defined on ({b}, {b + c}), got {P}")
    return 0.5 * (1.0 + math.tanh(1.0 / (b - P) + 1.0 / (b + c - P)))


def kappa(cfg: ProjectionConfig, P: float) -> float:
    a, b, c = cfg.a, cfg.b, cfg.c
    if P >= b + c:
        return b - P
    if P > b:
        return (b - P) * switch_b(cfg, P)
    if P >= a:
        return 0.0
    if P > a - c:
        return (a - P) * switch_a(cfg, P)
    return a - P


def p_dot(cfg: ProjectionConfig, p: float, P: float) -> float:
    return cfg.rho * (p + cfg.sigma * kappa(cfg, P))


def _switch_jet(P: Jet, lo: float, hi: float, sign: float) -> Jet:
    """0.5 * (1 + sign * tanh(1/(lo - P) + 1/(hi - P))) on a jet."""
    m = P.order
    inner = 1.0 / (lo - P) + 1.0 / (hi - P)
    u0 = inner.value
    if abs(u0) > _TANH_FLAT:
        return Jet.constant(0.5 * (1.0 + sign * math.tanh(u0)), m)
    th = compose(FUNCTIONS["tanh"].derivs(u0, m), inner)
    return 0.5 * (1.0 + sign * th)


def switch_a_jet(cfg: ProjectionConfig, P: Jet) -> Jet:
    if not cfg.a - cfg.c < P.value < cfg.a:
        raise ValueError(f"S_a defined on ({cfg.a - cfg.c}, {cfg.a}), got {P.value}")
    return _switch_jet(P, cfg.a - cfg.c, cfg.a, -1.0)


def switch_b_jet(cfg: ProjectionConfig, P: Jet) -> Jet:
    if not cfg.b < P.value < cfg.b + cfg.c:
        raise ValueError(f"S_b defined on ({cfg.b}, {cfg.b + cfg.c}), got {P.value}")
    return _switch_jet(P, cfg.b, cfg.b + cfg.c, 1.0)


def kappa_jet(cfg: ProjectionConfig, P: Jet) -> Jet:
    """Jet of ``kappa`` along an estimate trajectory.

    Branches follow the same inequalities as :func:`kappa`. At the four
    branch points the one-sided limits agree to every order, so no special
    handling of exact boundary hits is needed.
    """
    a, b, c = cfg.a, cfg.b, cfg.c
    P0 = P.value
    if P0 >= b + c:
        return b - P
    if P0 > b:
        return (b - P) * switch_b_jet(cfg, P)
    if P0 >= a:
        return Jet.constant(0.0, P.order)
    if P0 > a - c:
        return (a - P) * switch_a_jet(cfg, P)
    return a - P


def p_dot_jet(cfg: ProjectionConfig, p: Jet, P: Jet) -> Jet:
    """Jet of ``dP/dt = rho (p + sigma kappa(P))``."""
    return cfg.rho * (p + cfg.sigma * kappa_jet(cfg, P))


def estimate_jet(cfg: ProjectionConfig, P0: float, p: Jet) -> Jet:
    """Jet of the estimate itself, order ``p.order``, from its current value.

    Coefficient ``i+1`` of ``P`` is coefficient ``i`` of ``dP/dt`` evaluated
    on the order-``i`` truncations.
    """
    coeffs = [float(P0)]
    for i in range(p.order):
        rate = p_dot_jet(cfg, p.truncate(i), Jet(coeffs))
        coeffs.append(rate.c[i])
    return Jet(coeffs)


def lemma_gap(cfg: ProjectionConfig, P_c: float, p: float, P: float) -> tuple[float, float]:
    """Both sides of ``(P_c - P)(p - dP/dt / rho) <= -sigma kappa^2``.

    Returns ``(lhs, bound)``; the projection guarantees ``lhs <= bound <= 0``
    for every constant ``P_c`` in ``[a, b]``.
    """
    if not cfg.a <= P_c <= cfg.b:
        raise ValueError(f"P_c must lie in [{cfg.a}, {cfg.b}], got {P_c}")
    k = kappa(cfg, P)
    lhs = (P_c - P) * (p - p_dot(cfg, p, P) / cfg.rho)
    return lhs, -cfg.sigma * k * k
