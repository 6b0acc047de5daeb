"""Subsystem-based control cascade, fixed-parameter and adaptive.

Every stage solves the same modular law::

    g_k x_(k+1)d = Y_k theta_hat_k + delta_(k-1) g_(k-1) e_(k-1) + lambda_k e_k

with ``Y_k = [dx_kd/dt, -gamma_k2, ..., -gamma_kj]`` and ``x_(n+1)d = u``.
Stage ``k`` carries its signals as jets of order ``n-k`` so that the next
stage can read ``dx_(k+1)d/dt`` (and higher derivatives) exactly.

This module is the readable reference implementation; :mod:`sbc_lab.kernel`
runs the same arithmetic compiled for simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import expr as ex
from .errors import ConfigError, GainTooSmallError, NonFiniteError
from .jet import Jet
from .plant import SffModel, feedback_jets
from .projection import ProjectionConfig, estimate_jet, p_dot

GAIN_EPS = 1e-9


@dataclass(frozen=True)
class AdaptSpec:
    projection: ProjectionConfig
    initial: float
    enabled: bool = True


@dataclass(frozen=True)
class ControllerConfig:
    lam: tuple
    delta: tuple
    mode: str = "fixed"
    fixed_theta: tuple = ()
    adapt: dict = field(default_factory=dict)  # (k, zeta) -> AdaptSpec, 1-based

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        object.__setattr__(self, "delta", tuple(float(v) for v in self.delta))
        object.__setattr__(
            self, "fixed_theta", tuple(tuple(float(v) for v in row) for row in self.fixed_theta)
        )
        if self.mode not in ("fixed", "adaptive"):
            raise ConfigError(f"controller mode must be 'fixed' or 'adaptive', got {self.mode!r}")
        if not all(math.isfinite(v) and v > 0 for v in self.lam):
            raise ConfigError(f"all lambda gains must be positive, got {self.lam}")
        if not all(math.isfinite(v) and v > 0 for v in self.delta):
            raise ConfigError(f"all delta gains must be positive, got {self.delta}")
        if len(self.delta) != len(self.lam) - 1:
            raise ConfigError(f"need {len(self.lam) - 1} delta gains for {len(self.lam)} subsystems")

    @property
    def n(self) -> int:
        return len(self.lam)

    def bind(self, model: SffModel) -> "ControllerConfig":
        """Check dimensions against ``model`` and set projection smoothness orders."""
        n = model.n
        if self.n != n:
            raise ConfigError(f"controller has {self.n} lambda gains, model order is {n}")
        if len(self.fixed_theta) != n:
            raise ConfigError(f"fixed_theta needs {n} rows, got {len(self.fixed_theta)}")
        for k, (row, sub) in enumerate(zip(self.fixed_theta, model.subsystems), start=1):
            if len(row) != sub.j:
                raise ConfigError(f"fixed_theta row {k} needs {sub.j} values, got {len(row)}")
        adapt = {}
        for (k, z), spec in self.adapt.items():
            if not (1 <= k <= n and 1 <= z <= model.subsystems[k - 1].j):
                raise ConfigError(f"adapted parameter theta_{k}_{z} does not exist in the model")
            proj = replace(spec.projection, smoothness_order=n - k)
            adapt[(k, z)] = replace(spec, projection=proj)
        return replace(self, adapt=adapt)

    def is_adapted(self, k: int, z: int) -> bool:
        spec = self.adapt.get((k, z))
        return self.mode == "adaptive" and spec is not None and spec.enabled

    def initial_theta_hat(self) -> list[list[float]]:
        out = [list(row) for row in self.fixed_theta]
        for (k, z), spec in self.adapt.items():
            if self.is_adapted(k, z):
                out[k - 1][z - 1] = spec.initial
        return out

    def adapted_params(self) -> list[tuple[int, int]]:
        return sorted(kz for kz in self.adapt if self.is_adapted(*kz))


def param_names(model: SffModel) -> list[str]:
    return [f"theta_{k}_{z}" for k, sub in enumerate(model.subsystems, 1) for z in range(1, sub.j + 1)]


@dataclass
class ControllerOutput:
    u: float
    x_d_jets: list  # x_1d .. x_nd, x_kd has order n-k+1
    controls: list  # x_2d .. x_nd and u, stage-k output has order n-k
    e: tuple
    s: tuple
    theta_hat: tuple  # per subsystem, values in use
    theta_hat_dot: dict  # (k, zeta) -> rate, adapted parameters only
    Y: tuple  # per subsystem regressor row values
    g: tuple

    @property
    def x_d(self) -> tuple:
        return tuple(j.value for j in self.x_d_jets)


def delta_products(cfg: ControllerConfig) -> list[float]:
    """``D_k = delta_1 ... delta_(k-1)`` with ``D_1 = 1``."""
    out = [1.0]
    for d in cfg.delta:
        out.append(out[-1] * d)
    return out


def regressor(model: SffModel, k: int, x_jets: Sequence, x_kd: Jet, t_jet: Jet | None = None) -> list[Jet]:
    """Row ``Y_k = [dx_kd/dt, -gamma_k2, ..., -gamma_kj]`` as jets of order ``x_kd.order - 1``."""
    m = x_kd.order - 1
    if t_jet is None:
        t_jet = Jet.variable(0.0, m)
    env = ex.EvalEnv(t_jet, x_jets)
    row = [x_kd.derivative()]
    for gamma in model.subsystems[k - 1].regressors:
        row.append(-ex.eval_jet(gamma, env, m))
    return row


def cascade_step(
    model: SffModel,
    cfg: ControllerConfig,
    state: Sequence[float],
    theta_hat: Sequence[Sequence[float]],
    x1d: Jet,
    t: float = 0.0,
) -> ControllerOutput:
    """Evaluate the whole cascade at one instant.

    ``x1d`` is the reference jet (order ``>= n``); ``theta_hat`` holds the
    current estimates per subsystem (fixed values in fixed mode).
    """
    n = model.n
    if x1d.order < n:
        raise ValueError(f"reference jet needs order >= {n}, got {x1d.order}")
    xj = feedback_jets(model, state, t)
    xd = x1d.truncate(n)
    x_d_jets = [xd]
    controls = []
    e_vals, g_vals, Y_vals, th_vals = [], [], [], []
    rates = {}
    e_prev = g_prev = None
    for k in range(1, n + 1):
        m = n - k
        sub = model.subsystems[k - 1]
        tj = Jet.variable(t, m)
        env_x = [xj[i].truncate(m) for i in range(k)]
        e = xd.truncate(m) - env_x[k - 1]
        Y = regressor(model, k, env_x, xd, tj)
        ff = Jet.constant(0.0, m)
        th_row = []
        for z in range(1, sub.j + 1):
            P0 = float(theta_hat[k - 1][z - 1])
            if cfg.is_adapted(k, z):
                spec = cfg.adapt[(k, z)]
                p = e * Y[z - 1]
                th = estimate_jet(spec.projection, P0, p)
                rates[(k, z)] = p_dot(spec.projection, p.value, P0)
            else:
                th = Jet.constant(P0, m)
            th_row.append(P0)
            ff = ff + Y[z - 1] * th
        rhs = ff + cfg.lam[k - 1] * e
        if k > 1:
            rhs = rhs + cfg.delta[k - 2] * (g_prev.truncate(m) * e_prev.truncate(m))
        g = ex.eval_jet(sub.gain, ex.EvalEnv(tj, env_x), m)
        if not abs(g.value) > GAIN_EPS:
            raise GainTooSmallError(k, g.value, t)
        nxt = rhs / g
        if not nxt.is_finite():
            raise NonFiniteError(f"non-finite fictitious control in subsystem {k}", t, f"x{k + 1}d")
        controls.append(nxt)
        if k < n:
            x_d_jets.append(nxt)
        e_vals.append(e.value)
        g_vals.append(g.value)
        Y_vals.append(tuple(y.value for y in Y))
        th_vals.append(tuple(th_row))
        e_prev, g_prev, xd = e, g, nxt
    D = delta_products(cfg)
    s = tuple(g_vals[k] * e_vals[k] * e_vals[k + 1] / D[k] for k in range(n - 1))
    return ControllerOutput(
        u=controls[-1].value,
        x_d_jets=x_d_jets,
        controls=controls,
        e=tuple(e_vals),
        s=s,
        theta_hat=tuple(th_vals),
        theta_hat_dot=rates,
        Y=tuple(Y_vals),
        g=tuple(g_vals),
    )


def stability_bounds(out: ControllerOutput, cfg: ControllerConfig) -> list[float]:
    """Right side ``-beta_k e_k^2 - s_(k-1) + s_k`` of each virtual-stability inequality."""
    n = len(out.e)
    D = delta_products(cfg)
    bounds = []
    for k in range(n):
        b = -cfg.lam[k] / D[k] * out.e[k] ** 2
        if k > 0:
            b -= out.s[k - 1]
        if k < n - 1:
            b += out.s[k]
        bounds.append(b)
    return bounds


def virtual_stability_check(
    prev: ControllerOutput, curr: ControllerOutput, dt: float, model: SffModel, cfg: ControllerConfig
) -> list[float]:
    """Finite-difference ``dnu_k/dt`` minus the trapezoidal bound, per subsystem.

    A virtually stable subsystem gives residuals ``<= 0`` up to discretisation error.
    """
    from .analysis import lyapunov

    def nus(out):
        err = [
            [th - hat for th, hat in zip(sub.theta, row)]
            for sub, row in zip(model.subsystems, out.theta_hat)
        ]
        return lyapunov(model, cfg, out.e, err).nu

    nu0, nu1 = nus(prev), nus(curr)
    b0, b1 = stability_bounds(prev, cfg), stability_bounds(curr, cfg)
    return [(v1 - v0) / dt - 0.5 * (c0 + c1) for v0, v1, c0, c1 in zip(nu0, nu1, b0, b1)]
