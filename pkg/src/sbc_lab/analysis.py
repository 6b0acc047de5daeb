"""Lyapunov bookkeeping and trace diagnostics.

Subsystem ``k`` carries::

    nu_k = (theta_k1 e_k^2 + sum_z (theta_kz - theta_hat_kz)^2 / rho_kz) / (2 D_k)

with ``D_k = delta_1 ... delta_(k-1)``. Parameter terms appear for every
parameter that has an adaptation block, whether or not adaptation runs, so
``nu_tot`` means the same thing in fixed and adaptive mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as ex
from .controller import ControllerConfig, cascade_step, delta_products
from .plant import SffModel
from .sim import Trace, reference_jet


@dataclass(frozen=True)
class LyapunovSnapshot:
    nu: tuple
    nu_tot: float
    eAe: float
    eBe: float


@dataclass(frozen=True)
class RunMetrics:
    max_abs_e: tuple
    final_abs_e: tuple
    theta_hat_terminal: dict

    def to_dict(self) -> dict:
        return {
            "max_abs_e": list(self.max_abs_e),
            "final_abs_e": list(self.final_abs_e),
            "theta_hat_terminal": dict(self.theta_hat_terminal),
        }


def _inv_rho(model: SffModel, cfg: ControllerConfig) -> list[list[float]]:
    """``1/rho_kz`` where an adaptation block exists, else 0."""
    out = []
    for k, sub in enumerate(model.subsystems, start=1):
        row = []
        for z in range(1, sub.j + 1):
            spec = cfg.adapt.get((k, z))
            row.append(0.0 if spec is None else 1.0 / spec.projection.rho)
        out.append(row)
    return out


def lyapunov(
    model: SffModel, cfg: ControllerConfig, e: Sequence[float], theta_err: Sequence[Sequence[float]]
) -> LyapunovSnapshot:
    """Evaluate ``nu_k``, ``nu_tot`` and the quadratic forms for one sample."""
    n = model.n
    if len(e) != n or len(theta_err) != n:
        raise ValueError(f"need {n} errors and {n} parameter-error rows")
    D = delta_products(cfg)
    w = _inv_rho(model, cfg)
    nu = []
    eAe = eBe = 0.0
    for k, sub in enumerate(model.subsystems):
        if len(theta_err[k]) != sub.j:
            raise ValueError(f"subsystem {k + 1} needs {sub.j} parameter errors")
        ek2 = e[k] * e[k]
        part = sub.theta[0] * ek2 + sum(wz * d * d for wz, d in zip(w[k], theta_err[k]))
        nu.append(0.5 * part / D[k])
        eAe += sub.theta[0] / D[k] * ek2
        eBe += cfg.lam[k] / D[k] * ek2
    return LyapunovSnapshot(tuple(nu), float(sum(nu)), eAe, eBe)


def weight_matrices(model: SffModel, cfg: ControllerConfig) -> tuple[np.ndarray, np.ndarray]:
    """``A = diag(theta_k1 / D_k)`` and ``B = diag(lambda_k / D_k)``."""
    D = np.array(delta_products(cfg))
    A = np.diag([sub.theta[0] for sub in model.subsystems] / D)
    B = np.diag(np.array(cfg.lam) / D)
    return A, B


def metrics(trace: Trace) -> RunMetrics:
    if len(trace) == 0:
        raise ValueError("empty trace")
    abs_e = np.abs(trace.e)
    return RunMetrics(
        max_abs_e=tuple(float(v) for v in abs_e.max(axis=0)),
        final_abs_e=tuple(float(v) for v in abs_e[-1]),
        theta_hat_terminal={name: float(v) for name, v in zip(trace.param_names, trace.theta_hat[-1])},
    )


def eBe_series(trace: Trace, cfg: ControllerConfig) -> np.ndarray:
    beta = np.array(cfg.lam) / np.array(delta_products(cfg))
    return (trace.e**2) @ beta


def monotonicity_report(trace: Trace, cfg: ControllerConfig, tol_factor: float = 1e-4) -> list[int]:
    """Sample indices ``i`` where ``(nu_tot[i+1] - nu_tot[i]) / dt`` exceeds the tolerance.

    The tolerance is ``tol_factor * max(1, e^T B e)`` evaluated at sample ``i``.
    """
    if len(trace) < 2:
        return []
    rate = np.diff(trace.nu_tot) / np.diff(trace.t)
    tol = tol_factor * np.maximum(1.0, eBe_series(trace, cfg)[:-1])
    return [int(i) for i in np.flatnonzero(rate > tol)]


def nu_series(trace: Trace, model: SffModel, cfg: ControllerConfig) -> np.ndarray:
    """``nu_k`` per row, shape ``(len(trace), n)``."""
    D = np.array(delta_products(cfg))
    w = _inv_rho(model, cfg)
    out = np.empty((len(trace), model.n))
    col = 0
    for k, sub in enumerate(model.subsystems):
        acc = sub.theta[0] * trace.e[:, k] ** 2
        for z in range(sub.j):
            acc = acc + w[k][z] * (sub.theta[z] - trace.theta_hat[:, col + z]) ** 2
        col += sub.j
        out[:, k] = 0.5 * acc / D[k]
    return out


def virtual_stability_residuals(trace: Trace, model: SffModel, cfg: ControllerConfig) -> np.ndarray:
    """Finite-difference ``dnu_k/dt`` minus the trapezoidal bound ``-beta_k e_k^2 - s_(k-1) + s_k``.

    Shape ``(len(trace) - 1, n)``; a virtually stable loop gives values ``<= 0``
    up to discretisation error.
    """
    n = model.n
    D = np.array(delta_products(cfg))
    bound = -(np.array(cfg.lam) / D) * trace.e**2
    if n > 1:
        bound[:, 1:] -= trace.s
        bound[:, :-1] += trace.s
    nu = nu_series(trace, model, cfg)
    rate = np.diff(nu, axis=0) / np.diff(trace.t)[:, None]
    return rate - 0.5 * (bound[1:] + bound[:-1])


def error_dynamics_residuals(
    trace: Trace, model: SffModel, cfg: ControllerConfig, trajectory: ex.Node, indices: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of the closed-loop error dynamics at interior samples.

    Left: ``theta_k1 * de_k/dt`` by central differences of the recorded errors.
    Right: ``-lambda_k e_k - delta_(k-1) g_(k-1) e_(k-1) + g_k e_(k+1) + Y_k (theta_k - theta_hat_k)``
    from a fresh cascade evaluation at the recorded state.
    """
    cfg = cfg.bind(model)
    n = model.n
    lhs = np.empty((len(indices), n))
    rhs = np.empty((len(indices), n))
    for r, i in enumerate(indices):
        if not 0 < i < len(trace) - 1:
            raise IndexError(f"sample {i} has no neighbours on both sides")
        t = float(trace.t[i])
        h = float(trace.t[i + 1] - trace.t[i - 1])
        th, col = [], 0
        for sub in model.subsystems:
            th.append(list(trace.theta_hat[i, col : col + sub.j]))
            col += sub.j
        out = cascade_step(model, cfg, trace.x[i], th, reference_jet(trajectory, t, n), t)
        for k, sub in enumerate(model.subsystems):
            lhs[r, k] = sub.theta[0] * (trace.e[i + 1, k] - trace.e[i - 1, k]) / h
            v = -cfg.lam[k] * out.e[k]
            if k > 0:
                v -= cfg.delta[k - 1] * out.g[k - 1] * out.e[k - 1]
            if k < n - 1:
                v += out.g[k] * out.e[k + 1]
            v += sum(y * (tr - hat) for y, tr, hat in zip(out.Y[k], sub.theta, out.theta_hat[k]))
            rhs[r, k] = v
    return lhs, rhs


def compare(a: Trace, b: Trace, t_min: float | None = None, t_max: float | None = None) -> dict:
    """Per-column ``max |a - b|`` over the window ``t_min <= t <= t_max``."""
    if a.t.shape != b.t.shape or not np.array_equal(a.t, b.t):
        raise ValueError("traces are sampled on different time grids")
    if a.columns() != b.columns():
        raise ValueError("traces have different columns")
    mask = np.ones(len(a), dtype=bool)
    if t_min is not None:
        mask &= a.t >= t_min
    if t_max is not None:
        mask &= a.t <= t_max
    if not mask.any():
        raise ValueError("comparison window contains no samples")
    diff = np.abs(a.to_array()[mask] - b.to_array()[mask]).max(axis=0)
    return {name: float(v) for name, v in zip(a.columns()[1:], diff[1:])}
