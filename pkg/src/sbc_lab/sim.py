"""Fixed-step closed-loop simulation.

The integrated state is ``y = (x_1..x_n, adapted estimates)``. The control
cascade is re-evaluated at every derivative evaluation, so RK4 stages see
the controller as a continuous feedback law rather than a held sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expr as ex
from . import kernel
from .controller import ControllerConfig, cascade_step, param_names
from .errors import ConfigError, NonFiniteError
from .jet import Jet
from .plant import SffModel, rhs

INTEGRATORS = ("euler", "rk4")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-5
    duration: float = 10.0
    integrator: str = "rk4"
    x0: tuple | None = None  # zeros when None
    record_stride: int = 100

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (math.isfinite(self.duration) and self.duration >= self.dt):
            raise ConfigError(f"duration must be >= dt, got {self.duration}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ConfigError(f"record_stride must be a positive integer, got {self.record_stride}")
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class Trace:
    """Recorded closed-loop signals, one row per ``record_stride`` steps."""

    t: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    e: np.ndarray
    u: np.ndarray
    theta_hat: np.ndarray
    s: np.ndarray
    nu_tot: np.ndarray
    param_names: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.t.shape[0]

    def columns(self) -> list[str]:
        n = self.n
        return (
            ["t"]
            + [f"x{k}" for k in range(1, n + 1)]
            + [f"x{k}d" for k in range(1, n + 1)]
            + [f"e{k}" for k in range(1, n + 1)]
            + ["u"]
            + list(self.param_names)
            + [f"s{k}" for k in range(1, n)]
            + ["nu_tot"]
        )

    def to_array(self) -> np.ndarray:
        return np.column_stack(
            [self.t, self.x, self.xd, self.e, self.u, self.theta_hat, self.s, self.nu_tot]
        )

    def column(self, name: str) -> np.ndarray:
        return self.to_array()[:, self.columns().index(name)]

    def theta(self, k: int, z: int) -> np.ndarray:
        return self.theta_hat[:, self.param_names.index(f"theta_{k}_{z}")]

    def every(self, stride: int) -> "Trace":
        """Every ``stride``-th row, as a new trace."""
        sl = slice(None, None, stride)
        return Trace(
            self.t[sl], self.x[sl], self.xd[sl], self.e[sl], self.u[sl],
            self.theta_hat[sl], self.s[sl], self.nu_tot[sl], self.param_names,
        )

    def to_csv(self, path) -> None:
        data = self.to_array()
        with open(path, "w", newline="\n", encoding="ascii") as fh:
            fh.write(",".join(self.columns()) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        text = Path(path).read_text(encoding="ascii")
        header, _, body = text.partition("\n")
        cols = header.split(",")
        n = sum(1 for c in cols if c.startswith("e") and c[1:].isdigit())
        names = tuple(c for c in cols if c.startswith("theta_"))
        data = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2) if body.strip() else np.zeros((0, len(cols)))
        i = 0

        def take(width):
            nonlocal i
            block = data[:, i : i + width]
            i += width
            return block

        t = take(1)[:, 0]
        x, xd, e = take(n), take(n), take(n)
        u = take(1)[:, 0]
        th = take(len(names))
        s = take(n - 1)
        nu = take(1)[:, 0]
        return cls(t, x, xd, e, u, th, s, nu, names)


def reference_jet(trajectory: ex.Node, t: float, order: int) -> Jet:
    """Jet of ``x_1d`` at ``t``: value and the first ``order`` time derivatives."""
    if t < 0:
        raise ValueError(f"reference trajectory is defined for t >= 0, got {t}")
    return ex.eval_jet(trajectory, ex.EvalEnv(Jet.variable(float(t), order), ()), order)


def _initial_state(model: SffModel, cfg: ControllerConfig, sim: SimConfig) -> np.ndarray:
    x0 = sim.x0 if sim.x0 is not None else (0.0,) * model.n
    if len(x0) != model.n:
        raise ConfigError(f"x0 has {len(x0)} entries, model order is {model.n}")
    theta0 = cfg.initial_theta_hat()
    extra = [theta0[k - 1][z - 1] for k, z in cfg.adapted_params()]
    return np.array(list(x0) + extra, dtype=np.float64)


def simulate(
    model: SffModel,
    cfg: ControllerConfig,
    trajectory: ex.Node,
    sim: SimConfig = SimConfig(),
    engine: str = "numba",
) -> Trace:
    """Integrate the closed loop from ``t = 0`` and return the recorded trace.

    ``engine="python"`` runs the reference implementation (slow, meant for
    short cross-checks); both engines perform the same arithmetic.
    """
    cfg = cfg.bind(model)
    y0 = _initial_state(model, cfg, sim)
    if engine == "numba":
        return _simulate_kernel(model, cfg, trajectory, sim, y0)
    if engine == "python":
        return _simulate_python(model, cfg, trajectory, sim, y0)
    raise ValueError(f"unknown engine {engine!r}")


def _allocate(n: int, P: int, rows: int):
    return dict(
        t=np.zeros(rows), x=np.zeros((rows, n)), xd=np.zeros((rows, n)), e=np.zeros((rows, n)),
        u=np.zeros(rows), theta_hat=np.zeros((rows, P)), s=np.zeros((rows, max(n - 1, 0))),
        nu_tot=np.zeros(rows),
    )


def _simulate_kernel(model, cfg, trajectory, sim, y0) -> Trace:
    prob = kernel.compile_problem(model, cfg, trajectory)
    n = model.n
    P = prob.theta_true.shape[0]
    nsteps = sim.steps
    stride = int(sim.record_stride)
    rows = nsteps // stride + 1
    rec = _allocate(n, P, rows)
    s_buf = np.zeros((rows, max(n - 1, 1)))
    err = np.zeros(4, dtype=np.int64)
    errf = np.zeros(2)
    status, _ = kernel.integrate(
        *prob.args(), prob.inv_rho, y0, float(sim.dt), nsteps, stride,
        0 if sim.integrator == "euler" else 1,
        rec["t"], rec["x"], rec["xd"], rec["e"], rec["u"], rec["theta_hat"], s_buf, rec["nu_tot"],
        err, errf,
    )
    kernel.raise_status(int(status), err, float(errf[0]), prob)
    rec["s"] = s_buf[:, : n - 1].copy()
    return Trace(**rec, param_names=tuple(param_names(model)))


def _simulate_python(model, cfg, trajectory, sim, y0) -> Trace:
    from .analysis import lyapunov

    n = model.n
    adapted = cfg.adapted_params()
    names = param_names(model)
    nsteps = sim.steps
    stride = int(sim.record_stride)
    rows = nsteps // stride + 1
    rec = _allocate(n, len(names), rows)
    dt = float(sim.dt)
    theta_rows = cfg.initial_theta_hat()

    def deriv(t, y):
        th = [list(r) for r in theta_rows]
        for i, (k, z) in enumerate(adapted):
            th[k - 1][z - 1] = y[n + i]
        out = cascade_step(model, cfg, y[:n], th, reference_jet(trajectory, t, n), t)
        dy = list(rhs(model, y[:n], out.u, t)) + [out.theta_hat_dot[kz] for kz in adapted]
        return np.array(dy), out

    y = y0.copy()
    row = 0
    for step in range(nsteps + 1):
        t = step * dt
        k1, out = deriv(t, y)
        if step % stride == 0:
            err = [
                [th - hat for th, hat in zip(sub.theta, hat_row)]
                for sub, hat_row in zip(model.subsystems, out.theta_hat)
            ]
            rec["t"][row] = t
            rec["x"][row] = y[:n]
            rec["xd"][row] = out.x_d
            rec["e"][row] = out.e
            rec["u"][row] = out.u
            rec["theta_hat"][row] = [v for r in out.theta_hat for v in r]
            rec["s"][row] = out.s
            rec["nu_tot"][row] = lyapunov(model, cfg, out.e, err).nu_tot
            row += 1
        if step == nsteps:
            break
        if sim.integrator == "euler":
            y = y + dt * k1
        else:
            k2, _ = deriv(t + dt / 2, y + dt / 2 * k1)
            k3, _ = deriv(t + dt / 2, y + dt / 2 * k2)
            k4, _ = deriv(t + dt, y + dt * k3)
            y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            i = int(bad[0])
            ch = f"x{i + 1}" if i < n else "theta_{}_{}".format(*adapted[i - n])
            when = (step + 1) * dt
            raise NonFiniteError(f"non-finite state {ch} at t={when:.6g}", when, ch)
    return Trace(**rec, param_names=tuple(names))

