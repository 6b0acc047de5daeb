"""Run specifications: JSON ingestion, dotted overrides and built-in scenarios.

A run file has five sections::

    {
      "model": {"n": 3, "subsystems": [{"theta": [1, 5], "regressors": ["x1^3"], "gain": "1"}, ...]},
      "controller": {"mode": "adaptive", "lambda": [...], "delta": [...],
                     "fixed_theta": [[...], ...],
                     "adapt": [{"k": 1, "zeta": 2, "rho": 1000, "sigma": 1,
                                "lower": 1, "upper": 9, "activation_c": 0.5, "initial": 6}]},
      "trajectory": "sin(t)",
      "sim": {"dt": 1e-5, "duration": 10, "integrator": "rk4", "x0": [0, 0, 0], "record_stride": 100},
      "output": {"dir": "runs/example", "plots": false}
    }

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from . import expr as ex
from .controller import AdaptSpec, ControllerConfig
from .errors import ConfigError, ExprSyntaxError
from .plant import SffModel, SubsystemSpec
from .projection import ProjectionConfig
from .sim import SimConfig

REFERENCE_TRAJECTORY = (
    "piecewise(t <= 5: sin(2*pi*t)*tanh(t^3), "
    "t > 5: sin(2*pi*t)*tanh(t^3)*(1 - tanh((t-5)^3)))"
)


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "runs/run"
    plots: bool = False


@dataclass(frozen=True)
class RunSpec:
    model: SffModel
    controller: ControllerConfig
    trajectory: ex.Node
    sim: SimConfig
    output: OutputSpec

    @property
    def adapt(self) -> "_AdaptView":
        return _AdaptView(self.controller)

    def to_dict(self) -> dict:
        return to_dict(self)


_PROJECTION_FIELDS = {"lower": "a", "upper": "b", "activation_c": "c"}


class _AdaptView:
    """Flat read access such as ``spec.adapt.rho_12`` or ``spec.adapt.initial_22``."""

    def __init__(self, cfg: ControllerConfig):
        self._cfg = cfg

    def __getattr__(self, name: str):
        field, _, kz = name.rpartition("_")
        if not (field and len(kz) == 2 and kz.isdigit()):
            raise AttributeError(name)
        spec = self._cfg.adapt.get((int(kz[0]), int(kz[1])))
        if spec is None:
            raise AttributeError(f"no adaptation block for theta_{kz[0]}_{kz[1]}")
        if field in ("initial", "enabled"):
            return getattr(spec, field)
        return getattr(spec.projection, _PROJECTION_FIELDS.get(field, field))


def _check_keys(d, allowed: set, required: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    missing = sorted(required - set(d))
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {', '.join(missing)}")


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number, got {v!r}")
    return float(v)


def _nums(v, where: str) -> list[float]:
    if not isinstance(v, list):
        raise ConfigError(f"{where} must be a list of numbers")
    return [_num(x, f"{where}[{i}]") for i, x in enumerate(v)]


def _expr(text, where: str) -> ex.Node:
    if not isinstance(text, str):
        raise ConfigError(f"{where} must be an expression string")
    try:
        return ex.parse(text)
    except ExprSyntaxError as err:
        raise ExprSyntaxError(f"{where}: {err.args[0].rsplit(' at offset', 1)[0]}", err.offset, text) from None


def _model(d) -> SffModel:
    _check_keys(d, {"n", "subsystems"}, {"subsystems"}, "model")
    subs = d["subsystems"]
    if not isinstance(subs, list):
        raise ConfigError("model.subsystems must be a list")
    if "n" in d and d["n"] != len(subs):
        raise ConfigError(f"model.n = {d['n']} but {len(subs)} subsystems given")
    specs = []
    for k, s in enumerate(subs, start=1):
        where = f"model.subsystems[{k - 1}]"
        _check_keys(s, {"theta", "regressors", "gain"}, {"theta"}, where)
        regs = s.get("regressors", [])
        if not isinstance(regs, list):
            raise ConfigError(f"{where}.regressors must be a list")
        specs.append(
            SubsystemSpec(
                theta=_nums(s["theta"], f"{where}.theta"),
                regressors=tuple(_expr(r, f"{where}.regressors[{i}]") for i, r in enumerate(regs)),
                gain=_expr(s.get("gain", "1"), f"{where}.gain"),
            )
        )
    return SffModel(tuple(specs))


_ADAPT_KEYS = {"k", "zeta", "rho", "sigma", "lower", "upper", "activation_c", "initial", "enabled"}


def _controller(d) -> ControllerConfig:
    _check_keys(d, {"mode", "lambda", "delta", "fixed_theta", "adapt"}, {"lambda", "delta", "fixed_theta"}, "controller")
    ft = d["fixed_theta"]
    if not isinstance(ft, list):
        raise ConfigError("controller.fixed_theta must be a list of lists")
    adapt = {}
    for i, a in enumerate(d.get("adapt", [])):
        where = f"controller.adapt[{i}]"
        _check_keys(a, _ADAPT_KEYS, _ADAPT_KEYS - {"enabled"}, where)
        if not all(isinstance(a[key], int) and not isinstance(a[key], bool) for key in ("k", "zeta")):
            raise ConfigError(f"{where}: k and zeta must be integers")
        kz = (a["k"], a["zeta"])
        if kz in adapt:
            raise ConfigError(f"{where}: duplicate block for theta_{kz[0]}_{kz[1]}")
        enabled = a.get("enabled", True)
        if not isinstance(enabled, bool):
            raise ConfigError(f"{where}.enabled must be true or false")
        proj = ProjectionConfig(*(_num(a[key], f"{where}.{key}") for key in ("rho", "sigma", "lower", "upper", "activation_c")))
        adapt[kz] = AdaptSpec(proj, _num(a["initial"], f"{where}.initial"), enabled)
    return ControllerConfig(
        lam=_nums(d["lambda"], "controller.lambda"),
        delta=_nums(d["delta"], "controller.delta"),
        mode=d.get("mode", "fixed"),
        fixed_theta=[_nums(row, f"controller.fixed_theta[{i}]") for i, row in enumerate(ft)],
        adapt=adapt,
    )


def _sim(d) -> SimConfig:
    _check_keys(d, {"dt", "duration", "integrator", "x0", "record_stride"}, set(), "sim")
    kw = {}
    for key in ("dt", "duration"):
        if key in d:
            kw[key] = _num(d[key], f"sim.{key}")
    if "integrator" in d:
        kw["integrator"] = d["integrator"]
    if "x0" in d and d["x0"] is not None:
        kw["x0"] = tuple(_nums(d["x0"], "sim.x0"))
    if "record_stride" in d:
        rs = d["record_stride"]
        if isinstance(rs, bool) or not isinstance(rs, int):
            raise ConfigError(f"sim.record_stride must be an integer, got {rs!r}")
        kw["record_stride"] = rs
    return SimConfig(**kw)


def _output(d) -> OutputSpec:
    _check_keys(d, {"dir", "plots"}, set(), "output")
    out = OutputSpec(**d)
    if not isinstance(out.dir, str) or not isinstance(out.plots, bool):
        raise ConfigError("output.dir must be a string and output.plots a boolean")
    return out


def from_dict(d) -> RunSpec:
    _check_keys(d, {"model", "controller", "trajectory", "sim", "output"}, {"model", "controller", "trajectory"}, "run spec")
    model = _model(d["model"])
    controller = _controller(d["controller"])
    controller.bind(model)
    spec = RunSpec(
        model=model,
        controller=controller,
        trajectory=_expr(d["trajectory"], "trajectory"),
        sim=_sim(d.get("sim", {})),
        output=_output(d.get("output", {})),
    )
    if ex.state_indices(spec.trajectory):
        raise ConfigError("trajectory may depend on t only")
    if spec.sim.x0 is not None and len(spec.sim.x0) != model.n:
        raise ConfigError(f"sim.x0 has {len(spec.sim.x0)} entries, model order is {model.n}")
    return spec


def to_dict(spec: RunSpec) -> dict:
    ctl = spec.controller
    adapt = []
    for (k, z), a in sorted(ctl.adapt.items()):
        p = a.projection
        adapt.append(
            {"k": k, "zeta": z, "rho": p.rho, "sigma": p.sigma, "lower": p.a, "upper": p.b, "activation_c": p.c,
             "initial": a.initial, "enabled": a.enabled}
        )
    sim = spec.sim
    return {
        "model": {
            "n": spec.model.n,
            "subsystems": [
                {"theta": list(s.theta), "regressors": [ex.render(r) for r in s.regressors], "gain": ex.render(s.gain)}
                for s in spec.model.subsystems
            ],
        },
        "controller": {
            "mode": ctl.mode,
            "lambda": list(ctl.lam),
            "delta": list(ctl.delta),
            "fixed_theta": [list(r) for r in ctl.fixed_theta],
            "adapt": adapt,
        },
        "trajectory": ex.render(spec.trajectory),
        "sim": {
            "dt": sim.dt,
            "duration": sim.duration,
            "integrator": sim.integrator,
            "x0": None if sim.x0 is None else list(sim.x0),
            "record_stride": sim.record_stride,
        },
        "output": {"dir": spec.output.dir, "plots": spec.output.plots},
    }


def dumps(spec: RunSpec) -> str:
    return json.dumps(to_dict(spec), indent=2) + "\n"


def load(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err.msg} at line {err.lineno})") from None


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``key.path=value`` overrides; values parse as JSON, else as plain strings.

    List elements are addressed by index, e.g. ``controller.adapt.0.rho=500``.
    """
    d = copy.deepcopy(d)
    for item in overrides:
        path, sep, raw = item.partition("=")
        if not sep or not path:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = d
        for key in keys[:-1]:
            node = _step(node, key, path)
        last = keys[-1]
        if isinstance(node, list):
            node[_index(node, last, path)] = value
        elif isinstance(node, dict):
            node[last] = value
        else:
            raise ConfigError(f"override {path!r} does not address a section")
    return d


def _index(node: list, key: str, path: str) -> int:
    if not key.isdigit() or int(key) >= len(node):
        raise ConfigError(f"override {path!r}: {key!r} is not a valid list index")
    return int(key)


def _step(node, key: str, path: str):
    if isinstance(node, list):
        return node[_index(node, key, path)]
    if isinstance(node, dict):
        if key not in node:
            node[key] = {}
        return node[key]
    raise ConfigError(f"override {path!r} does not address a section")


# --------------------------------------------------------------------------
# built-in validation scenarios

SCENARIOS = ("c1", "c2", "c3")


def _scenario_dict(name: str) -> dict:
    initial = {"c1": (6.0, 4.0), "c2": (6.0, 4.0), "c3": (0.1, 9.9)}[name]
    # sigma_kz = 1000 / rho_kz, stored directly
    adapt = [
        {"k": 1, "zeta": 2, "rho": 1000.0, "sigma": 1.0, "lower": 1.0, "upper": 9.0, "activation_c": 0.5, "initial": initial[0]},
        {"k": 2, "zeta": 2, "rho": 2.0, "sigma": 500.0, "lower": 1.0, "upper": 9.0, "activation_c": 0.5, "initial": initial[1]},
    ]
    return {
        "model": {
            "n": 3,
            "subsystems": [
                {"theta": [1.0, 5.0], "regressors": ["x1^3"], "gain": "1"},
                {"theta": [1.0, 5.0], "regressors": ["x1^2 + x2^2"], "gain": "1"},
                {"theta": [1.0], "regressors": [], "gain": "1"},
            ],
        },
        "controller": {
            "mode": "fixed" if name == "c1" else "adaptive",
            "lambda": [10.0, 20.0, 40.0],
            "delta": [10.0, 20.0],
            "fixed_theta": [[1.0, 6.0], [1.0, 4.0], [1.0]],
            "adapt": adapt,
        },
        "trajectory": REFERENCE_TRAJECTORY,
        "sim": {"dt": 1e-5, "duration": 10.0, "integrator": "rk4", "x0": [0.0, 0.0, 0.0], "record_stride": 100},
        "output": {"dir": f"runs/{name}", "plots": False},
    }


def scenario_dict(name: str) -> dict:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return _scenario_dict(name)


def scenario(name: str) -> RunSpec:
    return from_dict(scenario_dict(name))
