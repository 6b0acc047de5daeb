"""Command line entry point.

    sbc-lab run --scenario c1 --scenario c2 --out runs
    sbc-lab run --config my_run.json --set sim.dt=2e-5 --plots
    sbc-lab compare runs/c2/trace.csv runs/c3/trace.csv --t-min 2 --t-max 10
    sbc-lab show c3 > c3.json

Each run writes ``trace.csv`` and ``metrics.json`` (plus SVG figures with
``--plots``) into its own directory. Failures print a JSON object with an
``error`` category on stderr; exit code 2 means a configuration problem and
3 a numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import config
from .analysis import compare, metrics, monotonicity_report
from .config import RunSpec, scenario
from .errors import ConfigError, SbcError
from .sim import Trace, simulate

__all__ = ["main", "run_spec", "compare", "scenario"]

EXIT_CODES = {"config": 2, "numerical": 3}


@dataclass
class RunResult:
    name: str
    out_dir: Path
    metrics: dict


def run_spec(spec: RunSpec, out_dir, name: str = "run") -> RunResult:
    """Simulate one spec and write its outputs into ``out_dir``."""
    out_dir = Path(out_dir)
    start = time.perf_counter()
    trace = simulate(spec.model, spec.controller, spec.trajectory, spec.sim)
    runtime = time.perf_counter() - start
    m = metrics(trace).to_dict()
    m["monotonicity_violations"] = len(monotonicity_report(trace, spec.controller))
    m["runtime_seconds"] = runtime
    out_dir.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out_dir / "trace.csv")
    (out_dir / "metrics.json").write_text(json.dumps(m, indent=2) + "\n", encoding="utf-8")
    if spec.output.plots:
        from .plots import write_plots

        write_plots(trace, spec.controller, out_dir)
    return RunResult(name, out_dir, m)


def _threads(n_runs: int) -> int:
    cap = os.environ.get("SBC_LAB_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ConfigError(f"SBC_LAB_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(n_runs, limit))


def _collect(args) -> list[tuple[str, dict]]:
    raw = []
    for name in args.scenario or []:
        raw.append((name, config.scenario_dict(name)))
    for path in args.config or []:
        raw.append((Path(path).stem, config.load(path)))
    if not raw:
        raise ConfigError("nothing to run: give --scenario and/or --config")
    overrides = list(args.set or [])
    for flag, key in (("dt", "sim.dt"), ("duration", "sim.duration"), ("integrator", "sim.integrator")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    if args.plots:
        overrides.append("output.plots=true")
    return [(name, config.apply_overrides(d, overrides)) for name, d in raw]


def _error(err: SbcError, name: str | None = None) -> int:
    payload = {"error": err.category, "message": str(err)}
    if name:
        payload["run"] = name
    print(json.dumps(payload), file=sys.stderr)
    return EXIT_CODES.get(err.category, 1)


def cmd_run(args) -> int:
    try:
        specs = []
        names = set()
        for name, d in _collect(args):
            spec = config.from_dict(d)
            if name in names:
                raise ConfigError(f"run name {name!r} used twice")
            names.add(name)
            out = Path(args.out) / name if args.out else Path(spec.output.dir)
            specs.append((name, spec, out))
        workers = _threads(len(specs))
    except SbcError as err:
        return _error(err)

    def job(item):
        name, spec, out = item
        try:
            return run_spec(spec, out, name)
        except SbcError as err:
            return (name, err)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(job, specs))
    code = 0
    for res in results:
        if isinstance(res, tuple):
            code = code or _error(res[1], res[0])
        else:
            summary = {"run": res.name, "dir": str(res.out_dir), "max_abs_e": res.metrics["max_abs_e"]}
            print(json.dumps(summary))
    return code


def cmd_compare(args) -> int:
    try:
        a = Trace.from_csv(args.trace_a)
        b = Trace.from_csv(args.trace_b)
        report = compare(a, b, args.t_min, args.t_max)
    except (OSError, ValueError) as err:
        return _error(ConfigError(str(err)))
    print(json.dumps(report, indent=2))
    return 0


def cmd_show(args) -> int:
    try:
        sys.stdout.write(config.dumps(scenario(args.name)))
    except SbcError as err:
        return _error(err)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbc-lab", description="Adaptive subsystem-based control simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate scenarios or config files")
    run.add_argument("--config", action="append", metavar="PATH", help="JSON run spec (repeatable)")
    run.add_argument("--scenario", action="append", choices=config.SCENARIOS, help="built-in scenario (repeatable)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a spec field, e.g. sim.dt=2e-5")
    run.add_argument("--out", metavar="DIR", help="write each run to DIR/<name> instead of output.dir")
    run.add_argument("--plots", action="store_true", help="also write SVG figures")
    run.add_argument("--dt", type=float)
    run.add_argument("--duration", type=float)
    run.add_argument("--integrator", choices=("euler", "rk4"))
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="per-column max |difference| between two trace CSVs")
    cmp_.add_argument("trace_a")
    cmp_.add_argument("trace_b")
    cmp_.add_argument("--t-min", type=float)
    cmp_.add_argument("--t-max", type=float)
    cmp_.set_defaults(func=cmd_compare)

    show = sub.add_parser("show", help="print a built-in scenario as JSON")
    show.add_argument("name", choices=config.SCENARIOS)
    show.set_defaults(func=cmd_show)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
