"""SVG figures for a finished run. Presentation only."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .controller import ControllerConfig  # noqa: E402
from .sim import Trace  # noqa: E402

# stable element ids and no timestamp keep repeated runs byte-identical
_RC = {"svg.hashsalt": "sbc-lab", "svg.fonttype": "none"}


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_plots(trace: Trace, cfg: ControllerConfig, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    n = trace.n
    paths = []
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(n, 1, sharex=True, figsize=(7, 2 * n), squeeze=False)
        for k in range(n):
            ax = axes[k, 0]
            ax.plot(trace.t, trace.xd[:, k], "--", lw=1, label=f"x{k + 1}d")
            ax.plot(trace.t, trace.x[:, k], lw=1, label=f"x{k + 1}")
            ax.legend(loc="upper right", fontsize=7)
        axes[-1, 0].set_xlabel("t [s]")
        paths.append(out_dir / "tracking.svg")
        _save(fig, paths[-1])

        fig, axes = plt.subplots(n, 1, sharex=True, figsize=(7, 2 * n), squeeze=False)
        for k in range(n):
            axes[k, 0].plot(trace.t, trace.e[:, k], lw=1)
            axes[k, 0].set_ylabel(f"e{k + 1}")
        axes[-1, 0].set_xlabel("t [s]")
        paths.append(out_dir / "errors.svg")
        _save(fig, paths[-1])

        adapted = sorted(cfg.adapt)
        if adapted:
            fig, axes = plt.subplots(len(adapted), 1, sharex=True, figsize=(7, 2 * len(adapted)), squeeze=False)
            for ax, (k, z) in zip(axes[:, 0], adapted):
                p = cfg.adapt[(k, z)].projection
                ax.plot(trace.t, trace.theta(k, z), lw=1)
                for level, style in ((p.a, "-"), (p.b, "-"), (p.a - p.c, ":"), (p.b + p.c, ":")):
                    ax.axhline(level, color="grey", lw=0.6, ls=style)
                ax.set_ylabel(f"theta_{k}_{z}")
            axes[-1, 0].set_xlabel("t [s]")
            paths.append(out_dir / "estimates.svg")
            _save(fig, paths[-1])
    return paths
