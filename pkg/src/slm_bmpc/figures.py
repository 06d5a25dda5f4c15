"""Matplotlib figures drawn from the same data the CSV writers emit.

Only imported when figures are requested, and always on the Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
WIDTH = 5.0  # inches

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "figure.figsize": (WIDTH, WIDTH * GOLDEN),
}

LABELS = {"bmpc": "B-MPC", "proportional": "proportional", "vanilla_mpc": "MPC without memory"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the files identical between reruns
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def error_norms(out: Path, results) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, traces in results.items():
            ax.plot([tr.k for tr in traces], [tr.err_norm for tr in traces], "o-",
                    label=LABELS.get(name, name))
        ax.set_xlabel("layer k")
        ax.set_ylabel(r"$\|e_k\|_2$ (K)")
        ax.legend()
        fig.tight_layout()
        return _save(fig, Path(out) / "error_norms.png")


def final_layer(out: Path, results, yd=None) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax_u, ax_e) = plt.subplots(2, 1, sharex=True, figsize=(WIDTH, 1.6 * WIDTH * GOLDEN))
        for name, traces in results.items():
            last = traces[-1]
            t = np.arange(len(last.u))
            ax_u.step(t, last.u, where="post", label=LABELS.get(name, name))
            ax_e.plot(t + 1, last.e, label=LABELS.get(name, name))
        ax_u.set_ylabel("input u (W)")
        ax_e.set_ylabel("error e (K)")
        ax_e.set_xlabel("sample t")
        ax_u.legend()
        fig.tight_layout()
        return _save(fig, Path(out) / "final_layer.png")


def sweep(out: Path, sweep_results) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for sigma, traces in sweep_results.items():
            ax.plot([tr.k for tr in traces], [tr.err_norm for tr in traces], "o-",
                    label=rf"$\sigma_{{\bar V}}$ = {sigma:g}")
        ax.set_xlabel("layer k")
        ax.set_ylabel(r"$\|e_k\|_2$ (K)")
        ax.legend()
        fig.tight_layout()
        return _save(fig, Path(out) / "sweep.png")


def model_overview(out: Path, path, yd) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax_p, ax_y) = plt.subplots(1, 2, figsize=(WIDTH, WIDTH * 0.45))
        pos = path.positions * 1e6
        ax_p.plot(pos[:, 0], pos[:, 1], "-", lw=0.8)
        ax_p.set_aspect("equal")
        ax_p.set_xlabel("x (um)")
        ax_p.set_ylabel("y (um)")
        ax_y.plot(np.arange(1, len(yd) + 1), yd)
        ax_y.set_xlabel("sample t")
        ax_y.set_ylabel(r"$y_d$ (K)")
        fig.tight_layout()
        return _save(fig, Path(out) / "model.png")
