"""Result files: CSV tables, a YAML summary and optional figures.

CSV layouts (header row, comma separated, ``.`` decimals, floats written
with ``repr`` so reruns are byte-identical):

``error_norms.csv``   k, controller, err_norm
``final_layer.csv``   t, controller, e, u, du
                      (row t: input u(t), its update du(t) and the error
                      e(t+1) at the first output that input reaches)
``sweep.csv``         sigma_vbar, k, err_norm
``kp_table.csv``      kp, final_norm, stable
``reference.csv``     t, yd
``lifted_G.csv``      u0 .. u{nu-1}; row i holds the response of output i+1
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .plant_sim import LayerTrace


def _f(x) -> str:
    return repr(float(x))


def _write(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_error_norms(out: Path, results: dict[str, list[LayerTrace]]) -> Path:
    rows = [(tr.k, name, _f(tr.err_norm)) for name, traces in results.items() for tr in traces]
    return _write(Path(out) / "error_norms.csv", ["k", "controller", "err_norm"], rows)


def write_final_layer(out: Path, results: dict[str, list[LayerTrace]]) -> Path:
    rows = []
    for name, traces in results.items():
        last = traces[-1]
        for t in range(len(last.u)):
            rows.append((t, name, _f(last.e[t]), _f(last.u[t]), _f(last.du[t])))
    return _write(Path(out) / "final_layer.csv", ["t", "controller", "e", "u", "du"], rows)


def write_comparison(out: Path, results: dict[str, list[LayerTrace]]) -> Path:
    """Wide table: one row per layer, one column per controller."""
    names = list(results)
    n = min(len(v) for v in results.values())
    rows = [[k] + [_f(results[name][k].err_norm) for name in names] for k in range(n)]
    return _write(Path(out) / "comparison.csv", ["k"] + names, rows)


def write_sweep(out: Path, sweep: dict[float, list[LayerTrace]]) -> Path:
    rows = [(_f(sigma), tr.k, _f(tr.err_norm)) for sigma, traces in sweep.items() for tr in traces]
    return _write(Path(out) / "sweep.csv", ["sigma_vbar", "k", "err_norm"], rows)


def write_kp_table(out: Path, table) -> Path:
    rows = [(_f(kp), _f(final), str(bool(stable)).lower()) for kp, final, stable in table]
    return _write(Path(out) / "kp_table.csv", ["kp", "final_norm", "stable"], rows)


def write_reference(out: Path, yd) -> Path:
    return _write(Path(out) / "reference.csv", ["t", "yd"], [(t + 1, _f(v)) for t, v in enumerate(yd)])


def write_lifted(out: Path, G) -> Path:
    rows = ([_f(v) for v in row] for row in np.asarray(G))
    return _write(Path(out) / "lifted_G.csv", [f"u{j}" for j in range(G.shape[1])], rows)


def convergence_layer(norms, rel: float = 0.05) -> int:
    """First layer from which every later norm stays within ``rel`` of the final one."""
    norms = np.asarray(norms, dtype=float)
    final = norms[-1]
    inside = np.abs(norms - final) <= rel * abs(final)
    k = len(norms) - 1
    while k > 0 and inside[k - 1]:
        k -= 1
    return int(k)


def summarize(results: dict[str, list[LayerTrace]], baseline: str | None = None) -> dict:
    """Final norms, convergence layers and final-norm ratios against ``baseline``."""
    out = {}
    base = None
    if baseline is not None and baseline in results:
        base = results[baseline][-1].err_norm
    for name, traces in results.items():
        norms = [tr.err_norm for tr in traces]
        entry = {"final_norm": float(norms[-1]), "convergence_layer": convergence_layer(norms),
                 "layers": len(norms)}
        if base is not None and name != baseline:
            entry[f"ratio_vs_{baseline}"] = float(norms[-1] / base)
        out[name] = entry
    return out


def write_summary(out: Path, config, metrics: dict, extra: dict | None = None) -> Path:
    """``summary.yaml`` plus a standalone ``config.yaml`` echo that reruns the experiment."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"version": __version__, "metrics": metrics}
    if extra:
        doc.update(extra)
    doc["config"] = config.to_dict()
    (out / "config.yaml").write_text(config.dump())
    path = out / "summary.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path
