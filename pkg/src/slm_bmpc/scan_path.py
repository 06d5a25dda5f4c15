"""Laser scan trajectories, beam footprints and the reference output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .thermal_model import GridGeometry


@dataclass(frozen=True)
class ScanPath:
    positions: np.ndarray  # (nu + 1, 2) beam centres at t = 0..nu
    velocity: float
    ts: float
    raster: float | None = None
    vertices: np.ndarray | None = field(default=None, repr=False)

    @property
    def nu(self) -> int:
        return len(self.positions) - 1

    @property
    def length(self) -> float:
        if self.vertices is None:
            return polyline_length(self.positions)
        return polyline_length(self.vertices)


@dataclass(frozen=True)
class Footprint:
    """Beam footprint; ``profile`` is ``"gaussian"`` or ``"uniform"``."""

    radius: float = 3e-5
    profile: str = "gaussian"
    std_fraction: float = 0.5

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("beam radius must be positive")
        if self.profile not in ("gaussian", "uniform"):
            raise ValueError(f"unknown footprint profile {self.profile!r}")


@dataclass(frozen=True)
class ReferenceTrajectory:
    yd: np.ndarray  # y_d(t) for t = 1..nu
    provenance: dict


def polyline_length(points) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def sample_polyline(vertices: np.ndarray, step: float) -> np.ndarray:
    """Points at arc length 0, step, 2*step, ... with the end point last.

    Returns ``ceil(L / step) + 1`` points; only the final gap may be shorter
    than ``step``.
    """
    vertices = np.asarray(vertices, dtype=float)
    seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    vertices = vertices[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg[seg > 0])])
    total = cum[-1]
    if total == 0:
        return vertices[:1].copy()
    n_steps = math.ceil(total / step - 1e-9)
    s = np.minimum(np.arange(n_steps + 1) * step, total)
    x = np.interp(s, cum, vertices[:, 0])
    y = np.interp(s, cum, vertices[:, 1])
    return np.column_stack([x, y])


def spiral_vertices(nx: int, ny: int, pitch: int) -> list[tuple[int, int]]:
    """Corner node indices of a rectangular inward spiral.

    Starts at node (0, 0) and runs +x, +y, -x, -y around each ring (clockwise
    when rows are drawn top-down).  Successive rings are ``pitch`` nodes apart.
    """
    verts: list[tuple[int, int]] = []

    def add(p):
        if not verts or verts[-1] != p:
            verts.append(p)

    a = 0
    while True:
        x1, y1 = nx - 1 - a, ny - 1 - a
        if x1 < a or y1 < a:
            break
        if x1 == a or y1 == a:
            add((a, a))
            add((x1, y1))
            break
        add((a, a))
        add((x1, a))
        add((x1, y1))
        add((a, y1))
        nxt = a + pitch
        if nx - 1 - nxt >= nxt and ny - 1 - nxt >= nxt:
            add((a, nxt))
            add((nxt, nxt))
            a = nxt
        else:
            add((a, a + 1))
            break
    return verts


def spiral_ring_count(nx: int, ny: int, pitch: int) -> int:
    rings, a = 0, 0
    while nx - 1 - a >= a and ny - 1 - a >= a:
        rings += 1
        a += pitch
    return rings


def spiral_in(geometry: GridGeometry, raster: float = 6e-5, velocity: float = 0.5,
              ts: float = 1e-5) -> ScanPath:
    if velocity <= 0:
        raise ValueError("scan velocity must be positive")
    pitch_x = raster / geometry.dx
    pitch_y = raster / geometry.dy
    pitch = round(pitch_x)
    if pitch < 1 or abs(pitch_x - pitch) > 1e-9 * max(1.0, pitch_x) or abs(pitch_y - pitch) > 1e-9 * max(1.0, pitch_y):
        raise ValueError("raster spacing must be a positive multiple of the node pitch in x and y")
    if pitch > max(geometry.nx, geometry.ny) - 1 and geometry.n_nodes > 1:
        raise ValueError("raster spacing larger than the grid extent")
    nodes = np.array(spiral_vertices(geometry.nx, geometry.ny, pitch), dtype=float)
    vertices = np.column_stack([(nodes[:, 0] + 0.5) * geometry.dx, (nodes[:, 1] + 0.5) * geometry.dy])
    positions = sample_polyline(vertices, velocity * ts)
    return ScanPath(positions=positions, velocity=velocity, ts=ts, raster=raster, vertices=vertices)


def diagonal(geometry: GridGeometry, velocity: float = 0.5, ts: float = 1e-5,
             endpoints: str = "corners") -> ScanPath:
    """Straight scan across the grid.

    ``endpoints="corners"`` runs between opposite corners of the bounding box,
    ``"centers"`` between the centres of the two corner nodes.
    """
    if velocity <= 0:
        raise ValueError("scan velocity must be positive")
    lx, ly = geometry.extent
    if endpoints == "corners":
        vertices = np.array([[0.0, 0.0], [lx, ly]])
    elif endpoints == "centers":
        hx, hy = geometry.dx / 2, geometry.dy / 2
        vertices = np.array([[hx, hy], [lx - hx, ly - hy]])
    else:
        raise ValueError(f"unknown diagonal endpoints {endpoints!r}")
    return ScanPath(positions=sample_polyline(vertices, velocity * ts), velocity=velocity,
                    ts=ts, vertices=vertices)


def _weights_at(center, footprint: Footprint, centers: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(centers - np.asarray(center, dtype=float), axis=1)
    covered = d <= footprint.radius * (1 + 1e-12)
    w = np.zeros(len(centers))
    if not covered.any():
        w[np.argmin(d)] = 1.0
        return w
    if footprint.profile == "uniform":
        w[covered] = 1.0
    else:
        std = footprint.std_fraction * footprint.radius
        w[covered] = np.exp(-0.5 * (d[covered] / std) ** 2)
    return w / w.sum()


def footprint_weights(path: ScanPath, footprint: Footprint, geometry: GridGeometry, t: int) -> np.ndarray:
    """Fraction of the beam power absorbed by each node at sample ``t``."""
    if not 0 <= t <= path.nu:
        raise IndexError(f"sample {t} outside [0, {path.nu}]")
    return _weights_at(path.positions[t], footprint, geometry.node_centers())


def footprint_matrix(path: ScanPath, footprint: Footprint, geometry: GridGeometry) -> np.ndarray:
    """Stacked footprint weights, one row per sample t = 0..nu."""
    lx, ly = geometry.extent
    pos = path.positions
    tol = 1e-12 * max(lx, ly)
    if np.any(pos < -tol) or np.any(pos[:, 0] > lx + tol) or np.any(pos[:, 1] > ly + tol):
        raise ValueError("scan path leaves the grid")
    centers = geometry.node_centers()
    return np.vstack([_weights_at(p, footprint, centers) for p in pos])


def simulate_output(model, u) -> np.ndarray:
    """Noise-free outputs y(1..nu) of ``model`` from x(0) = 0."""
    u = np.asarray(u, dtype=float)
    x = np.zeros(model.n_nodes)
    y = np.empty(model.nu)
    for t in range(model.nu):
        x = model.A @ x + model.Bseq[t] * u[t]
        y[t] = model.Cseq[t] @ x
    return y


def resample(y: np.ndarray, nu: int) -> np.ndarray:
    """Linearly stretch y(1..n) onto 1..nu over the same normalized time."""
    n = len(y)
    src = np.arange(n + 1) / n
    dst = np.arange(1, nu + 1) / nu
    return np.interp(dst, src, np.concatenate([[0.0], y]))


def generate_reference(model, power: float = 20.0, nu: int | None = None,
                       resample_to_nu: bool = True) -> ReferenceTrajectory:
    """Reference output from a constant-power, mismatch-free scan of ``model``.

    With ``nu`` given and different from the model's horizon the trajectory is
    resampled in time, or a ValueError is raised when resampling is disabled.
    """
    y = simulate_output(model, np.full(model.nu, float(power)))
    target = model.nu if nu is None else nu
    if target != model.nu:
        if not resample_to_nu:
            raise ValueError(f"reference length {model.nu} != control horizon {target}")
        y = resample(y, target)
    return ReferenceTrajectory(yd=y, provenance={"power": float(power), "source_nu": model.nu,
                                                  "nu": target})


def write_path_csv(path_file, path: ScanPath, yd=None):
    """CSV with columns t, x, y, yd (yd empty at t = 0 or when absent)."""
    with open(path_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "yd"])
        for t, (px, py) in enumerate(path.positions):
            val = "" if yd is None or t == 0 or t > len(yd) else repr(float(yd[t - 1]))
            w.writerow([t, repr(float(px)), repr(float(py)), val])
