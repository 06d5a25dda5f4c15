"""Reduced-order thermal model of a single powder layer.

The layer is a grid of ``nx * ny`` nodes, each coupled to its four neighbours
and to a substrate held at constant temperature.  Temperatures are expressed
relative to the substrate, so the continuous dynamics read

    dx/dt = -Ac x + Bc(t) u / c,    Ac = (D K D^T + K_sub) / c

and the zero-order-hold discretization gives ``x(t+1) = A x(t) + B(t) u(t)``
with outputs ``y(t) = C(t) x(t)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DiscretizationError(ValueError):
    """Raised when the matrix exponential cannot be formed."""


@dataclass(frozen=True)
class GridGeometry:
    nx: int
    ny: int
    dx: float = 2e-5
    dy: float = 2e-5
    dz: float = 5e-5

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have at least one node, got {self.nx}x{self.ny}")
        if min(self.dx, self.dy, self.dz) <= 0:
            raise ValueError("node dimensions must be strictly positive")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> tuple[float, float]:
        return self.nx * self.dx, self.ny * self.dy

    def node_index(self, i: int, j: int) -> int:
        """Flat index of node (i, j); i runs along x, j along y."""
        return j * self.nx + i

    def node_centers(self) -> np.ndarray:
        """(N, 2) array of node-center coordinates in metres."""
        jj, ii = np.meshgrid(np.arange(self.ny), np.arange(self.nx), indexing="ij")
        xs = (ii.ravel() + 0.5) * self.dx
        ys = (jj.ravel() + 0.5) * self.dy
        return np.column_stack([xs, ys])


@dataclass(frozen=True)
class ThermalParams:
    """Lumped conductivities (W/K) and per-node heat capacity (J/K)."""

    k_node: float
    k_sub: float
    c: float

    def __post_init__(self):
        if min(self.k_node, self.k_sub, self.c) <= 0:
            raise ValueError("thermal parameters must be strictly positive")

    @classmethod
    def from_layer(cls, dz: float = 5e-5, c: float = 8.5e-8, k_node: float | None = None):
        # k_node has no published value; it defaults to the same 20*dz rule as k_sub
        k_sub = 20.0 * dz
        return cls(k_node=k_sub if k_node is None else k_node, k_sub=k_sub, c=c)


@dataclass(frozen=True)
class GridModel:
    geometry: GridGeometry
    params: ThermalParams
    D: np.ndarray
    Ac: np.ndarray
    A: np.ndarray
    Bint: np.ndarray
    Bseq: np.ndarray  # (nu, N): B(t) for t = 0..nu-1
    Cseq: np.ndarray  # (nu, N): C(t) for t = 1..nu, row t-1
    ts: float
    footprints: np.ndarray  # (nu + 1, N): Bc(t) for t = 0..nu

    @property
    def nu(self) -> int:
        return self.Bseq.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    def B(self, t: int) -> np.ndarray:
        return self.Bseq[t]

    def C(self, t: int) -> np.ndarray:
        """Output row at measurement instant ``t`` (1-indexed, 1..nu)."""
        return self.Cseq[t - 1]


def build_incidence(geometry: GridGeometry) -> np.ndarray:
    """Directed incidence matrix over the 4-neighbour links of the grid.

    Horizontal links come first (row by row), then vertical links.  Each
    column carries +1 at the tail node and -1 at the head node.
    """
    nx, ny = geometry.nx, geometry.ny
    links = []
    for j in range(ny):
        for i in range(nx - 1):
            links.append((geometry.node_index(i, j), geometry.node_index(i + 1, j)))
    for j in range(ny - 1):
        for i in range(nx):
            links.append((geometry.node_index(i, j), geometry.node_index(i, j + 1)))
    D = np.zeros((geometry.n_nodes, len(links)))
    for col, (a, b) in enumerate(links):
        D[a, col] = 1.0
        D[b, col] = -1.0
    return D


def continuous_matrix(D: np.ndarray, k_node, k_sub, c) -> np.ndarray:
    """Ac = C_c^{-1} (D K D^T + K_sub).

    ``k_sub`` and ``c`` may be scalars or per-node vectors (the latter is how
    the perturbed plant is built).
    """
    n = D.shape[0]
    k_sub = np.broadcast_to(np.asarray(k_sub, dtype=float), (n,))
    c = np.broadcast_to(np.asarray(c, dtype=float), (n,))
    laplacian = k_node * (D @ D.T)
    return (laplacian + np.diag(k_sub)) / c[:, None]


def discretize(Ac: np.ndarray, ts: float, capacity=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact discretization of ``dx/dt = -Ac x + w`` over one sample.

    Returns ``A = exp(-Ac ts)`` and ``Bint = int_0^ts exp(-Ac s) ds``.

    ``Ac`` must be symmetric, or of the form ``diag(capacity)^{-1} S`` with
    ``S`` symmetric; in the latter case pass ``capacity`` and the exponential
    is taken through the similar symmetric matrix ``C^{1/2} Ac C^{-1/2}``.
    """
    Ac = np.asarray(Ac, dtype=float)
    if not np.all(np.isfinite(Ac)):
        raise DiscretizationError("Ac has non-finite entries")
    if ts <= 0:
        raise ValueError("sample time must be positive")
    n = Ac.shape[0]
    if capacity is None:
        scale = np.ones(n)
    else:
        scale = np.sqrt(np.broadcast_to(np.asarray(capacity, dtype=float), (n,)))
    sym = scale[:, None] * Ac / scale[None, :]
    sym = 0.5 * (sym + sym.T)
    lam, V = np.linalg.eigh(sym)
    if np.any(lam <= 0):
        raise DiscretizationError("Ac is not positive definite")
    decay = np.exp(-lam * ts)
    # (1 - e^{-lam ts}) / lam without cancellation for small lam*ts
    integ = -np.expm1(-lam * ts) / lam
    A = (V * decay) @ V.T
    Bint = (V * integ) @ V.T
    A = A / scale[:, None] * scale[None, :]
    Bint = Bint / scale[:, None] * scale[None, :]
    return A, Bint


def assemble_model(geometry: GridGeometry, params: ThermalParams, path, ts: float,
                   footprint=None) -> GridModel:
    """Discrete LTV model of one layer scanned along ``path``.

    B(t) = Bint Bc(t) / c holds the beam footprint frozen over each sample; the
    output row C(t) is the footprint at the beam position of instant t.
    """
    from .scan_path import Footprint, footprint_matrix

    footprint = footprint or Footprint()
    weights = footprint_matrix(path, footprint, geometry)
    if weights.shape[1] != geometry.n_nodes:
        raise ValueError("footprint weights do not match the grid")
    D = build_incidence(geometry)
    Ac = continuous_matrix(D, params.k_node, params.k_sub, params.c)
    A, Bint = discretize(Ac, ts)
    Bseq = weights[:-1] @ Bint.T / params.c
    Cseq = weights[1:].copy()
    return GridModel(geometry=geometry, params=params, D=D, Ac=Ac, A=A, Bint=Bint,
                     Bseq=Bseq, Cseq=Cseq, ts=ts, footprints=weights)
