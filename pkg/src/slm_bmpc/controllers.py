"""In-layer control laws: batch MPC, projected proportional, and memoryless MPC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import estimator as est
from .qp_solver import OPTIMAL, InputBounds, assemble_qp, solve

log = logging.getLogger(__name__)

MODES = ("bmpc", "proportional", "vanilla_mpc")


class ControllerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    mode: str = "bmpc"
    horizon: int = 20
    Q: float = 1.0  # weight on every entry of the lifted error (Q = q * I)
    R: float = 0.1  # weight on every input update in the horizon (R = r * I)
    bounds: InputBounds = field(default_factory=InputBounds)
    kp: float = 0.0
    qp_tol: float = 1e-8
    qp_max_iter: int = 500
    qp_method: str = "active_set"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown controller mode {self.mode!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.Q < 0:
            raise ValueError("Q must be positive semidefinite")
        if self.mode != "proportional" and self.R <= 0:
            raise ValueError("R must be positive definite for QP-based controllers")


@dataclass
class LayerMemory:
    """Data carried by one simulation run: previous-layer inputs and the filter.

    ``u`` collects the inputs of the layer in progress; ``plan`` is the last
    QP solution, reused as a warm start.
    """

    u_prev: np.ndarray
    estimator: est.EstimatorState
    u: np.ndarray = None
    plan: np.ndarray | None = None

    def __post_init__(self):
        if self.u is None:
            self.u = self.u_prev.copy()

    @classmethod
    def start(cls, yd) -> "LayerMemory":
        nu = len(yd)
        return cls(u_prev=np.zeros(nu), estimator=est.initial_state(yd))

    def last_input(self, t: int, before: float | None = None) -> float | None:
        return float(self.u[t - 1]) if t > 0 else before

    def next_layer(self) -> None:
        """Remember this layer's inputs and restart the filter from ebar."""
        self.u_prev = self.u.copy()
        self.estimator = est.layer_reset(self.estimator)
        self.plan = None


def _apply(mem: LayerMemory, t: int, du: float, lifted) -> float:
    mem.u[t] = mem.u_prev[t] + du
    mem.estimator = est.prior_update(mem.estimator, lifted.column(t), du)
    return du


def bmpc_step(mem: LayerMemory, t: int, lifted, cfg: ControllerConfig):
    """Solve the horizon QP at input index ``t`` and apply its first move."""
    nu = lifted.nu
    m = min(cfg.horizon, nu - t)
    Gm = lifted.horizon_block(t, m)
    u_last = mem.last_input(t, cfg.bounds.u_before)
    qp = assemble_qp(mem.estimator.e, Gm, cfg.Q, cfg.R, mem.u_prev[t:t + m], u_last, cfg.bounds)
    warm = None
    if mem.plan is not None and len(mem.plan) > 1:
        warm = np.zeros(m)
        shifted = mem.plan[1:m + 1]
        warm[:len(shifted)] = shifted
    sol = solve(qp, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, x0=warm, method=cfg.qp_method)
    if sol.status != OPTIMAL:
        raise ControllerError(f"QP {sol.status} at layer {mem.estimator.k}, t={t} "
                              f"(KKT residual {sol.kkt_residual:.3e})")
    mem.plan = sol.du
    du = float(sol.du[0])
    # the solver works to ~1e-13 of the bounds; keep the applied input exactly inside
    u_new = cfg.bounds.project(mem.u_prev[t] + du, u_last)
    return _apply(mem, t, u_new - mem.u_prev[t], lifted), mem


def proportional_step(mem: LayerMemory, t: int, lifted, cfg: ControllerConfig):
    """Update proportional to the filtered error at the latest output sample.

    Input ``t`` reacts to output ``t`` (the most recent measurement); the
    first input of a layer, which has no measurement yet, uses the
    predicted error of output 1.  The commanded input is projected on the
    rate bounds around the previous input first and on the magnitude bounds
    second, so the magnitude limits always hold exactly.
    """
    raw = cfg.kp * mem.estimator.e[max(t, 1) - 1]
    u_last = mem.last_input(t, cfg.bounds.u_before)
    u_new = cfg.bounds.project(mem.u_prev[t] + raw, u_last)
    return _apply(mem, t, u_new - mem.u_prev[t], lifted), mem


def vanilla_mpc_reset(mem: LayerMemory, yd) -> LayerMemory:
    """Forget everything at a layer boundary: zero inputs, error back to y_d."""
    k = mem.estimator.k + 1
    mem.u_prev = np.zeros_like(mem.u_prev)
    mem.u = mem.u_prev.copy()
    mem.estimator = est.EstimatorState(ebar=np.array(yd, dtype=float), e=np.array(yd, dtype=float), t=0, k=k)
    mem.plan = None
    return mem


STEP = {"bmpc": bmpc_step, "vanilla_mpc": bmpc_step, "proportional": proportional_step}


def tune_kp(run_proportional, search_grid):
    """Pick k_p by grid search.

    ``run_proportional(kp)`` must return the per-layer error norms of a
    seeded run.  Gains whose final error exceeds the first-layer error are
    treated as unstable and dropped; among the rest the smallest final error
    wins.  Returns ``(kp, table)`` with ``table`` a list of
    ``(kp, final_norm, stable)``.
    """
    table = []
    for kp in search_grid:
        try:
            norms = np.asarray(run_proportional(float(kp)), dtype=float)
        except (ControllerError, FloatingPointError, ValueError) as exc:
            log.info("kp=%g failed: %s", kp, exc)
            table.append((float(kp), np.inf, False))
            continue
        final = float(norms[-1])
        stable = bool(np.isfinite(final) and final <= norms[0])
        table.append((float(kp), final, stable))
    stable = [row for row in table if row[2]]
    if not stable:
        raise ControllerError("no stable proportional gain in the search grid: "
                              + ", ".join(f"{kp:g}->{f:.4g}" for kp, f, _ in table))
    best = min(stable, key=lambda row: (row[1], row[0]))
    return best[0], table
