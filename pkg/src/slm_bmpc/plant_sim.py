"""The simulated "true" process and the layer-by-layer closed loop.

Random streams are derived from one integer seed with
``numpy.random.SeedSequence(seed, spawn_key=...)``:

* ``(0,)`` draws the model mismatch, once per experiment;
* ``(1, k)`` draws the input and measurement noise of layer ``k``
  (``nu`` input samples, then ``nu`` measurement samples).

Adding layers therefore never changes the earlier ones, and every
controller sees exactly the same plant and noise for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import estimator as est
from .controllers import STEP, ControllerConfig, ControllerError, LayerMemory, vanilla_mpc_reset
from .thermal_model import GridModel, continuous_matrix, discretize


class PlantError(RuntimeError):
    pass


@dataclass(frozen=True)
class UncertaintySpec:
    """Ranges of the multiplicative mismatch factors ``r`` (value = nominal * (1 + r))."""

    cc_range: tuple[float, float] = (-0.3, 0.0)
    ksub_range: tuple[float, float] = (0.0, 0.3)
    b_range: tuple[float, float] = (0.0, 0.3)
    seed: int = 0

    def __post_init__(self):
        for name in ("cc_range", "ksub_range", "b_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not ordered: {lo} > {hi}")
        if self.cc_range[0] <= -1.0:
            raise ValueError("heat capacity perturbation must stay above -1")
        if self.ksub_range[0] <= -1.0:
            raise ValueError("substrate conductivity perturbation must stay above -1")

    @classmethod
    def none(cls, seed: int = 0) -> "UncertaintySpec":
        return cls((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), seed)


@dataclass(frozen=True)
class TruePlant:
    A: np.ndarray
    Bseq: np.ndarray
    Cseq: np.ndarray
    V: float = 0.0
    W: float = 0.0

    @property
    def nu(self) -> int:
        return self.Bseq.shape[0]

    def advance(self, x, u: float, t: int, v: float = 0.0, w: float = 0.0):
        """x(t+1) = A x(t) + B(t)(u + v);  y(t+1) = C(t+1) x(t+1) + w."""
        with np.errstate(over="ignore", invalid="ignore"):
            x_next = self.A @ x + self.Bseq[t] * (u + v)
        if not np.all(np.isfinite(x_next)):
            raise PlantError(f"plant state diverged at t={t}")
        return x_next, float(self.Cseq[t] @ x_next + w)


@dataclass
class LayerTrace:
    k: int
    u: np.ndarray
    y: np.ndarray
    e: np.ndarray
    du: np.ndarray

    @property
    def err_norm(self) -> float:
        return float(np.linalg.norm(self.e))


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def nominal_plant(model: GridModel, V: float = 0.0, W: float = 0.0) -> TruePlant:
    return TruePlant(A=model.A, Bseq=model.Bseq, Cseq=model.Cseq, V=V, W=W)


def perturb(model: GridModel, spec: UncertaintySpec, V: float = 0.0, W: float = 0.0) -> TruePlant:
    """Plant with static multiplicative mismatch, re-discretized.

    Heat capacities and substrate conductivities get one factor per node;
    every entry of every footprint vector Bc(t) gets its own factor, and the
    perturbed footprints are not renormalized (absorption mismatch).
    """
    rng = stream(spec.seed, 0)
    n, nu = model.n_nodes, model.nu
    r_c = rng.uniform(*spec.cc_range, size=n)
    r_s = rng.uniform(*spec.ksub_range, size=n)
    r_b = rng.uniform(*spec.b_range, size=(nu, n))
    p = model.params
    c = p.c * (1.0 + r_c)
    if np.any(c <= 0):
        raise PlantError("perturbed heat capacity is not positive")
    k_sub = p.k_sub * (1.0 + r_s)
    Ac = continuous_matrix(model.D, p.k_node, k_sub, c)
    A, Bint = discretize(Ac, model.ts, capacity=c)
    Bc = model.footprints[:-1] * (1.0 + r_b)
    Bseq = (Bc / c[None, :]) @ Bint.T
    return TruePlant(A=A, Bseq=Bseq, Cseq=model.Cseq, V=V, W=W)


def step(plant: TruePlant, x, u: float, t: int, rng: np.random.Generator):
    """One noisy plant step with noise drawn from ``rng``."""
    v = rng.normal(0.0, np.sqrt(plant.V)) if plant.V > 0 else 0.0
    w = rng.normal(0.0, np.sqrt(plant.W)) if plant.W > 0 else 0.0
    return plant.advance(x, u, t, v, w)


def layer_noise(plant: TruePlant, seed: int, k: int):
    rng = stream(seed, 1, k)
    z = rng.standard_normal((2, plant.nu))
    return np.sqrt(plant.V) * z[0], np.sqrt(plant.W) * z[1]


def run_experiment(plant: TruePlant, yd, lifted, gains: est.GainSchedule | None,
                   cfg: ControllerConfig, maxit: int = 10, seed: int = 0,
                   layer_reset=None) -> list[LayerTrace]:
    """Closed loop over ``maxit`` layers.

    Each layer starts from x = 0 and the estimator is re-initialized from the
    previous layer's repetitive error (or from y_d for the memoryless MPC).
    At every sample the controller picks an input update, the plant is
    stepped, the error y_d - y is measured and the filter corrected.
    ``layer_reset(mem, yd)`` overrides the between-layer initialization.
    """
    yd = np.asarray(yd, dtype=float)
    nu = len(yd)
    if lifted.nu != nu or plant.nu != nu:
        raise ValueError("plant, lifted model and reference disagree on nu")
    step_fn = STEP[cfg.mode]
    mem = LayerMemory.start(yd)
    traces = []
    for k in range(maxit):
        if k > 0:
            if layer_reset is not None:
                layer_reset(mem, yd)
            elif cfg.mode == "vanilla_mpc":
                vanilla_mpc_reset(mem, yd)
            else:
                mem.next_layer()
        v, w = layer_noise(plant, seed, k)
        x = np.zeros(plant.A.shape[0])
        y = np.empty(nu)
        du = np.empty(nu)
        for t in range(nu):
            try:
                du[t], mem = step_fn(mem, t, lifted, cfg)
            except ControllerError as exc:
                raise ControllerError(f"{cfg.mode}: {exc}") from exc
            x, y[t] = plant.advance(x, mem.u[t], t, v[t], w[t])
            if gains is not None:
                mem.estimator = est.measurement_update(mem.estimator, gains.K(t + 1), yd[t] - y[t], t + 1)
        traces.append(LayerTrace(k=k, u=mem.u.copy(), y=y, e=yd - y, du=du))
    return traces
