"""Augmented error-state Kalman filter carrying learned disturbances across layers.

The filter state stacks two lifted error sequences: ``ebar``, the repetitive
(noise-free) error, and ``e``, the error including the layer-wise noise.
Within a layer the state only moves by the known input updates; every
sample measures one entry of ``e``.  At a layer boundary both halves restart
from the repetitive part.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)


class GainScheduleError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    sigma_vbar: float
    sigma_wbar: float
    V: float
    W: float
    Vbar: np.ndarray
    Wbar: np.ndarray


@dataclass(frozen=True)
class EstimatorState:
    ebar: np.ndarray
    e: np.ndarray
    t: int = 0
    k: int = 0


@dataclass(frozen=True)
class GainSchedule:
    """Per-sample gains; ``gains[t - 1]`` is K(t), a 2*nu vector, t = 1..nu."""

    gains: np.ndarray
    converged: bool
    iterations_to_converge: int
    residual: float = 0.0
    boundary_cov: np.ndarray | None = None  # converged covariance of ebar(nu|nu)

    @property
    def nu(self) -> int:
        return self.gains.shape[0]

    def K(self, t: int) -> np.ndarray:
        return self.gains[t - 1]


def integrated_noise_cov(nu: int, sigma: float) -> np.ndarray:
    """sigma^2 * L L^T with L lower-triangular ones, i.e. sigma^2 * min(i, j)."""
    idx = np.arange(1, nu + 1)
    return np.minimum.outer(idx, idx).astype(float) * sigma**2


def build_covariances(G: np.ndarray, V: float, W: float, sigma_vbar: float,
                      sigma_wbar: float) -> NoiseModel:
    if min(V, W, sigma_vbar, sigma_wbar) < 0:
        raise ValueError("noise parameters must be nonnegative")
    nu = G.shape[0]
    Vbar = integrated_noise_cov(nu, sigma_vbar)
    # covariance of the lifted layer noise -(G v + w), plus the tuning term
    Wbar = V * (G @ G.T) + (W + sigma_wbar**2) * np.eye(nu)
    Wbar = 0.5 * (Wbar + Wbar.T)
    return NoiseModel(sigma_vbar=sigma_vbar, sigma_wbar=sigma_wbar, V=V, W=W, Vbar=Vbar, Wbar=Wbar)


def default_epsilon(noise: NoiseModel) -> float:
    return 1e-9 * noise.sigma_wbar**2


def boundary_covariance(P_ebar: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Covariance of [ebar; e] at t = 0 given the covariance of ebar(nu|nu)."""
    A = P_ebar + noise.Vbar
    return np.block([[A, A], [A, A + noise.Wbar]])


def layer_pass(P0: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Sequential measurement updates through one layer.

    Starting from the 2nu x 2nu covariance ``P0`` at t = 0, measures e(t) for
    t = 1..nu with measurement variance ``eps`` and returns the gains
    (nu, 2nu) together with the final covariance.  The in-layer transition is
    the identity without process noise, so priors equal previous posteriors.
    """
    P = np.array(P0, dtype=float, copy=True)
    n2 = P.shape[0]
    nu = n2 // 2
    gains = np.zeros((nu, n2))
    for t in range(1, nu + 1):
        j = nu + t - 1
        p = P[:, j].copy()
        S = p[j] + eps
        if S <= 0:
            continue
        k = p / S
        gains[t - 1] = k
        # Joseph form (I - k h) P (I - k h)^T + eps k k^T with h = e_j
        P -= np.outer(k, p)
        P -= np.outer(p, k)
        P += S * np.outer(k, k)
        P = 0.5 * (P + P.T)
    return gains, P


def _batch_ebar_posterior(P_ebar, noise, eps):
    A = P_ebar + noise.Vbar
    S = A + noise.Wbar + eps * np.eye(A.shape[0])
    post = A - A @ np.linalg.solve(S, A)
    return 0.5 * (post + post.T)


def _ebar_fixed_point(noise: NoiseModel, eps: float, max_cycles: int):
    """End-of-layer covariance of ebar at the periodic steady state.

    The layer-to-layer map is the Riccati map of a random walk (process noise
    Vbar) observed through additive noise Wbar + eps I, so its fixed point is
    the stabilizing DARE solution minus Vbar.  When the DARE has no
    stabilizing solution (Vbar singular, e.g. sigma_vbar = 0) the map is
    iterated from zero instead.  Returns the covariance and the number of
    layer cycles spent.
    """
    nu = noise.Vbar.shape[0]
    R = noise.Wbar + eps * np.eye(nu)
    if noise.sigma_vbar > 0:
        try:
            X = scipy.linalg.solve_discrete_are(np.eye(nu), np.eye(nu), noise.Vbar, R)
            P = 0.5 * (X + X.T) - noise.Vbar
            if np.all(np.isfinite(P)):
                resid = np.max(np.abs(_batch_ebar_posterior(P, noise, eps) - P))
                if resid <= 1e-8 * max(1.0, float(np.max(np.abs(X)))):
                    return P, 1
        except (np.linalg.LinAlgError, ValueError):
            pass
    P = np.zeros((nu, nu))
    scale = max(1.0, float(np.max(np.abs(R))))
    cycles = 0
    for cycles in range(1, max_cycles + 1):
        nxt = _batch_ebar_posterior(P, noise, eps)
        change = float(np.max(np.abs(nxt - P)))
        P = nxt
        if change <= 1e-14 * scale:
            break
    return P, cycles


def compute_gain_schedule(noise: NoiseModel, nu: int | None = None, eps: float | None = None,
                          tol: float = 1e-9, max_cycles: int = 500,
                          raise_on_failure: bool = False) -> GainSchedule:
    """Converged periodic gain schedule of the augmented filter.

    The covariance recursion runs layer cycle after layer cycle: at each
    boundary ebar's covariance picks up Vbar and e additionally picks up
    Wbar, then nu scalar measurement updates follow.  The cycle is started
    near its fixed point (see ``_ebar_fixed_point``) and repeated until two
    consecutive layers produce gains that agree to ``tol``.
    """
    nu = noise.Vbar.shape[0] if nu is None else nu
    if noise.Vbar.shape != (nu, nu):
        raise ValueError("covariance size does not match nu")
    eps = default_epsilon(noise) if eps is None else eps
    P_ebar, cycles = _ebar_fixed_point(noise, eps, max_cycles)
    gains, P = layer_pass(boundary_covariance(P_ebar, noise), eps)
    cycles += 1
    residual = np.inf
    while cycles < max_cycles + 2:
        new_gains, P = layer_pass(boundary_covariance(P[:nu, :nu], noise), eps)
        cycles += 1
        residual = float(np.max(np.abs(new_gains - gains)))
        gains = new_gains
        if residual < tol:
            break
    converged = residual < tol
    if not converged:
        msg = f"gain schedule did not converge after {cycles} cycles (residual {residual:.3e})"
        if raise_on_failure:
            raise GainScheduleError(msg)
        log.warning(msg)
    return GainSchedule(gains=gains, converged=converged, iterations_to_converge=cycles,
                        residual=residual, boundary_cov=P[:nu, :nu].copy())


def schedule_key(G: np.ndarray, noise: NoiseModel, eps: float) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(G).tobytes())
    h.update(np.array([noise.sigma_vbar, noise.sigma_wbar, noise.V, noise.W, eps]).tobytes())
    return h.hexdigest()[:20]


def cached_gain_schedule(G: np.ndarray, noise: NoiseModel, cache_dir=None,
                         eps: float | None = None, **kwargs) -> GainSchedule:
    """Gain schedule, loaded from / stored to ``cache_dir`` as ``gains-<hash>.npz``.

    The archive holds ``gains`` (nu x 2nu, row t-1 is K(t)), ``boundary_cov``
    and the scalars ``converged``, ``iterations`` and ``residual``.
    """
    eps = default_epsilon(noise) if eps is None else eps
    if cache_dir is None:
        return compute_gain_schedule(noise, eps=eps, **kwargs)
    path = Path(cache_dir) / f"gains-{schedule_key(G, noise, eps)}.npz"
    if path.exists():
        with np.load(path) as z:
            return GainSchedule(gains=z["gains"], converged=bool(z["converged"]),
                                iterations_to_converge=int(z["iterations"]),
                                residual=float(z["residual"]), boundary_cov=z["boundary_cov"])
    sched = compute_gain_schedule(noise, eps=eps, **kwargs)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, gains=sched.gains, converged=sched.converged,
             iterations=sched.iterations_to_converge, residual=sched.residual,
             boundary_cov=sched.boundary_cov)
    return sched


def initial_state(yd: np.ndarray) -> EstimatorState:
    """State at the start of layer 0: both halves equal the reference."""
    yd = np.asarray(yd, dtype=float)
    return EstimatorState(ebar=yd.copy(), e=yd.copy(), t=0, k=0)


def prior_update(state: EstimatorState, Gt: np.ndarray, du: float) -> EstimatorState:
    shift = Gt * du
    return replace(state, ebar=state.ebar - shift, e=state.e - shift, t=state.t + 1)


def measurement_update(state: EstimatorState, K_t: np.ndarray, e_meas: float, t: int) -> EstimatorState:
    """Correct the prior with the measured error of sample ``t`` (1-indexed)."""
    nu = state.e.shape[0]
    innovation = e_meas - state.e[t - 1]
    return replace(state, ebar=state.ebar + K_t[:nu] * innovation,
                   e=state.e + K_t[nu:] * innovation)


def layer_reset(state: EstimatorState) -> EstimatorState:
    """Start the next layer from the repetitive error; the noisy half is dropped."""
    return EstimatorState(ebar=state.ebar.copy(), e=state.ebar.copy(), t=0, k=state.k + 1)
