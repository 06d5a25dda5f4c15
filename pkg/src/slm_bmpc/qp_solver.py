"""Dense strictly convex QP for the receding-horizon input update.

Problems have the form::

    minimize    x^T Hq x + 2 g^T x + c0
    subject to  lb <= x <= ub
                rate_lb <= D x <= rate_ub

where ``D`` takes consecutive differences (its first row is the identity on
``x[0]``).  ``x`` is the change of the input relative to the previous layer,
so box and rate limits on the absolute input become the shifted bounds built
by :func:`assemble_qp`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class InputBounds:
    u_min: float = 0.0
    u_max: float = 20.0
    du_min: float = -2.0
    du_max: float = 2.0
    # input assumed just before a layer starts; None leaves the first step free
    u_before: float | None = 0.0

    def __post_init__(self):
        if self.u_min > self.u_max:
            raise ValueError("u_min must not exceed u_max")
        if not self.du_min <= 0 <= self.du_max:
            raise ValueError("rate bounds must bracket zero")
        if self.u_before is not None and not self.u_min <= self.u_before <= self.u_max:
            raise ValueError("u_before must lie within [u_min, u_max]")

    def rate_window(self, u_last: float | None) -> tuple[float, float]:
        """Admissible range of the next input given the previous one."""
        if u_last is None:
            return self.u_min, self.u_max
        return (max(self.u_min, u_last + self.du_min), min(self.u_max, u_last + self.du_max))

    def project(self, u: float, u_last: float | None) -> float:
        """Clip onto the rate window first and the magnitude bounds second."""
        if u_last is not None:
            u = min(max(u, u_last + self.du_min), u_last + self.du_max)
        return min(max(u, self.u_min), self.u_max)


@dataclass(frozen=True)
class QpProblem:
    Hq: np.ndarray
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    rate_lb: np.ndarray
    rate_ub: np.ndarray
    c0: float = 0.0

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.Hq @ x + 2.0 * self.g @ x + self.c0)

    def difference_matrix(self) -> np.ndarray:
        n = self.n
        return np.eye(n) - np.eye(n, k=-1)

    def inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """All finite constraints stacked as ``A x <= b``.

        Row order: upper box, lower box, upper rate, lower rate.
        """
        I = np.eye(self.n)
        D = self.difference_matrix()
        A = np.vstack([I, -I, D, -D])
        b = np.concatenate([self.ub, -self.lb, self.rate_ub, -self.rate_lb])
        keep = np.isfinite(b)
        return A[keep], b[keep]

    def max_violation(self, x) -> float:
        A, b = self.inequalities()
        if len(b) == 0:
            return 0.0
        return float(max(0.0, np.max(A @ x - b)))

    def feasible_point(self, target=None) -> np.ndarray | None:
        """A point of the feasible set, as close to ``target`` as a greedy pass allows.

        Backward interval propagation gives, for each coordinate, the values
        from which the remaining chain of rate and box bounds can still be
        met; the forward pass then picks inside those intervals.  Returns
        None when the set is empty.
        """
        n = self.n
        lo = np.empty(n)
        hi = np.empty(n)
        lo[-1], hi[-1] = self.lb[-1], self.ub[-1]
        for i in range(n - 2, -1, -1):
            lo[i] = max(self.lb[i], lo[i + 1] - self.rate_ub[i + 1])
            hi[i] = min(self.ub[i], hi[i + 1] - self.rate_lb[i + 1])
        target = np.zeros(n) if target is None else np.asarray(target, dtype=float)
        x = np.empty(n)
        prev = 0.0
        for i in range(n):
            if i == 0:
                a, b = max(lo[0], self.rate_lb[0]), min(hi[0], self.rate_ub[0])
            else:
                a, b = max(lo[i], prev + self.rate_lb[i]), min(hi[i], prev + self.rate_ub[i])
            if not a <= b:
                return None
            x[i] = min(max(target[i], a), b)
            prev = x[i]
        return x


@dataclass
class QpSolution:
    du: np.ndarray
    objective: float
    status: str
    iterations: int
    kkt_residual: float
    multipliers: np.ndarray | None = None
    history: list = field(default_factory=list, repr=False)


def assemble_qp(e_now, Gm, Q, R, u_prev_layer, u_last: float | None,
                bounds: InputBounds) -> QpProblem:
    """Expand the horizon cost e^T Q e + du^T R du with e = e_now - Gm du.

    ``Q`` may be a scalar, a vector (diagonal) or a full matrix; ``R`` a
    scalar or an m x m matrix.  ``u_prev_layer`` are the previous layer's
    inputs over the horizon and ``u_last`` the input applied one step before
    the horizon starts in the current layer, or None when the first move
    has no rate limit.
    """
    e_now = np.asarray(e_now, dtype=float)
    Gm = np.asarray(Gm, dtype=float)
    if Gm.ndim == 1:
        Gm = Gm[:, None]
    m = Gm.shape[1]
    u_prev_layer = np.asarray(u_prev_layer, dtype=float)
    if Gm.shape[0] != e_now.shape[0] or u_prev_layer.shape != (m,):
        raise ValueError("inconsistent QP dimensions")
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 0:
        QG = Q * Gm
        Qe = Q * e_now
    elif Q.ndim == 1:
        QG = Q[:, None] * Gm
        Qe = Q * e_now
    else:
        QG = Q @ Gm
        Qe = Q @ e_now
    R = np.asarray(R, dtype=float)
    R = R * np.eye(m) if R.ndim == 0 else R
    Hq = Gm.T @ QG + R
    Hq = 0.5 * (Hq + Hq.T)
    g = -(QG.T @ e_now)
    start = u_prev_layer[0] if u_last is None else u_last
    prev_diff = np.diff(np.concatenate([[start], u_prev_layer]))
    rate_lb = bounds.du_min - prev_diff
    rate_ub = bounds.du_max - prev_diff
    if u_last is None:
        rate_lb[0], rate_ub[0] = -np.inf, np.inf
    return QpProblem(
        Hq=Hq,
        g=g,
        lb=bounds.u_min - u_prev_layer,
        ub=bounds.u_max - u_prev_layer,
        rate_lb=rate_lb,
        rate_ub=rate_ub,
        c0=float(e_now @ Qe),
    )


def kkt_residual(qp: QpProblem, x, lam, A=None, b=None) -> float:
    """Scaled KKT residual: stationarity, primal and dual feasibility, complementarity."""
    if A is None:
        A, b = qp.inequalities()
    grad = qp.Hq @ x + qp.g
    scale = 1.0 + np.max(np.abs(qp.g), initial=0.0) + np.max(np.abs(qp.Hq)) * np.max(np.abs(x), initial=0.0)
    if len(b) == 0:
        return float(np.max(np.abs(grad), initial=0.0) / scale)
    slack = b - A @ x
    stat = np.max(np.abs(grad + A.T @ lam)) / scale
    primal = max(0.0, -np.min(slack)) / (1.0 + np.max(np.abs(b)))
    dual = max(0.0, -np.min(lam)) / scale
    comp = np.max(np.abs(lam * slack)) / (scale * (1.0 + np.max(np.abs(b))))
    return float(max(stat, primal, dual, comp))


def _independent_rows(A: np.ndarray, candidates) -> list[int]:
    rows: list[int] = []
    for i in candidates:
        trial = A[rows + [i]]
        if np.linalg.matrix_rank(trial) == len(rows) + 1:
            rows.append(i)
        if len(rows) == A.shape[1]:
            break
    return rows


def _eqp(H, grad, Aw):
    """Step p and multipliers of min 1/2 p^T H p + grad^T p s.t. Aw p = 0."""
    n, k = H.shape[0], Aw.shape[0]
    if k == 0:
        return np.linalg.solve(H, -grad), np.zeros(0)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    sol = np.linalg.solve(K, np.concatenate([-grad, np.zeros(k)]))
    return sol[:n], sol[n:]


def solve_active_set(qp: QpProblem, tol: float = 1e-8, max_iter: int = 500, x0=None) -> QpSolution:
    """Primal active-set method started from a feasible point.

    The objective of the iterates never increases.  ``x0`` is only a hint; the
    start is the feasible point nearest to it produced by
    :meth:`QpProblem.feasible_point`.
    """
    A, b = qp.inequalities()
    n = qp.n
    x = qp.feasible_point(x0)
    if x is None:
        return QpSolution(du=np.zeros(n), objective=np.nan, status=INFEASIBLE, iterations=0,
                          kkt_residual=np.inf)
    H, g = qp.Hq, qp.g
    bscale = 1.0 + np.max(np.abs(b), initial=0.0)
    active_tol = 1e-12 * bscale
    slack = b - A @ x
    work = _independent_rows(A, [i for i in np.argsort(slack) if slack[i] <= active_tol])
    history = [qp.objective(x)]
    lam_w = np.zeros(0)
    status = MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        grad = H @ x + g
        if len(work) == n:
            # a vertex: no room to move, only multipliers to check
            p, lam_w = np.zeros(n), np.linalg.solve(A[work].T, -grad)
        else:
            p, lam_w = _eqp(H, grad, A[work] if work else np.zeros((0, n)))
        negligible = np.max(np.abs(p)) <= 1e-10 * (1.0 + np.max(np.abs(x)))
        Ap = A @ p
        # rows in the span of the working set only see round-off in A p
        cand = Ap > 1e-9 * np.max(np.abs(p))
        cand[work] = False
        alpha, block = 1.0, None
        if cand.any():
            idx = np.flatnonzero(cand)
            ratios = np.maximum(b[idx] - A[idx] @ x, 0.0) / Ap[idx]
            for j in np.argsort(ratios, kind="stable"):  # first index on ties
                if ratios[j] >= 1.0:
                    break
                if np.linalg.matrix_rank(A[work + [int(idx[j])]]) == len(work) + 1:
                    alpha, block = float(ratios[j]), int(idx[j])
                    break
        if block is not None:
            x = x + alpha * p
            history.append(qp.objective(x))
            work.append(block)
            continue
        if not negligible:
            x = x + p
            history.append(qp.objective(x))
            continue
        x = x + p
        gscale = 1.0 + np.max(np.abs(grad)) + np.max(np.abs(g))
        if len(work) == 0 or np.min(lam_w) >= -1e-12 * gscale:
            status = OPTIMAL
            break
        work.pop(int(np.argmin(lam_w)))
    lam = np.zeros(len(b))
    if work and status == OPTIMAL:
        lam[work] = lam_w
    res = kkt_residual(qp, x, lam, A, b)
    if status == OPTIMAL and res > tol:
        log.debug("active-set KKT residual %.3e above tolerance", res)
        status = MAX_ITER
    return QpSolution(du=x, objective=qp.objective(x), status=status, iterations=it,
                      kkt_residual=res, multipliers=lam, history=history)


def solve_admm(qp: QpProblem, tol: float = 1e-8, max_iter: int = 20000, x0=None,
               rho: float | None = None, sigma: float = 1e-6, alpha: float = 1.6) -> QpSolution:
    """Operator-splitting (ADMM) solve with an active-set polish at the end.

    Constraints are handled as ``l <= C x <= u`` with ``C = [I; D]``.  Every
    few hundred iterations the active set suggested by the duals is used to
    solve the equality-constrained KKT system; the polished point is accepted
    when it meets ``tol``.
    """
    n = qp.n
    if qp.feasible_point() is None:
        return QpSolution(du=np.zeros(n), objective=np.nan, status=INFEASIBLE, iterations=0,
                          kkt_residual=np.inf)
    C = np.vstack([np.eye(n), qp.difference_matrix()])
    lo = np.concatenate([qp.lb, qp.rate_lb])
    hi = np.concatenate([qp.ub, qp.rate_ub])
    P = 2.0 * qp.Hq
    q = 2.0 * qp.g
    if rho is None:
        rho = max(1e-6, float(np.trace(P)) / n)
    chol = scipy.linalg.cho_factor(P + sigma * np.eye(n) + rho * C.T @ C)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    z = np.clip(C @ x, lo, hi)
    y = np.zeros(2 * n)
    A, b = qp.inequalities()
    best = None
    it = 0
    for it in range(1, max_iter + 1):
        xt = scipy.linalg.cho_solve(chol, sigma * x - q + C.T @ (rho * z - y))
        zt = C @ xt
        x = alpha * xt + (1 - alpha) * x
        zr = alpha * zt + (1 - alpha) * z
        z_new = np.clip(zr + y / rho, lo, hi)
        y = y + rho * (zr - z_new)
        z = z_new
        if it % 25 == 0:
            polished = _polish(qp, y, C, lo, hi, A, b, tol)
            if polished is not None:
                best = polished
                break
    if best is None:
        xs = qp.feasible_point(x)
        x = xs if xs is not None else x
        lam = _ineq_multipliers(y, n, A, b, qp)
        return QpSolution(du=x, objective=qp.objective(x), status=MAX_ITER, iterations=it,
                          kkt_residual=kkt_residual(qp, x, lam, A, b))
    x, lam = best
    return QpSolution(du=x, objective=qp.objective(x), status=OPTIMAL, iterations=it,
                      kkt_residual=kkt_residual(qp, x, lam, A, b), multipliers=lam)


def _ineq_multipliers(y, n, A, b, qp):
    # y is the multiplier of 1/2 x^T P x (= 2 * objective); halve it to match the
    # x^T Hq x convention, then split by sign onto upper/lower rows
    yh = 0.5 * y
    full = np.concatenate([np.maximum(yh[:n], 0), np.maximum(-yh[:n], 0),
                           np.maximum(yh[n:], 0), np.maximum(-yh[n:], 0)])
    bfull = np.concatenate([qp.ub, -qp.lb, qp.rate_ub, -qp.rate_lb])
    return full[np.isfinite(bfull)]


def _polish(qp, y, C, lo, hi, A, b, tol):
    n = qp.n
    ythr = 1e-9 * (1.0 + np.max(np.abs(y)))
    upper = np.where(y > ythr)[0]
    lower = np.where(y < -ythr)[0]
    rows = np.concatenate([upper, lower])
    Aw = np.vstack([C[upper], -C[lower]]) if len(rows) else np.zeros((0, n))
    bw = np.concatenate([hi[upper], -lo[lower]])
    if not np.all(np.isfinite(bw)):
        return None
    k = len(rows)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = qp.Hq
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    try:
        sol = np.linalg.solve(K, np.concatenate([-qp.g, bw]))
    except np.linalg.LinAlgError:
        return None
    x, mu = sol[:n], sol[n:]
    if np.any(mu < -1e-9 * (1.0 + np.max(np.abs(qp.g)))):
        return None
    mu = np.maximum(mu, 0.0)
    full = np.zeros(4 * n)
    # map back onto the (ub, lb, rate_ub, rate_lb) row order of qp.inequalities()
    for r, m in zip(upper, mu[: len(upper)]):
        full[r if r < n else 2 * n + (r - n)] += m
    for r, m in zip(lower, mu[len(upper):]):
        full[n + r if r < n else 3 * n + (r - n)] += m
    bfull = np.concatenate([qp.ub, -qp.lb, qp.rate_ub, -qp.rate_lb])
    lam = full[np.isfinite(bfull)]
    if kkt_residual(qp, x, lam, A, b) > tol:
        return None
    return x, lam


def solve(qp: QpProblem, tol: float = 1e-8, max_iter: int = 500, x0=None,
          method: str = "active_set") -> QpSolution:
    """Solve ``qp``; falls back to ADMM if the active-set method stalls."""
    if method == "admm":
        return solve_admm(qp, tol=tol, x0=x0)
    if method != "active_set":
        raise ValueError(f"unknown QP method {method!r}")
    sol = solve_active_set(qp, tol=tol, max_iter=max_iter, x0=x0)
    if sol.status == MAX_ITER:
        log.warning("active-set solver stalled (residual %.3e); retrying with ADMM", sol.kkt_residual)
        alt = solve_admm(qp, tol=tol, x0=sol.du)
        if alt.status == OPTIMAL or alt.kkt_residual < sol.kkt_residual:
            return alt
    return sol
