"""Independent reference computations used only by the tests."""

from itertools import combinations, product

import numpy as np


def enumerate_qp(qp, tol=1e-9):
    """Exact optimum of a small QP by enumerating active constraint patterns.

    Every constraint pair (box i, rate i) is either inactive, at its lower
    bound or at its upper bound.  Patterns are tried by increasing number of
    active constraints; the first whose equality-constrained minimizer is
    feasible with nonnegative multipliers is the unique optimum of the
    strictly convex problem.
    """
    n = qp.n
    R = np.vstack([np.eye(n), np.eye(n) - np.eye(n, k=-1)])
    lo = np.concatenate([qp.lb, qp.rate_lb])
    hi = np.concatenate([qp.ub, qp.rate_ub])
    H, g = qp.Hq, qp.g
    scale = 1.0 + np.abs(g).max() + np.abs(H).max()
    for k in range(0, n + 1):
        for chosen in combinations(range(2 * n), k):
            chosen = list(chosen)
            if k and np.linalg.matrix_rank(R[chosen]) < k:
                continue
            Rc = R[chosen]
            K = np.block([[H, Rc.T], [Rc, np.zeros((k, k))]])
            sides = np.array(list(product((-1.0, 1.0), repeat=k)), dtype=float).reshape(2**k, k)
            bounds = np.where(sides > 0, hi[chosen], lo[chosen])
            finite = np.all(np.isfinite(bounds), axis=1)
            if not finite.any():
                continue
            sides, bounds = sides[finite], bounds[finite]
            rhs = np.vstack([np.repeat(-g[:, None], len(sides), axis=1), bounds.T])
            sol = np.linalg.solve(K, rhs)
            for col in range(len(sides)):
                x, lam = sol[:n, col], sol[n:, col]
                # a multiplier on an upper bound must be >= 0, on a lower bound <= 0
                if k and (sides[col] * lam).min() < -tol * scale:
                    continue
                Rx = R @ x
                viol = max(np.max(lo - Rx), np.max(Rx - hi))
                if viol <= tol * (1 + np.abs(x).max()):
                    return x
    raise RuntimeError("no KKT point found")


def taylor_expm(M, terms=200):
    """exp(M) by a truncated power series (only for matrices of modest norm)."""
    n = M.shape[0]
    out = np.eye(n)
    term = np.eye(n)
    for j in range(1, terms):
        term = term @ M / j
        out = out + term
        if np.abs(term).max() < 1e-18 * np.abs(out).max():
            break
    return out


def step_simulate(A, Bseq, Cseq, u):
    """y(1..nu) of x(t+1) = A x + B(t) u(t), y(t) = C(t) x(t), x(0) = 0."""
    x = np.zeros(A.shape[0])
    y = []
    for t in range(len(u)):
        x = A @ x + Bseq[t] * u[t]
        y.append(Cseq[t] @ x)
    return np.array(y)


class GenericKalmanFilter:
    """Textbook Kalman filter on a linear system with explicit matrices."""

    def __init__(self, x0, P0):
        self.x = np.array(x0, dtype=float)
        self.P = np.array(P0, dtype=float)

    def predict(self, F, Bu=None, Qn=None):
        self.x = F @ self.x + (0 if Bu is None else Bu)
        self.P = F @ self.P @ F.T + (0 if Qn is None else Qn)

    def update(self, Hm, z, Rn):
        Hm = np.atleast_2d(Hm)
        S = Hm @ self.P @ Hm.T + Rn
        K = self.P @ Hm.T @ np.linalg.inv(S)
        self.x = self.x + K @ (np.atleast_1d(z) - Hm @ self.x)
        IKH = np.eye(len(self.x)) - K @ Hm
        self.P = IKH @ self.P @ IKH.T + K @ np.atleast_2d(Rn) @ K.T
        return K
