"""Lifted (whole-layer) input-to-output map of the discrete thermal model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LiftedSystem:
    """``G[i-1, j] = C(i) A^(i-1-j) B(j)`` for outputs i = 1..nu, inputs j = 0..nu-1.

    Row ``r`` holds output ``r + 1``, so the matrix is lower triangular
    including its diagonal in 0-based storage.
    """

    G: np.ndarray

    @property
    def nu(self) -> int:
        return self.G.shape[0]

    def column(self, t: int) -> np.ndarray:
        """G(t): response of the whole output sequence to a unit input at t."""
        return self.G[:, t]

    def horizon_block(self, t: int, m: int) -> np.ndarray:
        """G^m(t) = [G(t) ... G(t+m-1)], shrunk to nu - t columns near the end."""
        return self.G[:, t:min(t + m, self.nu)]

    def selector(self, t: int) -> np.ndarray:
        """H(t), the t-th (1-indexed) standard basis row."""
        h = np.zeros(self.nu)
        h[t - 1] = 1.0
        return h


def build_lifted(model) -> LiftedSystem:
    """Propagate each B(j) forward through A and read it out with C(i)."""
    nu = model.nu
    if nu < 1:
        raise ValueError("model must have at least one step")
    A, Bseq, Cseq = model.A, model.Bseq, model.Cseq
    G = np.zeros((nu, nu))
    # All columns are advanced together: X[:, j] holds A^(i-1-j) B(j) for j < i.
    X = np.zeros((model.n_nodes, nu))
    for i in range(1, nu + 1):
        if i > 1:
            X[:, : i - 1] = A @ X[:, : i - 1]
        X[:, i - 1] = Bseq[i - 1]
        G[i - 1, :i] = Cseq[i - 1] @ X[:, :i]
    return LiftedSystem(G=G)


def predict_error(e_now: np.ndarray, Gm: np.ndarray, du: np.ndarray) -> np.ndarray:
    """Error sequence after applying the input changes ``du`` over the horizon."""
    e_now = np.asarray(e_now, dtype=float)
    du = np.atleast_1d(np.asarray(du, dtype=float))
    Gm = np.asarray(Gm, dtype=float)
    if Gm.ndim == 1:
        Gm = Gm[:, None]
    if Gm.shape != (e_now.shape[0], du.shape[0]):
        raise ValueError(f"shape mismatch: e {e_now.shape}, Gm {Gm.shape}, du {du.shape}")
    return e_now - Gm @ du
