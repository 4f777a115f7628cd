"""Per-party stochastic damped L-BFGS curvature memory.

The damping step rewrites each incoming gradient-difference vector so that
its inner product with the step stays at or above 0.3 * sigma, which keeps
the implicit inverse-Hessian approximation positive definite even when the
pair was computed from stale peer contributions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

DAMPING_THRESHOLD = 0.3  # pairs with s'y below 0.3*sigma get damped
_RHO_UNDERFLOW = 1e-300
_GAMMA_CEILING = 1e150  # keeps sigma and y_hat representable in float64


class DegenerateStepError(ValueError):
    """The step vector s is zero; no curvature information to store."""


@dataclass
class DampingReport:
    theta_coeff: float  # interpolation weight, 1.0 when no damping needed
    sigma: float        # gamma * s's, i.e. s' H0^{-1} s
    activated: bool
    stored: bool = True  # False when the pair was rejected (rho underflow)


class CurvatureMemory:
    """Ring buffer of damped (s, y_hat, rho) triples plus the scaling gamma.

    Owned exclusively by one party worker; not reentrant.
    """

    def __init__(self, dim, memory_size=8, delta_floor=0.01, gamma=1.0):
        if memory_size < 1:
            raise ValueError("memory_size must be positive")
        if delta_floor <= 0:
            raise ValueError("delta_floor must be positive")
        self.dim = int(dim)
        self.m = int(memory_size)
        self.delta_floor = float(delta_floor)
        self.gamma = max(float(gamma), self.delta_floor)
        self.triples = deque(maxlen=self.m)  # oldest first: (s, y_hat, rho)

    def __len__(self):
        return len(self.triples)


def update_memory(
    memory: CurvatureMemory, s_new: np.ndarray, y_bar_new: np.ndarray
) -> tuple[CurvatureMemory, DampingReport]:
    """Damp the raw pair (s, y_bar), refresh gamma, and store the triple.

    gamma <- max(y'y / s'y, delta) for positive curvature, delta otherwise
    (a nonpositive ratio would only lose to delta in the max anyway).
    """
    s = np.asarray(s_new, dtype=np.float64)
    y_bar = np.asarray(y_bar_new, dtype=np.float64)
    if s.shape != (memory.dim,) or y_bar.shape != (memory.dim,):
        raise ValueError("vector dimension does not match memory")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y_bar))):
        raise ValueError("non-finite curvature pair")
    ss = float(s @ s)
    if ss == 0.0:
        raise DegenerateStepError("zero step vector")

    sy = float(s @ y_bar)
    yy = float(y_bar @ y_bar)
    if sy > 0:
        memory.gamma = min(max(yy / sy, memory.delta_floor), _GAMMA_CEILING)
    else:
        memory.gamma = memory.delta_floor

    sigma = memory.gamma * ss  # s' H0^{-1} s with H0^{-1} = gamma*I
    if sy < DAMPING_THRESHOLD * sigma:
        theta = 0.7 * sigma / (sigma - sy)
        activated = True
    else:
        theta = 1.0
        activated = False
    y_hat = theta * y_bar + (1.0 - theta) * memory.gamma * s

    s_yhat = float(s @ y_hat)
    if not np.isfinite(s_yhat) or s_yhat < _RHO_UNDERFLOW:
        return memory, DampingReport(theta, sigma, activated, stored=False)
    memory.triples.append((s.copy(), y_hat, 1.0 / s_yhat))
    return memory, DampingReport(theta, sigma, activated)


def two_loop_direction(memory: CurvatureMemory, v: np.ndarray) -> np.ndarray:
    """H_k v via the two-loop recursion; H_k is never materialized.

    Accepts a (dim,) vector or a (dim, k) matrix of vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != memory.dim:
        raise ValueError("vector dimension does not match memory")
    u = v.copy()
    alphas = []
    for s, y_hat, rho in reversed(memory.triples):
        a = rho * (s @ u)
        u -= np.multiply.outer(y_hat, a) if u.ndim == 2 else a * y_hat
        alphas.append(a)
    alphas.reverse()
    r = u / memory.gamma
    for (s, y_hat, rho), a in zip(memory.triples, alphas):
        b = rho * (y_hat @ r)
        r += np.multiply.outer(s, a - b) if r.ndim == 2 else (a - b) * s
    return r


def explicit_hessian_oracle(memory: CurvatureMemory) -> np.ndarray:
    """Dense H_k from the textbook recursive BFGS update (test oracle).

    H_{j+1} = (I - rho s y') H_j (I - rho y s') + rho s s', oldest first.
    """
    if memory.dim > 64:
        raise ValueError("oracle is guarded to dim <= 64")
    H = np.eye(memory.dim) / memory.gamma
    eye = np.eye(memory.dim)
    for s, y_hat, rho in memory.triples:
        V = eye - rho * np.outer(s, y_hat)
        H = V @ H @ V.T + rho * np.outer(s, s)
    return H
