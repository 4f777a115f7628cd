"""L2-regularized logistic regression: loss, predictors, block gradients.

All functions are pure; party workers call them concurrently.  The linear
predictor of sample i is the sum of per-party inner products, which is the
only cross-party quantity ever exchanged.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .data import PartyShard


def theta_component(w_block: np.ndarray, x_row_block: np.ndarray) -> float:
    """One party's contribution w_l . (x_i)_l to the linear predictor."""
    w_block = np.asarray(w_block, dtype=np.float64)
    x_row_block = np.asarray(x_row_block, dtype=np.float64)
    if w_block.shape != x_row_block.shape:
        raise ValueError(
            f"shape mismatch: {w_block.shape} vs {x_row_block.shape}"
        )
    return float(w_block @ x_row_block)


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("labels must be -1 or +1")
    return y


def loss_derivative(theta, y):
    """d/dtheta of log(1 + exp(-y*theta)), i.e. -y * sigmoid(-y*theta).

    expit keeps this finite for any float theta (no overflow branch).
    """
    y = _check_labels(y)
    theta = np.asarray(theta, dtype=np.float64)
    out = -y * expit(-y * theta)
    return float(out) if out.ndim == 0 else out


def logistic_loss(theta, y):
    """log(1 + exp(-y*theta)), elementwise, overflow-safe."""
    y = _check_labels(y)
    return np.logaddexp(0.0, -y * np.asarray(theta, dtype=np.float64))


def block_gradient(
    theta_batch: np.ndarray,
    y_batch: np.ndarray,
    x_block_batch: np.ndarray,
    w_block: np.ndarray,
    lam: float,
) -> np.ndarray:
    """Batch-mean block-coordinate gradient (1/b) sum H(theta_i, y_i) (x_i)_l
    plus the regularizer term lam * w_l.

    ``theta_batch`` holds full predictors already aggregated across parties;
    ``x_block_batch`` holds only this party's columns for the same samples.
    """
    theta_batch = np.atleast_1d(np.asarray(theta_batch, dtype=np.float64))
    if theta_batch.size == 0:
        raise ValueError("empty batch")
    h = loss_derivative(theta_batch, y_batch)
    return x_block_batch.T @ h / theta_batch.size + lam * np.asarray(w_block)


def all_predictors(shards: list[PartyShard]) -> np.ndarray:
    """theta_i for all samples, summing every party's component."""
    n = shards[0].n
    if any(s.n != n for s in shards):
        raise ValueError("shards disagree on sample count")
    theta = np.zeros(n)
    for s in shards:
        theta += s.local_features @ s.w_block
    return theta


def full_objective(shards: list[PartyShard], lam: float) -> float:
    """(1/n) sum log(1+e^{-y theta}) + (lam/2)||w||^2 over all blocks."""
    theta = all_predictors(shards)
    y = shards[0].labels
    reg = 0.5 * lam * sum(float(s.w_block @ s.w_block) for s in shards)
    return float(np.mean(logistic_loss(theta, y))) + reg


def full_block_gradient(
    shard: PartyShard, all_theta: np.ndarray, lam: float
) -> np.ndarray:
    """block_gradient over the full index set {1..n}."""
    all_theta = np.asarray(all_theta, dtype=np.float64)
    if all_theta.shape[0] != shard.n:
        raise ValueError("need all n predictors")
    return block_gradient(
        all_theta, shard.labels, shard.local_features, shard.w_block, lam
    )


# Centralized (unsplit) counterparts, used as oracles and by reference_solve.

def centralized_objective(X, y, w, lam) -> float:
    theta = X @ w
    return float(np.mean(logistic_loss(theta, y)) + 0.5 * lam * (w @ w))


def centralized_gradient(X, y, w, lam) -> np.ndarray:
    h = loss_derivative(X @ w, y)
    return X.T @ h / X.shape[0] + lam * w


def centralized_hessian(X, y, w, lam) -> np.ndarray:
    theta = X @ w
    p = expit(theta * y)
    weight = p * (1.0 - p)  # sigmoid'(y*theta), label sign squared away
    return (X.T * weight) @ X / X.shape[0] + lam * np.eye(X.shape[1])
