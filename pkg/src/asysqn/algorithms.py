"""Stochastic quasi-Newton optimizers: plain SGD and the variance-reduced
SVRG/SAGA estimators, each optionally scaled by the damped L-BFGS memory.

A PartyWorker owns one party's model block and curvature state.  It is
driven either by the virtual-time scheduler (asynchronous or barriered) or
directly by tests via the single-step helper functions at the bottom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curvature import (
    CurvatureMemory,
    DegenerateStepError,
    two_loop_direction,
    update_memory,
)
from .data import PartyShard
from .objective import (
    all_predictors,
    block_gradient,
    centralized_gradient,
    centralized_hessian,
    centralized_objective,
    loss_derivative,
)


class DivergenceError(RuntimeError):
    """The iterate or objective became non-finite; carries the last record."""

    def __init__(self, message, last_record=None, train_run=None):
        super().__init__(message)
        self.last_record = last_record
        self.train_run = train_run


@dataclass
class AlgoConfig:
    """Optimizer selection and hyperparameters for one training run."""

    method: str = "sgd"          # sgd | svrg | saga
    curvature: str = "sdlbfgs"   # sdlbfgs | identity
    step_size: float = 0.1
    batch_size: int | None = None   # default ceil(sqrt(n))
    inner_length: int | None = None  # svrg steps between anchor refreshes
    lam: float = 1e-4
    memory_size: int = 8
    delta_floor: float = 0.01
    seed: int = 0
    paired_batch: bool = False  # recompute v_{k-1} on the new batch for pairs

    def __post_init__(self):
        if self.method not in ("sgd", "svrg", "saga"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.curvature not in ("sdlbfgs", "identity"):
            raise ValueError(f"unknown curvature {self.curvature!r}")
        if self.step_size < 0:
            raise ValueError("step_size must be nonnegative")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    def effective_batch(self, n: int) -> int:
        b = self.batch_size if self.batch_size is not None else int(np.ceil(np.sqrt(n)))
        if not 1 <= b <= n:
            raise ValueError(f"batch size {b} outside [1, {n}]")
        return b

    def effective_inner(self, n: int) -> int:
        if self.inner_length is not None:
            return self.inner_length
        return max(1, n // self.effective_batch(n))


def batch_indices(seed: int, local_k: int, n: int, b: int) -> np.ndarray:
    """Uniform-with-replacement batch, keyed by (seed, local iteration) only,
    so every party at the same local iteration draws the same samples.

    b = n collapses to the deterministic full batch.
    """
    if b == n:
        return np.arange(n)
    rng = np.random.default_rng([seed, 3571, local_k])
    return rng.integers(0, n, size=b)


@dataclass
class SagaTable:
    """Per-sample stored block gradients and their incrementally-kept mean."""

    grads: np.ndarray  # n x d_ell
    mean: np.ndarray   # d_ell
    updates_since_recompute: int = 0
    recompute_every: int = 128

    def replace(self, idx: np.ndarray, new_rows: np.ndarray):
        """Overwrite rows ``idx`` (must be unique) and adjust the mean."""
        n = self.grads.shape[0]
        # new_rows are identical for duplicate draws (same w), last write wins
        delta = (new_rows - self.grads[idx]).sum(axis=0) / n
        self.grads[idx] = new_rows
        self.mean += delta
        self.updates_since_recompute += 1
        if self.updates_since_recompute >= self.recompute_every:
            self.mean = self.grads.mean(axis=0)
            self.updates_since_recompute = 0


@dataclass
class SvrgAnchor:
    """Frozen reference point for the variance-reduced SVRG estimator."""

    w_block: np.ndarray
    full_grad: np.ndarray
    theta: np.ndarray  # full predictors at the anchor, all n samples


class PartyWorker:
    """One party's optimizer state machine.

    ``do_refresh`` consumes a full predictor snapshot (n aggregations);
    ``do_step`` consumes a batch snapshot and returns the pending block
    update, which the caller applies when the step commits.
    """

    def __init__(self, shard: PartyShard, config: AlgoConfig, n: int):
        self.shard = shard
        self.config = config
        self.n = n
        self.b = config.effective_batch(n)
        self.inner = config.effective_inner(n)
        self.local_k = 0
        self.memory = None
        if config.curvature == "sdlbfgs":
            self.memory = CurvatureMemory(
                dim=shard.d_ell,
                memory_size=config.memory_size,
                delta_floor=config.delta_floor,
            )
        self.prev_v: np.ndarray | None = None
        self.prev_w: np.ndarray | None = None
        self.anchor: SvrgAnchor | None = None
        self.table: SagaTable | None = None
        self._steps_since_refresh = 0

    # -- scheduling hooks -------------------------------------------------

    def wants_refresh(self) -> bool:
        if self.config.method == "svrg":
            return self.anchor is None or self._steps_since_refresh >= self.inner
        if self.config.method == "saga":
            return self.table is None
        return False

    def sample_batch(self) -> np.ndarray:
        return batch_indices(self.config.seed, self.local_k, self.n, self.b)

    # -- refresh (full pass) ----------------------------------------------

    def do_refresh(self, full_theta: np.ndarray) -> int:
        """Rebuild anchor / gradient table from a full predictor snapshot.

        Returns the multiplication count charged to this party.
        """
        lam = self.config.lam
        X = self.shard.local_features
        y = self.shard.labels
        if self.config.method == "svrg":
            w = self.shard.w_block.copy()
            grad = block_gradient(full_theta, y, X, w, lam)
            self.anchor = SvrgAnchor(w_block=w, full_grad=grad, theta=full_theta.copy())
            self._steps_since_refresh = 0
        elif self.config.method == "saga":
            h = loss_derivative(full_theta, y)
            grads = X * h[:, None] + lam * self.shard.w_block[None, :]
            self.table = SagaTable(grads=grads, mean=grads.mean(axis=0))
        else:
            raise RuntimeError("sgd never refreshes")
        return 2 * self.n * self.shard.d_ell

    # -- estimator --------------------------------------------------------

    def estimator(self, theta_batch: np.ndarray, batch: np.ndarray) -> np.ndarray:
        lam = self.config.lam
        X = self.shard.local_features[batch]
        y = self.shard.labels[batch]
        w = self.shard.w_block
        g = block_gradient(theta_batch, y, X, w, lam)
        if self.config.method == "sgd":
            return g
        if self.config.method == "svrg":
            a = self.anchor
            g_anchor = block_gradient(a.theta[batch], y, X, a.w_block, lam)
            self._steps_since_refresh += 1
            return g - g_anchor + a.full_grad
        # saga
        t = self.table
        v = g - t.grads[batch].mean(axis=0) + t.mean
        h = loss_derivative(theta_batch, y)
        fresh = X * h[:, None] + lam * w[None, :]
        # duplicates in a with-replacement batch carry identical rows
        uniq, first_pos = np.unique(batch, return_index=True)
        t.replace(uniq, fresh[first_pos])
        return v

    def step_cost(self) -> int:
        """Multiplication count for one step (own feature slice only)."""
        d = self.shard.d_ell
        m = self.config.memory_size if self.memory is not None else 0
        per_method = {"sgd": 2, "svrg": 4, "saga": 3}[self.config.method]
        return (per_method * self.b + 6 * m + 2) * d

    # -- one optimization step ---------------------------------------------

    def do_step(self, theta_batch: np.ndarray, batch: np.ndarray) -> np.ndarray:
        """Compute the pending update -gamma * H * v for this iteration.

        The caller adds the returned vector to ``shard.w_block`` at commit
        time; peers keep seeing the old block until then.
        """
        v = self.estimator(theta_batch, batch)
        if not np.all(np.isfinite(v)):
            raise DivergenceError(
                f"non-finite gradient estimate on party {self.shard.party_id} "
                f"at local iteration {self.local_k}"
            )
        if self.memory is not None:
            if self.prev_v is not None:
                s = self.shard.w_block - self.prev_w
                if self.config.paired_batch:
                    # re-evaluate the previous gradient on this batch at the
                    # previous own block; variance-reduction terms cancel in
                    # the difference, so the plain block gradient suffices
                    X = self.shard.local_features[batch]
                    y = self.shard.labels[batch]
                    theta_prev = theta_batch - X @ s
                    g_now = block_gradient(
                        theta_batch, y, X, self.shard.w_block, self.config.lam
                    )
                    g_prev = block_gradient(
                        theta_prev, y, X, self.prev_w, self.config.lam
                    )
                    y_bar = g_now - g_prev
                else:
                    y_bar = v - self.prev_v
                try:
                    update_memory(self.memory, s, y_bar)
                except DegenerateStepError:
                    pass
            d = two_loop_direction(self.memory, v)
        else:
            d = v
        with np.errstate(over="raise", invalid="raise"):
            try:
                delta = -self.config.step_size * d
                if not np.all(np.isfinite(delta)):
                    raise FloatingPointError
            except FloatingPointError:
                raise DivergenceError(
                    f"non-finite update on party {self.shard.party_id} "
                    f"at local iteration {self.local_k}"
                ) from None
        self.prev_w = self.shard.w_block.copy()
        self.prev_v = v
        self.local_k += 1
        return delta


# -- direct (scheduler-free) single-party steps, used as testable surface --

def _direct_theta(peers: list[PartyShard], rows: np.ndarray) -> np.ndarray:
    theta = np.zeros(len(rows))
    for p in peers:
        theta += p.local_features[rows] @ p.w_block
    return theta


def sgd_party_step(
    shard: PartyShard, peers: list[PartyShard], config: AlgoConfig,
    worker: PartyWorker | None = None,
) -> PartyWorker:
    """One plain-SGD block update for ``shard`` against peer snapshots."""
    if worker is None:
        worker = PartyWorker(shard, config, n=shard.n)
    batch = worker.sample_batch()
    theta = _direct_theta(peers, batch)
    shard.w_block += worker.do_step(theta, batch)
    return worker


def svrg_party_epoch(
    shard: PartyShard, peers: list[PartyShard], config: AlgoConfig,
    worker: PartyWorker | None = None,
) -> PartyWorker:
    """Anchor refresh followed by one inner loop of variance-reduced steps."""
    if config.method != "svrg":
        raise ValueError("config.method must be 'svrg'")
    if worker is None:
        worker = PartyWorker(shard, config, n=shard.n)
    worker.do_refresh(_direct_theta(peers, np.arange(shard.n)))
    for _ in range(worker.inner):
        batch = worker.sample_batch()
        theta = _direct_theta(peers, batch)
        shard.w_block += worker.do_step(theta, batch)
    return worker


def saga_party_step(
    shard: PartyShard, peers: list[PartyShard], config: AlgoConfig,
    worker: PartyWorker | None = None,
) -> PartyWorker:
    """One SAGA block update; initializes the gradient table on first call."""
    if config.method != "saga":
        raise ValueError("config.method must be 'saga'")
    if worker is None:
        worker = PartyWorker(shard, config, n=shard.n)
    if worker.table is None:
        worker.do_refresh(_direct_theta(peers, np.arange(shard.n)))
    batch = worker.sample_batch()
    theta = _direct_theta(peers, batch)
    shard.w_block += worker.do_step(theta, batch)
    return worker


def reference_solve(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> tuple[np.ndarray, float]:
    """High-precision centralized minimizer via damped Newton iterations.

    Used as the independent f* oracle for sub-optimality curves.  Raises if
    the gradient norm does not drop below ``tol``; the exception carries the
    best iterate found.
    """
    if lam <= 0:
        raise ValueError("reference solve needs strong convexity (lam > 0)")
    w = np.zeros(X.shape[1])
    for _ in range(max_iter):
        g = centralized_gradient(X, y, w, lam)
        if np.linalg.norm(g) < tol:
            return w, centralized_objective(X, y, w, lam)
        H = centralized_hessian(X, y, w, lam)
        step = np.linalg.solve(H, g)
        # backtracking on the objective; full Newton step almost always taken
        f0 = centralized_objective(X, y, w, lam)
        t = 1.0
        while t > 1e-12:
            cand = w - t * step
            if centralized_objective(X, y, cand, lam) <= f0 - 1e-4 * t * (g @ step):
                break
            t *= 0.5
        w = w - t * step
    err = RuntimeError(f"reference solve: gradient norm above {tol} after {max_iter} iterations")
    err.best_w = w
    err.best_f = centralized_objective(X, y, w, lam)
    raise err
