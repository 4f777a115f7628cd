"""Post-run evaluation metrics: sub-optimality curves, communication-time
improvement, compute-resource-utilization improvement, multi-party speedup,
and federated-vs-centralized accuracy comparison.

All quantities are computed from simulated virtual time and event counts;
reports label them "simulated" so they are never mistaken for measured
wall-clock numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PartyShard, assemble_weights, reassemble
from .runtime import TrainRun


@dataclass
class MetricReport:
    """Named scalar metrics, each citing the run(s) it derives from."""

    values: dict[str, float] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, value: float, source: str):
        self.values[name] = float(value)
        self.provenance[name] = source

    def csv_lines(self) -> list[str]:
        lines = ["metric,value,source"]
        for name, value in self.values.items():
            lines.append(f"{name},{value:.17g},{self.provenance[name]}")
        return lines


def suboptimality_series(
    run: TrainRun, f_star: float, clamp_tol: float = 1e-12
) -> list[tuple[int, float]]:
    """(comm_rounds, f - f*) per record; tiny negatives within the reference
    solver's tolerance are clamped to zero."""
    if f_star is None:
        raise ValueError("f_star missing; run the reference solver first")
    out = []
    for r in run.records:
        gap = r.objective - f_star
        if -clamp_tol <= gap < 0.0:
            gap = 0.0
        out.append((r.comm_rounds, gap))
    return out


def cti(alpha_lat: float, beta_bw: float, d_ell: int) -> float:
    """Time to transmit a d_ell-vector over time to transmit one scalar."""
    if d_ell < 1:
        raise ValueError("d_ell must be >= 1")
    denom = alpha_lat + beta_bw * 8.0
    if denom <= 0:
        raise ValueError("latency model is degenerate (zero scalar time)")
    return (alpha_lat + beta_bw * 8.0 * d_ell) / denom


def crui(sync_run: TrainRun, async_run: TrainRun) -> float:
    """Ratio of compute times (virtual wall minus mean per-party comm).

    A larger value means the asynchronous schedule wasted less time waiting
    at barriers for the same iteration budget.
    """
    if sync_run.budget != async_run.budget:
        raise ValueError(
            f"runs cover different budgets: {sync_run.budget} vs {async_run.budget}"
        )
    denom = async_run.compute_time()
    if denom <= 0:
        raise ValueError("async run has nonpositive compute time")
    return sync_run.compute_time() / denom


def rounds_to_target(run: TrainRun, f_star: float, target_gap: float) -> int | None:
    """Communication rounds when sub-optimality first drops to target_gap."""
    for rounds, gap in suboptimality_series(run, f_star):
        if gap <= target_gap:
            return rounds
    return None


def time_to_target(run: TrainRun, f_star: float, target_gap: float) -> float | None:
    """Virtual wall time when sub-optimality first drops to target_gap."""
    for r in run.records:
        gap = r.objective - f_star
        if gap <= target_gap:
            return r.wall_time
    return None


def speedup_curve(
    runs_by_q: dict[int, TrainRun], f_star: float, target_gap: float
) -> list[tuple[int, float]]:
    """(q, serial time-to-target / q-party time-to-target), q ascending."""
    if 1 not in runs_by_q:
        raise ValueError("need a q=1 run as the serial baseline")
    times = {}
    missing = []
    for q, run in runs_by_q.items():
        t = time_to_target(run, f_star, target_gap)
        if t is None:
            missing.append(q)
        else:
            times[q] = t
    if missing:
        raise ValueError(
            f"runs for q={sorted(missing)} never reached sub-optimality {target_gap}"
        )
    serial = times[1]
    return [(q, serial / times[q] if times[q] > 0 else 1.0) for q in sorted(times)]


def predict_labels(w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Sign rule at threshold 0; ties broken toward +1."""
    return np.where(X @ w >= 0.0, 1.0, -1.0)


def accuracy(w: np.ndarray, test: Dataset) -> float:
    if test.n == 0:
        raise ValueError("empty test set")
    return float(np.mean(predict_labels(w, test.dense_features()) == test.labels))


def lossless_compare(
    federated_shards: list[PartyShard],
    centralized_w: np.ndarray,
    test: Dataset,
) -> tuple[float, float]:
    """Held-out accuracy of the federated model vs the centralized one."""
    w_fed = assemble_weights(federated_shards)
    return accuracy(w_fed, test), accuracy(centralized_w, test)


def curve_csv(series: list[tuple[float, float]], x_name: str, y_name: str) -> str:
    lines = [f"{x_name},{y_name}"]
    for x, y in series:
        lines.append(f"{x:.17g},{y:.17g}" if isinstance(x, float) else f"{x},{y:.17g}")
    return "\n".join(lines) + "\n"
