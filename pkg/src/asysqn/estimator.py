"""Scikit-learn style facade over the multi-party training simulator.

``fit`` splits the feature columns across ``n_parties`` vertical shards,
runs the selected optimizer under the virtual-time scheduler, and exposes
the reassembled global weight vector as ``coef_``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .algorithms import AlgoConfig
from .data import Dataset, assemble_weights, vertical_split
from .runtime import SchedulerConfig, Simulator


class AsySQNClassifier(BaseEstimator, ClassifierMixin):
    """Binary linear classifier trained by simulated vertical federation.

    Parameters mirror AlgoConfig / SchedulerConfig; see those dataclasses
    for semantics.  ``n_parties=1`` degenerates to centralized training.
    """

    def __init__(
        self,
        n_parties=8,
        method="svrg",
        curvature="sdlbfgs",
        step_size=0.1,
        batch_size=None,
        inner_length=None,
        lam=1e-4,
        memory_size=8,
        delta_floor=0.01,
        paired_batch=True,
        mode="sync",
        tau_bound=None,
        budget=None,
        seed=0,
    ):
        self.n_parties = n_parties
        self.method = method
        self.curvature = curvature
        self.step_size = step_size
        self.batch_size = batch_size
        self.inner_length = inner_length
        self.lam = lam
        self.memory_size = memory_size
        self.delta_floor = delta_floor
        self.paired_batch = paired_batch
        self.mode = mode
        self.tau_bound = tau_bound
        self.budget = budget
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = np.unique(y)
        if len(classes) != 2:
            raise ValueError(f"need exactly 2 classes, got {len(classes)}")
        self.classes_ = classes
        y_signed = np.where(y == classes[1], 1.0, -1.0)

        dataset = Dataset(features=X, labels=y_signed)
        shards = vertical_split(dataset, self.n_parties)
        algo = AlgoConfig(
            method=self.method,
            curvature=self.curvature,
            step_size=self.step_size,
            batch_size=self.batch_size,
            inner_length=self.inner_length,
            lam=self.lam,
            memory_size=self.memory_size,
            delta_floor=self.delta_floor,
            paired_batch=self.paired_batch,
            seed=self.seed,
        )
        sched = SchedulerConfig(
            mode=self.mode, seed=self.seed, tau_bound=self.tau_bound
        )
        self.run_ = Simulator(shards, algo, sched).run(budget=self.budget)
        self.coef_ = assemble_weights(self.run_.shards)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return X @ self.coef_

    def predict(self, X):
        scores = self.decision_function(X)
        return np.where(scores >= 0.0, self.classes_[1], self.classes_[0])

    def predict_proba(self, X):
        p1 = expit(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])
