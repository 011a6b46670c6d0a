"""Closed-form reference quantities for the least-squares objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..data import FederatedDataset
from ..numerics import frobenius_norm_sq

log = logging.getLogger(__name__)


def global_loss(dataset: FederatedDataset, w: np.ndarray) -> float:
    """f(W) = 1/2 ||X W - Y||_F^2."""
    return 0.5 * frobenius_norm_sq(dataset.features @ w - dataset.labels)


def global_gradient(dataset: FederatedDataset, w: np.ndarray) -> np.ndarray:
    x = dataset.features
    return x.T @ (x @ w - dataset.labels)


def local_gradient(dataset: FederatedDataset, client: int, w: np.ndarray) -> np.ndarray:
    xi, yi = dataset.client(client)
    return xi.T @ (xi @ w - yi)


@dataclass(frozen=True)
class Optimum:
    w_star: np.ndarray
    f_star: float
    ridge: float
    regularized: bool  # True when the ridge fallback kicked in


def least_squares_optimum(dataset: FederatedDataset, ridge: float = 0.0) -> Optimum:
    """Solve (X^T X + ridge I) W = X^T Y directly.

    A singular system with ``ridge == 0`` is retried once with
    ``ridge = 1e-8 * trace(X^T X) / d`` and the result is flagged.
    """
    x, y = dataset.features, dataset.labels
    gram = x.T @ x
    rhs = x.T @ y
    d = gram.shape[0]
    regularized = False
    try:
        if ridge == 0.0 and np.linalg.matrix_rank(gram) < d:
            raise np.linalg.LinAlgError("singular normal equations")
        w = np.linalg.solve(gram + ridge * np.eye(d), rhs)
    except np.linalg.LinAlgError:
        if ridge != 0.0:
            raise
        ridge = 1e-8 * float(np.trace(gram)) / d
        if ridge == 0.0:
            ridge = 1e-8
        regularized = True
        log.warning("normal equations singular; retrying with ridge=%g", ridge)
        w = np.linalg.solve(gram + ridge * np.eye(d), rhs)
    return Optimum(w, global_loss(dataset, w), ridge, regularized)


def optimality_gap(dataset: FederatedDataset, w_avg: np.ndarray, f_star: float) -> float:
    return global_loss(dataset, w_avg) - f_star
