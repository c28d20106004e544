"""Kernel smoothing of static-parameter particles (shrink-and-jitter).

Each parameter vector is pulled towards the ensemble mean and jittered:
``theta' = a * theta + (1 - a) * mean + N(0, (1 - a**2) * V)``. With weights
``w`` for the mean and covariance ``V`` this keeps the first two moments of
the ensemble unchanged in expectation while spreading duplicated particles.
"""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import DegeneracyError


def kernel_smooth_params(theta: np.ndarray, shrinkage: float, rng: np.random.Generator,
                         weights: np.ndarray | None = None) -> np.ndarray:
    """Jittered copy of ``theta`` (shape ``(R, p)``).

    A singular covariance falls back to its diagonal with a warning. A point
    mass (zero variance in every component) cannot be smoothed and raises
    ``DegeneracyError``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    a = float(shrinkage)
    if not 0.0 < a <= 1.0:
        raise ValueError("shrinkage must lie in (0, 1]")
    if a == 1.0:
        return theta.copy()
    R, p = theta.shape
    w = np.full(R, 1.0 / R) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    mean = w @ theta
    centred = theta - mean
    V = (centred * w[:, None]).T @ centred
    if np.all(np.diag(V) <= 1e-24 * np.maximum(1.0, mean**2)):
        raise DegeneracyError("parameter ensemble is a point mass; kernel smoothing needs spread")
    try:
        L = np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        warnings.warn("singular parameter covariance; jittering with its diagonal", RuntimeWarning, stacklevel=2)
        L = np.diag(np.sqrt(np.maximum(np.diag(V), 0.0)))
    noise = rng.standard_normal((R, p)) @ L.T
    return a * theta + (1.0 - a) * mean + np.sqrt(1.0 - a**2) * noise
