"""Input validation helpers shared by the estimator API and the CLI."""
from __future__ import annotations

import numbers
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .observation import ObservationSeries


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_fraction(value, name: str, low: float = 0.0, high: float = 1.0, open_low: bool = False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not (low < v if open_low else low <= v) or v > high:
        raise ConfigError(f"{name} must lie in {'(' if open_low else '['}{low}, {high}], got {v}")
    return v


def check_prior_weights(weights, n_models: int) -> np.ndarray:
    if weights is None:
        return np.full(n_models, 1.0 / n_models)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (n_models,):
        raise ConfigError(f"expected {n_models} prior model weights, got {w.size}")
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
        raise ConfigError("prior model weights must be non-negative and sum to one")
    return w


def check_observations(X, model, years: Sequence[int] | None = None) -> ObservationSeries:
    """Coerce ``X`` to an ``ObservationSeries`` aligned with ``model``.

    Accepts an ``ObservationSeries`` or an array of shape ``(T, m)`` whose
    rows are the model's projected years in order (NaN = missing).
    """
    names = list(model.observed_names)
    if isinstance(X, ObservationSeries):
        return X.reorder(names)
    if X is None:
        return ObservationSeries([], names, np.zeros((0, len(names))))
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    years = list(model.years if years is None else years)
    if arr.ndim != 2 or arr.shape[1] != len(names):
        raise DataError(f"observations must have shape (T, {len(names)}), got {arr.shape}")
    if arr.shape[0] > len(years):
        raise DataError(f"{arr.shape[0]} rows of observations but the model projects {len(years)} years")
    return ObservationSeries(years[:arr.shape[0]], names, arr)


def parse_assignments(items: Sequence[str] | Mapping | None) -> dict[str, float]:
    """``["a=1", "b=0.5"]`` -> ``{"a": 1.0, "b": 0.5}``."""
    if items is None:
        return {}
    if isinstance(items, Mapping):
        return {str(k): float(v) for k, v in items.items()}
    out = {}
    for item in items:
        key, sep, value = str(item).partition("=")
        if not sep or not key:
            raise ConfigError(f"expected name=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"value for {key!r} is not a number: {value!r}") from None
    return out
