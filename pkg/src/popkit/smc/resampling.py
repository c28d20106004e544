"""Weight normalization, effective sample size and resampling schemes."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..errors import DegeneracyError

SCHEMES = ("multinomial", "systematic", "residual")


def normalize_log_weights(log_w: np.ndarray):
    """Return ``(w, log_sum)`` with ``w = exp(log_w - log_sum)`` summing to one.

    Raises ``DegeneracyError`` when every weight is zero.
    """
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0 or not np.any(np.isfinite(log_w)):
        raise DegeneracyError("all particle weights are zero")
    log_sum = logsumexp(log_w)
    w = np.exp(log_w - log_sum)
    return w / w.sum(), float(log_sum)


def ess(w: np.ndarray) -> float:
    """Effective sample size ``1 / sum(w**2)`` of normalized weights."""
    w = np.asarray(w, dtype=float)
    return float(1.0 / np.sum(w**2))


def _check(w):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    return w / total


def _inverse_cdf(w, u):
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)


def resample(weights, scheme: str = "systematic", rng: np.random.Generator | None = None,
             n: int | None = None) -> np.ndarray:
    """Ancestor indices (sorted) drawn from ``weights``.

    ``residual`` keeps ``floor(n * w_r)`` copies of each particle and fills the
    remainder multinomially from the residual weights; ``systematic`` uses one
    uniform offset and a regular grid. All three are unbiased:
    ``E[copies_r] = n * w_r``.
    """
    w = _check(weights)
    n = w.size if n is None else int(n)
    if rng is None:
        rng = np.random.default_rng()
    if scheme == "multinomial":
        idx = _inverse_cdf(w, rng.random(n))
    elif scheme == "systematic":
        idx = _inverse_cdf(w, (rng.random() + np.arange(n)) / n)
    elif scheme == "residual":
        copies = np.floor(n * w).astype(np.int64)
        rest = n - int(copies.sum())
        idx = np.repeat(np.arange(w.size), copies)
        if rest > 0:
            resid = n * w - copies
            idx = np.concatenate([idx, _inverse_cdf(resid / resid.sum(), rng.random(rest))])
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}; choose from {SCHEMES}")
    return np.sort(idx)


def copies(ancestors: np.ndarray, n: int) -> np.ndarray:
    """Number of offspring of each of ``n`` particles."""
    return np.bincount(ancestors, minlength=n)
