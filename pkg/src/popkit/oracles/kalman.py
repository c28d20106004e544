"""Kalman filter and a linear-Gaussian model that also runs through the particle engine."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError
from ..schema import StateSchema

_LOG_2PI = np.log(2 * np.pi)


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float).reshape(self.mean.size, self.mean.size)

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()


@dataclass
class KalmanResult:
    years: list
    filtered: list
    predicted: list
    loglik: float
    loglik_by_year: list
    jitter: list = field(default_factory=list)

    def at(self, year: int) -> GaussianBelief:
        return self.filtered[self.years.index(year)]


def _at(value, year):
    v = value(year) if callable(value) else value
    return np.asarray(v, dtype=float)


def _psd(P: np.ndarray, year, report: list, floor: float = -1e-9) -> np.ndarray:
    P = 0.5 * (P + P.T)
    lo = np.linalg.eigvalsh(P).min() if P.size else 0.0
    if lo < floor:
        eps = -lo + 1e-12
        P = P + eps * np.eye(P.shape[0])
        report.append((year, float(eps)))
    return P


def kalman_filter(transition, process_cov, obs_matrix, obs_cov, data, m0, P0, years=None) -> KalmanResult:
    """Predict/update recursion with exact Gaussian log likelihood.

    ``transition`` and ``process_cov`` are ``(D, D)`` arrays or callables of
    the year. ``obs_matrix`` is ``(m, D)``; ``obs_cov`` is ``(m, m)`` or a
    vector of variances. ``data`` is an ``ObservationSeries`` or a mapping
    year -> ``y``; NaN entries are skipped. Covariances that lose positive
    semidefiniteness numerically are symmetrized and jittered; each
    correction is listed in ``jitter`` as ``(year, amount)``.
    """
    m = np.asarray(m0, dtype=float).reshape(-1)
    P = np.asarray(P0, dtype=float).reshape(m.size, m.size)
    H = np.atleast_2d(np.asarray(obs_matrix, dtype=float))
    if H.shape[1] != m.size:
        raise ConfigError(f"observation matrix has {H.shape[1]} columns, state has {m.size}")
    if years is None:
        if data is None or not hasattr(data, "years"):
            raise ConfigError("kalman_filter needs years when data has none")
        years = list(data.years)
    filtered, predicted, lls, jitter = [], [], [], []
    for year in years:
        F = _at(transition, year)
        m = F @ m
        P = _psd(F @ P @ F.T + _at(process_cov, year), year, jitter)
        predicted.append(GaussianBelief(m, P))
        y = _observation(data, year)
        ll = 0.0
        if y is not None:
            ok = ~np.isnan(y)
            if ok.any():
                Rv = _at(obs_cov, year)
                Rv = np.diag(Rv) if Rv.ndim == 1 else Rv
                Ho, Ro = H[ok], Rv[np.ix_(ok, ok)]
                resid = y[ok] - Ho @ m
                S = Ho @ P @ Ho.T + Ro
                S = 0.5 * (S + S.T)
                L = np.linalg.cholesky(S)
                z = np.linalg.solve(L, resid)
                ll = float(-0.5 * (ok.sum() * _LOG_2PI + 2 * np.log(np.diag(L)).sum() + z @ z))
                K = np.linalg.solve(S, Ho @ P).T
                m = m + K @ resid
                I_KH = np.eye(m.size) - K @ Ho
                P = _psd(I_KH @ P @ I_KH.T + K @ Ro @ K.T, year, jitter)
        lls.append(ll)
        filtered.append(GaussianBelief(m, P))
    return KalmanResult(list(years), filtered, predicted, float(sum(lls)), lls, jitter)


def _observation(data, year):
    if data is None:
        return None
    if hasattr(data, "at"):
        got = data.at(year)
        return None if got is None else np.asarray(got[0], dtype=float)
    if year in data:
        return np.asarray(data[year], dtype=float).reshape(-1)
    return None


class LinearGaussianModel:
    """``n_t = F n_{t-1} + e_t``, ``y_t = H n_t + v_t`` with Gaussian ``e`` and ``v``.

    Offers the same sampling interface as ``PopulationModel`` so the particle
    engine can fit it, and :meth:`kalman` runs the exact filter on it.
    States are real valued and unconstrained.
    """

    integer = False
    mode = "normal"
    param_names: list = []
    free_params: list = []

    def __init__(self, transition, process_cov, obs_matrix, obs_cov, m0, P0, start_year: int = 0,
                 horizon: int = 1, name: str = "linear_gaussian", series_names=None):
        self.transition = transition
        self.process_cov = process_cov
        self.obs_matrix = np.atleast_2d(np.asarray(obs_matrix, dtype=float))
        self.obs_cov = obs_cov
        self.m0 = np.asarray(m0, dtype=float).reshape(-1)
        self.P0 = np.asarray(P0, dtype=float).reshape(self.m0.size, self.m0.size)
        self.start_year = int(start_year)
        self.horizon = int(horizon)
        self.name = name
        D, k = self.m0.size, self.obs_matrix.shape[0]
        if self.obs_matrix.shape[1] != D:
            raise ConfigError("observation matrix does not match the state dimension")
        self.schema = StateSchema.from_dict({"cell": [str(i) for i in range(D)]})
        self._series = list(series_names or [f"y{j}" for j in range(k)])
        if len(self._series) != k:
            raise ConfigError("series_names must match the rows of the observation matrix")

    @property
    def years(self) -> list[int]:
        return list(range(self.start_year + 1, self.start_year + self.horizon + 1))

    @property
    def observed_names(self) -> list[str]:
        return list(self._series)

    def covariate_names(self) -> set:
        return set()

    def transforms(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": "linear_gaussian", "dim": int(self.m0.size),
                "start_year": self.start_year, "horizon": self.horizon}

    def sample_prior(self, size: int, rng) -> dict:
        return {}

    def sample_initial(self, theta, rng, size: int | None = None) -> np.ndarray:
        size = 1 if size is None else size
        return rng.multivariate_normal(self.m0, self.P0, size=size, method="cholesky")

    def propagate(self, state, theta, year, rng, covariates=None, memory=None, mode=None):
        x = np.atleast_2d(np.asarray(state, dtype=float)) @ _at(self.transition, year).T
        if mode != "expectation":
            Q = _at(self.process_cov, year)
            if np.any(Q):
                x = x + rng.multivariate_normal(np.zeros(x.shape[1]), Q, size=x.shape[0], method="cholesky")
        return x, dict(memory or {})

    def _obs_cov(self, year):
        Rv = _at(self.obs_cov, year)
        return np.diag(Rv) if Rv.ndim == 1 else Rv

    def expected_observation(self, state, theta) -> np.ndarray:
        return np.atleast_2d(np.asarray(state, dtype=float)) @ self.obs_matrix.T

    def log_likelihood(self, y, state, theta=None, year=None, variances=None) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.obs_matrix.shape[0]:
            raise DataError(f"observation has {y.size} entries, model expects {self.obs_matrix.shape[0]}")
        ok = ~np.isnan(y)
        n = np.atleast_2d(state)
        if not ok.any():
            return np.zeros(n.shape[0])
        Rv = self._obs_cov(year)[np.ix_(ok, ok)]
        resid = y[ok] - self.expected_observation(n, theta)[:, ok]
        L = np.linalg.cholesky(Rv)
        z = np.linalg.solve(L, resid.T)
        return -0.5 * (ok.sum() * _LOG_2PI + 2 * np.log(np.diag(L)).sum() + np.sum(z * z, axis=0))

    def simulate(self, rng, years=None):
        """One trajectory and its observations: ``(states (T+1, D), obs (T, m))``."""
        years = self.years if years is None else list(years)
        x = self.sample_initial({}, rng)
        states, obs = [x[0]], []
        for year in years:
            x, _ = self.propagate(x, {}, year, rng)
            states.append(x[0])
            Rv = self._obs_cov(year)
            obs.append(self.expected_observation(x, {})[0] + rng.multivariate_normal(np.zeros(len(Rv)), Rv))
        return np.array(states), np.array(obs)

    def kalman(self, data, years=None) -> KalmanResult:
        return kalman_filter(self.transition, self.process_cov, self.obs_matrix, self._obs_cov, data,
                             self.m0, self.P0, self.years if years is None else years)
