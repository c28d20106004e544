"""Filtering, smoothing and prediction over a whole data series."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, DataError, DegeneracyError
from ..observation import ObservationSeries
from ..rates import Covariates
from .ensemble import (
    PREDICT,
    EngineConfig,
    Ensemble,
    StepDiagnostics,
    auxiliary_step,
    init_ensemble,
    step,
    stream,
    trajectories,
)

QUANTILES = (0.025, 0.975)


def weighted_quantile(x: np.ndarray, w: np.ndarray, q: float) -> np.ndarray:
    """Inverse-CDF quantile of each column of ``x`` (shape ``(R, ...)``) under weights ``w``."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(x.shape[0], -1)
    order = np.argsort(flat, axis=0, kind="stable")
    cdf = np.cumsum(w[order], axis=0)
    cdf /= cdf[-1]
    pos = np.argmax(cdf >= q - 1e-12, axis=0)
    cols = np.arange(flat.shape[1])
    out = flat[order[pos, cols], cols]
    return out.reshape(x.shape[1:])


@dataclass
class Summary:
    """Weighted mean and 2.5/97.5 percentiles, stacked over years."""

    years: list
    labels: list
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def of(cls, years, labels, samples: Sequence[np.ndarray], weights: Sequence[np.ndarray]) -> "Summary":
        means, lo, hi = [], [], []
        for x, w in zip(samples, weights):
            x = np.asarray(x, dtype=float)
            # Clipping to the particle range removes round-off when every particle agrees.
            means.append(np.clip(w @ x, x.min(axis=0), x.max(axis=0)) if x.size else np.zeros(x.shape[1:]))
            lo.append(weighted_quantile(x, w, QUANTILES[0]) if x.size else np.zeros(x.shape[1:]))
            hi.append(weighted_quantile(x, w, QUANTILES[1]) if x.size else np.zeros(x.shape[1:]))
        shape = (len(years), len(labels))
        return cls(list(years), list(labels), np.array(means).reshape(shape), np.array(lo).reshape(shape),
                   np.array(hi).reshape(shape))

    def at(self, year: int) -> "Summary":
        i = self.years.index(year)
        return Summary([year], self.labels, self.mean[i:i + 1], self.lower[i:i + 1], self.upper[i:i + 1])

    def to_dict(self) -> dict:
        return {"years": [int(y) for y in self.years], "labels": list(self.labels), "mean": _jsonable(self.mean),
                "q2.5": _jsonable(self.lower), "q97.5": _jsonable(self.upper)}

    def rows(self):
        for i, year in enumerate(self.years):
            for j, label in enumerate(self.labels):
                yield int(year), label, self.mean[i, j], self.lower[i, j], self.upper[i, j]

    def to_csv(self, path, label_column: str = "cell") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["year", label_column, "mean", "q2.5", "q97.5"])
            for year, label, m, lo, hi in self.rows():
                w.writerow([year, label, repr(float(m)), repr(float(lo)), repr(float(hi))])


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def tool_version() -> str:
    from .. import __version__
    return __version__


def _model_dict(model) -> dict:
    from ..config import model_to_dict
    from ..model import PopulationModel
    if isinstance(model, PopulationModel):
        return model_to_dict(model)
    if hasattr(model, "to_dict"):
        return model.to_dict()
    return {"name": getattr(model, "name", type(model).__name__)}


def _series_values(ens: Ensemble) -> np.ndarray:
    """Expected observed series per particle, ``(R, m)``."""
    m = len(ens.models[0].observed_names)
    out = np.zeros((ens.size, m))
    for k, model in enumerate(ens.models):
        sel = np.flatnonzero(ens.model_index == k)
        if sel.size and m:
            out[sel] = model.expected_observation(ens.state[sel], ens.theta_for(k, sel))
    return out


def _param_summary(ens: Ensemble, w: np.ndarray) -> dict:
    out = {}
    for name, v in ens.theta.items():
        ok = ~np.isnan(v)
        if not ok.any() or w[ok].sum() <= 0:
            continue
        ww = w[ok] / w[ok].sum()
        x = v[ok]
        out[name] = {"mean": float(ww @ x), "sd": float(np.sqrt(max(ww @ (x - ww @ x) ** 2, 0.0))),
                     "q2.5": float(weighted_quantile(x[:, None], ww, QUANTILES[0])[0]),
                     "q97.5": float(weighted_quantile(x[:, None], ww, QUANTILES[1])[0])}
    return out


@dataclass
class FitResult:
    """Posterior summaries of one filtering run.

    ``filtered`` and ``smoothed`` summarize every cell per year (the first
    row is the start year). ``log_marginal_likelihood`` is keyed by model
    name; ``aic`` holds the approximate score ``-2 max loglik + 2 dim``.
    """

    model_names: list
    years: list
    filtered: Summary
    filtered_series: Summary
    smoothed: Summary | None
    params: dict
    log_marginal_likelihood: dict
    model_probabilities: dict
    aic: dict
    diagnostics: list
    config: EngineConfig
    ensemble: Ensemble = field(repr=False)
    prior_weights: list = field(default_factory=list)
    models_config: list = field(default_factory=list, repr=False)

    @property
    def last_year(self) -> int:
        return self.years[-1]

    @property
    def posterior_theta(self) -> dict:
        return self.ensemble.theta

    @property
    def weights(self) -> np.ndarray:
        return self.ensemble.weights

    def to_dict(self) -> dict:
        return _jsonable({
            "tool": "popkit",
            "version": tool_version(),
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "models": self.models_config,
            "prior_weights": self.prior_weights,
            "years": self.years,
            "filtered": self.filtered.to_dict(),
            "filtered_series": self.filtered_series.to_dict(),
            "smoothed": None if self.smoothed is None else self.smoothed.to_dict(),
            "parameters": self.params,
            "log_marginal_likelihood": self.log_marginal_likelihood,
            "model_probabilities": self.model_probabilities,
            "aic": self.aic,
            "diagnostics": [d.to_dict(self.model_names) for d in self.diagnostics],
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _as_models(models):
    if not isinstance(models, (list, tuple)):
        models = [models]
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ConfigError("models compared together need distinct names")
    return list(models)


def _check_covariates(models, covariates, years):
    needed = sorted(set().union(*(getattr(m, "covariate_names", lambda: set())() for m in models)))
    if needed:
        cov = Covariates(covariates or {})
        cov.require_years(needed, years)


def run_filter(models, data: ObservationSeries | None = None, config: EngineConfig | None = None,
               prior_weights: Sequence[float] | None = None, covariates: Mapping | None = None) -> FitResult:
    """Sequential importance sampling over the models' horizon.

    Several models are averaged: each particle carries a model index drawn
    from ``prior_weights``, and the posterior model probabilities are
    proportional to prior weight times the estimated marginal likelihood.
    """
    config = config or EngineConfig()
    models = _as_models(models)
    first = models[0]
    years = list(first.years)
    if data is not None:
        outside = sorted(set(int(y) for y in data.years) - set(years))
        if outside:
            raise DataError(f"data years {outside} lie outside the model horizon {years[0] if years else '-'}..{years[-1] if years else '-'}")
        data = data.reorder(first.observed_names)
    _check_covariates(models, covariates, years)
    cov = None if covariates is None else Covariates(covariates)
    ens = init_ensemble(models, prior_weights, config, cov)
    step_fn = auxiliary_step if config.auxiliary else step
    snapshots = [(ens.state, ens.weights, _series_values(ens))]
    diagnostics: list[StepDiagnostics] = []
    for year in years:
        obs = None if data is None else data.at(year)
        try:
            ens, diag = step_fn(ens, year, obs, config)
        except DegeneracyError as exc:
            raise DegeneracyError(f"{exc} (year {year}); increase the particle count or widen the priors",
                                  year=year) from exc
        diagnostics.append(diag)
        snapshots.append((ens.state, ens.weights, _series_values(ens)))
    all_years = [first.start_year] + years
    cells = first.schema.cell_names()
    filtered = Summary.of(all_years, cells, [s[0] for s in snapshots], [s[1] for s in snapshots])
    series = Summary.of(all_years, first.observed_names, [s[2] for s in snapshots], [s[1] for s in snapshots])
    smoothed = None
    w = ens.weights
    if config.smoothing:
        _, paths = trajectories(ens)
        smoothed = Summary.of(all_years, cells, [paths[:, i] for i in range(paths.shape[1])], [w] * paths.shape[1])
    names = [m.name for m in models]
    log_ml = {n: float(v) for n, v in zip(names, ens.log_evidence)}
    pw = np.asarray(ens.prior_weights)
    with np.errstate(divide="ignore"):
        lp = np.log(pw) + ens.log_evidence
    if np.any(np.isfinite(lp)):
        lp = lp - np.max(lp[np.isfinite(lp)])
        p = np.where(np.isfinite(lp), np.exp(lp), 0.0)
        p /= p.sum()
    else:
        p = np.full(len(models), np.nan)
    aic = {}
    for k, model in enumerate(models):
        sel = ens.model_index == k
        dim = len(model.free_params) if hasattr(model, "free_params") else len(model.transforms())
        aic[model.name] = float(-2.0 * np.max(ens.loglik[sel]) + 2.0 * dim) if sel.any() else math.inf
    return FitResult(
        model_names=names, years=all_years, filtered=filtered, filtered_series=series, smoothed=smoothed,
        params=_param_summary(ens, w), log_marginal_likelihood=log_ml,
        model_probabilities={n: float(v) for n, v in zip(names, p)}, aic=aic, diagnostics=diagnostics,
        config=config, ensemble=ens, prior_weights=[float(v) for v in pw],
        models_config=[_model_dict(m) for m in models],
    )


@dataclass
class Prediction:
    years: list
    states: Summary
    series: Summary
    seed: int
    scenario: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable({"tool": "popkit", "version": tool_version(), "seed": self.seed, "scenario": self.scenario,
                          "states": self.states.to_dict(), "series": self.series.to_dict()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def predict(fit: FitResult, year: int, covariates: Mapping | None = None, params: Mapping[str, float] | None = None,
            seed: int | None = None, mode: str | None = None) -> Prediction:
    """Propagate the posterior particles from the last fitted year to ``year`` without reweighting.

    ``covariates`` override the fitted covariate streams (a scenario);
    ``params`` pins parameters to fixed values for every particle, for
    example a harvest rate. Summaries include the last fitted year itself.
    """
    T = fit.last_year
    if year < T:
        raise ConfigError(f"prediction year {year} precedes the last fitted year {T}")
    seed = fit.config.seed if seed is None else int(seed)
    ens = fit.ensemble
    future = list(range(T + 1, year + 1))
    cov = Covariates(ens.covariates or {}).override(covariates)
    _check_covariates(ens.models, cov, future)
    theta = {k: v.copy() for k, v in ens.theta.items()}
    for name, value in (params or {}).items():
        if name not in theta:
            raise ConfigError(f"scenario sets unknown parameter {name!r}")
        theta[name] = np.where(np.isnan(theta[name]), np.nan, float(value))
    ens = dataclasses.replace(ens, theta=theta, covariates=cov, history=None)
    w = ens.weights
    snaps = [(ens.state, _series_values(ens))]
    memory = ens.memory
    cfg = dataclasses.replace(fit.config, seed=seed)
    for t in future:
        state = np.empty_like(ens.state, dtype=float if mode == "expectation" else ens.state.dtype)
        rng_blocks = range(0, ens.size, cfg.block_size)
        new_mem: dict = {}
        for b, s in enumerate(rng_blocks):
            idx = np.arange(s, min(s + cfg.block_size, ens.size))
            rng = stream(seed, PREDICT, t, b)
            for k, model in enumerate(ens.models):
                loc = np.flatnonzero(ens.model_index[idx] == k)
                if loc.size == 0:
                    continue
                sel = idx[loc]
                mem = {key: v[sel] for key, v in memory.items()}
                x, mem = model.propagate(ens.state[sel], ens.theta_for(k, sel), t, rng, cov, mem, mode=mode)
                state[sel] = x
                for key, v in mem.items():
                    new_mem.setdefault(key, np.full(ens.size, np.nan))[sel] = v
        memory = new_mem
        ens = dataclasses.replace(ens, state=state, memory=memory, year=t)
        snaps.append((ens.state, _series_values(ens)))
    first = ens.models[0]
    yrs = [T] + future
    states = Summary.of(yrs, first.schema.cell_names(), [s[0] for s in snaps], [w] * len(snaps))
    series = Summary.of(yrs, first.observed_names, [s[1] for s in snaps], [w] * len(snaps))
    scenario = {"covariates": sorted(covariates or {}), "params": dict(params or {})}
    return Prediction(yrs, states, series, seed, scenario)
