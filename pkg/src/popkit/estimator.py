"""scikit-learn style wrapper around the particle filter."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError
from .smc import EngineConfig, predict, run_filter
from .validation import check_fraction, check_observations, check_positive_int, check_prior_weights


class SISEstimator(BaseEstimator):
    """Bayesian fit of one or more population models to an observation series.

    ``fit`` runs the filter; ``transform`` returns per-year state means
    (smoothed when ``smoothing=True``); ``predict`` projects expected
    observed series forward; ``score`` is the log marginal likelihood.

    Examples
    --------
    >>> est = SISEstimator(model, n_particles=5000, seed=1).fit(y)  # doctest: +SKIP
    >>> est.params_["lam"]["mean"]  # doctest: +SKIP
    """

    def __init__(self, models=None, n_particles: int = 1000, resampling: str = "systematic",
                 ess_threshold: float = 0.5, kernel_shrinkage: float | None = 0.98, auxiliary: bool = False,
                 smoothing: bool = False, seed: int = 0, n_workers: int = 1, prior_weights=None,
                 covariates=None):
        self.models = models
        self.n_particles = n_particles
        self.resampling = resampling
        self.ess_threshold = ess_threshold
        self.kernel_shrinkage = kernel_shrinkage
        self.auxiliary = auxiliary
        self.smoothing = smoothing
        self.seed = seed
        self.n_workers = n_workers
        self.prior_weights = prior_weights
        self.covariates = covariates

    def _models(self):
        if self.models is None:
            raise ConfigError("SISEstimator needs a model")
        return list(self.models) if isinstance(self.models, (list, tuple)) else [self.models]

    def _config(self) -> EngineConfig:
        check_positive_int(self.n_particles, "n_particles")
        check_fraction(self.ess_threshold, "ess_threshold")
        if self.kernel_shrinkage is not None:
            check_fraction(self.kernel_shrinkage, "kernel_shrinkage", open_low=True)
        return EngineConfig(n_particles=self.n_particles, resampling=self.resampling,
                            ess_threshold=self.ess_threshold, kernel_shrinkage=self.kernel_shrinkage,
                            auxiliary=self.auxiliary, smoothing=self.smoothing, seed=self.seed,
                            n_workers=self.n_workers)

    def fit(self, X, y=None):
        """``X``: ``ObservationSeries`` or ``(T, m)`` array of observations."""
        models = self._models()
        data = check_observations(X, models[0])
        weights = check_prior_weights(self.prior_weights, len(models))
        self.fit_result_ = run_filter(models, data, self._config(), weights, self.covariates)
        self.n_features_in_ = len(models[0].observed_names)
        self.params_ = self.fit_result_.params
        self.log_marginal_likelihood_ = self.fit_result_.log_marginal_likelihood
        self.model_probabilities_ = self.fit_result_.model_probabilities
        return self

    def transform(self, X=None):
        """State means per year, shape ``(T + 1, D)``."""
        check_is_fitted(self, "fit_result_")
        fit = self.fit_result_
        return (fit.smoothed if fit.smoothed is not None else fit.filtered).mean.copy()

    def predict(self, X, covariates=None, params=None):
        """Expected observed series for years up to ``X`` (an int year), shape ``(k, m)``."""
        check_is_fitted(self, "fit_result_")
        year = int(np.asarray(X).reshape(-1)[-1])
        pred = predict(self.fit_result_, year, covariates=covariates, params=params, seed=self.seed)
        return pred.series.mean[1:] if year > self.fit_result_.last_year else pred.series.mean

    def score(self, X, y=None) -> float:
        """Log marginal likelihood of ``X`` under the model mixture."""
        models = self._models()
        data = check_observations(X, models[0])
        weights = check_prior_weights(self.prior_weights, len(models))
        fit = run_filter(models, data, self._config(), weights, self.covariates)
        lml = np.array([fit.log_marginal_likelihood[m.name] for m in models])
        with np.errstate(divide="ignore"):
            return float(np.logaddexp.reduce(np.log(weights) + lml))
