"""Particle ensembles and the sequential importance sampling step.

Particles carry a model index (for model averaging), a parameter draw, the
current state and any autoregressive random-effect memory. Random streams
are derived from ``(seed, stage, year, block)``: particles are processed in
fixed-size blocks, each with its own stream, so results do not depend on how
many worker threads process the blocks.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ..errors import ConfigError, DegeneracyError
from .kernel import kernel_smooth_params
from .resampling import SCHEMES, ess, normalize_log_weights, resample

# stream stages
INIT, PROPAGATE, RESAMPLE, JITTER, LOOKAHEAD, PREDICT = range(6)

_LOOKAHEAD_FLOOR = 30.0


@dataclass
class EngineConfig:
    """Sequential importance sampling settings.

    ``ess_threshold`` triggers resampling when ``ESS < ess_threshold * R``;
    1.0 resamples whenever the weights are not exactly uniform (pure
    bootstrap). ``kernel_shrinkage`` of ``None`` or 1.0 disables kernel
    smoothing of parameters.
    """

    n_particles: int = 1000
    resampling: str = "systematic"
    ess_threshold: float = 0.5
    kernel_shrinkage: float | None = 0.98
    auxiliary: bool = False
    smoothing: bool = False
    seed: int = 0
    n_workers: int = 1
    block_size: int = 4096

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigError("n_particles must be at least 1")
        if self.resampling not in SCHEMES:
            raise ConfigError(f"resampling must be one of {SCHEMES}")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ConfigError("ess_threshold must lie in [0, 1]")
        if self.kernel_shrinkage is not None and not 0.0 < self.kernel_shrinkage <= 1.0:
            raise ConfigError("kernel_shrinkage must lie in (0, 1]")
        if self.n_workers < 1 or self.block_size < 1:
            raise ConfigError("n_workers and block_size must be positive")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("n_workers")
        return d


def stream(seed: int, stage: int, year: int = 0, block: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stage, int(year) & 0xFFFFFFFF, block))
    return np.random.default_rng(ss)


@dataclass
class Ensemble:
    models: tuple
    prior_weights: np.ndarray
    model_index: np.ndarray
    theta: dict
    state: np.ndarray
    log_weights: np.ndarray
    loglik: np.ndarray
    memory: dict = field(default_factory=dict)
    year: int = 0
    log_evidence: np.ndarray | None = None
    covariates: object = None
    history: list | None = None

    @property
    def size(self) -> int:
        return self.state.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)[0]

    def theta_for(self, m: int, sel) -> dict:
        return {k: self.theta[k][sel] for k in self.models[m].param_names}

    def take(self, idx: np.ndarray) -> "Ensemble":
        """Particles ``idx`` with their weights dropped to uniform."""
        return dataclasses.replace(
            self,
            model_index=self.model_index[idx],
            theta={k: v[idx] for k, v in self.theta.items()},
            state=self.state[idx],
            log_weights=np.zeros(idx.size),
            loglik=self.loglik[idx],
            memory={k: v[idx] for k, v in self.memory.items()},
        )


@dataclass
class StepDiagnostics:
    year: int
    weights: np.ndarray
    ess: float
    log_incremental: float
    log_incremental_by_model: np.ndarray
    resampled: bool
    unique_ancestors: int
    observed: bool

    def to_dict(self, model_names: Sequence[str] = ()) -> dict:
        return {
            "year": int(self.year),
            "observed": bool(self.observed),
            "ess": float(self.ess),
            "log_incremental": float(self.log_incremental),
            "log_incremental_by_model": {n: float(v) for n, v in zip(model_names, self.log_incremental_by_model)},
            "resampled": bool(self.resampled),
            "unique_ancestors": int(self.unique_ancestors),
        }


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def _blocks(R: int, size: int):
    return [np.arange(s, min(s + size, R)) for s in range(0, R, size)]


def _map(fn, items, n_workers):
    if n_workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def _check_models(models):
    if not models:
        raise ConfigError("need at least one model")
    D = models[0].schema.size
    names = models[0].observed_names
    for m in models[1:]:
        if m.schema.size != D:
            raise ConfigError("models averaged together must share the state dimension")
        if m.observed_names != names:
            raise ConfigError("models averaged together must observe the same series")
        if (m.start_year, m.horizon) != (models[0].start_year, models[0].horizon):
            raise ConfigError("models averaged together must share start year and horizon")
        if m.integer != models[0].integer:
            raise ConfigError("models averaged together must share integer/real mode")


def init_ensemble(models: Sequence, prior_weights: Sequence[float] | None = None, config: EngineConfig | None = None,
                  covariates=None) -> Ensemble:
    """Draw ``R`` particles from the joint prior over (model, theta, n0)."""
    config = config or EngineConfig()
    models = tuple(models)
    _check_models(models)
    M = len(models)
    pw = np.full(M, 1.0 / M) if prior_weights is None else np.asarray(prior_weights, dtype=float)
    if pw.shape != (M,) or np.any(pw < 0) or not np.isclose(pw.sum(), 1.0):
        raise ConfigError("prior model weights must be non-negative and sum to one")
    R = config.n_particles
    rng = stream(config.seed, INIT)
    model_index = np.sort(rng.choice(M, size=R, p=pw)) if M > 1 else np.zeros(R, dtype=int)
    names = sorted({k for m in models for k in m.param_names})
    theta = {k: np.full(R, np.nan) for k in names}
    D = models[0].schema.size
    integer = models[0].integer
    state = np.zeros((R, D), dtype=np.int64 if integer else float)
    for m, model in enumerate(models):
        sel = np.flatnonzero(model_index == m)
        if sel.size == 0:
            continue
        th = model.sample_prior(sel.size, rng)
        for k, v in th.items():
            theta[k][sel] = v
        try:
            state[sel] = model.sample_initial(th, rng, size=sel.size)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"cannot sample initial state of model {model.name!r}: {exc}") from exc
    hist = [(models[0].start_year, None, state.copy(), None)] if config.smoothing else None
    return Ensemble(models, pw, model_index, theta, state, np.zeros(R), np.zeros(R),
                    year=models[0].start_year, log_evidence=np.zeros(M), covariates=covariates, history=hist)


def _propagate(ens: Ensemble, year: int, config: EngineConfig, stage=PROPAGATE, mode=None, seed_offset=0):
    R = ens.size
    blocks = _blocks(R, config.block_size)

    def run(b, idx):
        rng = stream(config.seed + seed_offset, stage, year, b)
        out = np.empty((idx.size, ens.state.shape[1]), dtype=float if mode == "expectation" else ens.state.dtype)
        mem_out: dict = {}
        for m, model in enumerate(ens.models):
            loc = np.flatnonzero(ens.model_index[idx] == m)
            if loc.size == 0:
                continue
            sel = idx[loc]
            memory = {k: v[sel] for k, v in ens.memory.items()}
            x, memory = model.propagate(ens.state[sel], ens.theta_for(m, sel), year, rng,
                                        ens.covariates, memory, mode=mode)
            out[loc] = x
            for k, v in memory.items():
                mem_out.setdefault(k, np.full(idx.size, np.nan))[loc] = v
        return out, mem_out

    parts = _map(run, list(enumerate(blocks)), config.n_workers)
    state = np.concatenate([p[0] for p in parts]) if parts else ens.state.copy()
    keys = set(ens.memory) | {k for p in parts for k in p[1]}
    memory = {k: np.concatenate([p[1].get(k, np.full(b.size, np.nan)) for p, b in zip(parts, blocks)]) for k in keys}
    return state, memory


def _loglik(ens: Ensemble, state, y, variances, year, config: EngineConfig):
    blocks = _blocks(ens.size, config.block_size)

    def run(b, idx):
        out = np.empty(idx.size)
        for m, model in enumerate(ens.models):
            loc = np.flatnonzero(ens.model_index[idx] == m)
            if loc.size:
                sel = idx[loc]
                out[loc] = model.log_likelihood(y, state[sel], ens.theta_for(m, sel), year, variances)
        return out

    ll = np.concatenate(_map(run, list(enumerate(blocks)), config.n_workers))
    ll[np.isnan(ll)] = -np.inf
    return ll


def _by_model_lse(ens: Ensemble, values):
    out = np.full(len(ens.models), -np.inf)
    for m in range(len(ens.models)):
        sel = ens.model_index == m
        if sel.any():
            out[m] = logsumexp(values[sel])
    return out


def _model_increment(ens: Ensemble, new, prev):
    # A model whose particles all carry zero weight stays at -inf evidence.
    with np.errstate(invalid="ignore"):
        return np.nan_to_num(_by_model_lse(ens, new) - _by_model_lse(ens, prev), nan=-np.inf, posinf=np.inf,
                             neginf=-np.inf)


def _jitter(ens: Ensemble, year: int, config: EngineConfig) -> Ensemble:
    a = config.kernel_shrinkage
    if a is None or a >= 1.0:
        return ens
    rng = stream(config.seed, JITTER, year)
    theta = {k: v.copy() for k, v in ens.theta.items()}
    for m, model in enumerate(ens.models):
        priors = model.transforms()
        sel = np.flatnonzero(ens.model_index == m)
        if not priors or sel.size < 2:
            continue
        names = sorted(priors)
        z = np.column_stack([priors[k].to_unconstrained(theta[k][sel]) for k in names])
        try:
            z = kernel_smooth_params(z, a, rng)
        except DegeneracyError:
            continue
        for j, k in enumerate(names):
            theta[k][sel] = priors[k].from_unconstrained(z[:, j])
    return dataclasses.replace(ens, theta=theta)


def _record(ens: Ensemble, year, pre_anc, state, post_anc):
    if ens.history is None:
        return None
    return ens.history + [(year, pre_anc, state, post_anc)]


def step(ens: Ensemble, year: int, obs=None, config: EngineConfig | None = None):
    """Propagate every particle one year and weight by the observation.

    ``obs`` is ``None`` or ``(y, variances)``. Returns ``(ensemble, diagnostics)``.
    """
    config = config or EngineConfig()
    state, memory = _propagate(ens, year, config)
    ens = dataclasses.replace(ens, state=state, memory=memory, year=year)
    M = len(ens.models)
    if obs is None or np.all(np.isnan(obs[0])):
        w, _ = normalize_log_weights(ens.log_weights)
        ens = dataclasses.replace(ens, history=_record(ens, year, None, state, None))
        return ens, StepDiagnostics(year, w, ess(w), 0.0, np.zeros(M), False, ens.size, False)
    y, variances = obs
    ll = _loglik(ens, state, y, variances, year, config)
    if not np.any(np.isfinite(ll)):
        raise DegeneracyError(f"every particle has zero likelihood in year {year}", year=year)
    prev = ens.log_weights
    new = prev + ll
    inc_model = _model_increment(ens, new, prev)
    inc = logsumexp(new) - logsumexp(prev)
    w, _ = normalize_log_weights(new)
    n_eff = ess(w)
    ens = dataclasses.replace(ens, log_weights=_log(w), loglik=ens.loglik + ll,
                              log_evidence=ens.log_evidence + inc_model)
    resampled = config.ess_threshold >= 1.0 and not np.allclose(w, w[0]) or n_eff < config.ess_threshold * ens.size
    unique = ens.size
    post = None
    if resampled:
        post = resample(w, config.resampling, stream(config.seed, RESAMPLE, year), ens.size)
        unique = int(np.unique(post).size)
        hist = _record(ens, year, None, state, post)
        ens = ens.take(post)
        ens = dataclasses.replace(ens, history=hist)
        ens = _jitter(ens, year, config)
    else:
        ens = dataclasses.replace(ens, history=_record(ens, year, None, state, None))
    return ens, StepDiagnostics(year, w, n_eff, inc, inc_model, bool(resampled), unique, True)


def auxiliary_step(ens: Ensemble, year: int, obs=None, config: EngineConfig | None = None):
    """Auxiliary particle filter step.

    Particles are first resampled by their weight times the likelihood of
    ``y`` at their expected next state (the look-ahead), then propagated,
    then corrected by actual / look-ahead likelihood. Without an
    observation this is identical to :func:`step`.
    """
    config = config or EngineConfig()
    if obs is None or np.all(np.isnan(obs[0])):
        return step(ens, year, obs, config)
    y, variances = obs
    M = len(ens.models)
    look_state, _ = _propagate(ens, year, config, stage=LOOKAHEAD, mode="expectation")
    look = _loglik(ens, look_state, y, variances, year, config)
    if np.any(np.isfinite(look)):
        look = np.maximum(look, np.max(look) - _LOOKAHEAD_FLOOR)
    else:
        look = np.zeros(ens.size)
    prev = ens.log_weights
    first = prev + look
    first_model = _model_increment(ens, first, prev)
    first_all = logsumexp(first) - logsumexp(prev)
    w1, _ = normalize_log_weights(first)
    anc = resample(w1, config.resampling, stream(config.seed, RESAMPLE, year), ens.size)
    unique = int(np.unique(anc).size)
    look_anc = look[anc]
    hist_base = ens.history
    ens = ens.take(anc)
    ens = _jitter(ens, year, config)
    state, memory = _propagate(ens, year, config)
    ens = dataclasses.replace(ens, state=state, memory=memory, year=year)
    ll = _loglik(ens, state, y, variances, year, config)
    if not np.any(np.isfinite(ll)):
        raise DegeneracyError(f"every particle has zero likelihood in year {year}", year=year)
    second = ll - look_anc
    counts = np.array([np.sum(ens.model_index == m) for m in range(M)])
    with np.errstate(divide="ignore"):
        second_model = _by_model_lse(ens, second) - np.log(counts)
    inc_model = first_model + second_model
    inc = first_all + logsumexp(second) - np.log(ens.size)
    w, _ = normalize_log_weights(second)
    hist = None if hist_base is None else hist_base + [(year, anc, state, None)]
    ens = dataclasses.replace(ens, log_weights=_log(w), loglik=ens.loglik + ll,
                              log_evidence=ens.log_evidence + inc_model, history=hist)
    return ens, StepDiagnostics(year, w, ess(w), inc, inc_model, True, unique, True)


def trajectories(ens: Ensemble) -> tuple[list[int], np.ndarray]:
    """Ancestral state paths of the current particles, shape ``(R, T + 1, D)``."""
    if ens.history is None:
        raise ConfigError("trajectories need smoothing enabled")
    idx = np.arange(ens.size)
    years, out = [], []
    for year, pre, state, post in reversed(ens.history):
        j = idx if post is None else post[idx]
        out.append(state[j])
        years.append(year)
        idx = j if pre is None else pre[j]
    return years[::-1], np.stack(out[::-1], axis=1)
