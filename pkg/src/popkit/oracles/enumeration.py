"""Exact filtering by enumerating every state of a tiny integer model.

States live on the grid ``{0..bound}^D``. Each process is turned into a
sparse transition matrix: for one input state the output distribution is
the convolution of independent per-cell contributions (binomial thinning,
Poisson births, multinomial moves), so no sampling is involved. Mass that
would leave the grid, and the truncated Poisson tail, is accumulated as
``lost`` and must stay below ``tol``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse, stats
from scipy.special import logsumexp

from ..errors import ConfigError, OracleInvalidError, UnsupportedError
from ..priors import initial_pmf
from ..processes import Aging, Birth, Growth, Harvest, Movement, SexAssignment, Survival
from ..rates import RandomEffect, RateContext

POISSON_TAIL = 1e-12


@dataclass
class EnumeratedDistribution:
    """Probability mass function on integer states; ``support`` is ``(S, D)``."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.int64).reshape(len(self.probs), -1)
        self.probs = np.asarray(self.probs, dtype=float)

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def mean(self) -> np.ndarray:
        return self.probs @ self.support

    def cov(self) -> np.ndarray:
        c = self.support - self.mean()
        return (c * self.probs[:, None]).T @ c

    def marginal(self, cell: int) -> np.ndarray:
        return np.bincount(self.support[:, cell], weights=self.probs)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in s): float(p) for s, p in zip(self.support, self.probs)}

    @classmethod
    def from_samples(cls, states, weights=None) -> "EnumeratedDistribution":
        states = np.rint(np.atleast_2d(states)).astype(np.int64)
        w = np.full(len(states), 1.0 / len(states)) if weights is None else np.asarray(weights, float) / np.sum(weights)
        support, inv = np.unique(states, axis=0, return_inverse=True)
        return cls(support, np.bincount(inv.reshape(-1), weights=w, minlength=len(support)))


def total_variation(a: EnumeratedDistribution, b: EnumeratedDistribution) -> float:
    """``0.5 * sum |p_a - p_b|`` over the union of supports."""
    pa, pb = a.as_dict(), b.as_dict()
    return 0.5 * sum(abs(pa.get(k, 0.0) - pb.get(k, 0.0)) for k in set(pa) | set(pb))


@dataclass
class EnumerationResult:
    years: list
    filtered: list
    predicted: list
    loglik: float
    loglik_by_year: list
    lost: float
    lost_by_year: list = field(default_factory=list)

    def at(self, year: int) -> EnumeratedDistribution:
        return self.filtered[self.years.index(year)]


class _Grid:
    def __init__(self, D: int, bound: int):
        self.D, self.bound = D, bound
        self.shape = (bound + 1,) * D
        self.size = (bound + 1) ** D
        self.states = np.array(list(itertools.product(range(bound + 1), repeat=D)), dtype=np.int64).reshape(-1, D)

    def index(self, x) -> int:
        return int(np.ravel_multi_index(tuple(x), self.shape))


def _binom(n: int, p: float) -> np.ndarray:
    return stats.binom.pmf(np.arange(n + 1), n, p)


def _poisson(mean: float):
    if mean <= 0:
        return np.array([1.0]), 0.0
    hi = int(stats.poisson.ppf(1.0 - POISSON_TAIL, mean)) + 1
    pmf = stats.poisson.pmf(np.arange(hi + 1), mean)
    return pmf, max(0.0, 1.0 - pmf.sum())


def _compositions(n: int, parts: int):
    if parts == 1:
        yield (n,)
        return
    for k in range(n + 1):
        for rest in _compositions(n - k, parts - 1):
            yield (k,) + rest


def _contributions(proc, x: np.ndarray, resolved: np.ndarray, schema):
    """Fixed part and list of independent random parts ``[(vectors, probs), ...]``."""
    D = schema.size
    fixed = np.zeros(D, dtype=np.int64)
    parts = []
    lost = 0.0
    comp = proc.compile(schema)

    def unit(*pairs):
        v = np.zeros(D, dtype=np.int64)
        for c, k in pairs:
            v[c] += k
        return v

    if isinstance(proc, Aging):
        np.add.at(fixed, comp["dest"], x)
    elif isinstance(proc, (Survival, Harvest)):
        for c in range(D):
            if x[c] == 0:
                continue
            p = resolved[c] if isinstance(proc, Survival) else 1.0 - resolved[c]
            parts.append(([unit((c, k)) for k in range(x[c] + 1)], _binom(int(x[c]), p)))
    elif isinstance(proc, (Growth, SexAssignment)):
        to = comp["next"] if isinstance(proc, Growth) else comp["partner"]
        for c in range(D):
            if x[c] == 0:
                continue
            if isinstance(proc, Growth) and to[c] < 0 or to[c] == c:
                fixed[c] += x[c]
                continue
            parts.append(([unit((c, x[c] - k), (to[c], k)) for k in range(x[c] + 1)], _binom(int(x[c]), resolved[c])))
    elif isinstance(proc, Birth):
        fixed += x
        for c in comp["parents"]:
            if x[c] == 0:
                continue
            pmf, tail = _poisson(float(resolved[c] * x[c]))
            lost += tail
            parts.append(([unit((comp["child"][c], k)) for k in range(pmf.size)], pmf))
    elif isinstance(proc, Movement):
        movers = set(comp["movers"].tolist())
        for c in range(D):
            if c not in movers:
                fixed[c] += x[c]
        for m, c in enumerate(comp["movers"]):
            if x[c] == 0:
                continue
            row = resolved[comp["level"][m]]
            vecs, probs = [], []
            for split in _compositions(int(x[c]), comp["L"]):
                vecs.append(unit(*zip(comp["dests"][m], split)))
                probs.append(stats.multinomial.pmf(split, int(x[c]), row))
            parts.append((vecs, np.asarray(probs)))
    else:
        raise UnsupportedError(f"cannot enumerate {proc.kind} processes")
    return fixed, parts, lost


def _out_pmf(proc, x, resolved, schema, grid: _Grid):
    """Sparse output distribution for input state ``x``: ``(indices, probs, lost)``."""
    fixed, parts, lost = _contributions(proc, x, resolved, schema)
    dist = {tuple(fixed): 1.0}
    for vecs, probs in parts:
        new: dict = {}
        for key, p in dist.items():
            for v, q in zip(vecs, probs):
                if q <= 0:
                    continue
                k = tuple(a + b for a, b in zip(key, v))
                new[k] = new.get(k, 0.0) + p * q
        dist = new
    idx, pr = [], []
    for k, p in dist.items():
        if max(k) > grid.bound:
            lost += p
        else:
            idx.append(grid.index(k))
            pr.append(p)
    return np.asarray(idx, dtype=np.int64), np.asarray(pr), lost


def _check_supported(model):
    if not model.integer:
        raise UnsupportedError("enumeration needs an integer-mode model")
    if model.schema.size > 3:
        raise UnsupportedError("enumeration is limited to at most 3 cells")
    for p in model.processes:
        for rm in p.rate_models():
            if isinstance(rm, RandomEffect):
                raise UnsupportedError("random-effect rates cannot be enumerated")


def _resolve(proc, k, model, theta, year, covariates, n_prev, u_prev):
    states = {"n_prev": n_prev[None].astype(float)}
    if k > 1:
        states[f"u{k - 1}"] = u_prev[None].astype(float)
    ctx = RateContext(size=1, schema=model.schema, year=year, covariates=covariates, states=states)
    return proc.resolve(theta, ctx, k)[0]


def _reads(proc, k):
    """``"none"``, ``"input"`` (rates depend on the process input) or ``"n_prev"``."""
    read = proc.states_read()
    if not read:
        return "none"
    if read == {f"u{k - 1}"} or (k == 1 and read == {"n_prev"}):
        return "input"
    if read == {"n_prev"}:
        return "n_prev"
    raise UnsupportedError(f"process {k} reads {sorted(read)}; enumeration supports n_prev or the preceding state")


def _kernel(proc, k, model, theta, year, covariates, grid, rows, n_prev=None):
    """Sparse transition matrix restricted to source states ``rows``."""
    mode = _reads(proc, k)
    r_idx, c_idx, vals = [], [], []
    lost = np.zeros(grid.size)
    shared = None
    if mode == "none":
        shared = _resolve(proc, k, model, theta, year, covariates, grid.states[0], grid.states[0])
    for s in rows:
        x = grid.states[s]
        if mode == "none":
            res = shared
        elif mode == "input":
            res = _resolve(proc, k, model, theta, year, covariates, x if n_prev is None else n_prev, x)
        else:
            res = _resolve(proc, k, model, theta, year, covariates, n_prev, x)
        idx, pr, lo = _out_pmf(proc, x, res, model.schema, grid)
        r_idx.extend([s] * idx.size)
        c_idx.extend(idx.tolist())
        vals.extend(pr.tolist())
        lost[s] = lo
    K = sparse.csr_matrix((vals, (r_idx, c_idx)), shape=(grid.size, grid.size))
    return K, lost


def _propagate(model, theta, year, covariates, grid, p):
    """One year of the state equation applied to the pmf vector ``p``."""
    modes = [_reads(proc, k) for k, proc in enumerate(model.processes, start=1)]
    lost = 0.0
    if "n_prev" not in modes[1:]:
        v = p
        for k, proc in enumerate(model.processes, start=1):
            rows = np.flatnonzero(v > 0)
            K, lo = _kernel(proc, k, model, theta, year, covariates, grid, rows)
            lost += float(v @ lo)
            v = K.T @ v
        return v, lost
    out = np.zeros(grid.size)
    for s in np.flatnonzero(p > 0):
        v = np.zeros(grid.size)
        v[s] = 1.0
        n_prev = grid.states[s]
        for k, proc in enumerate(model.processes, start=1):
            rows = np.flatnonzero(v > 0)
            K, lo = _kernel(proc, k, model, theta, year, covariates, grid, rows, n_prev=n_prev)
            lost += p[s] * float(v @ lo)
            v = K.T @ v
        out += p[s] * v
    return out, lost


def _distribution(grid, p) -> EnumeratedDistribution:
    nz = np.flatnonzero(p > 0)
    return EnumeratedDistribution(grid.states[nz], p[nz] / p[nz].sum())


def enumerate_filter(model, theta: Mapping[str, float], data=None, bound: int = 20, covariates=None,
                     tol: float = 1e-6, years=None) -> EnumerationResult:
    """Exact filtered distributions ``g(n_t | y_1..y_t, theta)`` for every year.

    ``theta`` fixes every parameter. Raises ``OracleInvalidError`` when the
    cumulative truncated mass exceeds ``tol``.
    """
    _check_supported(model)
    missing = set(model.param_names) - set(theta)
    if missing:
        raise ConfigError(f"enumeration needs fixed values for {sorted(missing)}")
    th = {k: np.array([float(np.asarray(v).reshape(-1)[0])]) for k, v in theta.items()}
    grid = _Grid(model.schema.size, int(bound))
    pmfs, lost = initial_pmf(model.initial, model.schema, th, grid.bound, tail=POISSON_TAIL)
    p = pmfs[0]
    for pm in pmfs[1:]:
        p = np.multiply.outer(p, pm)
    p = np.asarray(p, dtype=float).reshape(-1)
    years = list(model.years if years is None else years)
    if data is not None:
        data = data.reorder(model.observed_names)
    filtered, predicted, ll_years, lost_years = [], [], [], []
    loglik = 0.0
    total_lost = lost
    for year in years:
        p, lo = _propagate(model, th, year, covariates, grid, p)
        total_lost += lo
        lost_years.append(lo)
        if total_lost > tol:
            raise OracleInvalidError(f"enumeration lost {total_lost:.3g} probability mass by year {year} "
                                     f"(bound {grid.bound}); raise the bound")
        p = p / p.sum()
        predicted.append(_distribution(grid, p))
        obs = None if data is None else data.at(year)
        ll = 0.0
        if obs is not None and not np.all(np.isnan(obs[0])):
            nz = np.flatnonzero(p > 0)
            lw = model.log_likelihood(obs[0], grid.states[nz], th, year, obs[1])
            lw = lw + np.log(p[nz])
            ll = float(logsumexp(lw))
            if not np.isfinite(ll):
                raise OracleInvalidError(f"observation in year {year} is impossible under the model")
            p = np.zeros(grid.size)
            p[nz] = np.exp(lw - ll)
        ll_years.append(ll)
        loglik += ll
        filtered.append(_distribution(grid, p))
    return EnumerationResult(years, filtered, predicted, loglik, ll_years, total_lost, lost_years)
