"""Vital-rate models: constants, covariate links, random effects, density dependence.

A coefficient reference (``Ref``) is either a number or the name of a
parameter in theta. Rates are evaluated for a whole batch of particles at
once: theta values are arrays of shape ``(R,)`` and state arrays ``(R, D)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, DomainError, SchemaError, UnsupportedError
from .schema import StateSchema

Ref = Union[float, str]


class CovariateStream:
    """Values of one covariate by year, optionally by region."""

    def __init__(self, name: str, values: Mapping, units: str = "", region_axis: str = "region"):
        self.name = name
        self.units = units
        self.region_axis = region_axis
        self.values = {}
        for key, v in values.items():
            year, region = key if isinstance(key, tuple) else (key, None)
            self.values[(int(year), None if region is None else str(region))] = float(v)
        regions = {r for _, r in self.values}
        if None in regions and len(regions) > 1:
            raise DataError(f"covariate {name!r} mixes regional and non-regional rows")
        self.regional = None not in regions

    @property
    def years(self) -> list[int]:
        return sorted({y for y, _ in self.values})

    def value(self, year: int, region: str | None = None) -> float:
        key = (int(year), str(region) if self.regional else None)
        if self.regional and region is None:
            raise DataError(f"covariate {self.name!r} is regional but no region was given")
        try:
            return self.values[key]
        except KeyError:
            where = f" region {region}" if self.regional else ""
            raise DataError(f"covariate {self.name!r} has no value for year {year}{where}") from None

    def __eq__(self, other):
        return (isinstance(other, CovariateStream) and self.name == other.name
                and self.values == other.values)


class Covariates(dict):
    """Mapping name -> CovariateStream."""

    def override(self, other: Mapping[str, CovariateStream] | None) -> "Covariates":
        """Streams of ``other`` take precedence, year by year."""
        out = Covariates(self)
        for name, stream in (other or {}).items():
            if name in out:
                merged = dict(out[name].values)
                merged.update(stream.values)
                out[name] = CovariateStream(name, merged, stream.units, stream.region_axis)
            else:
                out[name] = stream
        return out

    def require_years(self, names: Sequence[str], years: Sequence[int]) -> None:
        for name in names:
            if name not in self:
                raise DataError(f"missing covariate stream {name!r}")
            missing = sorted(set(years) - set(self[name].years))
            if missing:
                raise DataError(f"covariate {name!r} has no values for years {missing}")


def load_covariates(path) -> Covariates:
    """Read a CSV with columns ``year, [region,] name, value``."""
    rows: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or [])
        if not {"year", "name", "value"} <= fields:
            raise DataError(f"{path}: covariate CSV needs columns year, name, value")
        for line, row in enumerate(reader, start=2):
            try:
                key = int(row["year"])
                value = float(row["value"])
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            if row.get("region"):
                key = (key, row["region"])
            rows.setdefault(row["name"], {})[key] = value
    return Covariates({name: CovariateStream(name, vals) for name, vals in rows.items()})


def write_covariates(covariates: Mapping[str, CovariateStream], path) -> None:
    regional = any(s.regional for s in covariates.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "region", "name", "value"] if regional else ["year", "name", "value"])
        for name in sorted(covariates):
            for (year, region), v in sorted(covariates[name].values.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")):
                w.writerow([year, region or "", name, repr(v)] if regional else [year, name, repr(v)])


@dataclass
class RateContext:
    """Everything a rate may read besides theta."""

    size: int
    schema: StateSchema | None = None
    year: int | None = None
    covariates: Mapping[str, CovariateStream] | None = None
    states: dict = field(default_factory=dict)
    rng: np.random.Generator | None = None
    memory: dict = field(default_factory=dict)
    memo: dict = field(default_factory=dict)
    cell: int | None = None

    def covariate(self, name: str) -> np.ndarray:
        if self.covariates is None or name not in self.covariates:
            raise DataError(f"missing covariate stream {name!r}")
        if self.year is None:
            raise DataError(f"covariate {name!r} needs a year")
        stream = self.covariates[name]
        region = None
        if stream.regional:
            if self.schema is None or self.cell is None or stream.region_axis not in self.schema.names:
                raise DataError(f"regional covariate {name!r} used without a region axis")
            region = self.schema.cell_labels(self.cell)[stream.region_axis]
        return np.float64(stream.value(self.year, region))


def _ref(ref: Ref, theta: Mapping) -> np.ndarray:
    if isinstance(ref, str):
        if ref not in theta:
            raise ConfigError(f"rate references unknown parameter {ref!r}")
        return np.asarray(theta[ref], dtype=float)
    return np.float64(ref)


def _ref_to_json(ref: Ref):
    return ref if isinstance(ref, str) else float(ref)


def _ref_from_json(v) -> Ref:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, float)):
        return float(v)
    raise ConfigError(f"coefficient must be a number or parameter name, got {v!r}")


def _add_grad(grad: dict, ref: Ref, value) -> None:
    if isinstance(ref, str):
        grad[ref] = grad.get(ref, 0.0) + value


class RateModel:
    """Base class; subclasses implement ``resolve`` and usually ``jacobian``."""

    form = ""
    cell_dependent = False

    def params(self) -> set[str]:
        return {v for v in self._refs() if isinstance(v, str)}

    def covariate_names(self) -> set[str]:
        return set()

    def reads_state(self) -> str | None:
        return None

    def resolve(self, theta: Mapping, ctx: RateContext, key: str = "") -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta: Mapping, ctx: RateContext) -> dict[str, np.ndarray]:
        raise UnsupportedError(f"{self.form} rates are not differentiable")

    def _refs(self) -> list:
        return []

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(RateModel):
    """A fixed number or a single parameter of theta."""

    value: Ref = 0.0
    form = "constant"

    def _refs(self):
        return [self.value]

    def resolve(self, theta, ctx, key=""):
        return np.broadcast_to(_ref(self.value, theta), (ctx.size,)).astype(float)

    def jacobian(self, theta, ctx):
        grad: dict = {}
        _add_grad(grad, self.value, np.ones(ctx.size))
        return grad

    def to_dict(self):
        if isinstance(self.value, str):
            return {"form": "constant", "param": self.value}
        return {"form": "constant", "value": float(self.value)}


@dataclass(frozen=True)
class _Linear(RateModel):
    intercept: Ref = 0.0
    terms: tuple = ()  # (covariate name, coefficient ref)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((str(c), b) for c, b in self.terms))

    @property
    def cell_dependent(self):
        return bool(self.terms)

    def _refs(self):
        return [self.intercept] + [b for _, b in self.terms]

    def covariate_names(self):
        return {c for c, _ in self.terms}

    def _eta(self, theta, ctx):
        eta = _ref(self.intercept, theta)
        for name, coef in self.terms:
            eta = eta + _ref(coef, theta) * ctx.covariate(name)
        return np.broadcast_to(eta, (ctx.size,)).astype(float)

    def _grad_eta(self, theta, ctx, scale):
        grad: dict = {}
        _add_grad(grad, self.intercept, scale)
        for name, coef in self.terms:
            _add_grad(grad, coef, scale * ctx.covariate(name))
        return grad

    def to_dict(self):
        return {"form": self.form, "intercept": _ref_to_json(self.intercept),
                "terms": [{"covariate": c, "coef": _ref_to_json(b)} for c, b in self.terms]}


class Logistic(_Linear):
    """``expit(intercept + sum coef_i * x_i)``; always inside (0, 1)."""

    form = "logistic"

    def resolve(self, theta, ctx, key=""):
        return expit(self._eta(theta, ctx))

    def jacobian(self, theta, ctx):
        p = expit(self._eta(theta, ctx))
        return self._grad_eta(theta, ctx, p * (1.0 - p))


class LogLinear(_Linear):
    """``exp(intercept + sum coef_i * x_i)``; always positive."""

    form = "loglinear"

    def resolve(self, theta, ctx, key=""):
        return np.exp(self._eta(theta, ctx))

    def jacobian(self, theta, ctx):
        return self._grad_eta(theta, ctx, np.exp(self._eta(theta, ctx)))


_LINKS = {"logit": expit, "log": np.exp, "identity": lambda x: x}


@dataclass(frozen=True)
class RandomEffect(RateModel):
    """Environmental stochasticity: ``link^-1(mean + e_t)``.

    ``e_t`` is stationary with standard deviation ``sd``; i.i.d. across years
    when ``rho == 0``, AR(1) with autocorrelation ``rho`` otherwise. One draw
    per particle per year is shared by every cell the binding covers.
    """

    mean: Ref = 0.0
    sd: Ref = 1.0
    link: str = "logit"
    rho: Ref = 0.0
    form = "random_effect"

    def __post_init__(self):
        if self.link not in _LINKS:
            raise ConfigError(f"unknown link {self.link!r}")

    def _refs(self):
        return [self.mean, self.sd, self.rho]

    def resolve(self, theta, ctx, key=""):
        if key in ctx.memo:
            dev = ctx.memo[key]
        else:
            if ctx.rng is None:
                raise UnsupportedError("random-effect rates need a random stream")
            sd = np.broadcast_to(_ref(self.sd, theta), (ctx.size,))
            rho = np.broadcast_to(_ref(self.rho, theta), (ctx.size,))
            if np.any(sd < 0) or np.any(np.abs(rho) >= 1):
                raise DomainError("random effect needs sd >= 0 and |rho| < 1")
            z = ctx.rng.standard_normal(ctx.size)
            prev = ctx.memory.get(key)
            if prev is None or not np.any(rho):
                dev = sd * z
            else:
                fresh = np.isnan(prev)
                dev = np.where(fresh, sd * z, rho * np.nan_to_num(prev) + sd * np.sqrt(1 - rho**2) * z)
            ctx.memo[key] = dev
            if np.any(rho):
                ctx.memory[key] = dev
        return _LINKS[self.link](np.broadcast_to(_ref(self.mean, theta), (ctx.size,)) + dev)

    def to_dict(self):
        return {"form": "random_effect", "mean": _ref_to_json(self.mean), "sd": _ref_to_json(self.sd),
                "link": self.link, "rho": _ref_to_json(self.rho)}


@dataclass(frozen=True)
class DensityDependent(RateModel):
    """``link^-1(intercept + slope * count / capacity)``.

    ``count`` sums the cells matched by ``cells`` in the state named by
    ``state`` (``"n_prev"`` for the start-of-year state, ``"u1"``, ``"u2"``,
    ... for intermediates). With ``same=("region",)`` only cells sharing the
    evaluated cell's region are summed, which gives per-region density.
    """

    intercept: Ref = 0.0
    slope: Ref = 0.0
    capacity: Ref = 1.0
    state: str = "n_prev"
    cells: Mapping = field(default_factory=dict)
    same: tuple = ()
    link: str = "logit"
    form = "density"

    def __post_init__(self):
        if self.link not in _LINKS:
            raise ConfigError(f"unknown link {self.link!r}")
        if not (self.state == "n_prev" or (self.state.startswith("u") and self.state[1:].isdigit())):
            raise ConfigError(f"density state must be 'n_prev' or 'u<k>', got {self.state!r}")
        object.__setattr__(self, "cells", dict(self.cells))
        object.__setattr__(self, "same", tuple(self.same))

    def __hash__(self):
        return hash((self.intercept, self.slope, self.capacity, self.state, self.same, self.link))

    @property
    def cell_dependent(self):
        return bool(self.same)

    def _refs(self):
        return [self.intercept, self.slope, self.capacity]

    def reads_state(self):
        return self.state

    def summary_cells(self, ctx) -> list[int]:
        cells = ctx.schema.select(self.cells)
        if self.same:
            if ctx.cell is None:
                raise SchemaError("per-group density needs the evaluated cell")
            keep = set(ctx.schema.same_labels(ctx.cell, self.same))
            cells = [c for c in cells if c in keep]
        return cells

    def count(self, ctx) -> np.ndarray:
        if self.state not in ctx.states:
            raise UnsupportedError(f"density-dependent rate needs state {self.state!r}")
        x = np.asarray(ctx.states[self.state], dtype=float)
        return x[..., self.summary_cells(ctx)].sum(axis=-1)

    def _eta(self, theta, ctx):
        cap = _ref(self.capacity, theta)
        if np.any(cap <= 0):
            raise DomainError("carrying capacity must be positive")
        eta = _ref(self.intercept, theta) + _ref(self.slope, theta) * self.count(ctx) / cap
        return np.broadcast_to(eta, (ctx.size,)).astype(float)

    def resolve(self, theta, ctx, key=""):
        return _LINKS[self.link](self._eta(theta, ctx))

    def jacobian(self, theta, ctx):
        eta = self._eta(theta, ctx)
        r = _LINKS[self.link](eta)
        deta = {"logit": r * (1 - r), "log": r, "identity": np.ones_like(r)}[self.link]
        summary = self.count(ctx) / _ref(self.capacity, theta)
        grad: dict = {}
        _add_grad(grad, self.intercept, deta)
        _add_grad(grad, self.slope, deta * summary)
        _add_grad(grad, self.capacity, -deta * _ref(self.slope, theta) * summary / _ref(self.capacity, theta))
        return grad

    def to_dict(self):
        return {"form": "density", "intercept": _ref_to_json(self.intercept),
                "slope": _ref_to_json(self.slope), "capacity": _ref_to_json(self.capacity),
                "state": self.state, "cells": dict(self.cells), "same": list(self.same), "link": self.link}


def rate_from_dict(d: Mapping) -> RateModel:
    if isinstance(d, (int, float)):
        return Constant(float(d))
    if isinstance(d, str):
        return Constant(d)
    d = dict(d)
    form = d.pop("form", None)
    try:
        if form == "constant":
            if ("param" in d) == ("value" in d):
                raise ConfigError("constant rate needs exactly one of 'value' or 'param'")
            rm = Constant(d.pop("param") if "param" in d else float(d.pop("value")))
        elif form in ("logistic", "loglinear"):
            terms = tuple((t["covariate"], _ref_from_json(t["coef"])) for t in d.pop("terms", []))
            cls = Logistic if form == "logistic" else LogLinear
            rm = cls(_ref_from_json(d.pop("intercept", 0.0)), terms)
        elif form == "random_effect":
            rm = RandomEffect(_ref_from_json(d.pop("mean")), _ref_from_json(d.pop("sd")),
                              d.pop("link", "logit"), _ref_from_json(d.pop("rho", 0.0)))
        elif form == "density":
            rm = DensityDependent(_ref_from_json(d.pop("intercept")), _ref_from_json(d.pop("slope")),
                                  _ref_from_json(d.pop("capacity", 1.0)), d.pop("state", "n_prev"),
                                  d.pop("cells", {}), tuple(d.pop("same", ())), d.pop("link", "logit"))
        else:
            raise ConfigError(f"unknown rate form {form!r}")
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{form} rate: bad or missing field {exc}") from None
    if d:
        raise ConfigError(f"{form} rate has unknown fields {sorted(d)}")
    return rm


def _context(theta, year, covariates, states, rng, schema, cell):
    sizes = [np.size(v) for v in theta.values()] + [np.shape(s)[0] for s in (states or {}).values() if np.ndim(s) == 2]
    size = max(sizes, default=1)
    states = {k: np.atleast_2d(v) for k, v in (states or {}).items()}
    if states and schema is None:
        raise SchemaError("states given without a schema")
    return RateContext(size=size, schema=schema, year=year, covariates=covariates,
                       states=states, rng=rng, cell=cell)


def resolve_rate(rm: RateModel, theta: Mapping, year: int | None = None, covariates=None,
                 states: Mapping | None = None, rng=None, schema: StateSchema | None = None,
                 cell: int | None = None, bounds: tuple[float, float] | None = None):
    """Evaluate a rate model. Returns a float for scalar theta, else an array.

    ``bounds`` is the owning process's admissible closed range; values
    outside it raise ``DomainError``.
    """
    theta = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in theta.items()}
    ctx = _context(theta, year, covariates, states, rng, schema, cell)
    r = rm.resolve(theta, ctx, key="rate")
    if bounds is not None:
        check_range(r, bounds, rm.form)
    return float(r[0]) if r.size == 1 else r


def rate_jacobian(rm: RateModel, theta: Mapping, year: int | None = None, covariates=None,
                  states: Mapping | None = None, schema: StateSchema | None = None,
                  cell: int | None = None) -> dict[str, float]:
    """Gradient of the rate with respect to every parameter it references.

    Parameters the rate does not depend on are reported with derivative 0.
    """
    theta_arr = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in theta.items()}
    ctx = _context(theta_arr, year, covariates, states, None, schema, cell)
    grad = rm.jacobian(theta_arr, ctx)
    out = {name: 0.0 for name in rm.params()}
    for k, v in grad.items():
        v = np.asarray(v)
        out[k] = float(v.reshape(-1)[0]) if v.size == 1 else v
    return out


def check_range(r, bounds, what: str) -> None:
    lo, hi = bounds
    r = np.asarray(r)
    if np.any(np.isnan(r)) or np.any(r < lo) or np.any(r > hi):
        bad = r[np.isnan(r) | (r < lo) | (r > hi)].reshape(-1)[0]
        raise DomainError(f"{what} rate {bad!r} outside [{lo}, {hi}]")


def logistic_movement(counts, distances, capacities, decay, density_weight=1.0, fidelity=0.0,
                      eps: float = 1e-6) -> np.ndarray:
    """Row-stochastic transfer matrices between regions.

    ``attract[i, j] = exp(-decay * d_ij + fidelity * [i == j]) * (cap_j / max(count_j, eps)) ** density_weight``
    with rows normalized; entry ``[i, j]`` is the probability of moving from
    ``i`` to ``j``. Destinations with lower density relative to capacity and
    shorter distances attract more. ``counts`` has shape ``(..., L)``;
    ``decay``, ``density_weight`` and ``fidelity`` broadcast over the leading
    batch dimensions. An infinite ``decay`` gives the identity. A row whose
    attractiveness is zero everywhere falls back to uniform.
    """
    counts = np.asarray(counts, dtype=float)
    d = np.asarray(distances, dtype=float)
    cap = np.asarray(capacities, dtype=float)
    L = d.shape[0]
    if d.shape != (L, L) or cap.shape != (L,) or counts.shape[-1] != L:
        raise SchemaError("movement inputs have inconsistent region counts")
    if np.any(np.diag(d) != 0) or not np.allclose(d, d.T) or np.any(d < 0):
        raise DomainError("distance matrix must be symmetric, non-negative, with zero diagonal")
    if np.any(counts < 0) or np.any(cap <= 0):
        raise DomainError("counts must be >= 0 and capacities > 0")
    batch = counts.shape[:-1]
    decay = np.asarray(decay, dtype=float).reshape(batch + (1, 1)) if np.ndim(decay) else np.float64(decay)
    rho = np.asarray(density_weight, dtype=float).reshape(batch + (1, 1)) if np.ndim(density_weight) else np.float64(density_weight)
    fid = np.asarray(fidelity, dtype=float).reshape(batch + (1, 1)) if np.ndim(fidelity) else np.float64(fidelity)
    off = d > 0
    with np.errstate(invalid="ignore", over="ignore"):
        dist_term = np.where(off, -decay * d, 0.0)
    log_density = np.log(cap) - np.log(np.maximum(counts, eps))
    log_a = dist_term + fid * np.eye(L) + rho * log_density[..., None, :]
    log_a = np.broadcast_to(log_a, batch + (L, L))
    row_max = log_a.max(axis=-1, keepdims=True)
    dead = ~np.isfinite(row_max)
    safe_max = np.where(dead, 0.0, row_max)
    w = np.exp(log_a - safe_max)
    w = np.where(dead, 1.0, w)
    return w / w.sum(axis=-1, keepdims=True)
