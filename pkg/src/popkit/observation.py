"""Observation operators and error densities.

An observation model aggregates state cells into ``m`` observed series and
attaches an error family:

* ``Normal`` -- independent normal errors around ``scale * (O @ n)``. The
  variance is a number, a parameter name, or ``"data"`` (taken from the
  observation file). With ``variance_cv`` the data variance is treated as an
  estimate: the true variance gets an inverse-gamma prior matched to mean
  ``v`` and standard deviation ``variance_cv * v`` and is integrated out,
  giving a Student-t error.
* ``BinomialCount`` -- each individual in the aggregated cells is counted
  independently with detection probability ``p``.

Simulated normal observations may be negative; they are not truncated.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .errors import ConfigError, DataError, DomainError, SchemaError
from .rates import Ref, _ref, _ref_from_json, _ref_to_json
from .schema import StateSchema

_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class Series:
    name: str
    cells: Mapping = field(default_factory=dict)
    scale: Ref = 1.0

    def __post_init__(self):
        object.__setattr__(self, "cells", dict(self.cells))

    def __hash__(self):
        return hash((self.name, self.scale))

    def to_dict(self):
        d = {"name": self.name, "cells": dict(self.cells)}
        if self.scale != 1.0:
            d["scale"] = _ref_to_json(self.scale)
        return d


@dataclass(frozen=True)
class Normal:
    variance: object = 1.0  # number | parameter name | "data" | per-series list
    variance_cv: float | None = None
    family = "normal"

    def to_dict(self):
        v = self.variance
        v = [_ref_to_json(x) if x != "data" else x for x in v] if isinstance(v, (list, tuple)) else (
            v if isinstance(v, str) else float(v))
        d = {"name": "normal", "variance": v}
        if self.variance_cv is not None:
            d["variance_cv"] = float(self.variance_cv)
        return d


@dataclass(frozen=True)
class BinomialCount:
    p: Ref = 1.0
    family = "binomial"

    def to_dict(self):
        return {"name": "binomial", "p": _ref_to_json(self.p)}


def family_from_dict(d: Mapping):
    d = dict(d)
    name = d.pop("name", None)
    if name == "normal":
        v = d.pop("variance", 1.0)
        if isinstance(v, list):
            v = tuple(x if x == "data" else _ref_from_json(x) for x in v)
        elif v != "data":
            v = _ref_from_json(v)
        fam = Normal(v, d.pop("variance_cv", None))
    elif name == "binomial":
        fam = BinomialCount(_ref_from_json(d.pop("p", 1.0)))
    else:
        raise ConfigError(f"unknown observation family {name!r}; choose 'normal' or 'binomial'")
    if d:
        raise ConfigError(f"{name} family has unknown fields {sorted(d)}")
    return fam


class ObservationModel:
    """Aggregation map plus error family."""

    def __init__(self, series: Sequence[Series], family=None):
        self.series = tuple(s if isinstance(s, Series) else Series(**s) for s in series)
        if not self.series:
            raise ConfigError("observation model needs at least one series")
        names = [s.name for s in self.series]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate series names {names}")
        self.family = family if family is not None else Normal()
        if isinstance(self.family, Normal) and isinstance(self.family.variance, (list, tuple)):
            if len(self.family.variance) != len(self.series):
                raise ConfigError("per-series variance list must match the number of series")
        self._compiled: dict = {}

    def __eq__(self, other):
        return isinstance(other, ObservationModel) and self.to_dict() == other.to_dict()

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.series]

    @property
    def m(self) -> int:
        return len(self.series)

    def params(self) -> set[str]:
        refs = [s.scale for s in self.series]
        if isinstance(self.family, Normal):
            v = self.family.variance
            refs += list(v) if isinstance(v, (list, tuple)) else [v]
        else:
            refs.append(self.family.p)
        return {r for r in refs if isinstance(r, str) and r != "data"}

    def aggregation(self, schema: StateSchema) -> np.ndarray:
        """0/1 matrix of shape ``(m, D)``."""
        if schema not in self._compiled:
            O = np.zeros((self.m, schema.size))
            for j, s in enumerate(self.series):
                cells = schema.select(s.cells)
                if not cells:
                    raise SchemaError(f"series {s.name!r} matches no cells")
                O[j, cells] = 1.0
            self._compiled[schema] = O
        return self._compiled[schema]

    def _scales(self, theta, size):
        return np.stack([np.broadcast_to(_ref(s.scale, theta), (size,)) for s in self.series], axis=1)

    def expected(self, n: np.ndarray, theta: Mapping, schema: StateSchema) -> np.ndarray:
        """``E(y | n)`` with shape ``(R, m)``."""
        n = np.atleast_2d(np.asarray(n, dtype=float))
        agg = n @ self.aggregation(schema).T
        if isinstance(self.family, BinomialCount):
            p = np.broadcast_to(_ref(self.family.p, theta), (n.shape[0],))
            return agg * p[:, None]
        return agg * self._scales(theta, n.shape[0])

    def _variances(self, theta, size, data_var):
        v = self.family.variance
        entries = list(v) if isinstance(v, (list, tuple)) else [v] * self.m
        out = np.empty((size, self.m))
        for j, ref in enumerate(entries):
            if ref == "data":
                if data_var is None or np.isnan(data_var[j]):
                    raise DataError(f"series {self.series[j].name!r} needs a variance from the data")
                out[:, j] = data_var[j]
            else:
                out[:, j] = np.broadcast_to(_ref(ref, theta), (size,))
        if np.any(out <= 0):
            raise DomainError("observation variances must be positive")
        return out

    def _uses_data_variance(self, j):
        v = self.family.variance
        return (v[j] if isinstance(v, (list, tuple)) else v) == "data"

    def log_likelihood(self, y, n, theta: Mapping, schema: StateSchema, variances=None) -> np.ndarray:
        """Log density of ``y`` (length ``m``, NaN = missing) for each state row."""
        y = np.asarray(y, dtype=float).reshape(-1)
        n = np.atleast_2d(n)
        size = n.shape[0]
        if y.shape != (self.m,):
            raise DataError(f"observation has {y.size} entries, model expects {self.m}")
        obs = ~np.isnan(y)
        if np.any(np.isinf(y)):
            raise DataError("observations must be finite")
        out = np.zeros(size)
        if not obs.any():
            return out
        mean = self.expected(n, theta, schema)
        if isinstance(self.family, BinomialCount):
            p = np.broadcast_to(_ref(self.family.p, theta), (size,))
            if np.any(p <= 0) or np.any(p > 1):
                raise DomainError("detection probability must lie in (0, 1]")
            count = np.atleast_2d(n).astype(float) @ self.aggregation(schema).T
            return _binomial_logpmf(y[obs], count[:, obs], p[:, None]).sum(axis=1)
        var = self._variances(theta, size, variances)
        resid2 = (y[obs] - mean[:, obs]) ** 2
        if self.family.variance_cv is None:
            return (-0.5 * (_LOG_2PI + np.log(var[:, obs]) + resid2 / var[:, obs])).sum(axis=1)
        total = np.zeros(size)
        for col, j in enumerate(np.flatnonzero(obs)):
            r2 = resid2[:, col]
            if self._uses_data_variance(j):
                a, b = _inverse_gamma_match(var[:, j], self.family.variance_cv)
                total += _student_logpdf(r2, 2 * a, b / a)
            else:
                total += -0.5 * (_LOG_2PI + np.log(var[:, j]) + r2 / var[:, j])
        return total

    def simulate(self, n, theta: Mapping, schema: StateSchema, rng: np.random.Generator, variances=None):
        """One draw of ``y`` per state row, shape ``(R, m)``."""
        n = np.atleast_2d(n)
        size = n.shape[0]
        if isinstance(self.family, BinomialCount):
            p = np.broadcast_to(_ref(self.family.p, theta), (size,))
            if np.any(p <= 0) or np.any(p > 1):
                raise DomainError("detection probability must lie in (0, 1]")
            count = (np.atleast_2d(n) @ self.aggregation(schema).T)
            return rng.binomial(np.rint(count).astype(np.int64), p[:, None]).astype(float)
        mean = self.expected(n, theta, schema)
        var = self._variances(theta, size, variances)
        if self.family.variance_cv is not None:
            for j in range(self.m):
                if self._uses_data_variance(j):
                    a, b = _inverse_gamma_match(var[:, j], self.family.variance_cv)
                    var[:, j] = b / rng.gamma(a, 1.0)
        return mean + np.sqrt(var) * rng.standard_normal(mean.shape)

    def to_dict(self) -> dict:
        return {"series": [s.to_dict() for s in self.series], "family": self.family.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ObservationModel":
        d = dict(d)
        try:
            series = [Series(s["name"], s.get("cells", {}), _ref_from_json(s.get("scale", 1.0))) for s in d.pop("series")]
        except KeyError as exc:
            raise ConfigError(f"observation series missing field {exc.args[0]!r}") from None
        fam = family_from_dict(d.pop("family", {"name": "normal"}))
        if d:
            raise ConfigError(f"observation model has unknown fields {sorted(d)}")
        return cls(series, fam)


def _binomial_logpmf(y, n, p):
    y = np.broadcast_to(y, np.broadcast_shapes(np.shape(y), np.shape(n)))
    n = np.broadcast_to(n, y.shape)
    ok = (y >= 0) & (y <= n) & (y == np.round(y))
    with np.errstate(invalid="ignore"):
        val = (gammaln(n + 1) - gammaln(y + 1) - gammaln(np.maximum(n - y, 0) + 1)
               + xlogy(y, p) + xlog1py(n - y, -p))
    return np.where(ok, val, -np.inf)


def _inverse_gamma_match(mean, cv):
    if cv <= 0:
        raise DomainError("variance_cv must be positive")
    a = 2.0 + 1.0 / cv**2
    return a, mean * (a - 1.0)


def _student_logpdf(r2, df, scale2):
    return (gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * np.log(df * np.pi * scale2)
            - (df + 1) / 2 * np.log1p(r2 / (df * scale2)))


def log_likelihood(om: ObservationModel, y, n, theta: Mapping, schema: StateSchema, variances=None):
    return om.log_likelihood(y, n, theta, schema, variances)


def simulate_observation(om: ObservationModel, n, theta: Mapping, schema: StateSchema, rng, variances=None):
    return om.simulate(n, theta, schema, rng, variances)


class ObservationSeries:
    """Observed values per year; NaN marks a missing entry."""

    def __init__(self, years, names, values, variances=None):
        self.years = np.asarray(years, dtype=int).reshape(-1)
        self.names = list(names)
        self.values = np.asarray(values, dtype=float).reshape(len(self.years), len(self.names))
        self.variances = None if variances is None else np.asarray(variances, dtype=float).reshape(self.values.shape)
        if np.any(np.diff(self.years) <= 0):
            raise DataError("observation years must be strictly increasing")
        if np.any(np.isinf(self.values)):
            raise DataError("observations must be finite or missing")

    def __len__(self):
        return len(self.years)

    def __eq__(self, other):
        return (isinstance(other, ObservationSeries) and self.names == other.names
                and np.array_equal(self.years, other.years)
                and np.array_equal(self.values, other.values, equal_nan=True)
                and ((self.variances is None and other.variances is None)
                     or (self.variances is not None and other.variances is not None
                         and np.array_equal(self.variances, other.variances, equal_nan=True))))

    def at(self, year: int):
        """``(y, variances)`` for ``year``, or ``None`` when the year has no data."""
        idx = np.flatnonzero(self.years == year)
        if idx.size == 0:
            return None
        i = idx[0]
        return self.values[i], None if self.variances is None else self.variances[i]

    def reorder(self, names: Sequence[str]) -> "ObservationSeries":
        """Columns in the order of ``names``; series absent from the data become missing."""
        extra = set(self.names) - set(names)
        if extra:
            raise DataError(f"data has series the model does not observe: {sorted(extra)}")
        cols = [self.names.index(n) if n in self.names else None for n in names]
        T = len(self.years)
        vals = np.column_stack([self.values[:, c] if c is not None else np.full(T, np.nan) for c in cols]) if names else np.zeros((T, 0))
        var = None
        if self.variances is not None:
            var = np.column_stack([self.variances[:, c] if c is not None else np.full(T, np.nan) for c in cols])
        return ObservationSeries(self.years, names, vals, var)

    @classmethod
    def from_csv(cls, path) -> "ObservationSeries":
        """Read ``year, series, value, [variance]``; absent rows are missing."""
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            fields = set(reader.fieldnames or [])
            if not {"year", "series", "value"} <= fields:
                raise DataError(f"{path}: observation CSV needs columns year, series, value")
            has_var = "variance" in fields
            for line, row in enumerate(reader, start=2):
                try:
                    value = float(row["value"]) if row["value"] not in ("", "NA", "nan") else np.nan
                    var = float(row["variance"]) if has_var and row.get("variance") not in (None, "", "NA") else np.nan
                    rows.append((int(row["year"]), row["series"], value, var))
                except ValueError as exc:
                    raise DataError(f"{path}:{line}: {exc}") from None
        if not rows:
            raise DataError(f"{path}: no observations")
        years = sorted({r[0] for r in rows})
        names = list(dict.fromkeys(r[1] for r in rows))
        vals = np.full((len(years), len(names)), np.nan)
        var = np.full_like(vals, np.nan)
        seen = set()
        for y, s, v, w in rows:
            if (y, s) in seen:
                raise DataError(f"{path}: duplicate row for year {y} series {s!r}")
            seen.add((y, s))
            vals[years.index(y), names.index(s)] = v
            var[years.index(y), names.index(s)] = w
        return cls(years, names, vals, var if has_var else None)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["year", "series", "value"] + (["variance"] if self.variances is not None else []))
            for i, year in enumerate(self.years):
                for j, name in enumerate(self.names):
                    if np.isnan(self.values[i, j]):
                        continue
                    row = [int(year), name, repr(float(self.values[i, j]))]
                    if self.variances is not None:
                        v = self.variances[i, j]
                        row.append("" if np.isnan(v) else repr(float(v)))
                    w.writerow(row)
