"""Parameter priors g(theta) and initial-state priors g0(n0 | theta)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigError
from .schema import StateSchema

_FAMILIES = {
    "fixed": ("value",),
    "uniform": ("low", "high"),
    "beta": ("a", "b"),
    "normal": ("mean", "sd"),
    "lognormal": ("mean", "sd"),
    "gamma": ("shape", "scale"),
}


@dataclass(frozen=True)
class Prior:
    """A univariate prior. ``lognormal`` takes the mean and sd of the log."""

    family: str
    args: tuple[float, ...]

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown prior family {self.family!r}; choose from {sorted(_FAMILIES)}")
        object.__setattr__(self, "args", tuple(float(a) for a in self.args))
        if len(self.args) != len(_FAMILIES[self.family]):
            raise ConfigError(f"{self.family} prior takes {_FAMILIES[self.family]}")
        a = self.args
        bad = (
            (self.family == "uniform" and not a[0] < a[1])
            or (self.family == "beta" and min(a) <= 0)
            or (self.family in ("normal", "lognormal") and a[1] <= 0)
            or (self.family == "gamma" and min(a) <= 0)
        )
        if bad:
            raise ConfigError(f"improper {self.family} prior with arguments {a}")

    @classmethod
    def fixed(cls, value: float) -> "Prior":
        return cls("fixed", (value,))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Prior":
        d = dict(d)
        family = d.pop("dist", None)
        if family not in _FAMILIES:
            raise ConfigError(f"prior needs 'dist' in {sorted(_FAMILIES)}, got {family!r}")
        try:
            args = tuple(d.pop(k) for k in _FAMILIES[family])
        except KeyError as exc:
            raise ConfigError(f"{family} prior missing field {exc.args[0]!r}") from None
        if d:
            raise ConfigError(f"{family} prior has unknown fields {sorted(d)}")
        return cls(family, args)

    def to_dict(self) -> dict:
        return {"dist": self.family, **dict(zip(_FAMILIES[self.family], self.args))}

    @property
    def is_fixed(self) -> bool:
        return self.family == "fixed"

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        a = self.args
        if self.family == "fixed":
            return np.full(size, a[0])
        if self.family == "uniform":
            return rng.uniform(a[0], a[1], size)
        if self.family == "beta":
            return rng.beta(a[0], a[1], size)
        if self.family == "normal":
            return rng.normal(a[0], a[1], size)
        if self.family == "lognormal":
            return rng.lognormal(a[0], a[1], size)
        return rng.gamma(a[0], a[1], size)

    def mean(self) -> float:
        a = self.args
        return {
            "fixed": lambda: a[0],
            "uniform": lambda: 0.5 * (a[0] + a[1]),
            "beta": lambda: a[0] / (a[0] + a[1]),
            "normal": lambda: a[0],
            "lognormal": lambda: float(np.exp(a[0] + 0.5 * a[1] ** 2)),
            "gamma": lambda: a[0] * a[1],
        }[self.family]()

    # Unconstrained reparameterization used when jittering parameter particles.
    def to_unconstrained(self, x: np.ndarray) -> np.ndarray:
        if self.family == "uniform":
            lo, hi = self.args
            return logit(np.clip((x - lo) / (hi - lo), 1e-15, 1 - 1e-15))
        if self.family == "beta":
            return logit(np.clip(x, 1e-15, 1 - 1e-15))
        if self.family in ("lognormal", "gamma"):
            return np.log(np.maximum(x, 1e-300))
        return np.asarray(x, dtype=float)

    def from_unconstrained(self, z: np.ndarray) -> np.ndarray:
        if self.family == "uniform":
            lo, hi = self.args
            return lo + (hi - lo) * expit(z)
        if self.family == "beta":
            return expit(z)
        if self.family in ("lognormal", "gamma"):
            return np.exp(z)
        return np.asarray(z, dtype=float)


_INIT_FAMILIES = {
    "fixed": ("value",),
    "poisson": ("mean",),
    "uniform": ("low", "high"),
    "normal": ("mean", "sd"),
}


@dataclass(frozen=True)
class InitialEntry:
    """Distribution of the initial count in each cell matched by ``cells``.

    Numeric arguments may be parameter names, resolved against theta.
    ``uniform`` is the discrete uniform on ``low..high`` inclusive.
    ``normal`` draws are truncated at zero.
    """

    cells: Mapping = field(default_factory=dict)
    dist: str = "fixed"
    args: tuple = (0.0,)

    def __post_init__(self):
        if self.dist not in _INIT_FAMILIES:
            raise ConfigError(f"unknown initial-state family {self.dist!r}")
        if len(self.args) != len(_INIT_FAMILIES[self.dist]):
            raise ConfigError(f"initial {self.dist} takes {_INIT_FAMILIES[self.dist]}")
        object.__setattr__(self, "cells", dict(self.cells))

    @classmethod
    def from_dict(cls, d: Mapping) -> "InitialEntry":
        d = dict(d)
        cells = d.pop("cells", {})
        dist = d.pop("dist", "fixed")
        if dist not in _INIT_FAMILIES:
            raise ConfigError(f"unknown initial-state family {dist!r}")
        try:
            args = tuple(d.pop(k) for k in _INIT_FAMILIES[dist])
        except KeyError as exc:
            raise ConfigError(f"initial {dist} missing field {exc.args[0]!r}") from None
        if d:
            raise ConfigError(f"initial entry has unknown fields {sorted(d)}")
        return cls(cells, dist, args)

    def to_dict(self) -> dict:
        return {"cells": dict(self.cells), "dist": self.dist,
                **dict(zip(_INIT_FAMILIES[self.dist], self.args))}


def _arg(ref, theta: Mapping[str, np.ndarray], size: int) -> np.ndarray:
    if isinstance(ref, str):
        if ref not in theta:
            raise ConfigError(f"initial state references unknown parameter {ref!r}")
        return np.broadcast_to(np.asarray(theta[ref], dtype=float), (size,))
    return np.full(size, float(ref))


def sample_initial(entries, schema: StateSchema, theta: Mapping, size: int,
                   rng: np.random.Generator, integer: bool = True) -> np.ndarray:
    """Draw ``size`` initial states, shape ``(size, D)``. Unlisted cells start empty."""
    out = np.zeros((size, schema.size))
    for entry in entries:
        args = [_arg(a, theta, size) for a in entry.args]
        for c in schema.select(entry.cells):
            if entry.dist == "fixed":
                out[:, c] = args[0]
            elif entry.dist == "poisson":
                out[:, c] = rng.poisson(args[0])
            elif entry.dist == "uniform":
                out[:, c] = rng.integers(args[0].astype(np.int64), args[1].astype(np.int64) + 1)
            else:
                out[:, c] = np.maximum(rng.normal(args[0], args[1]), 0.0)
    if integer:
        return np.rint(out).astype(np.int64)
    return out


def initial_pmf(entries, schema: StateSchema, theta: Mapping, bound: int, tail: float = 1e-12):
    """Per-cell exact pmfs of the initial state on ``0..bound`` (for enumeration).

    Returns ``(pmfs, lost)`` where ``pmfs[c]`` is an array over counts and
    ``lost`` is the mass truncated beyond ``bound`` or the Poisson tail.
    """
    from scipy import stats

    pmfs = [np.eye(bound + 1)[0] for _ in range(schema.size)]
    lost = 0.0
    for entry in entries:
        args = [float(_arg(a, theta, 1)[0]) for a in entry.args]
        for c in schema.select(entry.cells):
            k = np.arange(bound + 1)
            if entry.dist == "fixed":
                v = int(round(args[0]))
                if v > bound:
                    raise ConfigError(f"fixed initial count {v} exceeds bound {bound}")
                pmf = (k == v).astype(float)
            elif entry.dist == "poisson":
                pmf = stats.poisson.pmf(k, args[0])
            elif entry.dist == "uniform":
                lo, hi = int(args[0]), int(args[1])
                pmf = ((k >= lo) & (k <= hi)) / (hi - lo + 1.0)
            else:
                raise ConfigError("normal initial states cannot be enumerated")
            lost += max(0.0, 1.0 - pmf.sum())
            pmfs[c] = pmf
    return pmfs, lost
