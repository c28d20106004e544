"""Per-process operators: survival, aging, growth, movement, birth, harvest, sex assignment.

Each process is applied to a batch of states of shape ``(R, D)``. Rates are
first *resolved* (theta, covariates and density summaries turned into
numbers), then the process is applied with one of three samplers:

``integer``
    exact demographic stochasticity (binomial, multinomial, Poisson).
``expectation``
    the conditional mean, so the process acts as its projection matrix.
``normal``
    moment-matched normal approximation, clipped to the feasible range.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError, SchemaError, StateError, UnsupportedError
from .rates import (
    Constant,
    RateContext,
    RateModel,
    Ref,
    _ref,
    _ref_from_json,
    _ref_to_json,
    check_range,
    logistic_movement,
    rate_from_dict,
)
from .schema import StateSchema, StateVector, check_state

MODES = ("integer", "expectation", "normal")
_POISSON_MAX = 1e15


class Sampler:
    """Draws binomial and Poisson variates according to ``mode``."""

    def __init__(self, mode: str = "integer", rng: np.random.Generator | None = None):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
        if mode != "expectation" and rng is None:
            raise ConfigError(f"{mode} mode needs a random stream")
        self.mode = mode
        self.rng = rng

    def binomial(self, n, p):
        p = np.clip(p, 0.0, 1.0)
        if self.mode == "integer":
            return self.rng.binomial(n, p)
        mean = n * p
        if self.mode == "expectation":
            return mean
        sd = np.sqrt(np.maximum(mean * (1 - p), 0.0))
        return np.clip(mean + sd * self.rng.standard_normal(np.shape(mean)), 0.0, n)

    def poisson(self, lam):
        if self.mode == "integer":
            if np.any(lam > _POISSON_MAX):
                raise StateError(f"Poisson mean {np.max(lam):.3g} overflows the integer state range")
            return self.rng.poisson(lam)
        if self.mode == "expectation":
            return lam
        return np.maximum(lam + np.sqrt(lam) * self.rng.standard_normal(np.shape(lam)), 0.0)

    def multinomial(self, n, probs):
        """Split counts ``n`` (shape ``(R,)``) over ``probs`` (``(R, L)``) by
        sequential conditional binomials; the parts always sum to ``n``."""
        probs = np.asarray(probs, dtype=float)
        L = probs.shape[-1]
        out = np.zeros(probs.shape, dtype=np.asarray(n).dtype if self.mode == "integer" else float)
        remaining = np.array(n, copy=True)
        rest = np.ones(probs.shape[:-1])
        for j in range(L - 1):
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(rest > 0, probs[..., j] / rest, 0.0)
            x = self.binomial(remaining, np.clip(q, 0.0, 1.0))
            out[..., j] = x
            remaining = remaining - x
            rest = rest - probs[..., j]
        out[..., L - 1] = remaining
        return out


@dataclass(frozen=True)
class Binding:
    """A rate model attached to the cells matched by ``cells``."""

    cells: Mapping
    rate: RateModel

    def __hash__(self):
        return hash((tuple(sorted((k, str(v)) for k, v in self.cells.items())), self.rate.to_dict().__repr__()))

    def to_dict(self):
        return {"cells": dict(self.cells), "rate": self.rate.to_dict()}

    @classmethod
    def from_dict(cls, d):
        if "rate" not in d:
            raise ConfigError("rate binding needs a 'rate'")
        return cls(dict(d.get("cells", {})), rate_from_dict(d["rate"]))


@dataclass(frozen=True)
class ProjectionMatrix:
    """Expectation matrix of one or several processes, batched over particles.

    ``values`` has shape ``(D, D)`` or ``(R, D, D)``; ``provenance`` lists the
    process kinds in the order they were applied.
    """

    values: np.ndarray
    provenance: tuple[str, ...] = ()

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __matmul__(self, other):
        if isinstance(other, ProjectionMatrix):
            return ProjectionMatrix(self.values @ other.values, other.provenance + self.provenance)
        return self.values @ np.asarray(other)

    @property
    def shape(self):
        return self.values.shape


class Process:
    """Base class. Subclasses set ``kind``, ``rate_bounds`` and ``default_rate``."""

    kind = ""
    rate_bounds: tuple[float, float] = (0.0, 1.0)
    default_rate = 0.0
    always_deterministic = False

    def __init__(self, rates: Sequence[Binding] = (), stochastic: bool = True):
        self.rates = tuple(b if isinstance(b, Binding) else Binding.from_dict(b) for b in rates)
        self.stochastic = bool(stochastic)
        self._compiled: dict = {}

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"

    # -- structure -----------------------------------------------------------
    def rate_models(self) -> list[RateModel]:
        return [b.rate for b in self.rates]

    def params(self) -> set[str]:
        out = set()
        for rm in self.rate_models():
            out |= rm.params()
        return out

    def covariate_names(self) -> set[str]:
        out = set()
        for rm in self.rate_models():
            out |= rm.covariate_names()
        return out

    def states_read(self) -> set[str]:
        return {rm.reads_state() for rm in self.rate_models() if rm.reads_state()}

    def compile(self, schema: StateSchema):
        if schema not in self._compiled:
            self._compiled[schema] = self._compile(schema)
        return self._compiled[schema]

    def _compile(self, schema: StateSchema):
        return {"cells": [schema.select(b.cells) for b in self.rates]}

    # -- rates ---------------------------------------------------------------
    def resolve(self, theta: Mapping, ctx: RateContext, index: int = 0) -> np.ndarray:
        """Per-cell rates, shape ``(R, D)``. Unbound cells get ``default_rate``."""
        schema = ctx.schema
        comp = self.compile(schema)
        out = np.full((ctx.size, schema.size), float(self.default_rate))
        for b, (binding, cells) in enumerate(zip(self.rates, comp["cells"])):
            key = f"{index}.{b}"
            if binding.rate.cell_dependent:
                for c in cells:
                    ctx.cell = c
                    out[:, c] = binding.rate.resolve(theta, ctx, key)
                ctx.cell = None
            elif cells:
                ctx.cell = cells[0]
                out[:, cells] = binding.rate.resolve(theta, ctx, key)[:, None]
                ctx.cell = None
        check_range(out, self.rate_bounds, self.kind)
        return out

    # -- dynamics ------------------------------------------------------------
    def apply(self, x: np.ndarray, resolved: np.ndarray, schema: StateSchema, draw: Sampler) -> np.ndarray:
        raise NotImplementedError

    def matrix(self, resolved: np.ndarray, schema: StateSchema) -> np.ndarray:
        """Expectation matrices, shape ``(R, D, D)``; ``E[out] = M @ x``."""
        raise NotImplementedError

    # -- config --------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if not self.always_deterministic:
            d["stochastic"] = self.stochastic
        if self.rates:
            d["rates"] = [b.to_dict() for b in self.rates]
        return d


class Survival(Process):
    """Binomial thinning: each individual survives with probability ``phi``."""

    kind = "survival"
    default_rate = 1.0

    def apply(self, x, resolved, schema, draw):
        return draw.binomial(x, resolved)

    def matrix(self, resolved, schema):
        return resolved[:, :, None] * np.eye(schema.size)


class Harvest(Process):
    """Binomial removal: each individual is taken with probability ``h``."""

    kind = "harvest"

    def apply(self, x, resolved, schema, draw):
        return x - draw.binomial(x, resolved)

    def matrix(self, resolved, schema):
        return (1.0 - resolved)[:, :, None] * np.eye(schema.size)


class _AxisProcess(Process):
    def __init__(self, axis: str, rates=(), stochastic=True):
        super().__init__(rates, stochastic)
        if not axis:
            raise ConfigError(f"{self.kind} process needs an axis")
        self.axis = axis

    def to_dict(self):
        return {**super().to_dict(), "axis": self.axis}


class Aging(_AxisProcess):
    """Deterministic shift along ``axis``: level i -> i+1, the last level absorbs.

    ``mapping`` (source level -> destination level) overrides the default.
    """

    kind = "aging"
    always_deterministic = True

    def __init__(self, axis: str, mapping: Mapping | None = None):
        super().__init__(axis, (), stochastic=False)
        self.mapping = {str(k): str(v) for k, v in (mapping or {}).items()}

    def _compile(self, schema):
        levels = schema.axis(self.axis).levels
        mapping = {lv: levels[min(i + 1, len(levels) - 1)] for i, lv in enumerate(levels)}
        unknown = set(self.mapping) - set(levels) | set(self.mapping.values()) - set(levels)
        if unknown:
            raise SchemaError(f"aging map references unknown levels {sorted(unknown)}")
        mapping.update(self.mapping)
        dest = np.array([schema.shift(c, self.axis, mapping[schema.cell_labels(c)[self.axis]])
                         for c in range(schema.size)])
        A = np.zeros((schema.size, schema.size))
        A[dest, np.arange(schema.size)] = 1.0
        return {"cells": [], "dest": dest, "A": A}

    def resolve(self, theta, ctx, index=0):
        return np.zeros((ctx.size, 0))

    def apply(self, x, resolved, schema, draw):
        return x @ self.compile(schema)["A"].T.astype(x.dtype)

    def matrix(self, resolved, schema):
        return np.broadcast_to(self.compile(schema)["A"], (resolved.shape[0], schema.size, schema.size)).copy()

    def to_dict(self):
        d = {"kind": self.kind, "axis": self.axis}
        if self.mapping:
            d["mapping"] = dict(self.mapping)
        return d


class Growth(_AxisProcess):
    """Binomial advancement to the next level of ``axis`` with probability ``pi``.

    Individuals already at the last level stay there.
    """

    kind = "growth"

    def _compile(self, schema):
        levels = schema.axis(self.axis).levels
        nxt = np.full(schema.size, -1)
        for c in range(schema.size):
            i = levels.index(schema.cell_labels(c)[self.axis])
            if i + 1 < len(levels):
                nxt[c] = schema.shift(c, self.axis, levels[i + 1])
        return {**super()._compile(schema), "next": nxt}

    def resolve(self, theta, ctx, index=0):
        out = super().resolve(theta, ctx, index)
        out[:, self.compile(ctx.schema)["next"] < 0] = 0.0
        return out

    def apply(self, x, resolved, schema, draw):
        nxt = self.compile(schema)["next"]
        src = np.flatnonzero(nxt >= 0)
        adv = draw.binomial(x[:, src], resolved[:, src])
        out = x.astype(np.result_type(x, adv))
        out[:, src] -= adv
        np.add.at(out, (slice(None), nxt[src]), adv)
        return out

    def matrix(self, resolved, schema):
        nxt = self.compile(schema)["next"]
        R, D = resolved.shape
        M = np.broadcast_to(np.eye(D), (R, D, D)).copy()
        for c in np.flatnonzero(nxt >= 0):
            M[:, c, c] -= resolved[:, c]
            M[:, nxt[c], c] += resolved[:, c]
        return M


class Birth(_AxisProcess):
    """Poisson births: ``Poisson(lambda * parents)`` added to the newborn cell.

    The newborn cell of a parent shares its labels except on ``axis``, where it
    takes ``newborn`` (default: the first level). Parents are unchanged.
    """

    kind = "birth"
    rate_bounds = (0.0, np.inf)

    def __init__(self, axis: str, rates=(), stochastic=True, newborn: str | None = None):
        super().__init__(axis, rates, stochastic)
        self.newborn = None if newborn is None else str(newborn)

    def _compile(self, schema):
        level = self.newborn if self.newborn is not None else schema.axis(self.axis).levels[0]
        schema.axis(self.axis).index(level)
        child = np.array([schema.shift(c, self.axis, level) for c in range(schema.size)])
        comp = super()._compile(schema)
        parents = sorted({c for cells in comp["cells"] for c in cells})
        return {**comp, "child": child, "parents": np.array(parents, dtype=int)}

    def apply(self, x, resolved, schema, draw):
        comp = self.compile(schema)
        par = comp["parents"]
        if par.size == 0:
            return x.copy()
        births = draw.poisson(resolved[:, par] * x[:, par])
        out = x.astype(np.result_type(x, births))
        np.add.at(out, (slice(None), comp["child"][par]), births)
        return out

    def matrix(self, resolved, schema):
        comp = self.compile(schema)
        R, D = resolved.shape
        M = np.broadcast_to(np.eye(D), (R, D, D)).copy()
        for c in comp["parents"]:
            M[:, comp["child"][c], c] += resolved[:, c]
        return M

    def to_dict(self):
        d = super().to_dict()
        if self.newborn is not None:
            d["newborn"] = self.newborn
        return d


class SexAssignment(_AxisProcess):
    """Binomial split: each individual in a bound cell moves from its level on
    ``axis`` to ``target`` with probability ``r``."""

    kind = "sex_assignment"

    def __init__(self, axis: str, target: str, rates=(), stochastic=True):
        super().__init__(axis, rates, stochastic)
        self.target = str(target)

    def _compile(self, schema):
        schema.axis(self.axis).index(self.target)
        partner = np.array([schema.shift(c, self.axis, self.target) for c in range(schema.size)])
        return {**super()._compile(schema), "partner": partner}

    def resolve(self, theta, ctx, index=0):
        out = super().resolve(theta, ctx, index)
        partner = self.compile(ctx.schema)["partner"]
        out[:, partner == np.arange(ctx.schema.size)] = 0.0
        return out

    def apply(self, x, resolved, schema, draw):
        partner = self.compile(schema)["partner"]
        src = np.flatnonzero(partner != np.arange(schema.size))
        moved = draw.binomial(x[:, src], resolved[:, src])
        out = x.astype(np.result_type(x, moved))
        out[:, src] -= moved
        np.add.at(out, (slice(None), partner[src]), moved)
        return out

    def matrix(self, resolved, schema):
        partner = self.compile(schema)["partner"]
        R, D = resolved.shape
        M = np.broadcast_to(np.eye(D), (R, D, D)).copy()
        for c in np.flatnonzero(partner != np.arange(D)):
            M[:, c, c] -= resolved[:, c]
            M[:, partner[c], c] += resolved[:, c]
        return M

    def to_dict(self):
        return {**super().to_dict(), "target": self.target}


@dataclass(frozen=True)
class UniformDispersal:
    """Stay with probability ``1 - mu``, otherwise move to one of the other
    levels uniformly at random."""

    rate: RateModel = field(default_factory=lambda: Constant(0.0))
    form = "uniform"

    def transfer(self, theta, ctx, key, L):
        mu = self.rate.resolve(theta, ctx, key)
        check_range(mu, (0.0, 1.0), "movement")
        if L == 1:
            return np.ones((ctx.size, 1, 1))
        off = (1.0 - np.eye(L)) / (L - 1)
        return (1.0 - mu)[:, None, None] * np.eye(L) + mu[:, None, None] * off

    def params(self):
        return self.rate.params()

    def covariate_names(self):
        return self.rate.covariate_names()

    def reads_state(self):
        return self.rate.reads_state()

    def to_dict(self):
        return {"form": "uniform", "rate": self.rate.to_dict()}


@dataclass(frozen=True)
class DensityDistanceDispersal:
    """Movement towards regions that are close and below capacity.

    See :func:`popkit.rates.logistic_movement`. Regional density is the sum of
    the cells matched by ``density_cells`` in state ``state`` for each region.
    """

    distances: tuple
    capacities: tuple
    decay: Ref = 0.0
    density_weight: Ref = 1.0
    fidelity: Ref = 0.0
    state: str = "n_prev"
    density_cells: Mapping = field(default_factory=dict)
    form = "density_distance"

    def __post_init__(self):
        object.__setattr__(self, "distances", tuple(tuple(float(v) for v in row) for row in self.distances))
        object.__setattr__(self, "capacities", tuple(float(v) for v in self.capacities))
        object.__setattr__(self, "density_cells", dict(self.density_cells))

    def __hash__(self):
        return hash((self.distances, self.capacities, self.decay, self.density_weight, self.fidelity, self.state))

    def transfer(self, theta, ctx, key, L, axis=None):
        if len(self.capacities) != L:
            raise SchemaError(f"movement has {len(self.capacities)} capacities for {L} regions")
        if self.state not in ctx.states:
            raise UnsupportedError(f"density-dependent movement needs state {self.state!r}")
        x = np.asarray(ctx.states[self.state], dtype=float)
        schema = ctx.schema
        levels = schema.axis(axis).levels
        counts = np.stack([x[:, schema.select({**self.density_cells, axis: lv})].sum(axis=1) for lv in levels], axis=1)
        return logistic_movement(
            counts, np.array(self.distances), np.array(self.capacities),
            np.broadcast_to(_ref(self.decay, theta), (ctx.size,)),
            np.broadcast_to(_ref(self.density_weight, theta), (ctx.size,)),
            np.broadcast_to(_ref(self.fidelity, theta), (ctx.size,)),
        )

    def params(self):
        return {v for v in (self.decay, self.density_weight, self.fidelity) if isinstance(v, str)}

    def covariate_names(self):
        return set()

    def reads_state(self):
        return self.state

    def to_dict(self):
        return {"form": "density_distance", "distances": [list(r) for r in self.distances],
                "capacities": list(self.capacities), "decay": _ref_to_json(self.decay),
                "density_weight": _ref_to_json(self.density_weight), "fidelity": _ref_to_json(self.fidelity),
                "state": self.state, "density_cells": dict(self.density_cells)}


def dispersal_from_dict(d: Mapping):
    d = dict(d)
    form = d.pop("form", "uniform")
    if form == "uniform":
        return UniformDispersal(rate_from_dict(d.pop("rate", 0.0)))
    if form == "density_distance":
        return DensityDistanceDispersal(
            d["distances"], d["capacities"], _ref_from_json(d.get("decay", 0.0)),
            _ref_from_json(d.get("density_weight", 1.0)), _ref_from_json(d.get("fidelity", 0.0)),
            d.get("state", "n_prev"), d.get("density_cells", {}))
    raise ConfigError(f"unknown movement form {form!r}")


class Movement(_AxisProcess):
    """Multinomial redistribution of the ``movers`` cells across levels of ``axis``.

    Resolved rates are transfer matrices of shape ``(R, L, L)`` whose entry
    ``[i, j]`` is the probability of moving from level i to level j; rows sum
    to one. Cells outside ``movers`` stay put.
    """

    kind = "movement"

    def __init__(self, axis: str, dispersal, movers: Mapping | None = None, stochastic=True):
        super().__init__(axis, (), stochastic)
        self.dispersal = dispersal if not isinstance(dispersal, Mapping) else dispersal_from_dict(dispersal)
        self.movers = dict(movers or {})

    def params(self):
        return set(self.dispersal.params())

    def covariate_names(self):
        return set(self.dispersal.covariate_names())

    def states_read(self):
        s = self.dispersal.reads_state()
        return {s} if s else set()

    def _compile(self, schema):
        levels = schema.axis(self.axis).levels
        movers = schema.select(self.movers)
        src_level = np.array([levels.index(schema.cell_labels(c)[self.axis]) for c in movers], dtype=int)
        dests = np.array([[schema.shift(c, self.axis, lv) for lv in levels] for c in movers], dtype=int)
        return {"cells": [], "movers": np.array(movers, dtype=int), "level": src_level, "dests": dests, "L": len(levels)}

    def resolve(self, theta, ctx, index=0):
        L = self.compile(ctx.schema)["L"]
        if isinstance(self.dispersal, DensityDistanceDispersal):
            T = self.dispersal.transfer(theta, ctx, f"{index}.0", L, self.axis)
        else:
            T = self.dispersal.transfer(theta, ctx, f"{index}.0", L)
        if np.any(T < 0) or not np.allclose(T.sum(axis=-1), 1.0):
            raise DomainError("movement transfer rows must be non-negative and sum to one")
        return T

    def apply(self, x, resolved, schema, draw):
        comp = self.compile(schema)
        movers, level, dests = comp["movers"], comp["level"], comp["dests"]
        if movers.size == 0:
            return x.copy()
        work_dtype = x.dtype if draw.mode == "integer" else float
        out = x.astype(work_dtype, copy=True)
        out[:, movers] = 0
        for m, c in enumerate(movers):
            parts = draw.multinomial(x[:, c], resolved[:, level[m], :])
            out[:, dests[m]] += parts
        return out

    def matrix(self, resolved, schema):
        comp = self.compile(schema)
        R = resolved.shape[0]
        D = schema.size
        M = np.broadcast_to(np.eye(D), (R, D, D)).copy()
        for m, c in enumerate(comp["movers"]):
            M[:, c, c] = 0.0
            for j, dest in enumerate(comp["dests"][m]):
                M[:, dest, c] += resolved[:, comp["level"][m], j]
        return M

    def to_dict(self):
        d = {"kind": self.kind, "stochastic": self.stochastic, "axis": self.axis,
             "dispersal": self.dispersal.to_dict()}
        if self.movers:
            d["movers"] = dict(self.movers)
        return d


_KINDS = {cls.kind: cls for cls in (Survival, Harvest, Aging, Growth, Birth, SexAssignment, Movement)}
KINDS = tuple(_KINDS)


def process_from_dict(d: Mapping) -> Process:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ConfigError(f"unknown process kind {kind!r}; choose from {sorted(_KINDS)}")
    stochastic = d.pop("stochastic", True)
    rates = [Binding.from_dict(b) for b in d.pop("rates", [])]
    try:
        if kind in ("survival", "harvest"):
            p = _KINDS[kind](rates, stochastic)
        elif kind == "aging":
            p = Aging(d.pop("axis"), d.pop("mapping", None))
        elif kind == "growth":
            p = Growth(d.pop("axis"), rates, stochastic)
        elif kind == "birth":
            p = Birth(d.pop("axis"), rates, stochastic, d.pop("newborn", None))
        elif kind == "sex_assignment":
            p = SexAssignment(d.pop("axis"), d.pop("target"), rates, stochastic)
        else:
            p = Movement(d.pop("axis"), dispersal_from_dict(d.pop("dispersal")), d.pop("movers", None), stochastic)
    except KeyError as exc:
        raise ConfigError(f"{kind} process missing field {exc.args[0]!r}") from None
    if d:
        raise ConfigError(f"{kind} process has unknown fields {sorted(d)}")
    return p


# -- functional surface ------------------------------------------------------

def _as_batch(state, schema: StateSchema):
    if isinstance(state, StateVector):
        return np.atleast_2d(state.values), True
    x = np.asarray(state)
    return np.atleast_2d(x), False


def apply_process(process: Process, state, resolved: np.ndarray, schema: StateSchema,
                  rng: np.random.Generator | None = None, mode: str = "integer"):
    """Apply one process to a state (``StateVector`` or array ``(D,)``/``(R, D)``).

    ``resolved`` comes from :meth:`Process.resolve` (or is a ``(D,)``/``(R, D)``
    array of per-cell rates, or ``(L, L)``/``(R, L, L)`` transfer matrices for
    movement). Processes flagged non-stochastic use their expectation.
    """
    x, wrap = _as_batch(state, schema)
    integer = mode == "integer"
    check_state(x, schema.size, integer)
    if integer and not np.issubdtype(x.dtype, np.integer):
        x = x.astype(np.int64)
    resolved = np.asarray(resolved, dtype=float)
    if isinstance(process, Movement):
        resolved = resolved if resolved.ndim == 3 else resolved[None]
    elif resolved.ndim == 1:
        resolved = resolved[None]
    if resolved.shape[0] == 1 and x.shape[0] > 1:
        resolved = np.broadcast_to(resolved, (x.shape[0],) + resolved.shape[1:])
    if isinstance(process, Movement):
        if np.any(resolved < 0) or not np.allclose(resolved.sum(axis=-1), 1.0):
            raise DomainError("movement transfer rows must be non-negative and sum to one")
    elif not isinstance(process, Aging):
        check_range(resolved, process.rate_bounds, process.kind)
    if not process.stochastic or process.always_deterministic:
        draw = Sampler("expectation") if not integer or process.always_deterministic else None
        if draw is None:
            raise ConfigError(f"deterministic {process.kind} is not allowed in integer mode")
    else:
        draw = Sampler(mode, rng)
    out = process.apply(x, resolved, schema, draw)
    if integer:
        out = out.astype(np.int64)
    if wrap:
        return StateVector(schema, out[0], t=state.t, k=state.k + 1, integer=integer)
    return out if np.ndim(state) == 2 else out[0]


def expectation_matrix(process: Process, resolved: np.ndarray, schema: StateSchema) -> ProjectionMatrix:
    """``M`` with ``E[apply_process(x)] = M @ x`` for the given resolved rates."""
    resolved = np.asarray(resolved, dtype=float)
    single = (resolved.ndim == 2 and isinstance(process, Movement)) or resolved.ndim == 1
    if single:
        resolved = resolved[None]
    M = process.matrix(resolved, schema)
    return ProjectionMatrix(M[0] if single else M, (process.kind,))
