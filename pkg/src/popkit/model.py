"""Population models: an ordered process pipeline with priors.

The annual state equation is the composition of the processes in order,
``n_t = P_K(...P_2(P_1(n_{t-1})))``; the intermediate state after process k
is exposed to rates as ``"u<k>"`` and the start-of-year state as ``"n_prev"``.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, UnsupportedError
from .observation import ObservationModel
from .priors import InitialEntry, Prior, sample_initial
from .processes import (
    MODES,
    Aging,
    Binding,
    Birth,
    Growth,
    Movement,
    Process,
    ProjectionMatrix,
    Sampler,
    Survival,
    UniformDispersal,
)
from .rates import Constant, RateContext
from .schema import StateSchema, StateVector, check_state


class PopulationModel:
    """Schema, ordered processes, priors, observation model and horizon.

    Parameters
    ----------
    schema : StateSchema
    processes : sequence of Process
        Applied in order each year.
    parameters : mapping name -> Prior
        Every parameter referenced by a rate, the initial state or the
        observation model must appear here.
    initial : sequence of InitialEntry
        Prior for the start-of-series state.
    observation : ObservationModel, optional
    start_year : int
        Year label of the initial state; the first projected year is
        ``start_year + 1``.
    horizon : int
        Number of projected years.
    mode : {"integer", "expectation", "normal"}
        How stochastic processes are realized.
    """

    def __init__(self, schema: StateSchema, processes: Sequence[Process], parameters: Mapping[str, Prior] | None = None,
                 initial: Sequence[InitialEntry] = (), observation: ObservationModel | None = None,
                 start_year: int = 0, horizon: int = 1, mode: str = "integer", name: str = "model"):
        self.name = name
        self.schema = schema
        self.processes = tuple(processes)
        self.parameters = dict(parameters or {})
        self.initial = tuple(initial)
        self.observation = observation
        self.start_year = int(start_year)
        self.horizon = int(horizon)
        self.mode = mode
        self._validate()

    def _validate(self):
        if not self.processes:
            raise ConfigError("a population model needs at least one process")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.horizon < 0:
            raise ConfigError("horizon must be non-negative")
        for name, prior in self.parameters.items():
            if not isinstance(prior, Prior):
                raise ConfigError(f"parameter {name!r} needs a Prior")
        missing = self.referenced_params() - set(self.parameters)
        if missing:
            raise ConfigError(f"unresolved parameters {sorted(missing)}; add priors for them")
        for k, p in enumerate(self.processes, start=1):
            p.compile(self.schema)
            for state in p.states_read():
                if state != "n_prev" and not 1 <= int(state[1:]) < k:
                    raise ConfigError(f"process {k} ({p.kind}) reads {state!r}, which is not yet available")
            if self.mode == "integer" and not p.stochastic and not p.always_deterministic:
                raise ConfigError(f"process {k} ({p.kind}) is deterministic but the model is in integer mode")
        for entry in self.initial:
            self.schema.select(entry.cells)
        if self.observation is not None:
            self.observation.aggregation(self.schema)

    def __eq__(self, other):
        from .config import model_to_dict
        return isinstance(other, PopulationModel) and model_to_dict(self) == model_to_dict(other)

    def __repr__(self):
        kinds = ", ".join(p.kind for p in self.processes)
        return f"PopulationModel({self.name!r}, D={self.schema.size}, processes=[{kinds}])"

    # -- structure -------------------------------------------------------------
    def referenced_params(self) -> set[str]:
        out = set()
        for p in self.processes:
            out |= p.params()
        for e in self.initial:
            out |= {a for a in e.args if isinstance(a, str)}
        if self.observation is not None:
            out |= self.observation.params()
        return out

    def covariate_names(self) -> set[str]:
        out = set()
        for p in self.processes:
            out |= p.covariate_names()
        return out

    @property
    def param_names(self) -> list[str]:
        return sorted(self.parameters)

    @property
    def free_params(self) -> list[str]:
        return [k for k in self.param_names if not self.parameters[k].is_fixed]

    @property
    def integer(self) -> bool:
        return self.mode == "integer"

    @property
    def years(self) -> list[int]:
        return list(range(self.start_year + 1, self.start_year + self.horizon + 1))

    # -- sampling --------------------------------------------------------------
    def sample_prior(self, size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {k: self.parameters[k].sample(rng, size) for k in self.param_names}

    def sample_initial(self, theta: Mapping, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        if size is None:
            size = len(next(iter(theta.values()))) if theta else 1
        return sample_initial(self.initial, self.schema, theta, size, rng, integer=self.integer)

    def propagate(self, state, theta, year, rng, covariates=None, memory=None, mode=None):
        """Advance a batch of states one year. Returns ``(n_next, memory)``."""
        memory = {} if memory is None else dict(memory)
        n_next, _ = compose_annual(self, state, theta, year, rng, covariates, memory=memory, mode=mode)
        return n_next, memory

    def log_likelihood(self, y, state, theta, year=None, variances=None) -> np.ndarray:
        if self.observation is None:
            raise ConfigError(f"model {self.name!r} has no observation model")
        return self.observation.log_likelihood(y, state, theta, self.schema, variances)

    def expected_observation(self, state, theta) -> np.ndarray:
        if self.observation is None:
            raise ConfigError(f"model {self.name!r} has no observation model")
        return self.observation.expected(np.asarray(state, dtype=float), theta, self.schema)

    def simulate_observation(self, state, theta, rng, variances=None) -> np.ndarray:
        if self.observation is None:
            raise ConfigError(f"model {self.name!r} has no observation model")
        return self.observation.simulate(state, theta, self.schema, rng, variances)

    def transforms(self) -> dict[str, Prior]:
        """Priors of the free parameters (used to map them to an unconstrained scale)."""
        return {k: self.parameters[k] for k in self.free_params}

    @property
    def observed_names(self) -> list[str]:
        return self.observation.names if self.observation is not None else []


def _batch_theta(theta: Mapping, size: int) -> dict[str, np.ndarray]:
    return {k: np.broadcast_to(np.asarray(v, dtype=float).reshape(-1), (size,)) if np.size(v) == 1
            else np.asarray(v, dtype=float) for k, v in theta.items()}


def compose_annual(model: PopulationModel, n_prev, theta: Mapping, year: int | None = None,
                   rng: np.random.Generator | None = None, covariates=None, memory: dict | None = None,
                   mode: str | None = None):
    """Apply the model's processes in order for one year.

    ``n_prev`` is a ``StateVector`` or an array ``(D,)``/``(R, D)``. Returns
    ``(n_next, intermediates)`` where ``intermediates`` holds ``u_1 .. u_K``
    (``u_K`` is ``n_next``). ``memory`` carries autoregressive random-effect
    state between years and is updated in place.
    """
    mode = mode or model.mode
    wrap = isinstance(n_prev, StateVector)
    x = np.atleast_2d(n_prev.values if wrap else np.asarray(n_prev))
    integer = mode == "integer"
    check_state(x, model.schema.size, integer)
    x = x.astype(np.int64) if integer else x.astype(float)
    size = x.shape[0]
    theta = _batch_theta(theta, size)
    ctx = RateContext(size=size, schema=model.schema, year=year, covariates=covariates,
                      states={"n_prev": x}, rng=rng, memory={} if memory is None else memory)
    draw_mode = Sampler(mode, rng) if mode != "expectation" else Sampler("expectation")
    inter = []
    for k, proc in enumerate(model.processes, start=1):
        resolved = proc.resolve(theta, ctx, k)
        if proc.always_deterministic or not proc.stochastic:
            draw = Sampler("expectation")
        else:
            draw = draw_mode
        x = proc.apply(x, resolved, model.schema, draw)
        if integer:
            x = x.astype(np.int64)
        ctx.states[f"u{k}"] = x
        inter.append(x)
    if wrap:
        t = n_prev.t + 1
        inter = [StateVector(model.schema, u[0], t=t, k=k, integer=integer) for k, u in enumerate(inter, start=1)]
        return inter[-1], inter
    if np.ndim(n_prev) == 1:
        inter = [u[0] for u in inter]
    return inter[-1], inter


def process_matrices(model: PopulationModel, theta: Mapping, year: int | None = None, covariates=None,
                     state_for_density=None, rng=None) -> list[ProjectionMatrix]:
    """Per-process expectation matrices ``P_1 .. P_K``.

    Density-dependent rates are evaluated along the expected trajectory from
    ``state_for_density``; without it they raise ``UnsupportedError``.
    """
    single = all(np.size(v) == 1 for v in theta.values())
    size = 1 if single else max(np.size(v) for v in theta.values())
    th = _batch_theta(theta, size)
    states = {}
    x = None
    if state_for_density is not None:
        x = np.atleast_2d(np.asarray(getattr(state_for_density, "values", state_for_density), dtype=float))
        x = np.broadcast_to(x, (size, model.schema.size))
        states["n_prev"] = x
    ctx = RateContext(size=size, schema=model.schema, year=year, covariates=covariates, states=states, rng=rng)
    mats = []
    for k, proc in enumerate(model.processes, start=1):
        resolved = proc.resolve(th, ctx, k)
        M = proc.matrix(resolved, model.schema)
        if x is not None:
            x = np.einsum("rij,rj->ri", M, x)
            ctx.states[f"u{k}"] = x
        mats.append(ProjectionMatrix(M[0] if single else M, (proc.kind,)))
    return mats


def expectation_matrix(model: PopulationModel, k: int, theta: Mapping, year=None, covariates=None,
                       state_for_density=None) -> ProjectionMatrix:
    """Expectation matrix of the k-th process (1-based) of ``model``."""
    if not 1 <= k <= len(model.processes):
        raise ConfigError(f"process index {k} out of range")
    return process_matrices(model, theta, year, covariates, state_for_density)[k - 1]


def leslie_product(model: PopulationModel, theta: Mapping, year: int | None = None, covariates=None,
                   state_for_density=None, rng=None) -> ProjectionMatrix:
    """``P = P_K @ ... @ P_1``, the generalized Leslie/Lefkovitch matrix."""
    mats = process_matrices(model, theta, year, covariates, state_for_density, rng)
    out = mats[0]
    for M in mats[1:]:
        out = M @ out
    return out


def simulate(model: PopulationModel, theta: Mapping, rng: np.random.Generator, covariates=None,
             years: Sequence[int] | None = None, n0=None, variances=None, observe: bool = True):
    """Simulate one trajectory and its observations.

    With ``observe=False`` only states are drawn and the observation array
    is empty.

    Returns ``(states, observations)`` with shapes ``(T + 1, D)`` (row 0 is
    the initial state) and ``(T, m)``.
    """
    years = list(model.years if years is None else years)
    th = _batch_theta({k: np.asarray(v, dtype=float).reshape(-1)[:1] for k, v in theta.items()}, 1)
    x = model.sample_initial(th, rng) if n0 is None else np.atleast_2d(n0)
    memory: dict = {}
    states = [x[0]]
    obs = []
    for i, year in enumerate(years):
        x, memory = model.propagate(x, th, year, rng, covariates, memory)
        states.append(x[0])
        if observe and model.observation is not None:
            var = None if variances is None else variances[i]
            obs.append(model.simulate_observation(x, th, rng, var)[0])
    return np.array(states), np.array(obs) if obs else np.zeros((len(years), 0))


# -- the three textbook decompositions ------------------------------------------

def _prior(v) -> Prior:
    return v if isinstance(v, Prior) else Prior.fixed(float(v))


def model_1(phi0=0.5, phi1=0.8, lam=1.2, n0=(10, 10), **kw) -> PopulationModel:
    """Two age classes; survival, then aging, then births: ``P = B A S``."""
    schema = StateSchema.from_dict({"age": ["0", "1"]})
    processes = [
        Survival([Binding({"age": "0"}, Constant("phi0")), Binding({"age": "1"}, Constant("phi1"))]),
        Aging("age"),
        Birth("age", [Binding({"age": "1"}, Constant("lam"))]),
    ]
    params = {"phi0": _prior(phi0), "phi1": _prior(phi1), "lam": _prior(lam)}
    initial = _initial(schema, n0)
    return PopulationModel(schema, processes, params, initial, name=kw.pop("name", "model1"), **kw)


def model_2(phi0=0.5, phi1=0.8, pi=0.3, lam=1.2, n0=(10, 10), **kw) -> PopulationModel:
    """Two growth stages; survival, then growth, then births: ``P = B G S``."""
    schema = StateSchema.from_dict({"stage": ["1", "2"]})
    processes = [
        Survival([Binding({"stage": "1"}, Constant("phi0")), Binding({"stage": "2"}, Constant("phi1"))]),
        Growth("stage", [Binding({"stage": "1"}, Constant("pi"))]),
        Birth("stage", [Binding({"stage": "2"}, Constant("lam"))]),
    ]
    params = {"phi0": _prior(phi0), "phi1": _prior(phi1), "pi": _prior(pi), "lam": _prior(lam)}
    return PopulationModel(schema, processes, params, _initial(schema, n0), name=kw.pop("name", "model2"), **kw)


def model_3(phi0=0.5, phi1=0.8, mu=0.1, lam=1.2, n0=(10, 10, 10, 10), **kw) -> PopulationModel:
    """Model 1 in two subpopulations with movement just before breeding: ``P = B A M S``.

    Births use post-movement adults because movement comes before birth in the process order.
    """
    schema = StateSchema.from_dict({"region": ["1", "2"], "age": ["0", "1"]})
    processes = [
        Survival([Binding({"age": "0"}, Constant("phi0")), Binding({"age": "1"}, Constant("phi1"))]),
        Movement("region", UniformDispersal(Constant("mu"))),
        Aging("age"),
        Birth("age", [Binding({"age": "1"}, Constant("lam"))]),
    ]
    params = {"phi0": _prior(phi0), "phi1": _prior(phi1), "mu": _prior(mu), "lam": _prior(lam)}
    return PopulationModel(schema, processes, params, _initial(schema, n0), name=kw.pop("name", "model3"), **kw)


def _initial(schema: StateSchema, n0) -> list[InitialEntry]:
    if n0 is None:
        return []
    if isinstance(n0[0], InitialEntry):
        return list(n0)
    return [InitialEntry(schema.cell_labels(c), "fixed", (float(v),)) for c, v in enumerate(n0)]


def model_1_matrix(phi0, phi1, lam):
    return np.array([[lam * phi0, lam * phi1], [phi0, phi1]])


def model_2_matrix(phi0, phi1, pi, lam):
    return np.array([[(1 - pi + lam * pi) * phi0, lam * phi1], [pi * phi0, phi1]])


def model_3_matrix(phi0, phi1, mu, lam):
    a, b = 1 - mu, mu
    return np.array([
        [lam * phi0 * a, lam * phi1 * a, lam * phi0 * b, lam * phi1 * b],
        [phi0 * a, phi1 * a, phi0 * b, phi1 * b],
        [lam * phi0 * b, lam * phi1 * b, lam * phi0 * a, lam * phi1 * a],
        [phi0 * b, phi1 * b, phi0 * a, phi1 * a],
    ])
