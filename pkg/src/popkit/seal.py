"""Grey seal metapopulation example: 7 age classes in 4 regions, females only.

Annual order: survival, optional harvest, aging, movement of the age-5
recruits between regions, then births to mature (6+) females. Pup
production observed per region is the newborn age-0 count of the year.

Three survival hypotheses are available:

* ``density-dependent``: pup survival is logistic in the region's pup count
  of the previous year relative to its capacity.
* ``salmon-production`` / ``staff-numbers``: adult survival is logistic in a
  regional covariate with one coefficient shared by all regions.

Movement of recruits uses :func:`popkit.rates.logistic_movement` with density
measured as the number of females aged 5 and over after aging.

Shipped data files are synthetic; see :func:`synthetic_dataset`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, DegeneracyError
from .model import PopulationModel, simulate
from .observation import Normal, ObservationModel, ObservationSeries, Series
from .priors import InitialEntry, Prior
from .processes import Aging, Binding, Birth, DensityDistanceDispersal, Harvest, Movement, Survival
from .rates import Constant, Covariates, CovariateStream, DensityDependent, Logistic, logistic_movement, load_covariates
from .schema import StateSchema

REGIONS = ("North Sea", "Inner Hebrides", "Outer Hebrides", "Orkneys")
AGES = ("0", "1", "2", "3", "4", "5", "6+")
VARIANTS = ("density-dependent", "salmon-production", "staff-numbers")
COVARIATE = {"salmon-production": "salmon_production", "staff-numbers": "staff_numbers"}
START_YEAR = 1983
FIRST_YEAR, LAST_YEAR = 1984, 2002

# pups in the first year and regional pup capacities (synthetic magnitudes)
INITIAL_PUPS = (1200.0, 2000.0, 7500.0, 6000.0)
PUP_CAPACITY = (6000.0, 4000.0, 9000.0, 15000.0)
OBSERVATION_CV = 0.08


@dataclass
class SealParams:
    """Parameter values on the model's natural scales.

    ``pup_logit`` and ``adult_logit`` are logit survival intercepts;
    ``dd_slope`` multiplies pups / capacity (density variant); ``cov_coef``
    multiplies the survival covariate (covariate variants). ``birth`` is
    female pups per mature female. Movement: ``decay`` per km,
    ``density_weight`` and ``fidelity`` (log-scale bonus for staying).
    """

    pup_logit: float = 0.0
    adult_logit: float = 2.75
    birth: float = 0.45
    dd_slope: float = -2.0
    cov_coef: float = -0.5
    decay: float = 0.01
    density_weight: float = 1.0
    fidelity: float = 3.0
    harvest: float = 0.0

    def for_variant(self, variant: str, include_harvest: bool = False) -> dict:
        d = asdict(self)
        d.pop("cov_coef" if variant == "density-dependent" else "dd_slope")
        if not include_harvest:
            d.pop("harvest")
        return d


def default_priors(variant: str) -> dict[str, Prior]:
    """Priors for fitting: survival terms free, birth and movement fixed."""
    p = SealParams()
    priors = {
        "pup_logit": Prior("normal", (0.0, 0.5)),
        "adult_logit": Prior("normal", (2.75, 0.25)),
        "birth": Prior.fixed(p.birth),
        "decay": Prior.fixed(p.decay),
        "density_weight": Prior.fixed(p.density_weight),
        "fidelity": Prior.fixed(p.fidelity),
    }
    if variant == "density-dependent":
        priors["dd_slope"] = Prior("normal", (0.0, 1.5))
    else:
        priors["cov_coef"] = Prior("normal", (0.0, 0.5))
    return priors


def seal_schema(regions: Sequence[str] = REGIONS) -> StateSchema:
    return StateSchema.from_dict({"region": list(regions), "age": list(AGES)})


def _data_path(name: str):
    return resources.files("popkit") / "data" / name


def load_distances(path=None) -> np.ndarray:
    """Symmetric region distance matrix (km) from a CSV with a ``region`` column."""
    path = _data_path("seal_distances.csv") if path is None else path
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        names = [r["region"] for r in rows]
        d = np.array([[float(r[n]) for n in names] for r in rows])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed distance matrix ({exc})") from None
    if names != list(REGIONS):
        raise DataError(f"{path}: expected regions {list(REGIONS)}, got {names}")
    return d


def load_pups(path=None) -> ObservationSeries:
    """Synthetic regional pup production 1984-2002 shipped with the package."""
    return ObservationSeries.from_csv(_data_path("seal_pups_synthetic.csv") if path is None else path)


def load_seal_covariates(path=None) -> Covariates:
    """Synthetic salmon production (10 kt) and farm staff (hundreds) by region."""
    return load_covariates(_data_path("seal_covariates.csv") if path is None else path)


def stable_initial(pups: Sequence[float] = INITIAL_PUPS, params: SealParams | None = None,
                   growth: float = 1.05) -> np.ndarray:
    """Initial female numbers by (region, age) from a stable age structure."""
    p = params or SealParams()
    s_pup, s_ad = _expit(p.pup_logit), _expit(p.adult_logit)
    out = np.zeros((len(pups), len(AGES)))
    for r, n in enumerate(pups):
        out[r, 0] = n
        for a in range(1, 6):
            out[r, a] = n * s_pup * s_ad ** (a - 1) / growth ** a
        out[r, 6] = n / p.birth
    return out


def _expit(x):
    return 1.0 / (1.0 + math.exp(-x))


def build_seal_model(variant: str = "salmon-production", distances=None, covariates: Mapping | None = None,
                     include_harvest: bool = False, params: SealParams | Mapping | None = None,
                     priors: Mapping[str, Prior] | None = None, initial_pups: Sequence[float] = INITIAL_PUPS,
                     start_year: int = START_YEAR, horizon: int = LAST_YEAR - START_YEAR,
                     mode: str = "integer", name: str | None = None) -> PopulationModel:
    """Seal metapopulation model for one survival hypothesis.

    ``params`` pins every parameter (use for simulation); otherwise
    :func:`default_priors` updated with ``priors`` is used. ``distances`` is
    the 4x4 region distance matrix; covariate variants also need the
    matching stream in ``covariates``.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown seal variant {variant!r}; choose from {VARIANTS}")
    if distances is None:
        raise ConfigError("seal model needs a region distance matrix")
    distances = np.asarray(distances, dtype=float)
    if distances.shape != (len(REGIONS), len(REGIONS)):
        raise ConfigError(f"distance matrix must be {len(REGIONS)}x{len(REGIONS)}")
    if variant in COVARIATE:
        cov = COVARIATE[variant]
        if covariates is None or cov not in covariates:
            raise ConfigError(f"variant {variant!r} needs the {cov!r} covariate stream")
    schema = seal_schema()
    adults = {"age": list(AGES[1:])}
    if variant == "density-dependent":
        pup_rates = [Binding({"age": "0", "region": r},
                             DensityDependent("pup_logit", "dd_slope", PUP_CAPACITY[i], "n_prev",
                                              {"age": "0"}, ("region",)))
                     for i, r in enumerate(REGIONS)]
        adult_rate = Logistic("adult_logit")
    else:
        pup_rates = [Binding({"age": "0"}, Logistic("pup_logit"))]
        adult_rate = Logistic("adult_logit", ((COVARIATE[variant], "cov_coef"),))
    processes = [Survival(pup_rates + [Binding(adults, adult_rate)])]
    if include_harvest:
        processes.append(Harvest([Binding(adults, Constant("harvest"))]))
    processes.append(Aging("age"))
    aging_index = len(processes)
    capacities = [k / SealParams().birth for k in PUP_CAPACITY]
    processes.append(Movement("region", DensityDistanceDispersal(
        distances, capacities, "decay", "density_weight", "fidelity",
        state=f"u{aging_index}", density_cells={"age": ["5", "6+"]}), movers={"age": "5"}))
    processes.append(Birth("age", [Binding({"age": "6+"}, Constant("birth"))]))

    if params is not None:
        values = asdict(params) if isinstance(params, SealParams) else dict(params)
        keep = SealParams(**{k: v for k, v in values.items() if k in SealParams.__dataclass_fields__})
        parameters = {k: Prior.fixed(v) for k, v in keep.for_variant(variant, include_harvest).items()}
    else:
        parameters = default_priors(variant)
        if include_harvest:
            parameters["harvest"] = Prior.fixed(0.0)
        parameters.update(priors or {})
    init = stable_initial(initial_pups, params if isinstance(params, SealParams) else None)
    initial = [InitialEntry({"region": r, "age": a}, "poisson", (float(init[i, j]),))
               for i, r in enumerate(REGIONS) for j, a in enumerate(AGES)]
    observation = ObservationModel([Series(r, {"region": r, "age": "0"}) for r in REGIONS], Normal("data"))
    return PopulationModel(schema, processes, parameters, initial, observation, start_year=start_year,
                           horizon=horizon, mode=mode, name=name or variant)


def movement_matrix(counts, distances, capacities=None, decay: float = 0.01, density_weight: float = 1.0,
                    fidelity: float = 0.0) -> np.ndarray:
    """Row-stochastic 4x4 movement matrix for recruits given regional densities."""
    counts = np.asarray(counts, dtype=float)
    caps = np.ones(counts.shape[-1]) if capacities is None else capacities
    return logistic_movement(counts, distances, caps, decay, density_weight, fidelity)


# -- synthetic data ---------------------------------------------------------------

def synthetic_covariates(years: Sequence[int] = range(START_YEAR, LAST_YEAR + 1), seed: int = 2002) -> Covariates:
    """Regional salmon production (10 kt) and staff numbers (hundreds).

    Production rises steadily where farms exist; staffing peaks around 1990
    and then falls, so the two streams carry different temporal signals.
    """
    rng = np.random.default_rng(seed)
    years = list(years)
    u = (np.asarray(years) - years[0]) / max(len(years) - 1, 1)
    prod_scale = (0.0, 1.6, 2.6, 0.6)
    staff_scale = (0.0, 1.8, 1.2, 2.4)
    salmon, staff = {}, {}
    for r, region in enumerate(REGIONS):
        prod = prod_scale[r] * u ** 1.5
        peak = staff_scale[r] * np.exp(-((u - 0.3) / 0.25) ** 2)
        for i, y in enumerate(years):
            salmon[(y, region)] = round(max(prod[i] * (1 + 0.05 * rng.standard_normal()), 0.0), 4)
            staff[(y, region)] = round(max(peak[i] * (1 + 0.05 * rng.standard_normal()), 0.0), 4)
    return Covariates({"salmon_production": CovariateStream("salmon_production", salmon, "10 kt"),
                       "staff_numbers": CovariateStream("staff_numbers", staff, "hundreds")})


def _observation_variances(states: np.ndarray, schema: StateSchema, cv: float) -> np.ndarray:
    pups = states[1:][:, [schema.cell_index({"region": r, "age": "0"}) for r in REGIONS]]
    return (cv * np.maximum(pups, 1.0)) ** 2


@dataclass
class SyntheticSeals:
    variant: str
    params: SealParams
    data: ObservationSeries
    states: np.ndarray
    covariates: Covariates
    distances: np.ndarray = field(repr=False)


def synthetic_dataset(variant: str = "salmon-production", seed: int = 1, params: SealParams | None = None,
                      covariates: Covariates | None = None, distances=None, cv: float = OBSERVATION_CV,
                      include_harvest: bool = False) -> SyntheticSeals:
    """Simulate pup production 1984-2002 from one variant.

    Observation variances are ``(cv * true pups)**2`` and are written with
    the data, matching estimated survey precision.
    """
    params = params or SealParams()
    covariates = synthetic_covariates() if covariates is None else covariates
    distances = load_distances() if distances is None else np.asarray(distances, dtype=float)
    model = build_seal_model(variant, distances, covariates, include_harvest, params=params)
    rng = np.random.default_rng(seed)
    theta = {k: np.array([v.args[0]]) for k, v in model.parameters.items()}
    states, _ = simulate(model, theta, rng, covariates, observe=False)
    var = _observation_variances(states, model.schema, cv)
    pups = states[1:][:, [model.schema.cell_index({"region": r, "age": "0"}) for r in REGIONS]]
    obs = pups + np.sqrt(var) * rng.standard_normal(pups.shape)
    data = ObservationSeries(model.years, list(REGIONS), np.round(obs, 1), np.round(var, 1))
    return SyntheticSeals(variant, params, data, states, covariates, distances)


# -- model comparison -------------------------------------------------------------

@dataclass
class VariantScore:
    variant: str
    log_marginal_likelihood: float
    aic: float
    probability: float = float("nan")
    error: str | None = None

    def to_dict(self) -> dict:
        f = lambda v: None if v is None or not math.isfinite(v) else float(v)  # noqa: E731
        return {"variant": self.variant, "log_marginal_likelihood": f(self.log_marginal_likelihood),
                "aic": f(self.aic), "probability": f(self.probability), "error": self.error}


@dataclass
class Ranking:
    scores: list
    fits: dict = field(default_factory=dict, repr=False)

    @property
    def best(self) -> str:
        return self.scores[0].variant

    @property
    def order(self) -> list[str]:
        return [s.variant for s in self.scores]

    def to_dict(self) -> dict:
        return {"ranking": [s.to_dict() for s in self.scores]}

    def table(self) -> str:
        lines = [f"{'rank':>4}  {'variant':<20} {'log ML':>12} {'AIC-style':>12} {'prob':>8}"]
        for i, s in enumerate(self.scores, start=1):
            if s.error:
                lines.append(f"{i:>4}  {s.variant:<20} failed: {s.error}")
            else:
                lines.append(f"{i:>4}  {s.variant:<20} {s.log_marginal_likelihood:>12.3f} {s.aic:>12.3f} "
                             f"{s.probability:>8.4f}")
        return "\n".join(lines)


def compare_variants(data: ObservationSeries, variants: Sequence[str] = VARIANTS, config=None, distances=None,
                     covariates: Covariates | None = None, include_harvest: bool = False,
                     priors: Mapping[str, Prior] | None = None, keep_fits: bool = False) -> Ranking:
    """Fit each variant separately and rank by estimated marginal likelihood.

    Posterior probabilities assume equal prior weight on the variants. A
    variant whose filter degenerates is listed last with its error.
    """
    from .smc import EngineConfig, run_filter

    config = config or EngineConfig()
    distances = load_distances() if distances is None else distances
    covariates = load_seal_covariates() if covariates is None else covariates
    scores, fits = [], {}
    for variant in dict.fromkeys(variants):
        model = build_seal_model(variant, distances, covariates, include_harvest, priors=priors)
        try:
            fit = run_filter(model, data, config, covariates=covariates)
        except DegeneracyError as exc:
            scores.append(VariantScore(variant, -math.inf, math.inf, 0.0, str(exc)))
            continue
        if keep_fits:
            fits[variant] = fit
        scores.append(VariantScore(variant, fit.log_marginal_likelihood[variant], fit.aic[variant]))
    ok = [s for s in scores if s.error is None]
    if ok:
        lml = np.array([s.log_marginal_likelihood for s in ok])
        p = np.exp(lml - lml.max())
        p /= p.sum()
        for s, v in zip(ok, p):
            s.probability = float(v)
    scores.sort(key=lambda s: (s.error is not None, -s.log_marginal_likelihood))
    return Ranking(scores, fits)


def write_shipped_data(directory, seed: int = 1984) -> None:
    """Regenerate the shipped CSVs (distances are fixed; the rest is synthetic)."""
    from pathlib import Path

    from .rates import write_covariates

    directory = Path(directory)
    distances = load_distances()
    covariates = synthetic_covariates()
    write_covariates(covariates, directory / "seal_covariates.csv")
    synth = synthetic_dataset("salmon-production", seed=seed, covariates=covariates, distances=distances)
    synth.data.to_csv(directory / "seal_pups_synthetic.csv")
