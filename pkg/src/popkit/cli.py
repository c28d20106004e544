"""Command-line interface: ``popkit <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 degenerate
filter (every particle weight vanished).
"""
from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import load_model
from .errors import ConfigError, DataError, DegeneracyError, PopkitError
from .io import RunManifest, load_manifest, write_fit, write_json, write_prediction, write_simulation
from .model import simulate as simulate_model
from .observation import ObservationSeries
from .priors import Prior
from .rates import load_covariates
from .smc import EngineConfig, predict, run_filter
from .validation import parse_assignments

EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERACY = 2, 3, 4


def _exit_code(exc: PopkitError) -> int:
    if isinstance(exc, DegeneracyError):
        return EXIT_DEGENERACY
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_CONFIG


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PopkitError as exc:
            click.echo(f"error: {exc}", err=True)
            if isinstance(exc, DegeneracyError):
                click.echo("hint: raise --particles, widen the priors or check the data units", err=True)
            sys.exit(_exit_code(exc))
    return wrapper


def engine_options(fn):
    opts = [
        click.option("--particles", "-R", type=int, default=1000, show_default=True, help="Number of particles."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--resampling", type=click.Choice(["multinomial", "systematic", "residual"]),
                     default="systematic", show_default=True),
        click.option("--ess-threshold", type=float, default=0.5, show_default=True,
                     help="Resample when ESS < threshold * R."),
        click.option("--shrinkage", type=float, default=0.98, show_default=True,
                     help="Kernel-smoothing shrinkage a; 1 disables."),
        click.option("--auxiliary/--bootstrap", default=False, help="Auxiliary particle filter steps."),
        click.option("--smoothing/--no-smoothing", default=False, help="Keep particle genealogies for smoothing."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _engine(ctx, particles, seed, resampling, ess_threshold, shrinkage, auxiliary, smoothing) -> EngineConfig:
    return EngineConfig(n_particles=particles, resampling=resampling, ess_threshold=ess_threshold,
                        kernel_shrinkage=shrinkage, auxiliary=auxiliary, smoothing=smoothing, seed=seed,
                        n_workers=ctx.obj["workers"])


def _load_data(path):
    if path is None:
        return None
    try:
        return ObservationSeries.from_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read data {path}: {exc}") from None


def _load_cov(path):
    if path is None:
        return None
    try:
        return load_covariates(path)
    except OSError as exc:
        raise DataError(f"cannot read covariates {path}: {exc}") from None


def _emit(doc_text: str, out: Path | None, summary: str = ""):
    if out is None:
        click.echo(doc_text, nl=False)
    elif summary:
        click.echo(summary)


def _fit_summary(fit) -> str:
    lines = []
    for name in fit.model_names:
        lines.append(f"{name}: log ML {fit.log_marginal_likelihood[name]:.4f}  "
                     f"P(model) {fit.model_probabilities[name]:.4f}  AIC-style {fit.aic[name]:.3f}")
    for k, v in sorted(fit.params.items()):
        lines.append(f"  {k:<16} mean {v['mean']:.4g}  95% [{v['q2.5']:.4g}, {v['q97.5']:.4g}]")
    return "\n".join(lines)


@click.group()
@click.version_option(__version__, prog_name="popkit")
@click.option("--workers", type=int, default=1, envvar="POPKIT_WORKERS", show_default=True,
              help="Worker threads for particle propagation (env POPKIT_WORKERS).")
@click.pass_context
def main(ctx, workers):
    """Stochastic population dynamics models fitted by sequential importance sampling."""
    ctx.ensure_object(dict)
    ctx.obj["workers"] = max(1, workers)


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--set", "assignments", multiple=True, help="Fix a parameter: name=value.")
@click.option("--obs-variance", type=float, default=None,
              help="Variance for series whose variance comes from the data.")
@handle_errors
def simulate(config, seed, out, assignments, obs_variance):
    """Simulate true states and observations from a model config."""
    model = load_model(config)
    _simulate(model, seed, out, parse_assignments(assignments), obs_variance, config)


def _simulate(model, seed, out, fixed, obs_variance, config_path):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(99,)))
    unknown = set(fixed) - set(model.param_names)
    if unknown:
        raise ConfigError(f"--set names unknown parameters {sorted(unknown)}")
    theta = {k: np.array([fixed[k]]) if k in fixed else model.parameters[k].sample(rng, 1) for k in model.param_names}
    variances = None
    if obs_variance is not None and model.observation is not None:
        variances = np.full((model.horizon, model.observation.m), obs_variance)
    states, obs = simulate_model(model, theta, rng, variances=variances)
    series = ObservationSeries(model.years, model.observed_names, obs, variances)
    from .config import model_to_dict
    paths = write_simulation(out, model, states, series, theta, seed, {"model": model_to_dict(model),
                                                                        "source": str(config_path)})
    click.echo("wrote " + ", ".join(str(p) for p in paths))


def _run_fit(ctx, configs, data, covariates, weights, engine, out, force_smoothing=False):
    models = [load_model(c) for c in configs]
    if force_smoothing:
        engine.smoothing = True
    fit = run_filter(models, _load_data(data), engine, list(weights) or None, _load_cov(covariates))
    if out is not None:
        write_fit(fit, out)
    _emit(fit.to_json(), out and Path(out), _fit_summary(fit))
    return fit


@main.command()
@click.argument("configs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--data", type=click.Path(dir_okay=False), help="Observation CSV (year, series, value[, variance]).")
@click.option("--covariates", type=click.Path(dir_okay=False), help="Covariate CSV (year, [region,] name, value).")
@click.option("--weight", "weights", type=float, multiple=True, help="Prior model weight, once per config.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory; JSON to stdout when absent.")
@engine_options
@click.pass_context
@handle_errors
def fit(ctx, configs, data, covariates, weights, out, **engine):
    """Fit one or more models (averaged by marginal likelihood)."""
    _run_fit(ctx, configs, data, covariates, weights, _engine(ctx, **engine), out)


@main.command()
@click.argument("configs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--data", type=click.Path(dir_okay=False))
@click.option("--covariates", type=click.Path(dir_okay=False))
@click.option("--weight", "weights", type=float, multiple=True)
@click.option("--out", type=click.Path(file_okay=False))
@engine_options
@click.pass_context
@handle_errors
def smooth(ctx, configs, data, covariates, weights, out, **engine):
    """Fit with smoothing: summaries of whole trajectories given all data."""
    _run_fit(ctx, configs, data, covariates, weights, _engine(ctx, **engine), out, force_smoothing=True)


@main.command(name="predict")
@click.argument("configs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--data", type=click.Path(dir_okay=False))
@click.option("--covariates", type=click.Path(dir_okay=False))
@click.option("--to-year", type=int, required=True, help="Last year to project.")
@click.option("--scenario", type=click.Path(dir_okay=False), help="Covariate CSV overriding future years.")
@click.option("--set", "assignments", multiple=True, help="Scenario parameter: name=value.")
@click.option("--weight", "weights", type=float, multiple=True)
@click.option("--out", type=click.Path(file_okay=False))
@engine_options
@click.pass_context
@handle_errors
def predict_cmd(ctx, configs, data, covariates, to_year, scenario, assignments, weights, out, **engine):
    """Fit, then project the posterior forward without reweighting."""
    fit_out = None if out is None else Path(out)
    models = [load_model(c) for c in configs]
    fitted = run_filter(models, _load_data(data), _engine(ctx, **engine), list(weights) or None,
                        _load_cov(covariates))
    pred = predict(fitted, to_year, covariates=_load_cov(scenario), params=parse_assignments(assignments))
    if fit_out is not None:
        write_fit(fitted, fit_out)
        write_prediction(pred, fit_out)
    _emit(pred.to_json(), fit_out, f"projected {fitted.last_year} -> {to_year}")


@main.command()
@click.argument("configs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--data", type=click.Path(dir_okay=False), required=True)
@click.option("--covariates", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False))
@engine_options
@click.pass_context
@handle_errors
def compare(ctx, configs, data, covariates, out, **engine):
    """Fit each model separately and rank by marginal likelihood."""
    models = [load_model(c) for c in configs]
    cfg = _engine(ctx, **engine)
    obs, cov = _load_data(data), _load_cov(covariates)
    rows = []
    for m in models:
        try:
            f = run_filter(m, obs, cfg, None, cov)
            rows.append({"model": m.name, "log_marginal_likelihood": f.log_marginal_likelihood[m.name],
                         "aic": f.aic[m.name], "error": None})
        except DegeneracyError as exc:
            rows.append({"model": m.name, "log_marginal_likelihood": -np.inf, "aic": np.inf, "error": str(exc)})
    lml = np.array([r["log_marginal_likelihood"] for r in rows])
    ok = np.isfinite(lml)
    p = np.zeros(len(rows))
    if ok.any():
        p[ok] = np.exp(lml[ok] - lml[ok].max())
        p /= p.sum()
    for r, v in zip(rows, p):
        r["probability"] = float(v)
    rows.sort(key=lambda r: -r["log_marginal_likelihood"])
    doc = {"tool": "popkit", "version": __version__, "seed": cfg.seed, "config": cfg.to_dict(), "ranking": rows}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_json(Path(out) / "compare.json", doc)
    for i, r in enumerate(rows, start=1):
        status = f"failed: {r['error']}" if r["error"] else f"log ML {r['log_marginal_likelihood']:.4f}  P {r['probability']:.4f}"
        click.echo(f"{i}. {r['model']}  {status}")


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--data", type=click.Path(dir_okay=False))
@click.option("--covariates", type=click.Path(dir_okay=False))
@click.option("--bound", type=int, default=20, show_default=True, help="Largest count per cell.")
@click.option("--set", "assignments", multiple=True, help="Parameter value: name=value (free parameters).")
@click.option("--out", type=click.Path(file_okay=False))
@handle_errors
def oracle(config, data, covariates, bound, assignments, out):
    """Exact enumeration filter for tiny integer models (debugging aid)."""
    from .oracles import enumerate_filter

    model = load_model(config)
    theta = _fixed_theta(model, parse_assignments(assignments))
    res = enumerate_filter(model, theta, _load_data(data), bound, _load_cov(covariates))
    doc = {"tool": "popkit", "version": __version__, "bound": bound, "theta": theta, "loglik": res.loglik,
           "lost_mass": res.lost,
           "years": [{"year": y, "mean": d.mean(), "support_size": len(d.probs)} for y, d in zip(res.years, res.filtered)]}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_json(Path(out) / "oracle.json", doc)
    for y, d in zip(res.years, res.filtered):
        click.echo(f"{y}: mean {np.array2string(d.mean(), precision=4)}")
    click.echo(f"log likelihood {res.loglik:.6f}; truncated mass {res.lost:.3g}")


def _fixed_theta(model, assigned):
    theta = {}
    for k in model.param_names:
        prior: Prior = model.parameters[k]
        if k in assigned:
            theta[k] = assigned[k]
        elif prior.is_fixed:
            theta[k] = float(prior.args[0])
        else:
            raise ConfigError(f"parameter {k!r} is free; give it a value with --set {k}=...")
    return theta


@main.command()
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.pass_context
@handle_errors
def run(ctx, manifest):
    """Execute a run manifest (YAML)."""
    m: RunManifest = load_manifest(manifest)
    engine = EngineConfig(seed=m.seed, n_workers=ctx.obj["workers"], **m.engine)
    out = Path(m.output)
    if m.command == "simulate":
        _simulate(load_model(m.models[0]), m.seed, out, parse_assignments(m.theta), None, m.models[0])
    elif m.command in ("fit", "smooth"):
        _run_fit(ctx, m.models, m.data, m.covariates, m.prior_weights or (), engine, str(out),
                 force_smoothing=m.command == "smooth")
    elif m.command == "predict":
        if m.predict_year is None:
            raise ConfigError("predict manifest needs predict_year")
        fitted = _run_fit(ctx, m.models, m.data, m.covariates, m.prior_weights or (), engine, str(out))
        scen = m.scenario or {}
        pred = predict(fitted, m.predict_year, covariates=_load_cov(scen.get("covariates")),
                       params=parse_assignments(scen.get("params")))
        write_prediction(pred, out)
    elif m.command == "compare":
        ctx.invoke(compare, configs=m.models, data=m.data, covariates=m.covariates, out=str(out),
                   particles=engine.n_particles, seed=m.seed, resampling=engine.resampling,
                   ess_threshold=engine.ess_threshold, shrinkage=engine.kernel_shrinkage,
                   auxiliary=engine.auxiliary, smoothing=engine.smoothing)
    else:
        ctx.invoke(oracle, config=m.models[0], data=m.data, covariates=m.covariates, bound=m.bound,
                   assignments=[f"{k}={v}" for k, v in m.theta.items()], out=str(out))
    write_json(out / "manifest.json", {"tool": "popkit", "version": __version__, "seed": m.seed,
                                       "manifest": m.to_dict()})


# -- seal example -------------------------------------------------------------

@main.group()
def seal():
    """Grey seal metapopulation example (synthetic data shipped)."""


def _seal_inputs(data, covariates, distances):
    from . import seal as sealmod

    return (sealmod.load_pups(data) if data else sealmod.load_pups(),
            sealmod.load_seal_covariates(covariates) if covariates else sealmod.load_seal_covariates(),
            sealmod.load_distances(distances) if distances else sealmod.load_distances())


VARIANT_CHOICE = click.Choice(["density-dependent", "salmon-production", "staff-numbers"])


@seal.command(name="fit")
@click.option("--variant", type=VARIANT_CHOICE, default="salmon-production", show_default=True)
@click.option("--data", type=click.Path(dir_okay=False), help="Pup CSV; the shipped synthetic series by default.")
@click.option("--covariates", type=click.Path(dir_okay=False))
@click.option("--distances", type=click.Path(dir_okay=False))
@click.option("--harvest/--no-harvest", default=False, help="Include a harvest process (rate fixed at 0).")
@click.option("--out", type=click.Path(file_okay=False))
@engine_options
@click.pass_context
@handle_errors
def seal_fit(ctx, variant, data, covariates, distances, harvest, out, **engine):
    """Fit one survival hypothesis to regional pup production."""
    from .seal import build_seal_model

    obs, cov, dist = _seal_inputs(data, covariates, distances)
    model = build_seal_model(variant, dist, cov, include_harvest=harvest)
    fitted = run_filter(model, obs, _engine(ctx, **engine), covariates=cov)
    if out is not None:
        write_fit(fitted, out)
    _emit(fitted.to_json(), out and Path(out), _fit_summary(fitted))


@seal.command(name="simulate")
@click.option("--variant", type=VARIANT_CHOICE, default="salmon-production", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@handle_errors
def seal_simulate(variant, seed, out):
    """Simulate synthetic pup production 1984-2002 from one hypothesis."""
    from dataclasses import asdict

    from .seal import build_seal_model, synthetic_dataset

    synth = synthetic_dataset(variant, seed=seed)
    model = build_seal_model(variant, synth.distances, synth.covariates, params=synth.params)
    theta = {k: np.array([v]) for k, v in asdict(synth.params).items() if k in model.param_names}
    paths = write_simulation(out, model, synth.states, synth.data, theta, seed, {"variant": variant})
    click.echo("wrote " + ", ".join(str(p) for p in paths))


@seal.command(name="compare")
@click.option("--variant", "variants", type=VARIANT_CHOICE, multiple=True,
              help="Variants to compare (default: all three).")
@click.option("--data", type=click.Path(dir_okay=False))
@click.option("--covariates", type=click.Path(dir_okay=False))
@click.option("--distances", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False))
@engine_options
@click.pass_context
@handle_errors
def seal_compare(ctx, variants, data, covariates, distances, out, **engine):
    """Rank the survival hypotheses by marginal likelihood."""
    from .seal import VARIANTS, compare_variants

    obs, cov, dist = _seal_inputs(data, covariates, distances)
    cfg = _engine(ctx, **engine)
    ranking = compare_variants(obs, variants or VARIANTS, cfg, dist, cov)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_json(Path(out) / "compare.json", {"tool": "popkit", "version": __version__, "seed": cfg.seed,
                                                "config": cfg.to_dict(), **ranking.to_dict()})
    click.echo(ranking.table())


if __name__ == "__main__":  # pragma: no cover
    main()
