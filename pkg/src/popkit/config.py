"""Declarative model configuration (YAML or JSON).

Top-level fields::

    name: model1
    mode: integer            # integer | expectation | normal
    start_year: 0            # year label of the initial state
    horizon: 25              # number of projected years
    schema: {age: ["0", "1"]}
    parameters:
      phi0: {dist: beta, a: 2, b: 2}
      lam: {dist: fixed, value: 1.2}
    initial:
      - {cells: {age: "0"}, dist: poisson, mean: 50}
    processes:
      - kind: survival
        rates:
          - {cells: {age: "0"}, rate: {form: constant, param: phi0}}
      - {kind: aging, axis: age}
      - kind: birth
        axis: age
        rates: [{cells: {age: "1"}, rate: {form: constant, param: lam}}]
    observation:
      series: [{name: pups, cells: {age: "0"}}]
      family: {name: normal, variance: 100.0}

See the README for every process kind and rate form.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import yaml

from .errors import ConfigError, PopkitError
from .model import PopulationModel
from .observation import ObservationModel
from .priors import InitialEntry, Prior
from .processes import process_from_dict
from .schema import StateSchema

_FIELDS = {"name", "mode", "start_year", "horizon", "schema", "parameters", "initial", "processes", "observation"}


def model_from_dict(d: Mapping) -> PopulationModel:
    unknown = set(d) - _FIELDS
    if unknown:
        raise ConfigError(f"model config has unknown fields {sorted(unknown)}")
    for key in ("schema", "processes"):
        if key not in d:
            raise ConfigError(f"model config missing {key!r}")
    try:
        schema = StateSchema.from_dict(d["schema"])
        processes = [process_from_dict(p) for p in d["processes"]]
        params = {k: Prior.from_dict(v) for k, v in (d.get("parameters") or {}).items()}
        initial = [InitialEntry.from_dict(e) for e in d.get("initial") or []]
        obs = ObservationModel.from_dict(d["observation"]) if d.get("observation") else None
        return PopulationModel(schema, processes, params, initial, obs,
                               start_year=int(d.get("start_year", 0)), horizon=int(d.get("horizon", 1)),
                               mode=d.get("mode", "integer"), name=str(d.get("name", "model")))
    except ConfigError:
        raise
    except PopkitError as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, AttributeError, ValueError) as exc:
        raise ConfigError(f"malformed model config: {exc}") from exc


def model_to_dict(model: PopulationModel) -> dict:
    d = {
        "name": model.name,
        "mode": model.mode,
        "start_year": model.start_year,
        "horizon": model.horizon,
        "schema": model.schema.to_dict(),
        "parameters": {k: model.parameters[k].to_dict() for k in model.param_names},
        "initial": [e.to_dict() for e in model.initial],
        "processes": [p.to_dict() for p in model.processes],
    }
    if model.observation is not None:
        d["observation"] = model.observation.to_dict()
    return d


def loads(text: str) -> PopulationModel:
    return model_from_dict(yaml.safe_load(text))


def dumps(model: PopulationModel, fmt: str = "yaml") -> str:
    d = model_to_dict(model)
    if fmt == "json":
        return json.dumps(d, indent=2, sort_keys=True) + "\n"
    return yaml.safe_dump(d, sort_keys=False, default_flow_style=None)


def load_model(path) -> PopulationModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read model config {path}: {exc}") from None
    try:
        return loads(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_model(model: PopulationModel, path) -> None:
    path = Path(path)
    path.write_text(dumps(model, "json" if path.suffix == ".json" else "yaml"))
