"""Run manifests and on-disk results (JSON documents plus long-format CSV)."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from .errors import ConfigError, DataError
from .smc.filter import FitResult, Prediction, _jsonable, tool_version

COMMANDS = ("simulate", "fit", "smooth", "predict", "compare", "oracle")


@dataclass
class RunManifest:
    """Everything needed to reproduce a run.

    Paths are resolved relative to the manifest file. ``engine`` holds
    ``EngineConfig`` fields other than the seed.
    """

    command: str
    models: list
    output: str
    data: str | None = None
    covariates: str | None = None
    seed: int = 0
    engine: dict = field(default_factory=dict)
    prior_weights: list | None = None
    predict_year: int | None = None
    scenario: dict = field(default_factory=dict)
    bound: int = 20
    theta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"manifest command must be one of {COMMANDS}, got {self.command!r}")
        if isinstance(self.models, str):
            self.models = [self.models]
        if not self.models:
            raise ConfigError("manifest lists no model configs")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("manifest seed must be a non-negative integer")

    def check_paths(self) -> None:
        for p in self.models:
            if not Path(p).is_file():
                raise ConfigError(f"model config {p} does not exist")
        for p in (self.data, self.covariates):
            if p is not None and not Path(p).is_file():
                raise DataError(f"data file {p} does not exist")

    def to_dict(self) -> dict:
        return asdict(self)


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        d = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(d, Mapping):
        raise ConfigError(f"{path}: manifest must be a mapping")
    unknown = set(d) - set(RunManifest.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{path}: unknown manifest fields {sorted(unknown)}")
    base = path.parent
    d = dict(d)
    rel = lambda p: None if p is None else str(base / p)  # noqa: E731
    d["models"] = [rel(p) for p in ([d["models"]] if isinstance(d.get("models"), str) else d.get("models") or [])]
    for key in ("data", "covariates", "output"):
        if d.get(key) is not None:
            d[key] = rel(d[key])
    try:
        m = RunManifest(**d)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    m.check_paths()
    return m


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_fit(fit: FitResult, out_dir, name: str = "fit") -> list[Path]:
    """``<name>.json`` plus ``filtered.csv``, ``smoothed.csv``, ``series.csv`` and ``diagnostics.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / f"{name}.json", out / "filtered.csv", out / "series.csv", out / "diagnostics.csv"]
    written[0].write_text(fit.to_json())
    fit.filtered.to_csv(written[1])
    fit.filtered_series.to_csv(written[2], label_column="series")
    with open(written[3], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "observed", "ess", "log_incremental", "resampled", "unique_ancestors"])
        for d in fit.diagnostics:
            w.writerow([d.year, int(d.observed), repr(float(d.ess)), repr(float(d.log_incremental)),
                        int(d.resampled), d.unique_ancestors])
    if fit.smoothed is not None:
        fit.smoothed.to_csv(out / "smoothed.csv")
        written.append(out / "smoothed.csv")
    return written


def write_prediction(pred: Prediction, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "predict.json").write_text(pred.to_json())
    pred.states.to_csv(out / "predicted_states.csv")
    pred.series.to_csv(out / "predicted_series.csv", label_column="series")
    return [out / "predict.json", out / "predicted_states.csv", out / "predicted_series.csv"]


def write_simulation(out_dir, model, states: np.ndarray, observations, theta: Mapping, seed: int,
                     config: dict | None = None) -> list[Path]:
    """True states (long format), observations CSV and the parameters used."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    years = [model.start_year] + list(model.years)
    with open(out / "states.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "cell", "value"])
        for i, year in enumerate(years):
            for j, cell in enumerate(model.schema.cell_names()):
                v = states[i, j]
                w.writerow([year, cell, int(v) if float(v).is_integer() else repr(float(v))])
    observations.to_csv(out / "observations.csv")
    _write_json(out / "theta.json", {
        "tool": "popkit", "version": tool_version(), "seed": seed,
        "theta": {k: float(np.asarray(v).reshape(-1)[0]) for k, v in theta.items()},
        "config": config or {},
    })
    return [out / "states.csv", out / "observations.csv", out / "theta.json"]


def read_states(path) -> tuple[list[int], list[str], np.ndarray]:
    """Inverse of the ``states.csv`` writer: ``(years, cells, values)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    years = sorted({int(r["year"]) for r in rows})
    cells = list(dict.fromkeys(r["cell"] for r in rows))
    out = np.zeros((len(years), len(cells)))
    for r in rows:
        out[years.index(int(r["year"])), cells.index(r["cell"])] = float(r["value"])
    return years, cells, out


def write_json(path, doc: dict) -> None:
    _write_json(Path(path), doc)
