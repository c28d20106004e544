import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

import popkit as pk
from popkit.cli import main
from popkit.errors import ConfigError, DataError
from popkit.io import RunManifest, load_manifest, read_states
from popkit.observation import BinomialCount, Normal, ObservationModel, Series

MODEL1 = "configs/model1.yaml"
THETA_STR = {"phi0": 0.5, "phi1": 0.8, "lam": 0.45}


def invoke(*args, workers=None):
    argv = ([] if workers is None else ["--workers", str(workers)]) + [str(a) for a in args]
    return CliRunner().invoke(main, argv, catch_exceptions=False)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    res = invoke("simulate", MODEL1, "--seed", 7, "--out", out, "--set", "phi0=0.5", "--set", "phi1=0.8",
                 "--set", "lam=0.45")
    assert res.exit_code == 0, res.output
    return out


def test_simulate_outputs(simulated, tmp_path):
    years, cells, states = read_states(simulated / "states.csv")
    assert years == list(range(0, 26)) and len(cells) == 2
    np.testing.assert_array_equal(states[0], [100, 100])
    theta = json.loads((simulated / "theta.json").read_text())
    assert theta["seed"] == 7 and theta["version"] == pk.__version__ and theta["theta"]["lam"] == 0.45
    assert theta["config"]["model"]["name"] == "model1"
    again = tmp_path / "again"
    assert invoke("simulate", MODEL1, "--seed", 7, "--out", again, "--set", "phi0=0.5", "--set", "phi1=0.8",
                  "--set", "lam=0.45").exit_code == 0
    for name in ("states.csv", "observations.csv", "theta.json"):
        assert (again / name).read_bytes() == (simulated / name).read_bytes()


def test_noise_free_observations_equal_states(tmp_path):
    obs = ObservationModel([Series("young", {"age": "0"}), Series("total", {})], Normal(1e-12))
    pk.dump_model(pk.model_1(phi0=0.5, phi1=0.8, lam=0.45, n0=(50, 50), horizon=6, observation=obs), tmp_path / "m.yaml")
    assert invoke("simulate", tmp_path / "m.yaml", "--seed", 1, "--out", tmp_path / "o").exit_code == 0
    _, _, states = read_states(tmp_path / "o" / "states.csv")
    data = pk.ObservationSeries.from_csv(tmp_path / "o" / "observations.csv")
    np.testing.assert_allclose(data.values[:, 0], states[1:, 0], atol=1e-4)
    np.testing.assert_allclose(data.values[:, 1], states[1:].sum(axis=1), atol=1e-4)


def test_fit_outputs(simulated, tmp_path):
    out = tmp_path / "fit"
    res = invoke("fit", MODEL1, "--data", simulated / "observations.csv", "-R", 3000, "--seed", 4, "--out", out)
    assert res.exit_code == 0, res.output
    assert "lam" in res.output and "log ML" in res.output
    doc = json.loads((out / "fit.json").read_text())
    assert doc["tool"] == "popkit" and doc["version"] == pk.__version__ and doc["seed"] == 4
    assert doc["config"]["n_particles"] == 3000
    rows = read_csv(out / "filtered.csv")
    assert list(rows[0]) == ["year", "cell", "mean", "q2.5", "q97.5"]
    assert all(float(r["q2.5"]) <= float(r["q97.5"]) for r in rows)
    assert [r["mean"] for r in rows if r["year"] == "0"] == ["100.0", "100.0"]
    assert list(read_csv(out / "series.csv")[0]) == ["year", "series", "mean", "q2.5", "q97.5"]
    assert len(read_csv(out / "diagnostics.csv")) == 25
    stdout = invoke("fit", MODEL1, "--data", simulated / "observations.csv", "-R", 3000, "--seed", 4)
    assert json.loads(stdout.output) == doc


def test_smooth_predict_and_compare(simulated, tmp_path):
    data = simulated / "observations.csv"
    assert invoke("smooth", MODEL1, "--data", data, "-R", 1000, "--out", tmp_path / "s").exit_code == 0
    assert (tmp_path / "s" / "smoothed.csv").exists()
    res = invoke("predict", MODEL1, "--data", data, "-R", 1000, "--to-year", 30, "--set", "lam=0.3",
                 "--out", tmp_path / "p")
    assert res.exit_code == 0, res.output
    pred = read_csv(tmp_path / "p" / "predicted_states.csv")
    assert sorted({int(r["year"]) for r in pred}) == list(range(25, 31))
    doc = json.loads((tmp_path / "p" / "predict.json").read_text())
    assert doc["seed"] == 0 and "version" in doc
    res = invoke("compare", MODEL1, "--data", data, "-R", 1000, "--out", tmp_path / "c")
    assert res.exit_code == 0 and res.output.startswith("1. model1")
    ranking = json.loads((tmp_path / "c" / "compare.json").read_text())["ranking"]
    assert ranking[0]["probability"] == 1.0


def test_oracle_command(tmp_path):
    pk.dump_model(pk.model_1(phi0=0.5, phi1=0.5, lam=0.0, n0=(0, 2), horizon=1), tmp_path / "t.yaml")
    res = invoke("oracle", tmp_path / "t.yaml", "--bound", 4, "--out", tmp_path / "o")
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "o" / "oracle.json").read_text())
    assert doc["years"][0]["mean"] == [0.0, 1.0]
    assert invoke("oracle", MODEL1).exit_code == 2


def test_exit_codes(simulated, tmp_path):
    assert invoke("fit", tmp_path / "missing.yaml", "--data", simulated / "observations.csv").exit_code == 2
    (tmp_path / "bad.yaml").write_text("name: x\nschema: [1, 2\n")
    assert invoke("fit", tmp_path / "bad.yaml").exit_code == 2
    assert invoke("fit", MODEL1, "--data", tmp_path / "nope.csv").exit_code == 3
    (tmp_path / "obs.csv").write_text("year,series,value\n99,young,1\n")
    assert invoke("fit", MODEL1, "--data", tmp_path / "obs.csv").exit_code == 3
    assert invoke("simulate", MODEL1, "--out", tmp_path / "x", "--set", "nope=1").exit_code == 2
    exact = ObservationModel([Series("young", {"age": "0"})], BinomialCount(1.0))
    pk.dump_model(pk.model_1(phi0=0.5, phi1=0.8, lam=0.45, horizon=2, observation=exact), tmp_path / "e.yaml")
    (tmp_path / "imp.csv").write_text("year,series,value\n1,young,100000\n")
    res = CliRunner().invoke(main, ["fit", str(tmp_path / "e.yaml"), "--data", str(tmp_path / "imp.csv"), "-R", "50"])
    assert res.exit_code == 4
    assert "hint" in res.output


def test_manifest_run_is_worker_independent(simulated, tmp_path):
    sim = tmp_path / "sim.yaml"
    sim.write_text(yaml.safe_dump({"command": "simulate", "models": str(Path(MODEL1).resolve()), "output": "sim",
                                   "seed": 3, "theta": THETA_STR}))
    assert invoke("run", sim).exit_code == 0
    manifest = json.loads((tmp_path / "sim" / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["manifest"]["command"] == "simulate"
    outs = []
    for w in (1, 3):
        fit = tmp_path / f"fit{w}.yaml"
        fit.write_text(yaml.safe_dump({"command": "fit", "models": str(Path(MODEL1).resolve()),
                                       "data": "sim/observations.csv", "output": f"out{w}", "seed": 5,
                                       "engine": {"n_particles": 2000, "block_size": 256}}))
        assert invoke("run", fit, workers=w).exit_code == 0
        outs.append(tmp_path / f"out{w}")
    for name in ("fit.json", "filtered.csv", "series.csv", "diagnostics.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_manifest_validation(tmp_path):
    with pytest.raises(ConfigError):
        RunManifest(command="dance", models=["a"], output="o")
    with pytest.raises(ConfigError):
        RunManifest(command="fit", models=[], output="o")
    with pytest.raises(ConfigError):
        RunManifest(command="fit", models=["a"], output="o", seed=-1)
    p = tmp_path / "m.yaml"
    p.write_text("command: fit\nmodels: nothing.yaml\noutput: o\n")
    with pytest.raises(ConfigError):
        load_manifest(p)
    p.write_text(f"command: fit\nmodels: {Path(MODEL1).resolve()}\noutput: o\ndata: none.csv\n")
    with pytest.raises(DataError):
        load_manifest(p)
    p.write_text(f"command: fit\nmodels: {Path(MODEL1).resolve()}\noutput: o\ncolour: red\n")
    with pytest.raises(ConfigError, match="colour"):
        load_manifest(p)
    p.write_text(f"command: fit\nmodels: {Path(MODEL1).resolve()}\noutput: o\n")
    assert load_manifest(p).output == str(tmp_path / "o")


def test_shipped_manifests(tmp_path):
    sim = yaml.safe_load(Path("configs/simulate_model1.yaml").read_text())
    fit = yaml.safe_load(Path("configs/fit_model1.yaml").read_text())
    assert sim["command"] == "simulate" and fit["command"] == "fit"


def test_seal_commands(tmp_path):
    res = invoke("seal", "simulate", "--seed", 2, "--out", tmp_path / "s")
    assert res.exit_code == 0, res.output
    res = invoke("seal", "compare", "--variant", "salmon-production", "-R", 300, "--out", tmp_path / "c")
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "c" / "compare.json").read_text())
    assert doc["seed"] == 0 and doc["version"] == pk.__version__


def test_version_flag():
    assert pk.__version__ in invoke("--version").output
