import json
from pathlib import Path

import numpy as np
import pytest
import yaml

import popkit as pk
from popkit.errors import ConfigError
from popkit.seal import VARIANTS, build_seal_model, load_distances, synthetic_covariates

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _models():
    cov, dist = synthetic_covariates(), load_distances()
    yield pk.load_model(CONFIGS / "model1.yaml")
    yield pk.model_1()
    yield pk.model_2(mode="normal")
    yield pk.model_3(mode="expectation", start_year=1990, horizon=4)
    for v in VARIANTS:
        yield build_seal_model(v, dist, cov, include_harvest=True)


@pytest.mark.parametrize("model", list(_models()), ids=lambda m: m.name)
@pytest.mark.parametrize("fmt", ["yaml", "json"])
def test_roundtrip_identity(model, fmt):
    text = pk.dumps(model, fmt)
    again = pk.loads(text)
    assert again == model
    assert pk.dumps(again, fmt) == text


def test_dump_and_load_files(tmp_path):
    m = pk.model_3()
    pk.dump_model(m, tmp_path / "m.json")
    pk.dump_model(m, tmp_path / "m.yaml")
    assert json.loads((tmp_path / "m.json").read_text())["name"] == "model3"
    assert pk.load_model(tmp_path / "m.json") == pk.load_model(tmp_path / "m.yaml") == m


def test_loaded_model_behaves_like_builder():
    cfg = pk.load_model(CONFIGS / "model1.yaml")
    theta = {"phi0": 0.3, "phi1": 0.7, "lam": 0.9}
    np.testing.assert_array_equal(np.asarray(pk.leslie_product(cfg, theta)),
                                  np.asarray(pk.leslie_product(pk.model_1(), theta)))


def _base():
    return yaml.safe_load((CONFIGS / "model1.yaml").read_text())


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.update(colour="red"), "unknown fields"),
    (lambda d: d.pop("schema"), "missing 'schema'"),
    (lambda d: d["parameters"].pop("lam"), "lam"),
    (lambda d: d["parameters"].update(lam={"dist": "beta", "a": -1, "b": 1}), "improper beta"),
    (lambda d: d["processes"].append({"kind": "teleport"}), "unknown process kind"),
    (lambda d: d["processes"][0]["rates"][0].update(cells={"sex": "f"}), "unknown axes"),
    (lambda d: d.update(mode="fuzzy"), "unknown mode"),
    (lambda d: d["observation"]["family"].update(name="poisson"), "unknown observation family"),
    (lambda d: d["processes"][2]["rates"][0]["rate"].update(form="cubic"), "unknown rate form"),
    (lambda d: d.update(horizon=-1), "horizon"),
])
def test_field_level_errors(mutate, message):
    d = _base()
    mutate(d)
    with pytest.raises(ConfigError, match=message):
        pk.model_from_dict(d)


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        pk.load_model(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("schema: [unclosed\n")
    with pytest.raises(ConfigError):
        pk.load_model(tmp_path / "bad.yaml")
