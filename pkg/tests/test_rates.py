import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from popkit.errors import ConfigError, DataError, DomainError, UnsupportedError
from popkit.rates import (Constant, CovariateStream, Covariates, DensityDependent, Logistic, LogLinear, RandomEffect,
                          load_covariates, logistic_movement, rate_from_dict, rate_jacobian, resolve_rate,
                          write_covariates)
from popkit.schema import StateSchema

COV = Covariates({"salmon": CovariateStream("salmon", {2000: 1.5, 2001: 2.0}),
                  "temp": CovariateStream("temp", {(2000, "a"): 0.1, (2000, "b"): -0.4})})
SCHEMA = StateSchema.from_dict({"region": ["a", "b"], "age": ["0", "1"]})


def test_constant_and_links():
    assert resolve_rate(Constant(0.3), {}) == 0.3
    assert resolve_rate(Constant("phi"), {"phi": 0.6}) == 0.6
    r = resolve_rate(Logistic("b0", (("salmon", "b1"),)), {"b0": 0.2, "b1": -0.5}, year=2001, covariates=COV)
    assert r == pytest.approx(expit(0.2 - 0.5 * 2.0))
    r = resolve_rate(LogLinear(0.1, (("salmon", 0.3),)), {}, year=2000, covariates=COV)
    assert r == pytest.approx(np.exp(0.1 + 0.45))


def test_regional_covariate_needs_cell():
    rm = Logistic(0.0, (("temp", 1.0),))
    assert resolve_rate(rm, {}, year=2000, covariates=COV, schema=SCHEMA, cell=2) == pytest.approx(expit(-0.4))
    with pytest.raises(DataError):
        resolve_rate(rm, {}, year=2000, covariates=COV)
    with pytest.raises(DataError):
        resolve_rate(Logistic(0.0, (("salmon", 1.0),)), {}, year=1990, covariates=COV)


def test_bounds_checked():
    with pytest.raises(DomainError):
        resolve_rate(Constant(1.2), {}, bounds=(0.0, 1.0))


def test_density_dependent_per_region():
    rm = DensityDependent(1.0, -2.0, 100.0, cells={"age": "0"}, same=("region",))
    x = np.array([50.0, 10.0, 150.0, 0.0])
    ra = resolve_rate(rm, {}, states={"n_prev": x}, schema=SCHEMA, cell=1)
    rb = resolve_rate(rm, {}, states={"n_prev": x}, schema=SCHEMA, cell=3)
    assert ra == pytest.approx(expit(1.0 - 2.0 * 0.5))
    assert rb == pytest.approx(expit(1.0 - 2.0 * 1.5))
    with pytest.raises(UnsupportedError):
        resolve_rate(rm, {}, schema=SCHEMA, cell=1)
    with pytest.raises(ConfigError):
        DensityDependent(state="later")


@pytest.mark.parametrize("rm, theta, kw", [
    (Constant("phi"), {"phi": 0.4}, {}),
    (Logistic("b0", (("salmon", "b1"),)), {"b0": 0.3, "b1": -0.7}, {"year": 2001, "covariates": COV}),
    (LogLinear("b0", (("salmon", "b1"),)), {"b0": -0.2, "b1": 0.4}, {"year": 2000, "covariates": COV}),
    (DensityDependent("a", "s", "K", link="logit"), {"a": 0.5, "s": -1.5, "K": 80.0},
     {"states": {"n_prev": np.array([30.0, 20.0, 10.0, 5.0])}, "schema": SCHEMA}),
    (DensityDependent("a", "s", "K", link="log"), {"a": 0.1, "s": 0.3, "K": 50.0},
     {"states": {"n_prev": np.array([30.0, 20.0, 10.0, 5.0])}, "schema": SCHEMA}),
])
def test_jacobian_matches_finite_differences(rm, theta, kw):
    grad = rate_jacobian(rm, theta, **kw)
    assert set(grad) == set(theta)
    for k in theta:
        h = 1e-6 * max(1.0, abs(theta[k]))
        up = resolve_rate(rm, {**theta, k: theta[k] + h}, **kw)
        dn = resolve_rate(rm, {**theta, k: theta[k] - h}, **kw)
        assert grad[k] == pytest.approx((up - dn) / (2 * h), rel=1e-6, abs=1e-9)


def test_random_effect_draws():
    rng = np.random.default_rng(0)
    rm = RandomEffect(0.0, 0.5, link="identity")
    draws = np.array([resolve_rate(rm, {}, rng=rng) for _ in range(20_000)])
    assert draws.std() == pytest.approx(0.5, rel=0.03)
    with pytest.raises(UnsupportedError):
        resolve_rate(rm, {})
    with pytest.raises(DomainError):
        resolve_rate(RandomEffect(0.0, 1.0, rho=1.0), {}, rng=rng)


@pytest.mark.parametrize("d", [
    {"form": "constant", "value": 0.5}, {"form": "constant", "param": "phi"},
    {"form": "logistic", "intercept": "b0", "terms": [{"covariate": "salmon", "coef": -0.5}]},
    {"form": "loglinear", "intercept": 0.2, "terms": []},
    {"form": "random_effect", "mean": "m", "sd": 0.3, "link": "logit", "rho": 0.5},
    {"form": "density", "intercept": 0.0, "slope": "s", "capacity": 100.0, "state": "u2",
     "cells": {"age": "0"}, "same": ["region"], "link": "logit"},
])
def test_rate_dict_roundtrip(d):
    assert rate_from_dict(d).to_dict() == rate_from_dict(rate_from_dict(d).to_dict()).to_dict()
    assert rate_from_dict(d) == rate_from_dict(rate_from_dict(d).to_dict())


@pytest.mark.parametrize("d", [{"form": "quadratic"}, {"form": "constant"}, {"form": "constant", "value": 1, "x": 2},
                               {"form": "random_effect", "sd": 1}])
def test_bad_rate_dicts(d):
    with pytest.raises(ConfigError):
        rate_from_dict(d)


def test_covariate_csv_roundtrip(tmp_path):
    write_covariates(COV, tmp_path / "c.csv")
    back = load_covariates(tmp_path / "c.csv")
    assert back == COV


def test_covariate_override_and_years():
    merged = COV.override({"salmon": CovariateStream("salmon", {2001: 9.0, 2002: 3.0})})
    assert merged["salmon"].value(2000) == 1.5 and merged["salmon"].value(2001) == 9.0
    merged.require_years(["salmon"], [2000, 2001, 2002])
    with pytest.raises(DataError):
        COV.require_years(["salmon"], [2002])


D = np.array([[0, 330, 400], [330, 0, 100], [400, 100, 0]], dtype=float)


def test_movement_infinite_decay_is_identity():
    T = logistic_movement([10.0, 20.0, 30.0], D, [50.0, 50.0, 50.0], decay=np.inf)
    np.testing.assert_allclose(T, np.eye(3))


def test_movement_uniform_when_everything_is_equal():
    T = logistic_movement([10.0, 10.0, 10.0], np.zeros((3, 3)), [50.0] * 3, decay=0.0)
    np.testing.assert_allclose(T, np.full((3, 3), 1 / 3))


def test_movement_prefers_close_and_empty():
    T = logistic_movement([100.0, 100.0, 10.0], D, [100.0, 100.0, 100.0], decay=0.005)
    assert T[0, 2] > T[0, 1]
    T = logistic_movement([100.0, 100.0, 100.0], D, [100.0] * 3, decay=0.01)
    assert T[0, 1] > T[0, 2]


def test_movement_bad_inputs():
    with pytest.raises(DomainError):
        logistic_movement([1.0, 1.0], np.array([[0, 1], [2, 0]]), [1.0, 1.0], 0.1)
    with pytest.raises(DomainError):
        logistic_movement([1.0, 1.0], np.array([[0, 1], [1, 0]]), [0.0, 1.0], 0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e4), min_size=3, max_size=3), st.floats(0, 0.1), st.floats(0, 2), st.floats(0, 5))
def test_movement_rows_are_distributions(counts, decay, rho, fid):
    T = logistic_movement(counts, D, [500.0, 800.0, 300.0], decay, rho, fid)
    assert np.all(T >= 0)
    np.testing.assert_allclose(T.sum(axis=1), 1.0)


def test_movement_batched():
    counts = np.array([[10.0, 20.0, 30.0], [30.0, 20.0, 10.0]])
    T = logistic_movement(counts, D, [50.0] * 3, decay=np.array([0.01, 0.02]))
    assert T.shape == (2, 3, 3)
    np.testing.assert_allclose(T[1], logistic_movement(counts[1], D, [50.0] * 3, 0.02))
