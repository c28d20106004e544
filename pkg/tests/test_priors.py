import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from popkit.errors import ConfigError
from popkit.priors import InitialEntry, Prior, initial_pmf, sample_initial
from popkit.schema import StateSchema

PRIORS = [Prior("uniform", (0.5, 2.5)), Prior("beta", (2, 3)), Prior("normal", (1, 2)),
          Prior("lognormal", (0, 0.5)), Prior("gamma", (2, 1.5)), Prior.fixed(0.7)]


@pytest.mark.parametrize("prior", PRIORS, ids=lambda p: p.family)
def test_sample_mean(prior):
    x = prior.sample(np.random.default_rng(0), 200_000)
    assert x.mean() == pytest.approx(prior.mean(), rel=0.02, abs=0.01)


@pytest.mark.parametrize("prior", PRIORS, ids=lambda p: p.family)
def test_unconstrained_roundtrip(prior):
    x = prior.sample(np.random.default_rng(1), 1000)
    np.testing.assert_allclose(prior.from_unconstrained(prior.to_unconstrained(x)), x, rtol=1e-9)


@pytest.mark.parametrize("prior", PRIORS, ids=lambda p: p.family)
def test_dict_roundtrip(prior):
    assert Prior.from_dict(prior.to_dict()) == prior


@pytest.mark.parametrize("d", [{"dist": "cauchy"}, {"dist": "beta", "a": 1}, {"dist": "uniform", "low": 2, "high": 1},
                               {"dist": "normal", "mean": 0, "sd": 1, "extra": 3}, {"dist": "gamma", "shape": 0, "scale": 1}])
def test_bad_priors(d):
    with pytest.raises(ConfigError):
        Prior.from_dict(d)


@given(st.floats(-30, 30))
def test_uniform_transform_stays_in_range(z):
    x = Prior("uniform", (0.5, 2.5)).from_unconstrained(np.array([z]))
    assert 0.5 <= x[0] <= 2.5


def test_initial_sampling_and_parameter_refs():
    schema = StateSchema.from_dict({"age": ["0", "1", "2"]})
    entries = [InitialEntry({"age": "0"}, "fixed", (7,)), InitialEntry({"age": "1"}, "poisson", ("m",))]
    x = sample_initial(entries, schema, {"m": np.array([30.0])}, 50_000, np.random.default_rng(2))
    assert np.all(x[:, 0] == 7) and np.all(x[:, 2] == 0)
    assert x[:, 1].mean() == pytest.approx(30, rel=0.01)
    with pytest.raises(ConfigError):
        sample_initial(entries, schema, {}, 1, np.random.default_rng(0))


def test_initial_pmf_tracks_truncation():
    schema = StateSchema.from_dict({"age": ["0"]})
    pmfs, lost = initial_pmf([InitialEntry({}, "poisson", (15.0,))], schema, {}, bound=20)
    assert pmfs[0].sum() + lost == pytest.approx(1.0)
    assert lost == pytest.approx(0.0830, abs=1e-4)
    pmfs, lost = initial_pmf([InitialEntry({}, "uniform", (2, 5))], schema, {}, bound=20)
    np.testing.assert_allclose(pmfs[0][2:6], 0.25)
    assert lost == 0
