import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import popkit as pk
from popkit.errors import ConfigError, OracleInvalidError, UnsupportedError
from popkit.observation import BinomialCount, ObservationModel, Series
from popkit.oracles import EnumeratedDistribution, LinearGaussianModel, enumerate_filter, kalman_filter, total_variation
from popkit.smc import EngineConfig, init_ensemble, step


# -- enumeration --------------------------------------------------------------

def test_binomial_survival_pmf():
    m = pk.model_1(phi0=0.5, phi1=0.5, lam=0.0, n0=(0, 2), horizon=1)
    res = enumerate_filter(m, {"phi0": 0.5, "phi1": 0.5, "lam": 0.0}, bound=4)
    np.testing.assert_allclose(res.at(1).marginal(1), [0.25, 0.5, 0.25])
    np.testing.assert_allclose(res.at(1).marginal(0), [1.0])
    assert res.loglik == 0.0 and res.lost == 0.0


def test_deterministic_model_is_point_mass():
    m = pk.model_1(phi0=1.0, phi1=1.0, lam=0.0, n0=(2, 3), horizon=3)
    res = enumerate_filter(m, {"phi0": 1.0, "phi1": 1.0, "lam": 0.0}, bound=6)
    for year in m.years:
        assert res.at(year).as_dict() == {(0, 5): 1.0}


def test_exact_observation_collapses_filter():
    obs = ObservationModel([Series("adults", {"age": "1"})], BinomialCount(1.0))
    m = pk.model_1(phi0=0.5, phi1=0.5, lam=0.0, n0=(0, 4), horizon=1, observation=obs)
    data = pk.ObservationSeries([1], ["adults"], [[3.0]])
    res = enumerate_filter(m, {"phi0": 0.5, "phi1": 0.5, "lam": 0.0}, data, bound=5)
    assert res.at(1).as_dict() == pytest.approx({(0, 3): 1.0})
    assert res.loglik == pytest.approx(np.log(stats.binom.pmf(3, 4, 0.5)))
    with pytest.raises(OracleInvalidError):
        enumerate_filter(m, {"phi0": 0.5, "phi1": 0.5, "lam": 0.0}, pk.ObservationSeries([1], ["adults"], [[5.0]]),
                         bound=5)


def test_enumeration_matches_simulation(tiny):
    theta = {"phi0": 0.5, "phi1": 0.6, "lam": 0.8}
    res = enumerate_filter(tiny, theta, bound=30, years=[1, 2, 3])
    cfg = EngineConfig(n_particles=20_000, seed=0)
    ens = init_ensemble([tiny], None, cfg)
    for year in (1, 2, 3):
        ens, _ = step(ens, year, None, cfg)
    draws = ens.state
    assert total_variation(res.at(3), EnumeratedDistribution.from_samples(draws)) < 0.05
    np.testing.assert_allclose(res.at(3).mean(), draws.mean(axis=0), rtol=0.03)


def test_enumeration_limits(tiny):
    theta = {"phi0": 0.5, "phi1": 0.6, "lam": 0.8}
    with pytest.raises(OracleInvalidError, match="bound"):
        enumerate_filter(tiny, theta, bound=4)
    with pytest.raises(ConfigError):
        enumerate_filter(tiny, {"phi0": 0.5}, bound=20)
    with pytest.raises(UnsupportedError):
        enumerate_filter(pk.model_3(), {"phi0": 0.5, "phi1": 0.8, "mu": 0.1, "lam": 1.2})
    with pytest.raises(UnsupportedError):
        enumerate_filter(pk.model_1(mode="expectation"), {"phi0": 0.5, "phi1": 0.8, "lam": 1.2})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=40), st.lists(st.integers(0, 5), min_size=1, max_size=40))
def test_total_variation_properties(a, b):
    pa = EnumeratedDistribution.from_samples(np.array(a)[:, None])
    pb = EnumeratedDistribution.from_samples(np.array(b)[:, None])
    tv = total_variation(pa, pb)
    assert 0.0 <= tv <= 1.0 + 1e-12
    assert tv == pytest.approx(total_variation(pb, pa))
    assert total_variation(pa, pa) == 0.0


# -- Kalman -------------------------------------------------------------------

def test_scalar_update_by_hand():
    res = kalman_filter([[1.0]], [[1.0]], [[1.0]], [2.0], {1: [3.0]}, [0.0], [[1.0]], years=[1])
    assert res.at(1).mean[0] == pytest.approx(1.5)
    assert res.at(1).cov[0, 0] == pytest.approx(1.0)
    assert res.loglik == pytest.approx(stats.norm.logpdf(3.0, 0.0, 2.0))


def test_noise_free_filter_follows_matrix_power():
    F = np.array([[0.5, 0.9], [0.45, 0.6]])
    P0 = np.diag([4.0, 1.0])
    res = kalman_filter(F, np.zeros((2, 2)), [[1.0, 0.0]], [1.0], None, [10.0, 5.0], P0, years=range(1, 6))
    Ft = np.linalg.matrix_power(F, 5)
    np.testing.assert_allclose(res.at(5).mean, Ft @ [10.0, 5.0])
    np.testing.assert_allclose(res.at(5).cov, Ft @ P0 @ Ft.T, atol=1e-12)


def test_loglik_matches_joint_gaussian():
    F = np.array([[0.5, 0.9], [0.45, 0.6]])
    Q, H, R = np.diag([4.0, 2.0]), np.array([[1.0, 0.0]]), 9.0
    m0, P0 = np.array([100.0, 100.0]), np.diag([25.0, 25.0])
    ys = {1: [120.0], 2: [95.0], 3: [110.0]}
    # Stack y_1..y_3 and compute the joint mean and covariance directly.
    T = 3
    mean = [H @ np.linalg.matrix_power(F, t) @ m0 for t in range(1, T + 1)]
    cov_x = {}
    for s in range(1, T + 1):
        for t in range(1, T + 1):
            acc = np.linalg.matrix_power(F, s) @ P0 @ np.linalg.matrix_power(F, t).T
            for j in range(1, min(s, t) + 1):
                acc = acc + np.linalg.matrix_power(F, s - j) @ Q @ np.linalg.matrix_power(F, t - j).T
            cov_x[s, t] = acc
    C = np.array([[(H @ cov_x[s, t] @ H.T)[0, 0] + (R if s == t else 0.0) for t in range(1, 4)] for s in range(1, 4)])
    y = np.array([ys[t][0] for t in range(1, 4)])
    expected = stats.multivariate_normal(np.ravel(mean), C).logpdf(y)
    res = kalman_filter(F, Q, H, [R], ys, m0, P0, years=[1, 2, 3])
    assert res.loglik == pytest.approx(expected, rel=1e-10)


def test_missing_observation_is_pure_prediction():
    res = kalman_filter([[0.9]], [[1.0]], [[1.0]], [1.0], {1: [np.nan]}, [5.0], [[2.0]], years=[1])
    assert res.at(1).mean[0] == pytest.approx(4.5)
    assert res.at(1).cov[0, 0] == pytest.approx(0.81 * 2 + 1)
    assert res.loglik == 0.0


def test_linear_gaussian_model_interface():
    lg = LinearGaussianModel([[0.9]], [[1.0]], [[1.0]], [4.0], [10.0], [[1.0]], horizon=4)
    states, obs = lg.simulate(np.random.default_rng(0))
    assert states.shape == (5, 1) and obs.shape == (4, 1)
    data = pk.ObservationSeries(lg.years, lg.observed_names, obs)
    res = lg.kalman(data)
    assert res.years == [1, 2, 3, 4]
    ll = lg.log_likelihood(obs[0], states[1:2], year=1)
    assert ll[0] == pytest.approx(stats.norm.logpdf(obs[0, 0], states[1, 0], 2.0))
    with pytest.raises(ConfigError):
        LinearGaussianModel([[1.0]], [[1.0]], [[1.0, 0.0]], [1.0], [0.0], [[1.0]])
    with pytest.raises(ConfigError):
        kalman_filter([[1.0]], [[1.0]], [[1.0, 1.0]], [1.0], None, [0.0], [[1.0]], years=[1])
