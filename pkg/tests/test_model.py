import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import popkit as pk
from popkit.errors import ConfigError, UnsupportedError
from popkit.model import compose_annual, process_matrices
from popkit.processes import Aging, Binding, Birth, Growth, Survival
from popkit.rates import Constant, DensityDependent
from popkit.schema import StateSchema, StateVector


def test_model_2_expectation_example():
    m = pk.model_2(mode="expectation")
    P = np.asarray(pk.leslie_product(m, {"phi0": 0.5, "phi1": 0.8, "pi": 0.3, "lam": 1.2}))
    np.testing.assert_allclose(P, [[0.53, 0.96], [0.15, 0.8]], atol=1e-15)
    x = np.array([10.0, 20.0])
    out, _ = compose_annual(m, x, {"phi0": 0.5, "phi1": 0.8, "pi": 0.3, "lam": 1.2})
    np.testing.assert_allclose(out, P @ x)


def test_leslie_provenance_order():
    P = pk.leslie_product(pk.model_3(), {"phi0": 0.5, "phi1": 0.8, "mu": 0.1, "lam": 1.2})
    assert P.provenance == ("survival", "movement", "aging", "birth")
    assert P.shape == (4, 4)


def test_identity_processes_give_identity():
    schema = StateSchema.from_dict({"age": ["0", "1", "2"]})
    m = pk.PopulationModel(schema, [Survival([Binding({}, Constant(1.0))]), Growth("age")], horizon=1)
    np.testing.assert_array_equal(np.asarray(pk.leslie_product(m, {})), np.eye(3))


def test_certain_survival_and_extinction():
    m = pk.model_1()
    theta = {"phi0": 1.0, "phi1": 1.0, "lam": 0.0}
    rng = np.random.default_rng(0)
    out, inter = compose_annual(m, np.array([10, 7]), theta, rng=rng)
    np.testing.assert_array_equal(inter[0], [10, 7])
    np.testing.assert_array_equal(out, [0, 17])
    out, _ = compose_annual(m, np.zeros(2, dtype=int), {"phi0": 0.5, "phi1": 0.8, "lam": 1.2}, rng=rng)
    np.testing.assert_array_equal(out, [0, 0])


def test_survival_mean_law():
    m = pk.PopulationModel(StateSchema.from_dict({"age": ["0"]}), [Survival([Binding({}, Constant(0.5))])])
    x = np.full((10_000, 1), 10**6)
    out, _ = compose_annual(m, x, {}, rng=np.random.default_rng(1))
    assert out.mean() == pytest.approx(5e5, rel=0.005)


def test_intermediates_and_state_vectors():
    m = pk.model_1()
    v = StateVector(m.schema, [10, 10], t=4)
    out, inter = compose_annual(m, v, {"phi0": 0.5, "phi1": 0.8, "lam": 1.2}, rng=np.random.default_rng(2))
    assert [u.k for u in inter] == [1, 2, 3] and out.t == 5
    assert inter[1].values[0] == 0
    assert inter[2].values[1] == inter[1].values[1]


def test_density_reads_intermediate_state():
    schema = StateSchema.from_dict({"age": ["0", "1"]})
    procs = [Birth("age", [Binding({"age": "1"}, Constant(1.0))]),
             Survival([Binding({"age": "0"}, DensityDependent(0.0, -1.0, 10.0, state="u1", cells={"age": "0"}))])]
    m = pk.PopulationModel(schema, procs, mode="expectation")
    out, _ = compose_annual(m, np.array([0.0, 10.0]), {})
    assert out[0] == pytest.approx(10 / (1 + np.exp(1.0)))
    with pytest.raises(UnsupportedError):
        pk.leslie_product(m, {})
    P = pk.leslie_product(m, {}, state_for_density=np.array([0.0, 10.0]))
    np.testing.assert_allclose(np.asarray(P) @ [0.0, 10.0], out)


def test_process_order_validation():
    schema = StateSchema.from_dict({"age": ["0", "1"]})
    reads_later = Survival([Binding({}, DensityDependent(0.0, -1.0, 10.0, state="u2"))])
    with pytest.raises(ConfigError):
        pk.PopulationModel(schema, [reads_later, Aging("age")])
    with pytest.raises(ConfigError):
        pk.PopulationModel(schema, [Survival([Binding({}, Constant("phi"))])])
    with pytest.raises(ConfigError):
        pk.PopulationModel(schema, [Survival(stochastic=False)])
    with pytest.raises(ConfigError):
        pk.PopulationModel(schema, [])
    with pytest.raises(ConfigError):
        pk.expectation_matrix(pk.model_1(), 4, {})


def test_long_run_growth_matches_dominant_eigenvalue():
    theta = {"phi0": 0.5, "phi1": 0.8, "lam": 0.45}
    m = pk.model_1(**theta, n0=(100, 100), mode="expectation", horizon=10_000)
    states, _ = pk.simulate(m, theta, np.random.default_rng(0), observe=False)
    totals = states.sum(axis=1)
    growth = totals[-1] / totals[-2]
    # Independent power iteration on the closed-form matrix.
    P = np.array([[0.45 * 0.5, 0.45 * 0.8], [0.5, 0.8]])
    v = np.ones(2)
    for _ in range(200):
        w = P @ v
        rate, v = w.sum() / v.sum(), w / w.sum()
    assert rate == pytest.approx(1.025)
    assert growth == pytest.approx(rate, rel=0.01)


def test_simulation_shapes_and_observation_noise():
    m = pk.load_model("configs/model1.yaml")
    theta = {"phi0": 0.5, "phi1": 0.8, "lam": 0.45}
    states, obs = pk.simulate(m, theta, np.random.default_rng(3))
    assert states.shape == (26, 2) and obs.shape == (25, 2)
    resid = obs - states[1:]
    assert abs(resid.mean()) < 3 * 10 / np.sqrt(50)


def test_normal_mode_tracks_integer_mean():
    theta = {"phi0": 0.5, "phi1": 0.8, "lam": 0.45}
    runs = {}
    for mode in ("integer", "normal"):
        m = pk.model_1(**theta, n0=(200, 200), mode=mode, horizon=5)
        x = np.tile([200, 200], (20_000, 1))
        for year in m.years:
            x, _ = m.propagate(x, {k: np.full(len(x), v) for k, v in theta.items()}, year, np.random.default_rng(year))
        runs[mode] = x.mean(axis=0)
    np.testing.assert_allclose(runs["normal"], runs["integer"], rtol=0.01)


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 4))
def test_matrix_power_equals_expectation_run(phi0, phi1, mu, lam):
    theta = {"phi0": phi0, "phi1": phi1, "mu": mu, "lam": lam}
    m = pk.model_3(mode="expectation", horizon=3, n0=(5, 6, 7, 8), **theta)
    states, _ = pk.simulate(m, theta, np.random.default_rng(0), observe=False)
    P = np.asarray(pk.leslie_product(m, theta))
    np.testing.assert_allclose(states[-1], np.linalg.matrix_power(P, 3) @ [5, 6, 7, 8], rtol=1e-10, atol=1e-10)


def test_batched_matrices():
    theta = {"phi0": np.array([0.1, 0.9]), "phi1": np.array([0.5, 0.5]), "lam": np.array([1.0, 2.0])}
    mats = process_matrices(pk.model_1(), theta)
    assert [M.shape for M in mats] == [(2, 2, 2)] * 3
