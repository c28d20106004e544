import numpy as np
import pytest

import popkit as pk
from popkit.errors import ConfigError
from popkit.seal import (AGES, REGIONS, VARIANTS, SealParams, build_seal_model, compare_variants, load_distances,
                         load_pups, load_seal_covariates, movement_matrix, stable_initial, synthetic_covariates,
                         synthetic_dataset)
from popkit.smc import EngineConfig


@pytest.fixture(scope="module")
def inputs():
    return load_distances(), load_seal_covariates()


def _theta(model):
    return {k: float(v.args[0]) for k, v in model.parameters.items()}


def test_shipped_data(inputs):
    dist, cov = inputs
    assert dist.shape == (4, 4) and np.allclose(dist, dist.T) and np.all(np.diag(dist) == 0)
    pups = load_pups()
    assert pups.names == list(REGIONS) and pups.years[0] == 1984 and pups.years[-1] == 2002
    assert pups.variances is not None
    cov.require_years(["salmon_production", "staff_numbers"], range(1983, 2003))


def test_schema_and_processes(inputs):
    m = build_seal_model("salmon-production", *inputs, params=SealParams())
    assert m.schema.size == 28
    assert [p.kind for p in m.processes] == ["survival", "aging", "movement", "birth"]
    m = build_seal_model("density-dependent", *inputs, include_harvest=True, params=SealParams())
    assert [p.kind for p in m.processes] == ["survival", "harvest", "aging", "movement", "birth"]
    assert "dd_slope" in m.parameters and "cov_coef" not in m.parameters


def test_only_recruits_move_between_regions(inputs):
    m = build_seal_model("salmon-production", *inputs, params=SealParams())
    x = stable_initial()
    P = np.asarray(pk.leslie_product(m, _theta(m), year=1990, covariates=inputs[1],
                                     state_for_density=x.reshape(-1)))
    for src in range(m.schema.size):
        for dst in range(m.schema.size):
            s, d = m.schema.cell_labels(src), m.schema.cell_labels(dst)
            if P[dst, src] != 0 and s["region"] != d["region"]:
                # Age-4 animals age into the recruit class, the only one that moves.
                assert s["age"] == "4", (s, d)


def test_aging_then_movement_conserves(inputs):
    m = build_seal_model("salmon-production", *inputs, params=SealParams())
    x = np.random.default_rng(0).integers(0, 500, (200, 28))
    aging, move = m.processes[1], m.processes[2]
    from popkit.processes import apply_process
    from popkit.rates import RateContext
    ctx = RateContext(size=200, schema=m.schema, states={"n_prev": x})
    u1 = apply_process(aging, x, aging.resolve({}, ctx, 1), m.schema)
    ctx.states["u1"] = ctx.states["u2"] = u1
    th = {k: np.full(200, v) for k, v in _theta(m).items()}
    u2 = apply_process(move, u1, move.resolve(th, ctx, 3), m.schema, np.random.default_rng(1))
    np.testing.assert_array_equal(u1.sum(axis=1), x.sum(axis=1))
    np.testing.assert_array_equal(u2.sum(axis=1), x.sum(axis=1))


def test_movement_limits(inputs):
    dist = inputs[0]
    np.testing.assert_allclose(movement_matrix([10, 20, 30, 40], dist, decay=np.inf), np.eye(4))
    np.testing.assert_allclose(movement_matrix([5, 5, 5, 5], np.zeros((4, 4)), decay=0.3), np.full((4, 4), 0.25))


def test_dead_covariate_matches_density_variant(inputs):
    dist, cov = inputs
    base = SealParams(dd_slope=0.0, cov_coef=0.0)
    x = stable_initial().reshape(-1)
    mats = [np.asarray(pk.leslie_product(build_seal_model(v, dist, cov, params=base),
                                         _theta(build_seal_model(v, dist, cov, params=base)),
                                         year=1995, covariates=cov, state_for_density=x)) for v in VARIANTS]
    np.testing.assert_allclose(mats[0], mats[1])
    np.testing.assert_allclose(mats[0], mats[2])


def test_missing_inputs(inputs):
    with pytest.raises(ConfigError):
        build_seal_model("salmon-production", None, inputs[1])
    with pytest.raises(ConfigError):
        build_seal_model("staff-numbers", inputs[0], {})
    with pytest.raises(ConfigError):
        build_seal_model("weather", *inputs)


def test_synthetic_dataset_is_seeded(inputs):
    a = synthetic_dataset("staff-numbers", seed=4, distances=inputs[0])
    b = synthetic_dataset("staff-numbers", seed=4, distances=inputs[0])
    assert a.data == b.data
    np.testing.assert_allclose(np.sqrt(a.data.variances) / a.states[1:, ::7], 0.08, rtol=0.01)
    assert synthetic_covariates()["salmon_production"].regional


def test_single_and_identical_variants(inputs):
    dist, _ = inputs
    sim = synthetic_dataset("salmon-production", seed=3, distances=dist)
    cfg = EngineConfig(n_particles=500, seed=2)
    one = compare_variants(sim.data, ["salmon-production"], cfg, dist, sim.covariates)
    assert one.order == ["salmon-production"] and one.scores[0].probability == 1.0
    twice = compare_variants(sim.data, ["salmon-production", "salmon-production"], cfg, dist, sim.covariates)
    assert len(twice.scores) == 1
    assert "salmon-production" in one.table() and one.to_dict()["ranking"][0]["probability"] == 1.0


def test_stable_initial_shape():
    x = stable_initial()
    assert x.shape == (4, len(AGES)) and np.all(x > 0)
