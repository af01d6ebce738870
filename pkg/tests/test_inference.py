import math

import numpy as np
import pytest
from scipy import integrate, special

from msspy import _kernels as K
from msspy.inference import (DEFAULT_HYPERPRIORS, HIER_WARMUP, ITERS_PER_STEP, MODELS, MH_SUBSTEPS,
                             StrategyModel, batch_means_mcse, chain_trace_header,
                             chain_trace_rows, discovery_probability,
                             extend_data, gibbs_step, init_chain, latent_signature, run_chain)
from msspy.partitions import grouped_from_observations

DATA = np.array([[3, 1, 0, 2], [0, 2, 4, 0]])


def test_defaults():
    assert (ITERS_PER_STEP, HIER_WARMUP, MH_SUBSTEPS) == (200, 1000, 10)
    assert DEFAULT_HYPERPRIORS["IndepDP"].alpha_group == (0.75, 1.0)
    assert DEFAULT_HYPERPRIORS["HierPY"].sigma_group == (1.0, 2.0)
    assert DEFAULT_HYPERPRIORS["HierPY"].alpha_root == (1.0, 1.0)
    assert DEFAULT_HYPERPRIORS["AddDP"].eps_weights == (0.15, 0.15, 0.7)
    assert StrategyModel("HierDP").warmup == 1000 and StrategyModel("AddPY").warmup == 0
    with pytest.raises(ValueError):
        StrategyModel("HierGN")
    with pytest.raises(ValueError):
        StrategyModel("IndepDP", pinned={"beta": 1.0})
    with pytest.raises(ValueError):
        StrategyModel("HierDP", pinned={"sigma": [0.0, 0.3, 0.3]})
    StrategyModel("HierDP", pinned={"sigma": 0.0})


@pytest.mark.parametrize("kind", MODELS)
def test_empty_data(kind):
    rng = np.random.default_rng(0)
    state = init_chain(StrategyModel(kind), np.zeros((2, 0), dtype=int), rng)
    state.check()
    _, est = run_chain(StrategyModel(kind), np.zeros((2, 0), dtype=int), iterations=5, rng=rng)
    np.testing.assert_allclose(est.mean, 1.0)


def test_init_latent_states():
    rng = np.random.default_rng(1)
    state = init_chain(StrategyModel("IndepDP"), DATA, rng)
    assert state.tables == {} and state.comp is None
    g = grouped_from_observations([["x"], ["x"]])
    state = init_chain(StrategyModel("HierDP"), g, rng)
    state.check()
    assert set(state.tables) == {(0, 0), (1, 0)}
    assert all(v == [1] for v in state.tables.values())


@pytest.mark.parametrize("kind", MODELS)
def test_invariants_every_sweep(kind):
    rng = np.random.default_rng(2)
    state = init_chain(StrategyModel(kind), DATA, rng)
    for _ in range(100):
        gibbs_step(state, rng)
        state.check()
        assert np.all(state.alpha > 0)
        assert np.all((state.sigma >= 0) & (state.sigma < 1))
    assert state.sweeps == 100


@pytest.mark.parametrize("kind", MODELS)
def test_deterministic_and_warm_start(kind):
    model = StrategyModel(kind)
    s1, e1 = run_chain(model, DATA, iterations=20, rng=np.random.default_rng(3))
    s2, e2 = run_chain(model, DATA, iterations=20, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(e1.mean, e2.mean)
    assert latent_signature(s1) == latent_signature(s2)
    more = np.hstack([DATA, [[0], [1]]])
    more[0, 0] += 2
    s3, e3 = run_chain(model, more, iterations=20, warm_state=s1, rng=np.random.default_rng(4))
    s3.check()
    assert s3.D == 5 and np.all((e3.mean >= 0) & (e3.mean <= 1))


def test_warm_start_model_mismatch():
    s, _ = run_chain(StrategyModel("IndepDP"), DATA, iterations=2, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_chain(StrategyModel("IndepPY"), DATA, warm_state=s, rng=np.random.default_rng(0))


def test_extend_data_errors():
    rng = np.random.default_rng(5)
    state = init_chain(StrategyModel("AddDP"), DATA, rng)
    with pytest.raises(ValueError):
        extend_data(state, DATA[:, :3], rng)
    with pytest.raises(ValueError):
        extend_data(state, DATA - 1, rng)
    with pytest.raises(ValueError):
        extend_data(state, np.hstack([DATA, [[0], [0]]]), rng)


def test_run_chain_validation():
    with pytest.raises(ValueError):
        run_chain(StrategyModel("IndepDP"), DATA, iterations=0, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_chain(StrategyModel("IndepDP"), DATA)


def _dp_alpha_posterior(sizes, shape, rate):
    n, k = sum(sizes), len(sizes)

    def dens(a):
        return a ** (shape - 1) * math.exp(-rate * a) * a ** k * math.exp(special.gammaln(a) - special.gammaln(a + n))
    return dens, n


def test_indep_dp_alpha_posterior():
    # one group with composition (2, 1); prior Gamma(0.75, 1)
    dens, n = _dp_alpha_posterior([2, 1], 0.75, 1.0)
    Z = integrate.quad(dens, 0, np.inf)[0]
    p_below = integrate.quad(dens, 0, 1.0)[0] / Z
    p_mid = integrate.quad(dens, 1.0, 3.0)[0] / Z
    disc = integrate.quad(lambda a: dens(a) * a / (a + n), 0, np.inf)[0] / Z
    rng = np.random.default_rng(6)
    _, est = run_chain(StrategyModel("IndepDP"), [[2, 1]], iterations=40000, rng=rng)
    alpha = est.trace["alpha"][:, 1]
    for x, target in ((alpha < 1.0, p_below), ((alpha >= 1.0) & (alpha < 3.0), p_mid)):
        x = x.astype(float)
        assert abs(x.mean() - target) < 4 * batch_means_mcse(x)
    assert abs(est.mean[0] - disc) < 4 * est.mcse[0]
    # density ratio at two test points from a histogram
    lo, hi = (0.4, 0.6), (1.9, 2.1)
    ratio_true = integrate.quad(dens, *lo)[0] / integrate.quad(dens, *hi)[0]
    counts = [np.sum((alpha >= a) & (alpha < b)) for a, b in (lo, hi)]
    ratio = counts[0] / counts[1]
    assert abs(math.log(ratio / ratio_true)) < 0.25


def test_hier_py_reduces_to_indep_py():
    data = np.array([[4, 2, 0], [0, 1, 3]])
    alpha = np.array([1e8, 1.0, 2.0])
    sigma = np.array([0.0, 0.3, 0.5])
    hier = StrategyModel("HierPY", pinned={"alpha": alpha, "sigma": sigma})
    indep = StrategyModel("IndepPY", pinned={"alpha": alpha, "sigma": sigma})
    _, eh = run_chain(hier, data, iterations=500, rng=np.random.default_rng(7))
    _, ei = run_chain(indep, data, iterations=500, rng=np.random.default_rng(7))
    np.testing.assert_allclose(eh.mean, ei.mean, atol=0.02)
    # with every hyperparameter pinned the independent estimate is exact
    n = data.sum(axis=1)
    k = (data > 0).sum(axis=1)
    np.testing.assert_allclose(ei.mean, (alpha[1:] + sigma[1:] * k) / (alpha[1:] + n))


@pytest.mark.parametrize("kind", ["IndepPY", "AddPY", "HierPY"])
def test_mh_acceptance(kind):
    state, _ = run_chain(StrategyModel(kind), DATA, iterations=3000, rng=np.random.default_rng(8))
    rates = state.acceptance_rates()
    used = state.tries > 0
    assert np.all((rates[used] > 0.2) & (rates[used] < 0.6))


def test_adaptation_diminishes():
    gains = np.array([K.adapt_gain(t) for t in range(0, 5000, 100)])
    assert np.all(np.diff(gains) <= 0)
    assert gains[-1] < 0.01


@pytest.mark.parametrize("kind", ["AddDP", "HierDP"])
def test_dispersed_starts_agree(kind):
    ests = []
    for seed, scale in ((10, 1e-3), (11, 1e3)):
        rng = np.random.default_rng(seed)
        state = init_chain(StrategyModel(kind), DATA, rng)
        state.alpha[:] = scale
        _, est = run_chain(StrategyModel(kind), DATA, iterations=20000, warm_state=state, rng=rng)
        ests.append(est)
    a, b = ests
    assert np.all(np.abs(a.mean - b.mean) < 3 * np.hypot(a.mcse, b.mcse) + 1e-3)


def test_discovery_probability_and_trace():
    state, est = run_chain(StrategyModel("AddPY"), DATA, iterations=50, rng=np.random.default_rng(9))
    m, se = discovery_probability(est.trace, 1)
    assert m == pytest.approx(est.mean[1]) and se >= 0
    m10, _ = discovery_probability(est.trace, 1, num_iterations=10)
    assert m10 == pytest.approx(est.trace["discovery"][-10:, 1].mean())
    with pytest.raises(ValueError):
        discovery_probability(est.trace, 0, num_iterations=0)
    rows = list(chain_trace_rows(est.trace))
    assert len(rows) == 50 and len(rows[0]) == len(chain_trace_header(2)) == 1 + 3 + 3 + 2 + 1 + 2
    assert rows[0][0] == 1 and rows[0][9] == 4
    eps = est.trace["eps"]
    assert np.all((eps >= 0) & (eps <= 1))


def test_batch_means():
    rng = np.random.default_rng(0)
    x = rng.normal(size=10000)
    assert batch_means_mcse(x) == pytest.approx(0.01, rel=0.3)
    assert batch_means_mcse(np.ones(3)) == 0.0
