import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msspy.eppf import DM, DP, GN, PYP, EmpiricalWeights, log_eppf
from msspy.multivariate import (Additive, ClusterState, ComponentState, FranchiseState, Hierarchical,
                                Independent, Nested, NoLatent, add_observation, check_latent, enumerate_latent,
                                log_peppf, log_peppf_augmented, marginal_family, mgcrp_predictive,
                                mgcrp_predictive_from_ratios, peppf_mc_from_weights, sample_array)
from msspy.partitions import enumerate_grouped, grouped_from_observations

SPECS = {
    "independent": Independent((DP(1.0), PYP(0.3, 0.7))),
    "hierarchical": Hierarchical((PYP(0.2, 1.3), DP(0.6)), PYP(0.4, 0.9)),
    "nested": Nested(DP(0.8), PYP(0.25, 1.1)),
    "additive": Additive((0.35, 0.8), PYP(0.3, 1.0), (DP(1.5), GN(0.4))),
}


@pytest.mark.parametrize("name", SPECS)
@pytest.mark.parametrize("sizes", [(2, 2), (3, 1), (0, 3)])
def test_peppf_normalization(name, sizes):
    spec = SPECS[name]
    total = sum(math.exp(log_peppf(spec, g)) for g in enumerate_grouped(sizes))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_independent_rejects_shared_species():
    g = grouped_from_observations([["x"], ["x"]])
    assert log_peppf(SPECS["independent"], g) == -math.inf
    with pytest.raises(ValueError):
        mgcrp_predictive(SPECS["independent"], g, 0)
    with pytest.raises(ValueError):
        mgcrp_predictive_from_ratios(SPECS["independent"], g, 0)


def test_single_group_reduces_to_marginal():
    # pooled marginals: one group of a hierarchical process is the root-child composition
    spec = Nested(DP(1.0), PYP(0.3, 2.0))
    g = grouped_from_observations([["a", "a", "b"], []])
    assert log_peppf(spec, g) == pytest.approx(log_eppf(PYP(0.3, 2.0), [2, 1]))


def test_hdp_ties_across():
    g = grouped_from_observations([["x"], ["x"]])
    assert math.exp(log_peppf(Hierarchical((DP(1.0), DP(1.0)), DP(1.0)), g)) == pytest.approx(0.5)
    assert math.exp(log_peppf(Additive((1.0, 1.0), DP(1.0), (DP(1.0), DP(1.0))), g)) == pytest.approx(0.5)
    assert math.exp(log_peppf(Nested(DP(1.0), DP(1.0)), g)) == pytest.approx(0.25)


@pytest.mark.parametrize("name", SPECS)
def test_latent_states_are_valid(name):
    spec = SPECS[name]
    g = grouped_from_observations([["a", "b", "a"], ["b", "c"]])
    states = list(enumerate_latent(spec, g))
    assert states
    for z in states:
        check_latent(spec, g, z)
    terms = [log_peppf_augmented(spec, g, z) for z in states]
    exact = np.logaddexp.reduce([t for t in terms if t > -math.inf])
    assert exact == pytest.approx(log_peppf(spec, g))


def test_check_latent_rejects_mismatch():
    spec = SPECS["hierarchical"]
    g = grouped_from_observations([["a", "b"], ["a"]])
    with pytest.raises(ValueError):
        check_latent(spec, g, FranchiseState(((0, 0), (0,)), ((0,), (0,))))
    with pytest.raises(ValueError):
        check_latent(SPECS["additive"], g, ComponentState(((False, True), (True,))))


@pytest.mark.parametrize("name", SPECS)
@given(data=st.data())
@settings(max_examples=15, deadline=None)
def test_predictive_routes_agree(name, data):
    spec = SPECS[name]
    groups = [data.draw(st.lists(st.sampled_from("abc"), max_size=3)) for _ in range(2)]
    g = grouped_from_observations(groups)
    j = data.draw(st.integers(0, 1))
    if log_peppf(spec, g) == -math.inf:
        return
    a = mgcrp_predictive(spec, g, j)
    b = mgcrp_predictive_from_ratios(spec, g, j)
    np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-10)


def test_add_observation():
    g = grouped_from_observations([["a"], ["b"]])
    h = add_observation(g, 0, 2)
    assert h.freq.tolist() == [[1, 1, 0], [0, 0, 1]]  # species relabelled by arrival
    h = add_observation(g, 0, 1)
    assert h.freq.tolist() == [[1, 1], [0, 1]]


@pytest.mark.parametrize("name", SPECS)
def test_sample_array(name):
    rng = np.random.default_rng(0)
    g, z = sample_array(SPECS[name], (4, 3), rng)
    assert g.sizes == (4, 3)
    check_latent(SPECS[name], g, z)
    assert log_peppf_augmented(SPECS[name], g, z) > -math.inf


def test_sample_array_frequencies():
    # forward simulation against the exact pEPPF on every outcome of sizes (1, 1)
    spec = SPECS["hierarchical"]
    rng = np.random.default_rng(1)
    reps = 20000
    shared = sum(sample_array(spec, (1, 1), rng)[0].D == 1 for _ in range(reps))
    p = math.exp(log_peppf(spec, grouped_from_observations([["x"], ["x"]])))
    assert abs(shared / reps - p) < 4 * math.sqrt(p * (1 - p) / reps)


@pytest.mark.parametrize("spec", [Hierarchical((DP(1.0), DP(1.0)), DP(1.0)),
                                  Additive((1.0, 1.0), DP(1.0), (DP(1.0), DP(1.0))),
                                  Nested(DP(1.0), DP(1.0)),
                                  Additive((0.5, 0.3), PYP(0.2, 1.0), (DP(1.0), DP(2.0)))])
def test_weight_oracle(spec):
    g = grouped_from_observations([["x", "y"], ["x"]])
    est = peppf_mc_from_weights(spec, g, 20000, np.random.default_rng(5))
    assert abs(est.value - math.exp(log_peppf(spec, g))) < 4 * est.stderr


def test_importance_sampling_above_exact_limit():
    spec = Hierarchical((DP(1.0), DP(2.0)), DP(1.5))
    g = grouped_from_observations([list("aabbcab"), list("aadd")])
    with pytest.raises(ValueError):
        log_peppf(spec, g)
    a = log_peppf(spec, g, num_samples=4000, rng=np.random.default_rng(0))
    b = log_peppf(spec, g, num_samples=4000, rng=np.random.default_rng(1))
    assert a == pytest.approx(b, abs=0.1)


def test_importance_sampling_matches_exact_at_limit(monkeypatch):
    import msspy.multivariate as mv
    spec = Additive((0.4, 0.6), DP(1.0), (DP(2.0), DP(0.5)))
    g = grouped_from_observations([list("aab"), list("bc")])
    exact = log_peppf(spec, g)
    monkeypatch.setattr(mv, "EXACT_MAX_N", 0)
    approx = log_peppf(spec, g, num_samples=20000, rng=np.random.default_rng(2))
    assert approx == pytest.approx(exact, abs=0.05)


def test_marginal_family():
    assert marginal_family(SPECS["independent"], 1) == PYP(0.3, 0.7)
    assert marginal_family(SPECS["nested"], 0) == PYP(0.25, 1.1)
    add = Additive((0.0, 1.0), DP(2.0), (DP(1.0), DP(3.0)))
    assert marginal_family(add, 0) == DP(1.0)
    assert marginal_family(add, 1) == DP(2.0)
    assert isinstance(marginal_family(SPECS["hierarchical"], 0, truncation=50), EmpiricalWeights)


def test_spec_validation():
    with pytest.raises(ValueError):
        Additive((1.2, 0.5), DP(1.0), (DP(1.0), DP(1.0)))
    with pytest.raises(ValueError):
        Additive((0.5,), DP(1.0), (DP(1.0), DP(1.0)))
    with pytest.raises(ValueError):
        Independent(())
    with pytest.raises(ValueError):
        log_peppf(SPECS["independent"], grouped_from_observations([["a"], ["b"], ["c"]]))
