import math

import numpy as np
import pytest

from helpers import chain2, enumerate_posterior, random_polytree
from sfuncs import Cat, Constant, DiscreteCPT, Flip, HardScore, SoftScore
from sfuncs.core import InferenceError
from sfuncs.network import Network
from sfuncs.sampling import (
    ParticleSet,
    effective_sample_size,
    estimate_marginal,
    lookahead_infer,
    lw_infer,
    rejection_infer,
)
from sfuncs.semiring import ve_query

N = 100_000


def manual(values, weights):
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(weights, dtype=float))
    return ParticleSet(["X"], {"X": list(values)}, logw)


def test_ess_examples():
    assert effective_sample_size(np.ones(100)) == pytest.approx(100)
    assert effective_sample_size(np.array([0.0, 0.0, 3.0])) == pytest.approx(1)
    assert effective_sample_size(np.array([1.0, 1.0, 2.0])) == pytest.approx(16 / 6)
    with pytest.raises(InferenceError):
        effective_sample_size(np.zeros(3))


def test_estimate_marginal_examples():
    assert estimate_marginal(manual([0, 1, 1, 1], [1, 1, 1, 1]), "X", [0, 1]).tolist() == [0.25, 0.75]
    assert estimate_marginal(manual([2], [0.3]), "X", [0, 1, 2]).tolist() == [0, 0, 1]
    assert estimate_marginal(manual([0, 1], [1, 3]), "X", [0, 1]).tolist() == [0.25, 0.75]
    with pytest.raises(InferenceError):
        estimate_marginal(manual([0, 1], [0, 0]), "X", [0, 1])


def test_rejection_on_constants():
    net = Network().add("C", Constant(4))
    assert rejection_infer(net, {"C": 4}, 50, 1).accepted == 50
    none = rejection_infer(net, {"C": 5}, 50, 1)
    assert len(none) == 0 and none.proposed == 50 and none.diagnostics


def test_rejection_refuses_soft_evidence():
    with pytest.raises(InferenceError):
        rejection_infer(chain2(), {"B": SoftScore({0: 1.0})}, 10, 0)


def test_rejection_chain_posterior():
    ps = rejection_infer(chain2(), {"B": 0}, N, 3)
    assert set(np.unique(ps.weights)) == {1.0}
    assert all(b == 0 for b in ps.values["B"])
    assert abs(estimate_marginal(ps, "A", [0, 1])[0] - 0.75) <= 0.015


def test_lw_without_evidence_has_unit_weights():
    assert np.all(lw_infer(chain2(), {}, 200, 0).weights == 1.0)


def test_lw_chain_posterior():
    ps = lw_infer(chain2(), {"B": 0}, N, 4)
    assert set(ps.values["B"]) == {0}
    assert abs(estimate_marginal(ps, "A", [0, 1])[0] - 0.75) <= 0.01


def test_lw_soft_evidence_matches_ve():
    ev = {"B": SoftScore({0: 1.0, 1: 0.5})}
    ps = lw_infer(chain2(), ev, N, 5)
    assert np.max(np.abs(estimate_marginal(ps, "A", [0, 1]) - ve_query(chain2(), ev, ["A"]).table)) <= 0.01


def test_lw_zero_weight_diagnostic():
    net = Network().add("A", Flip(0.0))
    ps = lw_infer(net, {"A": True}, 20, 0)
    assert ps.diagnostics and ps.accepted == 0


def test_rejection_and_lw_agree():
    raw = random_polytree(np.random.default_rng(21), n=5)
    ev = {raw.order[-1]: 1}
    q = raw.order[0]
    rej = rejection_infer(raw.network, ev, N, 7)
    lw = lw_infer(raw.network, ev, N, 8)
    p_rej = estimate_marginal(rej, q, [0, 1])[1]
    p_lw = estimate_marginal(lw, q, [0, 1])[1]
    w = lw.weights / lw.weights.sum()
    se_lw = math.sqrt(np.sum(w**2 * (np.asarray(lw.values[q]) - p_lw) ** 2))
    se_rej = math.sqrt(p_rej * (1 - p_rej) / len(rej))
    assert abs(p_rej - p_lw) <= 3 * math.hypot(se_lw, se_rej)
    assert abs(p_lw - enumerate_posterior(raw, ev, q)[1]) <= 3 * se_lw + 1e-12


def test_same_seed_same_particles():
    for infer in (lw_infer, lookahead_infer, rejection_infer):
        a = infer(chain2(), {"B": 1}, 3000, 99)
        b = infer(chain2(), {"B": 1}, 3000, 99)
        assert a.values == b.values
        assert np.array_equal(a.log_weights, b.log_weights)


def test_generator_and_int_seeds_are_both_accepted():
    a = lw_infer(chain2(), {"B": 1}, 100, np.random.default_rng(3))
    assert len(a) == 100


def test_lookahead_without_reachable_lambda_matches_lw():
    net = Network().add("A", Cat([0, 1, 2], [0.2, 0.3, 0.5])).add("E", Flip(0.4))
    la = lookahead_infer(net, {"E": True}, 500, 11)
    lw = lw_infer(net, {"E": True}, 500, 11)
    assert np.array_equal(la.log_weights, lw.log_weights)
    assert la.values == lw.values
    assert any("likelihood weighting" in d for d in la.diagnostics)


def test_lookahead_exact_lambda_gives_constant_weights():
    net = chain2().add("C", DiscreteCPT([[0, 1]], [0, 1], [[0.6, 0.4], [0.2, 0.8]]), ["B"])
    ps = lookahead_infer(net, {"C": 1}, 2000, 12)
    assert np.ptp(ps.weights) <= 1e-9
    assert effective_sample_size(ps) == pytest.approx(2000)
    want = ve_query(net, {"C": 1}, ["A"]).table
    got = estimate_marginal(ps, "A", [0, 1])
    assert np.max(np.abs(got - want)) <= 4 * math.sqrt(0.25 / 2000)


def scored_chain():
    net = chain2()
    net.add("hard", HardScore(1), ["B"])
    net.add("soft", SoftScore({0: 1.0, 1: 0.25}), ["A"])
    return net


def test_model_score_nodes_weight_particles():
    net = scored_chain()
    want = ve_query(net, {}, ["A"]).table
    for infer in (lw_infer, lookahead_infer):
        ps = infer(net, {}, N, 31)
        assert set(ps.values["B"][i] for i in np.flatnonzero(ps.weights)) == {1}
        assert np.max(np.abs(estimate_marginal(ps, "A", [0, 1]) - want)) <= 0.01


def test_rejection_treats_zero_one_scores_as_constraints():
    net = chain2().add("hard", HardScore(1), ["B"])
    ps = rejection_infer(net, {}, N, 32)
    assert set(ps.values["B"]) == {1}
    assert abs(estimate_marginal(ps, "A", [0, 1])[0] - ve_query(net, {}, ["A"]).table[0]) <= 0.015
    with pytest.raises(InferenceError, match="0/1"):
        rejection_infer(scored_chain(), {}, 100, 0)
