import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import LeafCPT, chain2, enumerate_posterior, lambda_only_registry, random_dag
from sfuncs import REGISTRY, Cat, Constant, DiscreteCPT, Flip, LinearDet, Normal
from sfuncs.compose import Det
from sfuncs.core import InferenceError, Observed
from sfuncs.network import (
    BIDIRECTIONAL,
    LAMBDA_ONLY,
    PI_ONLY,
    Network,
    check_valid,
    classify_layers,
    compile_evidence,
    evidence_node_name,
    is_polytree,
    network_sample,
    topological_order,
    validate,
    working_ranges,
)

BIN = [[0, 1]]
ROWS = [[0.9, 0.1], [0.3, 0.7]]


def cpt():
    return DiscreteCPT(BIN, [0, 1], ROWS)


def test_empty_network_is_valid():
    assert validate(Network()) == []


def test_self_loop_reported_as_cycle():
    net = Network().add("A", cpt(), ["A"])
    diags = validate(net)
    assert [d.code for d in diags] == ["cycle"]
    assert "A" in diags[0].variables


def test_two_node_cycle_names_both():
    net = Network().add("A", cpt(), ["B"]).add("B", cpt(), ["A"])
    cycle = [d for d in validate(net) if d.code == "cycle"][0]
    assert set(cycle.variables) >= {"A", "B"}


def test_arity_mismatch_and_dangling_parent():
    net = Network().add("A", Flip(0.5), ["Z"])
    codes = {d.code for d in validate(net)}
    assert codes == {"arity", "dangling_parent"}
    with pytest.raises(InferenceError):
        check_valid(net)


def test_duplicate_name_rejected():
    with pytest.raises(InferenceError):
        Network().add("A", Flip(0.5)).add("A", Flip(0.2))


def test_topological_orders():
    chain = Network().add("C", cpt(), ["B"]).add("B", cpt(), ["A"]).add("A", Cat([0, 1], [0.5, 0.5]))
    assert topological_order(chain) == ["A", "B", "C"]
    two = DiscreteCPT([[0, 1], [0, 1]], [0, 1], [[0.5, 0.5]] * 4)
    diamond = (Network().add("D", two, ["B", "C"]).add("B", cpt(), ["A"]).add("C", cpt(), ["A"])
               .add("A", Cat([0, 1], [0.5, 0.5])))
    order = topological_order(diamond)
    assert order[0] == "A" and order[-1] == "D"
    assert topological_order(Network().add("B", Flip(0.5)).add("A", Flip(0.5))) == ["A", "B"]


def test_topological_order_rejects_cycle():
    with pytest.raises(InferenceError):
        topological_order(Network().add("A", cpt(), ["B"]).add("B", cpt(), ["A"]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_topological_order_respects_edges(seed):
    raw = random_dag(np.random.default_rng(seed))
    order = topological_order(raw.network)
    assert sorted(order) == sorted(raw.network.nodes)
    pos = {v: i for i, v in enumerate(order)}
    for v, ps in raw.network.parents.items():
        assert all(pos[p] < pos[v] for p in ps)


def test_is_polytree():
    assert is_polytree(chain2())
    two = DiscreteCPT([[0, 1], [0, 1]], [0, 1], [[0.5, 0.5]] * 4)
    diamond = (Network().add("A", Cat([0, 1], [0.5, 0.5])).add("B", cpt(), ["A"]).add("C", cpt(), ["A"])
               .add("D", two, ["B", "C"]))
    assert not is_polytree(diamond)


def test_all_cpt_network_is_bidirectional():
    assert set(classify_layers(chain2()).values()) == {BIDIRECTIONAL}


def test_det_root_is_pi_only():
    net = Network()
    net.add("X", Cat([0, 1], [0.5, 0.5]))
    net.add("D", Det(lambda x: x + 1, 1), ["X"])
    net.add("C", DiscreteCPT([[1, 2]], [0, 1], ROWS), ["D"])
    tags = classify_layers(net, evidence={"C": 1})
    assert tags["D"] == PI_ONLY and tags["X"] == PI_ONLY
    assert tags["C"] == BIDIRECTIONAL


def test_lambda_only_leaf():
    reg = lambda_only_registry()
    net = Network().add("A", Cat([0, 1], [0.5, 0.5])).add("B", cpt(), ["A"])
    net.add("L", LeafCPT(BIN, [0, 1], ROWS), ["B"])
    tags = classify_layers(net, reg, evidence={"L": 1})
    assert tags["L"] == LAMBDA_ONLY
    assert tags["A"] == BIDIRECTIONAL and tags["B"] == BIDIRECTIONAL


@pytest.mark.parametrize("impl", ["send_lambda.conditional", "compute_pi.enumerate"])
def test_layers_monotone_under_removal(impl):
    net = Network().add("A", Cat([0, 1], [0.5, 0.5])).add("B", cpt(), ["A"]).add("C", cpt(), ["B"])
    full = classify_layers(net, REGISTRY, evidence={"C": 0})
    reduced = classify_layers(net, REGISTRY.without(impl).freeze(), evidence={"C": 0})
    rank = {"none": 0, "pi_only": 1, "lambda_only": 1, "bidirectional": 2}
    for v in net.nodes:
        assert rank[reduced[v]] <= rank[full[v]]
        if reduced[v] == BIDIRECTIONAL:
            assert full[v] == BIDIRECTIONAL


def test_compile_evidence_adds_score_children():
    net = compile_evidence(chain2(), {"B": 0})
    ev = evidence_node_name("B")
    assert net.parents[ev] == ["B"] and net.nodes[ev].is_score
    with pytest.raises(InferenceError):
        compile_evidence(chain2(), {"nope": 1})


def test_sample_constants():
    net = Network().add("A", Constant(3)).add("B", Constant("x"))
    assert network_sample(net, rng=np.random.default_rng(0)) == {"A": 3, "B": "x"}


def test_sample_forced_chain():
    net = Network().add("A", Flip(1.0)).add("B", DiscreteCPT([[False, True]], ["no", "yes"], [[1, 0], [0, 1]]), ["A"])
    for seed in range(5):
        assert network_sample(net, rng=np.random.default_rng(seed)) == {"A": True, "B": "yes"}


def test_sample_requires_placeholders():
    net = Network().add("P", Constant(0), placeholder=True)
    with pytest.raises(InferenceError):
        network_sample(net, {}, np.random.default_rng(0))
    assert network_sample(net, {"P": 9}, np.random.default_rng(0)) == {"P": 9}


def test_sample_marginals_match_enumeration():
    raw = random_dag(np.random.default_rng(11), n=5)
    rng = np.random.default_rng(12)
    n = 100_000
    draws = [network_sample(raw.network, rng=rng) for _ in range(n)]
    for v in raw.order:
        exact = enumerate_posterior(raw, {}, v)
        freq = np.mean([d[v] == 1 for d in draws])
        se = np.sqrt(exact[1] * exact[0] / n)
        assert abs(freq - exact[1]) <= 3 * se + 1e-12


def test_working_ranges():
    net = Network().add("X", Normal(0, 1)).add("Y", LinearDet([[2.0]]), ["X"]).add("Z", Flip(0.3))
    ranges = working_ranges(net, {"Z": True}, target_size=7)
    assert len(ranges["X"]) == 7
    assert sorted(ranges["Y"]) == pytest.approx(sorted(2 * x for x in ranges["X"]))
    assert isinstance(ranges["Z"], Observed) and list(ranges["Z"]) == [True]
