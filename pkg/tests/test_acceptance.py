"""The twelve acceptance criteria, each checked at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per criterion
appears in the terminal summary.
"""

import itertools
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from conftest import criterion
from helpers import (
    brute_force_mpe,
    build,
    enumerate_posterior,
    random_dag,
    random_evidence,
    random_polytree,
)
from sfuncs import (
    CLG,
    PREFER_LAZY,
    REGISTRY,
    Cat,
    DiscreteCPT,
    Flip,
    FunctionalScore,
    LinearDet,
    Mixture,
    Normal,
    make_separable,
    select_impl,
)
from sfuncs.bp import bp_infer
from sfuncs.cli import main
from sfuncs.core import Engine
from sfuncs.em import em_train
from sfuncs.lazy import refine_infer
from sfuncs.network import Network
from sfuncs.sampling import effective_sample_size, lookahead_infer, lw_infer, rejection_infer
from sfuncs.semiring import BOOLEAN, MAX_PRODUCT, MIXED, SUM_PRODUCT, mixed_product, mixed_sum, mpe_decode, ve_query

N_NETS = 50


def _nets(seed, maker):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(N_NETS):
        raw = maker(rng)
        out.append((raw, random_evidence(rng, raw)))
    return out


def test_criterion_01_ve_matches_enumeration():
    with criterion(1, "VE posteriors equal full-joint enumeration (L-inf <= 1e-9)"):
        worst = 0.0
        for raw, ev in _nets(101, random_dag):
            for v in raw.order:
                if v in ev:
                    continue
                got = ve_query(raw.network, ev, [v]).vector()
                worst = max(worst, float(np.max(np.abs(got - enumerate_posterior(raw, ev, v)))))
        assert worst <= 1e-9, worst


def _four_cycle(rng):
    order = ["A", "B", "C", "D"]
    parents = {"A": [], "B": ["A"], "C": ["A"], "D": ["B", "C"]}
    return build(order, parents, {v: [0, 1] for v in order}, rng)


def test_criterion_02_bp_matches_ve_and_loopy_converges():
    with criterion(2, "BP equals VE on polytrees (<= 1e-9); loopy 4-cycles converge within 0.05"):
        worst = 0.0
        for raw, ev in _nets(202, random_polytree):
            res = bp_infer(raw.network, ev)
            assert res.schedule == "two_sweep"
            for v in raw.order:
                if v in ev:
                    continue
                ve = ve_query(raw.network, ev, [v]).vector()
                worst = max(worst, float(np.max(np.abs(res.belief(v) - ve))))
        assert worst <= 1e-9, worst
        rng = np.random.default_rng(203)
        loopy_worst = 0.0
        for _ in range(10):
            raw = _four_cycle(rng)
            ev = {"D": int(rng.integers(2))}
            res = bp_infer(raw.network, ev)
            assert res.schedule == "loopy" and res.converged
            for v in "ABC":
                loopy_worst = max(loopy_worst, float(np.max(np.abs(res.belief(v) - enumerate_posterior(raw, ev, v)))))
        assert loopy_worst <= 0.05, loopy_worst


def test_criterion_03_mpe_matches_brute_force():
    with criterion(3, "MPE assignment and value equal brute-force argmax exactly"):
        for raw, ev in _nets(101, random_dag):
            assignment, value = mpe_decode(raw.network, ev)
            best, best_p = brute_force_mpe(raw, ev)
            assert assignment == best
            assert value == best_p


def _close(a, b, tol=1e-12):
    if isinstance(a, tuple):
        return a[0] == b[0] and math.isclose(a[1], b[1], rel_tol=tol, abs_tol=tol)
    if isinstance(a, (bool, np.bool_)):
        return bool(a) == bool(b)
    return math.isclose(float(a), float(b), rel_tol=tol, abs_tol=tol)


def _ops(sr):
    if sr is MIXED:
        return mixed_sum, mixed_product
    return (lambda a, b: sr.add(a, b)), (lambda a, b: sr.mul(a, b))


def _draw(sr, rng):
    if sr is BOOLEAN:
        return bool(rng.random() < 0.5)
    if sr is MIXED:
        return (True, float(rng.random())) if rng.random() < 0.7 else (False, 0.0)
    return float(rng.random())


def test_criterion_04_semiring_axioms_and_mixed_query():
    with criterion(4, "semiring axioms on 1000 triples (1e-12); mixed query equals filtered enumeration (1e-9)"):
        rng = np.random.default_rng(404)
        for sr in (SUM_PRODUCT, MAX_PRODUCT, BOOLEAN, MIXED):
            add, mul = _ops(sr)
            for _ in range(1000):
                a, b, c = (_draw(sr, rng) for _ in range(3))
                assert _close(add(add(a, b), c), add(a, add(b, c)))
                assert _close(mul(mul(a, b), c), mul(a, mul(b, c)))
                assert _close(add(a, b), add(b, a))
                assert _close(mul(a, b), mul(b, a))
                assert _close(mul(a, add(b, c)), add(mul(a, b), mul(a, c)))
                assert _close(mul(a, sr.zero), sr.zero)
                assert _close(add(a, sr.zero), a)
                assert _close(mul(a, sr.one), a)
        for _ in range(20):
            raw = random_dag(rng, n=5)
            i, j = sorted(rng.choice(5, size=2, replace=False).tolist())
            u, w = raw.order[i], raw.order[j]
            net = raw.network.copy()
            net.add("c", FunctionalScore(lambda x, y: float(x != y), arity=2), [u, w])
            q = raw.order[int(rng.integers(5))]
            got = ve_query(net, {}, [q], semiring="mixed").vector()
            ref = np.zeros(2)
            for a in raw.assignments():
                if a[u] != a[w]:
                    ref[a[q]] += raw.joint(a)
            assert np.max(np.abs(got - ref / ref.sum())) <= 1e-9


def _separable_case(n, rng):
    comps = [DiscreteCPT([[0, 1]], [0, 1], [list(r) for r in rng.dirichlet([1, 1], 2)]) for _ in range(n)]
    weights = rng.dirichlet(np.ones(n))
    pis = [Cat([0, 1], list(rng.dirichlet([1, 1]))) for _ in range(n)]
    rows = [list(sum(weights[i] * comps[i].row((u[i],)) for i in range(n)))
            for u in itertools.product([0, 1], repeat=n)]
    dense = DiscreteCPT([[0, 1]] * n, [0, 1], rows)
    return make_separable(comps, weights), dense, pis


def _pi_cost(sf, n, pis):
    eng = Engine()
    out = eng.compute_pi(sf, [0, 1], [[0, 1]] * n, pis)
    return eng.counters["compute_pi"], out.probabilities


def test_criterion_05_separable_linearity():
    with criterion(5, "Separable compute_pi work grows <= 2.5x from n=4 to 8 (dense >= 8x); results equal dense"):
        rng = np.random.default_rng(505)
        costs = {}
        for n in (4, 8):
            sep, dense, pis = _separable_case(n, rng)
            c_sep, p_sep = _pi_cost(sep, n, pis)
            c_dense, p_dense = _pi_cost(dense, n, pis)
            assert np.max(np.abs(p_sep - p_dense)) <= 1e-9
            costs[n] = (c_sep, c_dense)
        assert costs[8][0] / costs[4][0] <= 2.5
        assert costs[8][1] / costs[4][1] >= 8


def test_criterion_06_closed_forms():
    with criterion(6, "Normal closed form and CLG posterior mean agree with 1e5-sample Monte Carlo (3 SE)"):
        eng = Engine()
        parent = Normal(1.0, 2.0)
        child = Normal(0.0, 0.5, conditional=True)
        pi = eng.compute_pi(child, None, [None], [parent])
        assert isinstance(pi, Normal) and (pi.mean, pi.variance) == (1.0, 2.5)
        rng = np.random.default_rng(606)
        n = 100_000
        xs = rng.normal(1.0, math.sqrt(2.0), n)
        ys = np.array(eng.sample_n(child, (0.0,), n, rng)) + xs
        m, v = ys.mean(), ys.var(ddof=1)
        assert abs(m - pi.mean) <= 3 * math.sqrt(v / n)
        assert abs(v - pi.variance) <= 3 * v * math.sqrt(2.0 / (n - 1))

        net = Network()
        net.add("S", Flip(0.4))
        net.add("X", Normal(0.0, 1.0))
        net.add("Y", CLG([[False, True]], [([1.0], 0.0, 0.5), ([-1.0], 2.0, 0.5)], 1), ["S", "X"])
        ev = {"Y": 1.5}
        ps = lw_infer(net, ev, n, 6)
        w = ps.weights / ps.weights.sum()
        x = np.asarray(ps.values["X"], dtype=float)
        s = np.asarray(ps.values["S"], dtype=float)
        bp = bp_infer(net, ev, target_size=101)
        for values, (rng_, bel) in ((x, bp.beliefs["X"]), (s, bp.beliefs["S"])):
            est = float(w @ values)
            se = math.sqrt(float(np.sum(w**2 * (values - est) ** 2)))
            assert abs(float(np.dot(np.asarray(rng_, dtype=float), bel)) - est) <= 3 * se


def _se_check(ps, raw, ev):
    w = ps.weights / ps.weights.sum()
    for v in raw.order:
        if v in ev:
            continue
        exact = enumerate_posterior(raw, ev, v)
        xs = np.asarray(ps.values[v])
        for k, val in enumerate(raw.values[v]):
            ind = (xs == val).astype(float)
            est = float(w @ ind)
            se = math.sqrt(float(np.sum(w**2 * (ind - est) ** 2)))
            assert abs(est - exact[k]) <= 3 * max(se, 1e-12), (v, val, est, exact[k], se)


def test_criterion_07_sampling_accuracy_and_determinism():
    with criterion(7, "lw and rejection agree with enumeration within 3 SE at n=1e5; same seed, same particles"):
        rng = np.random.default_rng(707)
        n = 100_000
        for _ in range(3):
            raw = random_dag(rng, n=5)
            ev = {raw.order[-1]: 0}
            _se_check(lw_infer(raw.network, ev, n, 7), raw, ev)
            _se_check(rejection_infer(raw.network, ev, n, 7), raw, ev)
        for fn in (lw_infer, rejection_infer):
            a, b = fn(raw.network, ev, 5000, 99), fn(raw.network, ev, 5000, 99)
            assert a.values == b.values
            assert a.log_weights.tobytes() == b.log_weights.tobytes()


def rare_evidence_network():
    """π-only top layer (two categorical inputs summed by a Det), a frontier
    CPT, and evidence whose prior likelihood is about 0.01."""
    net = Network()
    net.add("X1", Cat([0, 1, 2], [1 / 3] * 3))
    net.add("X2", Cat([0, 1, 2], [1 / 3] * 3))
    net.add("D", LinearDet([[1, 1]]), ["X1", "X2"])
    net.add("F", DiscreteCPT([[0.0, 1.0, 2.0, 3.0, 4.0]], [0, 1],
                             [[1 - 0.005 * (d + 1), 0.005 * (d + 1)] for d in range(5)]), ["D"])
    net.add("E", DiscreteCPT([[0, 1]], [0, 1], [[0.998, 0.002], [0.5, 0.5]]), ["F"])
    return net, {"E": 1}


def test_criterion_08_lookahead_beats_lw():
    with criterion(8, "lookahead ESS >= lw ESS in >= 18/20 seeds at n=1e4 on rare evidence"):
        from sfuncs.semiring import evidence_probability

        net, ev = rare_evidence_network()
        assert 0.005 <= evidence_probability(net, ev) <= 0.02
        wins = sum(
            effective_sample_size(lookahead_infer(net, ev, 10_000, seed))
            >= effective_sample_size(lw_infer(net, ev, 10_000, seed))
            for seed in range(20)
        )
        assert wins >= 18, wins


def test_criterion_09_policies_and_perfs():
    with criterion(9, "prefer_lazy picks the lazy belief; Mixture quality = min, runtime = sum"):
        from sfuncs import FunctionalScore, SoftScore

        dist = Cat([0, 1, 2], [0.2, 0.3, 0.5])
        score = SoftScore({0: 1.0, 2: 0.5})
        rec, _ = select_impl(REGISTRY, PREFER_LAZY, "compute_bel", dist, (score,))
        assert REGISTRY.query_perf(rec.impl_name, "is_lazy", dist, (score,)) is True
        assert isinstance(Engine(policy=PREFER_LAZY).compute_bel(dist, score), FunctionalScore)

        a = DiscreteCPT([[0, 1]], [0, 1], [[0.9, 0.1], [0.2, 0.8]])
        b = DiscreteCPT([[0, 1]], [0, 1], [[0.5, 0.5], [0.4, 0.6]])
        mix = Mixture([a, b, Normal(0.0, 1.0, conditional=True)], [0.3, 0.3, 0.4])
        eng = Engine()
        sargs = ([[0, 1]], 5, [])
        qualities = [eng.perf("support", "support_quality", c, sargs) for c in mix.components]
        from sfuncs.core import min_quality

        assert eng.perf("support", "support_quality", mix, sargs) == min_quality(qualities)
        assert len(set(qualities)) > 1
        disc = Mixture([a, b], [0.5, 0.5])
        pargs = ([0, 1], [[0, 1]], [Cat([0, 1], [0.5, 0.5])])
        runtimes = [eng.perf("compute_pi", "runtime", c, pargs) for c in disc.components]
        assert eng.perf("compute_pi", "runtime", disc, pargs) == sum(runtimes)


def _supersets(trace):
    for before, after in zip(trace, trace[1:]):
        for v, r in before.supports.items():
            assert set(r) <= set(after.supports[v])


def test_criterion_10_lazy_refinement():
    with criterion(10, "refinement supports grow monotonically; conjugate mean within 0.05; discrete fixed point at round 1"):
        net = Network()
        net.add("X", Normal(0.0, 1.0))
        net.add("Y", Normal(0.0, 1.0, conditional=True), ["X"])
        for base in ("bp", "ve"):
            res = refine_infer(net, {"Y": 1.0}, base=base)
            _supersets(res.trace)
            r, b = res.beliefs["X"]
            assert abs(float(np.dot(np.asarray(r, dtype=float), b)) - 0.5) <= 0.05
        rng = np.random.default_rng(1010)
        for _ in range(5):
            raw = random_dag(rng, n=5)
            res = refine_infer(raw.network, {raw.order[-1]: 1})
            assert res.converged and len(res.trace) == 1 and res.trace[0].delta == 0.0


def _chain3_truth():
    net = Network()
    net.add("A", Cat([0, 1], [0.3, 0.7]))
    net.add("B", DiscreteCPT([[0, 1]], [0, 1], [[0.8, 0.2], [0.25, 0.75]]), ["A"])
    net.add("C", DiscreteCPT([[0, 1]], [0, 1], [[0.9, 0.1], [0.2, 0.8]]), ["B"])
    return net


def test_criterion_11_em():
    with criterion(11, "EM: exact frequencies when observed; half-hidden rows within L1 0.05; monotone likelihood"):
        from sfuncs.network import network_sample

        truth = _chain3_truth()
        rng = np.random.default_rng(1111)
        full = [network_sample(truth, rng=rng) for _ in range(400)]
        res = em_train(truth, full, rounds=1, smoothing=0.0, init="uniform")
        counts = np.zeros((2, 2))
        for rec in full:
            counts[rec["A"], rec["B"]] += 1
        assert np.array_equal(res.params["B"], counts / counts.sum(axis=1, keepdims=True))

        data = [network_sample(truth, rng=rng) for _ in range(10_000)]
        for i, rec in enumerate(data):
            if i % 2 == 0:
                del rec["B"]
        res = em_train(truth, data, rounds=50, init="uniform")
        assert all(b - a >= -1e-9 for a, b in zip(res.log_likelihoods, res.log_likelihoods[1:]))
        ref = {"A": [[0.3, 0.7]], "B": [[0.8, 0.2], [0.25, 0.75]], "C": [[0.9, 0.1], [0.2, 0.8]]}
        for v, rows in ref.items():
            for got, want in zip(res.params[v], rows):
                assert np.abs(got - np.asarray(want)).sum() <= 0.05, (v, got, want)


CHAIN_SPEC = {
    "variables": [
        {"name": "A", "kind": "cat", "params": {"values": [0, 1], "probabilities": [0.5, 0.5]}, "parents": []},
        {"name": "B", "kind": "cpt", "params": {"values": [0, 1], "rows": [[0.9, 0.1], [0.3, 0.7]]},
         "parents": ["A"]},
    ],
    "evidence": {"B": 0},
    "queries": ["A"],
}


def test_criterion_12_cli_end_to_end(tmp_path, capsys):
    with criterion(12, "CLI: 2-chain posterior 0.75 under ve, bp, lw; malformed specs fail with JSON paths"):
        spec = tmp_path / "chain.json"
        spec.write_text(json.dumps(CHAIN_SPEC))
        for algo, tol, extra in (("ve", 1e-9, []), ("bp", 1e-9, []),
                                 ("lw", 0.01, ["--samples", "100000", "--seed", "1"])):
            out = tmp_path / f"{algo}.json"
            assert main(["infer", "--model", str(spec), "--algorithm", algo, "--output", str(out), *extra]) == 0
            doc = json.loads(out.read_text())
            assert abs(doc["marginals"]["A"]["0"] - 0.75) <= tol
            assert abs(sum(doc["marginals"]["A"].values()) - 1) <= 1e-6

        bad = json.loads(json.dumps(CHAIN_SPEC))
        bad["variables"][1]["parents"] = ["Z"]
        spec.write_text(json.dumps(bad))
        proc = subprocess.run([sys.executable, "-m", "sfuncs", "infer", "--model", str(spec)],
                              capture_output=True, text=True)
        assert proc.returncode != 0 and proc.stdout == ""
        assert json.loads(proc.stderr)["path"] == "variables[1].parents[0]"

        bad = json.loads(json.dumps(CHAIN_SPEC))
        bad["variables"][1]["params"]["rows"][1] = [0.3, 0.6]
        spec.write_text(json.dumps(bad))
        capsys.readouterr()
        assert main(["infer", "--model", str(spec)]) != 0
        err = json.loads(capsys.readouterr().err)
        assert err["path"] == "variables[1].params.rows[1]" and "0.9" in err["error"]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
