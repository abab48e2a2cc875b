"""EM for networks whose learnable nodes are Flip, Cat or DiscreteCPT.

The E-step takes posterior family marginals from variable elimination; the
M-step normalizes the accumulated expected counts row by row.  Records with
the same observation pattern share one inference.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .basic import Cat, Flip
from .compose import DiscreteCPT
from .core import Engine, InferenceError, default_engine
from .network import Network, topological_order
from .semiring import evidence_probability, ve_query

FLIP_VALUES = [False, True]


def is_learnable(sf) -> bool:
    return type(sf) in (Flip, Cat, DiscreteCPT)


def _layout(sf) -> tuple[list[tuple], list]:
    """(parent configurations in table order, output values)."""
    if isinstance(sf, Flip):
        return [()], FLIP_VALUES
    if isinstance(sf, Cat):
        return [()], list(sf.values)
    return list(itertools.product(*sf.i_value_spaces)), list(sf.values)


@dataclass
class SufficientStats:
    counts: dict[str, np.ndarray]
    diagnostics: list[str] = field(default_factory=list)

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        keys = set(self.counts) | set(other.counts)
        return SufficientStats({k: self.counts.get(k, 0) + other.counts.get(k, 0) for k in keys},
                               self.diagnostics + other.diagnostics)

    def scaled(self, factor: float) -> "SufficientStats":
        return SufficientStats({k: v * factor for k, v in self.counts.items()}, list(self.diagnostics))


def learnable_nodes(network: Network) -> list[str]:
    return [v for v in topological_order(network) if is_learnable(network.nodes[v])]


def zero_stats(network: Network) -> SufficientStats:
    out = {}
    for v in learnable_nodes(network):
        configs, values = _layout(network.nodes[v])
        out[v] = np.zeros((len(configs), len(values)))
    return SufficientStats(out)


def expected_stats(network: Network, record: Mapping[str, Any], engine: Engine | None = None) -> SufficientStats:
    """Posterior family marginals of every learnable node given one record."""
    eng = default_engine() if engine is None else engine
    stats = zero_stats(network)
    for v in record:
        if v not in network.nodes:
            raise InferenceError(f"record observes unknown variable {v!r}")
    for v in stats.counts:
        sf = network.nodes[v]
        parents = network.parents[v]
        configs, values = _layout(sf)
        try:
            fam = ve_query(network, dict(record), [*parents, v], engine=eng)
        except InferenceError as exc:
            return SufficientStats(zero_stats(network).counts, [f"record {dict(record)!r} skipped: {exc}"])
        row_of = {c: i for i, c in enumerate(configs)}
        col_of = {x: j for j, x in enumerate(values)}
        for idx in itertools.product(*(range(len(r)) for r in fam.ranges)):
            p = float(fam.table[idx])
            if p == 0.0:
                continue
            assign = [fam.ranges[k][i] for k, i in enumerate(idx)]
            stats.counts[v][row_of[tuple(assign[:-1])], col_of[assign[-1]]] += p
    return stats


def maximize_stats(stats: SufficientStats | Mapping[str, np.ndarray], smoothing: float = 1e-6) -> dict[str, np.ndarray]:
    """Row-normalized (count + smoothing); all-zero rows become uniform."""
    if smoothing < 0:
        raise InferenceError("smoothing must be nonnegative")
    counts = stats.counts if isinstance(stats, SufficientStats) else stats
    out = {}
    for v, c in counts.items():
        c = np.atleast_2d(np.asarray(c, dtype=float)) + smoothing
        totals = c.sum(axis=1, keepdims=True)
        rows = np.where(totals > 0, c / np.where(totals > 0, totals, 1.0), 1.0 / c.shape[1])
        out[v] = rows
    return out


def apply_params(network: Network, params: Mapping[str, np.ndarray]) -> Network:
    net = network.copy()
    for v, rows in params.items():
        sf = network.nodes[v]
        rows = np.asarray(rows, dtype=float)
        if isinstance(sf, Flip):
            net.nodes[v] = Flip(float(rows[0][1]))
        elif isinstance(sf, Cat):
            net.nodes[v] = Cat(sf.values, rows[0])
        else:
            net.nodes[v] = DiscreteCPT(sf.i_value_spaces, sf.values, [list(r) for r in rows])
    return net


def current_params(network: Network) -> dict[str, np.ndarray]:
    out = {}
    for v in learnable_nodes(network):
        sf = network.nodes[v]
        if isinstance(sf, Flip):
            out[v] = np.array([[1 - sf.prob_true, sf.prob_true]])
        elif isinstance(sf, Cat):
            out[v] = sf.probabilities[None, :].copy()
        else:
            out[v] = np.array([sf.row(c) for c in _layout(sf)[0]])
    return out


def uniform_params(network: Network) -> dict[str, np.ndarray]:
    out = {}
    for v in learnable_nodes(network):
        configs, values = _layout(network.nodes[v])
        out[v] = np.full((len(configs), len(values)), 1.0 / len(values))
    return out


def _patterns(dataset: Sequence[Mapping[str, Any]]) -> Counter:
    return Counter(tuple(sorted(rec.items(), key=lambda kv: kv[0])) for rec in dataset)


def log_likelihood(network: Network, dataset, engine: Engine | None = None) -> float:
    eng = default_engine() if engine is None else engine
    total = 0.0
    for pattern, count in _patterns(dataset).items():
        p = evidence_probability(network, dict(pattern), eng) if pattern else 1.0
        total += count * (math.log(p) if p > 0 else -math.inf)
    return total


@dataclass
class EMResult:
    network: Network
    log_likelihoods: list[float]
    rounds: int
    params: dict[str, np.ndarray]
    diagnostics: list[str] = field(default_factory=list)


def em_train(network: Network, dataset: Sequence[Mapping[str, Any]], rounds: int = 20,
             smoothing: float = 1e-6, tolerance: float = 1e-9, engine: Engine | None = None,
             init: str = "given") -> EMResult:
    """Alternate expected counts and row normalization.

    ``init="uniform"`` resets every learnable node before the first round;
    the default starts from the parameters the network already carries.
    Stops after ``rounds`` rounds or once the log-likelihood gains less than
    ``tolerance``.
    """
    if not dataset:
        raise InferenceError("EM needs at least one record")
    if rounds < 0:
        raise InferenceError("rounds must be nonnegative")
    eng = default_engine() if engine is None else engine
    if init == "uniform":
        network = apply_params(network, uniform_params(network))
    elif init != "given":
        raise InferenceError(f"unknown initialization {init!r}")
    patterns = _patterns(dataset)
    trace = [log_likelihood(network, dataset, eng)]
    diags: list[str] = []
    done = 0
    for _ in range(rounds):
        total = zero_stats(network)
        for pattern, count in patterns.items():
            st = expected_stats(network, dict(pattern), eng)
            if st.diagnostics:
                diags.extend(st.diagnostics)
                continue
            total = total + st.scaled(count)
        network = apply_params(network, maximize_stats(total, smoothing))
        done += 1
        trace.append(log_likelihood(network, dataset, eng))
        if abs(trace[-1] - trace[-2]) < tolerance:
            break
    return EMResult(network, trace, done, current_params(network), sorted(set(diags)))
