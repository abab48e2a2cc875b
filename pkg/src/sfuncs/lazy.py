"""Iterative range refinement: grow working supports, rerun a base
inference, stop when beliefs settle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import Engine, InferenceError, Observed, UnsupportedOperation, default_engine
from .network import as_evidence, check_valid, compile_evidence, topological_order

BASES = ("bp", "ve")


@dataclass
class RefinementState:
    supports: dict[str, list]
    iteration: int = 0
    snapshots: list[dict[str, tuple[list, np.ndarray]]] = field(default_factory=list)
    flags: dict[str, str] = field(default_factory=dict)
    budget: int = 6


@dataclass
class RoundRecord:
    round: int
    sizes: dict[str, int]
    delta: float | None
    supports: dict[str, list]


@dataclass
class RefinementResult:
    beliefs: dict[str, tuple[list, np.ndarray]]
    trace: list[RoundRecord]
    converged: bool
    state: RefinementState


def _quality(eng: Engine, sf, parent_ranges, size, prior) -> str:
    return eng.perf("support", "support_quality", sf, (parent_ranges, size, prior))


def initial_state(network, evidence=None, engine: Engine | None = None, initial_size: int = 5,
                  budget: int = 6) -> RefinementState:
    from .network import working_ranges

    eng = default_engine() if engine is None else engine
    state = RefinementState(working_ranges(network, evidence, eng, initial_size), budget=budget)
    _flag_best_effort(state, network, eng)
    return state


def _flag_best_effort(state, network, eng):
    for v, r in state.supports.items():
        if isinstance(r, Observed):
            continue
        pr = [state.supports[p] for p in network.parents[v]]
        if _quality(eng, network.nodes[v], pr, len(r), r) == "best_effort":
            state.flags[v] = "no guarantee"


def expand_support(state: RefinementState, network, growth_factor: float = 2.0,
                   engine: Engine | None = None) -> RefinementState:
    """Grow each incremental or best-effort support toward
    ``ceil(growth_factor * size)``; complete supports only pick up values
    that new parent values make reachable."""
    if not growth_factor > 1:
        raise InferenceError("growth_factor must exceed 1")
    eng = default_engine() if engine is None else engine
    new: dict[str, list] = {}
    for v in topological_order(network):
        sf = network.nodes[v]
        if sf.is_score:
            continue
        cur = state.supports[v]
        if isinstance(cur, Observed):
            new[v] = cur
            continue
        pr = [new[p] for p in network.parents[v]]
        quality = _quality(eng, sf, pr, len(cur), cur)
        target = len(cur) if quality == "complete" else math.ceil(growth_factor * len(cur))
        grown = eng.support(sf, pr, target, list(cur))
        if grown[:len(cur)] != list(cur):
            raise InferenceError(f"support of {v!r} did not extend the previous support")
        new[v] = grown
    out = RefinementState(new, state.iteration, list(state.snapshots), dict(state.flags), state.budget)
    _flag_best_effort(out, network, eng)
    return out


def belief_delta(old: dict[str, tuple[list, np.ndarray]], new: dict[str, tuple[list, np.ndarray]]) -> float:
    """Max over variables of the L∞ change on shared support points, each
    side renormalized over the shared points."""
    delta = 0.0
    for v, (r_new, b_new) in new.items():
        if v not in old:
            continue
        r_old, b_old = old[v]
        pos_new = {x: i for i, x in enumerate(r_new)}
        shared = [(i, pos_new[x]) for i, x in enumerate(r_old) if x in pos_new]
        if not shared:
            continue
        a = np.array([b_old[i] for i, _ in shared])
        b = np.array([b_new[j] for _, j in shared])
        if a.sum() > 0 and b.sum() > 0:
            delta = max(delta, float(np.max(np.abs(a / a.sum() - b / b.sum()))))
    return delta


def _run_base(base, network, evidence, eng, supports):
    if base == "bp":
        from .bp import bp_infer

        return bp_infer(network, evidence, eng, ranges=supports).beliefs
    from .semiring import marginals

    return marginals(network, evidence, eng, ranges=supports)


def refine_infer(network, evidence=None, base: str = "bp", tolerance: float = 1e-3, max_rounds: int = 6,
                 engine: Engine | None = None, *, initial_size: int = 5,
                 growth_factor: float = 2.0) -> RefinementResult:
    check_valid(network)
    eng = default_engine() if engine is None else engine
    evidence = as_evidence(evidence)
    if base not in BASES:
        raise InferenceError(f"unknown base algorithm {base!r}; choose from {list(BASES)}")
    if max_rounds < 1:
        raise InferenceError("max_rounds must be at least 1")
    if base == "ve":
        net = compile_evidence(network, evidence)
        for v, sf in net.nodes.items():
            if not eng.supports("make_factors", sf):
                raise UnsupportedOperation("make_factors", sf.kind, f"needed by ve for node {v!r}")
    state = initial_state(network, evidence, eng, initial_size, max_rounds)
    beliefs = _run_base(base, network, evidence, eng, state.supports)
    state.iteration = 1
    state.snapshots = [beliefs]
    trace = [RoundRecord(1, _sizes(state), None, _copy(state.supports))]
    converged = False
    while state.iteration < max_rounds:
        grown = expand_support(state, network, growth_factor, eng)
        if grown.supports == state.supports:
            trace[-1].delta = 0.0
            converged = True
            break
        state = grown
        new_beliefs = _run_base(base, network, evidence, eng, state.supports)
        delta = belief_delta(beliefs, new_beliefs)
        state.iteration += 1
        state.snapshots = [beliefs, new_beliefs]
        beliefs = new_beliefs
        trace.append(RoundRecord(state.iteration, _sizes(state), delta, _copy(state.supports)))
        if delta < tolerance:
            converged = True
            break
    return RefinementResult(beliefs, trace, converged, state)


def _sizes(state: RefinementState) -> dict[str, int]:
    return {v: len(r) for v, r in state.supports.items()}


def _copy(supports: dict[str, list]) -> dict[str, Any]:
    return {v: list(r) for v, r in supports.items()}
