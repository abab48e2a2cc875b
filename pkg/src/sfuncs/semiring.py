"""Factors over pluggable semirings and variable elimination.

A semiring supplies elementwise ``add``/``mul`` on numpy arrays plus a
reduction along one axis.  Probabilistic entries embed as the probability for
numeric semirings, as ``p > 0`` for the boolean one, and as ``(True, p)`` in
the mixed logical-probabilistic semiring, where a score ``s`` embeds as the
constraint ``(s > 0, s)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .core import REGISTRY as R
from .core import Engine, InferenceError, UnsupportedOperation, default_engine
from .network import (
    as_evidence,
    check_valid,
    compile_evidence,
    topological_order,
    working_ranges,
)


@dataclass(frozen=True)
class Semiring:
    name: str
    zero: Any
    one: Any
    add: Callable[[Any, Any], Any]
    mul: Callable[[Any, Any], Any]
    dtype: Any
    embed_prob: Callable[[float], Any]
    embed_score: Callable[[float], Any]
    reduce_add: Callable[[np.ndarray, int], np.ndarray]

    def full(self, shape, value) -> np.ndarray:
        out = np.empty(shape, dtype=self.dtype)
        out[...] = _scalar_fill(value)
        return out

    def __repr__(self):
        return f"Semiring({self.name})"


def _scalar_fill(value):
    if isinstance(value, tuple):
        holder = np.empty((), dtype=object)
        holder[()] = value
        return holder
    return value


SUM_PRODUCT = Semiring("sum_product", 0.0, 1.0, np.add, np.multiply, float,
                       float, float, lambda a, axis: np.add.reduce(a, axis=axis))
MAX_PRODUCT = Semiring("max_product", 0.0, 1.0, np.maximum, np.multiply, float,
                       float, float, lambda a, axis: np.maximum.reduce(a, axis=axis))
BOOLEAN = Semiring("boolean", False, True, np.logical_or, np.logical_and, bool,
                   lambda p: p > 0, lambda s: s > 0, lambda a, axis: np.logical_or.reduce(a, axis=axis))


def mixed_product(a: tuple[bool, float], b: tuple[bool, float]) -> tuple[bool, float]:
    """Logical conjunction that zeroes the probabilistic part when false."""
    ok = bool(a[0]) and bool(b[0])
    return (ok, a[1] * b[1]) if ok else (False, 0.0)


def mixed_sum(a: tuple[bool, float], b: tuple[bool, float]) -> tuple[bool, float]:
    return (bool(a[0]) or bool(b[0]), a[1] + b[1])


_mixed_mul_u = np.frompyfunc(mixed_product, 2, 1)
_mixed_add_u = np.frompyfunc(mixed_sum, 2, 1)

MIXED = Semiring("mixed", (False, 0.0), (True, 1.0), _mixed_add_u, _mixed_mul_u, object,
                 lambda p: (True, float(p)), lambda s: (s > 0, float(s)) if s > 0 else (False, 0.0),
                 lambda a, axis: _mixed_add_u.reduce(a, axis=axis))

SEMIRINGS = {s.name: s for s in (SUM_PRODUCT, MAX_PRODUCT, BOOLEAN, MIXED)}


def get_semiring(name_or_semiring) -> Semiring:
    if isinstance(name_or_semiring, Semiring):
        return name_or_semiring
    try:
        return SEMIRINGS[name_or_semiring]
    except KeyError:
        raise InferenceError(f"unknown semiring {name_or_semiring!r}; choose from {sorted(SEMIRINGS)}") from None


# ---------------------------------------------------------------------------
# factors


@dataclass
class Factor:
    variables: tuple[str, ...]
    ranges: tuple[tuple, ...]
    table: np.ndarray

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self.ranges = tuple(tuple(r) for r in self.ranges)
        shape = tuple(len(r) for r in self.ranges)
        if len(self.variables) != len(self.ranges):
            raise InferenceError("factor needs one range per variable")
        if self.table.shape != shape:
            raise InferenceError(f"factor table shape {self.table.shape} does not match ranges {shape}")

    def value(self, assignment: dict[str, Any]):
        idx = tuple(self.ranges[k].index(assignment[v]) for k, v in enumerate(self.variables))
        return self.table[idx]

    def transpose(self, order: Sequence[str]) -> "Factor":
        perm = [self.variables.index(v) for v in order]
        return Factor(tuple(order), tuple(self.ranges[i] for i in perm), np.transpose(self.table, perm))

    def vector(self) -> np.ndarray:
        """Table as float array (the probabilistic part for mixed values)."""
        if self.table.dtype == object:
            return np.vectorize(lambda v: float(v[1]), otypes=[float])(self.table)
        return self.table.astype(float)


def combine(f1: Factor, f2: Factor, semiring: Semiring) -> Factor:
    variables = list(f1.variables)
    ranges = list(f1.ranges)
    for v, r in zip(f2.variables, f2.ranges):
        if v in variables:
            if ranges[variables.index(v)] != r:
                raise InferenceError(f"range mismatch on variable {v!r}")
        else:
            variables.append(v)
            ranges.append(r)

    def aligned(f: Factor):
        perm = sorted(range(len(f.variables)), key=lambda i: variables.index(f.variables[i]))
        t = np.transpose(f.table, perm)
        shape = [1] * len(variables)
        for i in perm:
            shape[variables.index(f.variables[i])] = len(f.ranges[i])
        return t.reshape(shape)

    table = semiring.mul(aligned(f1), aligned(f2))
    if not isinstance(table, np.ndarray):
        # object ufuncs return a bare element for 0-d operands
        table = semiring.full((), table)
    table = np.broadcast_to(table, tuple(len(r) for r in ranges))
    return Factor(tuple(variables), tuple(ranges), np.array(table, dtype=semiring.dtype))


def sum_out(factor: Factor, variable: str, semiring: Semiring) -> Factor:
    if variable not in factor.variables:
        raise InferenceError(f"variable {variable!r} not in factor over {factor.variables}")
    axis = factor.variables.index(variable)
    reduced = semiring.reduce_add(factor.table, axis)
    if isinstance(reduced, np.ndarray):
        table = reduced.astype(semiring.dtype, copy=False)
    else:
        table = semiring.full((), reduced)
    keep = [i for i in range(len(factor.variables)) if i != axis]
    return Factor(tuple(factor.variables[i] for i in keep), tuple(factor.ranges[i] for i in keep),
                  table.reshape(tuple(len(factor.ranges[i]) for i in keep)))


def unit_factor(semiring: Semiring) -> Factor:
    return Factor((), (), semiring.full((), semiring.one))


def _check_finite(ranges, variable_ids):
    for v, r in zip(variable_ids, ranges):
        if r is None:
            raise InferenceError(f"variable {v!r} has no finite range; discretize it with support() first")


@R.impl("make_factors", "score", "make_factors.score")
def _make_factors_score(eng, sf, semiring, ranges, variable_ids):
    """Score nodes have no output: ranges and ids are those of the parents."""
    _check_finite(ranges, variable_ids)
    shape = tuple(len(r) for r in ranges)
    table = np.empty(shape, dtype=semiring.dtype)
    for idx in itertools.product(*(range(n) for n in shape)):
        vals = tuple(ranges[k][i] for k, i in enumerate(idx))
        table[idx] = (semiring.embed_score(eng.get_score(sf, vals if len(vals) > 1 else vals[0])))
    return [Factor(tuple(variable_ids), tuple(ranges), table)]


@R.impl("make_factors", "sfunc", "make_factors.range_mass", requires=("range_mass",))
def _make_factors_cpd(eng, sf, semiring, ranges, variable_ids):
    """ranges[0] is the node's own range, followed by its parents'."""
    _check_finite(ranges, variable_ids)
    own, parent_ranges = ranges[0], ranges[1:]
    shape = tuple(len(r) for r in ranges)
    table = np.empty(shape, dtype=semiring.dtype)
    for idx in itertools.product(*(range(len(r)) for r in parent_ranges)):
        u = tuple(parent_ranges[k][i] for k, i in enumerate(idx))
        masses = eng.range_mass(sf, u, own)
        for j, m in enumerate(masses):
            table[(j, *idx)] = semiring.embed_prob(float(m))
    return [Factor(tuple(variable_ids), tuple(ranges), table)]


def make_factors(sfunc, semiring, ranges, variable_ids, engine: Engine | None = None) -> list[Factor]:
    eng = default_engine() if engine is None else engine
    return eng.make_factors(sfunc, get_semiring(semiring), [None if r is None else list(r) for r in ranges],
                            list(variable_ids))


# ---------------------------------------------------------------------------
# variable elimination


def network_factors(net, ranges, semiring: Semiring, eng: Engine) -> list[Factor]:
    """One factor list per node, in topological order."""
    factors = []
    for v in topological_order(net):
        sf = net.nodes[v]
        ps = net.parents[v]
        if sf.is_score:
            rs, ids = [ranges[p] for p in ps], list(ps)
        else:
            rs, ids = [ranges[v]] + [ranges[p] for p in ps], [v] + list(ps)
        if not eng.supports("make_factors", sf):
            raise UnsupportedOperation("make_factors", sf.kind, f"needed for node {v!r}")
        factors.extend(eng.make_factors(sf, semiring, rs, ids))
    return factors


def min_degree_order(factors: Sequence[Factor], eliminate: Sequence[str]) -> list[str]:
    """Greedy min-degree on the interaction graph; ties by variable id."""
    adj: dict[str, set[str]] = {}
    for f in factors:
        for v in f.variables:
            adj.setdefault(v, set()).update(u for u in f.variables if u != v)
    remaining = set(eliminate)
    order = []
    while remaining:
        v = min(remaining, key=lambda x: (len(adj.get(x, ())), x))
        nbrs = adj.pop(v, set())
        for a in nbrs:
            adj[a].discard(v)
            adj[a].update(n for n in nbrs if n != a)
        remaining.remove(v)
        order.append(v)
    return order


def _eliminate(factors: list[Factor], order: Sequence[str], semiring: Semiring,
               traceback: list | None = None) -> list[Factor]:
    factors = list(factors)
    for v in order:
        bucket = [f for f in factors if v in f.variables]
        factors = [f for f in factors if v not in f.variables]
        if not bucket:
            continue
        prod = bucket[0]
        for f in bucket[1:]:
            prod = combine(prod, f, semiring)
        if traceback is not None:
            traceback.append((v, prod))
        factors.append(sum_out(prod, v, semiring))
    return factors


def _product(factors: list[Factor], semiring: Semiring) -> Factor:
    out = unit_factor(semiring)
    for f in factors:
        out = combine(out, f, semiring)
    return out


def _prepare(network, evidence, engine, ranges, target_size):
    check_valid(network)
    eng = default_engine() if engine is None else engine
    evidence = as_evidence(evidence)
    net = compile_evidence(network, evidence)
    if ranges is None:
        ranges = working_ranges(network, evidence, eng, target_size)
    return net, eng, ranges


def ve_query(network, evidence=None, query_vars: Sequence[str] = (), semiring="sum_product",
             order_heuristic="min_degree", engine: Engine | None = None, ranges=None,
             target_size: int = 21) -> Factor:
    """Semiring marginal over ``query_vars`` given evidence.

    ``order_heuristic`` is ``"min_degree"`` or an explicit elimination order.
    Sum-product results are normalized; mixed results are normalized on
    their probabilistic part.
    """
    sr = get_semiring(semiring)
    net, eng, ranges = _prepare(network, evidence, engine, ranges, target_size)
    query_vars = list(query_vars)
    for q in query_vars:
        if q not in ranges:
            raise InferenceError(f"unknown query variable {q!r}")
    factors = network_factors(net, ranges, sr, eng)
    hidden = [v for v in ranges if v not in query_vars]
    if order_heuristic == "min_degree":
        order = min_degree_order(factors, hidden)
    else:
        order = list(order_heuristic)
        if sorted(order) != sorted(hidden):
            raise InferenceError("elimination order must be a permutation of the non-query variables")
    result = _product(_eliminate(factors, order, sr), sr)
    for q in query_vars:
        if q not in result.variables:
            result = combine(result, Factor((q,), (ranges[q],), sr.full(len(ranges[q]), sr.one)), sr)
    result = result.transpose(query_vars)
    if sr is SUM_PRODUCT:
        total = result.table.sum()
        if not total > 0:
            raise InferenceError("evidence has zero probability")
        result = Factor(result.variables, result.ranges, result.table / total)
    elif sr is MIXED:
        total = sum(v[1] for v in result.table.flat)
        if total > 0:
            flat = np.empty(result.table.size, dtype=object)
            for i, v in enumerate(result.table.flat):
                flat[i] = (v[0], v[1] / total)
            result = Factor(result.variables, result.ranges, flat.reshape(result.table.shape))
    return result


def evidence_probability(network, evidence=None, engine: Engine | None = None, ranges=None,
                         target_size: int = 21) -> float:
    """Sum-product value of the evidence (the normalizing constant)."""
    net, eng, ranges = _prepare(network, evidence, engine, ranges, target_size)
    factors = network_factors(net, ranges, SUM_PRODUCT, eng)
    result = _product(_eliminate(factors, min_degree_order(factors, list(ranges)), SUM_PRODUCT), SUM_PRODUCT)
    return float(result.table)


def marginals(network, evidence=None, engine: Engine | None = None, ranges=None,
              target_size: int = 21, variables=None) -> dict[str, tuple[list, np.ndarray]]:
    """Sum-product posterior of every (or each listed) variable."""
    net, eng, ranges = _prepare(network, evidence, engine, ranges, target_size)
    out = {}
    for v in variables or list(ranges):
        f = ve_query(network, evidence, [v], SUM_PRODUCT, engine=eng, ranges=ranges)
        out[v] = (list(ranges[v]), f.table.astype(float))
    return out


def mpe_decode(network, evidence=None, engine: Engine | None = None, ranges=None,
               target_size: int = 21) -> tuple[dict[str, Any], float]:
    """Most probable joint assignment consistent with the evidence.

    Max-product elimination, then traceback through the recorded bucket
    tables in reverse elimination order, taking the first maximizer in range
    order.  The reported value multiplies the factor entries at the decoded
    assignment in topological order.
    """
    sr = MAX_PRODUCT
    net, eng, ranges = _prepare(network, evidence, engine, ranges, target_size)
    factors = network_factors(net, ranges, sr, eng)
    order = min_degree_order(factors, list(ranges))
    buckets: list = []
    rest = _eliminate(factors, order, sr, buckets)
    if float(_product(rest, sr).table) <= 0:
        raise InferenceError("evidence has zero probability")
    assignment: dict[str, Any] = {}
    for v, prod in reversed(buckets):
        others = [u for u in prod.variables if u != v]
        idx = tuple(prod.ranges[prod.variables.index(u)].index(assignment[u]) if u in others else slice(None)
                    for u in prod.variables)
        column = np.asarray(prod.table[idx], dtype=float)
        assignment[v] = ranges[v][int(np.argmax(column))]
    value = 1.0
    for f in factors:
        value = value * float(f.value(assignment))
    return {v: assignment[v] for v in topological_order(network) if v in assignment}, value
