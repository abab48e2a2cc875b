"""Random discrete networks and brute-force oracles that work from the raw
parameter tables, never through the operation registry."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from sfuncs import Cat, DiscreteCPT
from sfuncs.network import Network


@dataclass
class RawNet:
    """A discrete network and the tables it was built from."""

    network: Network
    order: list[str]
    values: dict[str, list]
    parents: dict[str, list[str]]
    tables: dict[str, dict[tuple, np.ndarray]] = field(default_factory=dict)

    def joint(self, assignment: dict) -> float:
        p = 1.0
        for v in self.order:
            key = tuple(assignment[u] for u in self.parents[v])
            row = self.tables[v][key]
            p *= row[self.values[v].index(assignment[v])]
        return p

    def assignments(self):
        for combo in itertools.product(*(self.values[v] for v in self.order)):
            yield dict(zip(self.order, combo))


def _random_row(rng, k, floor=0.05):
    row = rng.dirichlet(np.ones(k)) + floor
    return row / row.sum()


def build(order, parents, values, rng) -> RawNet:
    net = Network()
    tables = {}
    for v in order:
        pvals = [values[p] for p in parents[v]]
        keys = list(itertools.product(*pvals))
        rows = [_random_row(rng, len(values[v])) for _ in keys]
        tables[v] = dict(zip(keys, rows))
        if parents[v]:
            net.add(v, DiscreteCPT(pvals, values[v], [list(r) for r in rows]), parents[v])
        else:
            net.add(v, Cat(values[v], rows[0]))
    return RawNet(net, list(order), values, parents, tables)


def random_dag(rng, n=None, max_parents=2, arity=2) -> RawNet:
    n = int(rng.integers(2, 9)) if n is None else n
    order = [f"X{i}" for i in range(n)]
    parents = {}
    for i, v in enumerate(order):
        k = int(rng.integers(0, min(i, max_parents) + 1))
        parents[v] = sorted(rng.choice(order[:i], size=k, replace=False).tolist()) if k else []
    values = {v: list(range(arity)) for v in order}
    return build(order, parents, values, rng)


def random_polytree(rng, n=None, arity=2) -> RawNet:
    """Random orientation of a random tree: multiple parents, no undirected cycle."""
    n = int(rng.integers(2, 9)) if n is None else n
    names = [f"X{i}" for i in range(n)]
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    parents = {v: [] for v in names}
    for a, b in edges:
        if rng.random() < 0.5:
            parents[names[b]].append(names[a])
        else:
            parents[names[a]].append(names[b])
    order, placed = [], set()
    while len(order) < n:
        for v in names:
            if v not in placed and all(p in placed for p in parents[v]):
                order.append(v)
                placed.add(v)
    values = {v: list(range(arity)) for v in names}
    return build(order, parents, values, rng)


def random_evidence(rng, raw: RawNet, max_vars=3) -> dict:
    k = int(rng.integers(0, min(max_vars, len(raw.order) - 1) + 1))
    chosen = rng.choice(raw.order, size=k, replace=False).tolist() if k else []
    return {v: raw.values[v][int(rng.integers(len(raw.values[v])))] for v in chosen}


def enumerate_posterior(raw: RawNet, evidence: dict, var: str, soft=None) -> np.ndarray:
    """P(var | evidence) by summing the full joint; ``soft`` maps variables
    to {value: weight}."""
    soft = soft or {}
    out = np.zeros(len(raw.values[var]))
    for a in raw.assignments():
        if any(a[k] != x for k, x in evidence.items()):
            continue
        w = raw.joint(a)
        for k, table in soft.items():
            w *= table.get(a[k], 0.0)
        out[raw.values[var].index(a[var])] += w
    return out / out.sum()


def enumerate_evidence_prob(raw: RawNet, evidence: dict) -> float:
    return sum(raw.joint(a) for a in raw.assignments() if all(a[k] == x for k, x in evidence.items()))


def brute_force_mpe(raw: RawNet, evidence: dict):
    best, best_p = None, -1.0
    for a in raw.assignments():
        if any(a[k] != x for k, x in evidence.items()):
            continue
        p = raw.joint(a)
        if p > best_p:
            best, best_p = a, p
    return best, best_p


def chain2():
    """Cat(0.5) parent, CPT rows [0.9, 0.1] / [0.3, 0.7]."""
    net = Network()
    net.add("A", Cat([0, 1], [0.5, 0.5]))
    net.add("B", DiscreteCPT([[0, 1]], [0, 1], [[0.9, 0.1], [0.3, 0.7]]), ["A"])
    return net


class LeafCPT(DiscreteCPT):
    """A CPT whose kind refuses compute_pi in :func:`lambda_only_registry`."""

    kind = "lam_leaf"


def lambda_only_registry():
    """Registry copy where ``lam_leaf`` nodes can send λ but not compute π."""
    import dataclasses

    from sfuncs import REGISTRY

    reg = REGISTRY.copy()
    reg.declare_kind("lam_leaf", "discrete_cpt")
    for rec in [r for r in reg._impls if r.operation.name == "compute_pi"]:
        base = rec.applies

        def applies(registry, sf, _base=base):
            return sf.kind != "lam_leaf" and (_base is None or _base(registry, sf))

        reg = reg.without(rec.impl_name)
        reg.register_impl(dataclasses.replace(rec, applies=applies))
    return reg.freeze()
