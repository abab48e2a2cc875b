"""Directed acyclic networks of SFuncs, evidence, and capability layering."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .basic import HardScore, Score
from .core import Engine, InferenceError, Observed, Registry, SFunc, default_engine

PI_ONLY = "pi_only"
BIDIRECTIONAL = "bidirectional"
LAMBDA_ONLY = "lambda_only"
NO_LAYER = "none"

DEFAULT_TARGET_SIZE = 21


@dataclass
class Network:
    nodes: dict[str, SFunc] = field(default_factory=dict)
    parents: dict[str, list[str]] = field(default_factory=dict)
    placeholders: set[str] = field(default_factory=set)
    outputs: set[str] = field(default_factory=set)

    def add(self, name: str, sfunc: SFunc, parents: Sequence[str] = (), *,
            placeholder: bool = False, output: bool = False) -> "Network":
        if name in self.nodes:
            raise InferenceError(f"variable {name!r} already defined")
        self.nodes[name] = sfunc
        self.parents[name] = list(parents)
        if placeholder:
            self.placeholders.add(name)
        if output:
            self.outputs.add(name)
        return self

    def children(self, name: str) -> list[str]:
        return [v for v, ps in self.parents.items() if name in ps]

    def variables(self) -> list[str]:
        """Non-score nodes, i.e. those carrying a value."""
        return [v for v, sf in self.nodes.items() if not sf.is_score]

    def replace(self, name: str, sfunc: SFunc) -> "Network":
        new = self.copy()
        new.nodes[name] = sfunc
        return new

    def copy(self) -> "Network":
        return Network(dict(self.nodes), {k: list(v) for k, v in self.parents.items()},
                       set(self.placeholders), set(self.outputs))

    def __len__(self):
        return len(self.nodes)


@dataclass
class Evidence:
    """Per-variable evidence: a plain value (hard) or a Score SFunc (soft)."""

    bindings: dict[str, Any] = field(default_factory=dict)

    def __init__(self, bindings: Mapping[str, Any] | None = None):
        self.bindings = dict(bindings or {})

    def hard(self) -> dict[str, Any]:
        return {k: v for k, v in self.bindings.items() if not isinstance(v, Score)}

    def soft(self) -> dict[str, Score]:
        return {k: v for k, v in self.bindings.items() if isinstance(v, Score)}

    def __contains__(self, name):
        return name in self.bindings

    def __bool__(self):
        return bool(self.bindings)


def as_evidence(evidence) -> Evidence:
    if evidence is None:
        return Evidence()
    return evidence if isinstance(evidence, Evidence) else Evidence(evidence)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    variables: tuple[str, ...]
    message: str


# ---------------------------------------------------------------------------
# structure


def validate(network: Network) -> list[Diagnostic]:
    """Structural problems as diagnostics; an empty list means valid."""
    out = []
    for v, ps in network.parents.items():
        for p in ps:
            if p not in network.nodes:
                out.append(Diagnostic("dangling_parent", (v, p), f"{v!r} names unknown parent {p!r}"))
        sf = network.nodes[v]
        if len(ps) != sf.arity:
            out.append(Diagnostic("arity", (v,), f"{v!r} declares {sf.arity} inputs but has {len(ps)} parents"))
        if p_dup := {p for p in ps if ps.count(p) > 1}:
            out.append(Diagnostic("duplicate_parent", (v, *sorted(p_dup)), f"{v!r} lists a parent twice"))
        if sf.is_score and network.children(v):
            out.append(Diagnostic("score_parent", (v,), f"score node {v!r} cannot be a parent"))
    for v in network.placeholders:
        if network.parents.get(v):
            out.append(Diagnostic("placeholder_parents", (v,), f"placeholder {v!r} has parents"))
    cycle = _find_cycle(network)
    if cycle:
        out.append(Diagnostic("cycle", tuple(cycle), "cycle through " + " -> ".join(cycle)))
    return out


def _find_cycle(network: Network) -> list[str] | None:
    state: dict[str, int] = {}
    for start in sorted(network.nodes):
        if start in state:
            continue
        stack = [(start, iter(sorted(p for p in network.parents[start] if p in network.nodes)))]
        path = [start]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                path.pop()
            elif state.get(nxt) == 1:
                return path[path.index(nxt):] + [nxt]
            elif nxt not in state:
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(sorted(p for p in network.parents[nxt] if p in network.nodes))))
    return None


def check_valid(network: Network) -> None:
    diags = validate(network)
    if diags:
        raise InferenceError("invalid network: " + "; ".join(d.message for d in diags))


def topological_order(network: Network) -> list[str]:
    """Parents before children; ties broken by variable id."""
    indeg = {v: 0 for v in network.nodes}
    kids: dict[str, list[str]] = {v: [] for v in network.nodes}
    for v, ps in network.parents.items():
        for p in ps:
            if p in network.nodes:
                indeg[v] += 1
                kids[p].append(v)
    heap = [v for v, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        v = heapq.heappop(heap)
        out.append(v)
        for c in kids[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(out) != len(network.nodes):
        stuck = sorted(v for v in network.nodes if v not in set(out))
        raise InferenceError(f"network has a cycle among {stuck}")
    return out


def is_polytree(network: Network) -> bool:
    """True when the undirected skeleton has no cycles."""
    root = {v: v for v in network.nodes}

    def find(v):
        while root[v] != v:
            root[v] = root[root[v]]
            v = root[v]
        return v

    for v, ps in network.parents.items():
        for p in ps:
            a, b = find(v), find(p)
            if a == b:
                return False
            root[a] = b
    return True


# ---------------------------------------------------------------------------
# evidence compilation


def evidence_node_name(var: str) -> str:
    return f"{var}#evidence"


def compile_evidence(network: Network, evidence) -> Network:
    """Attach one child Score node per evidence binding."""
    evidence = as_evidence(evidence)
    net = network.copy()
    for var, val in evidence.bindings.items():
        if var not in network.nodes:
            raise InferenceError(f"evidence on unknown variable {var!r}")
        score = val if isinstance(val, Score) else HardScore(val)
        net.add(evidence_node_name(var), score, [var])
    return net


def has_evidence_below(network: Network) -> dict[str, bool]:
    """Whether a score node sits at or below each node."""
    below = {}
    for v in reversed(topological_order(network)):
        below[v] = network.nodes[v].is_score or any(below[c] for c in network.children(v))
    return below


# ---------------------------------------------------------------------------
# capability layers


def classify_layers(network: Network, registry: Registry | None = None, evidence=None) -> dict[str, str]:
    """Tag every node with the message directions algorithms may use on it.

    π-capable: compute_pi supported and every ancestor π-capable.
    λ-capable: send_lambda supported and every relevant child λ-capable,
    where a child is relevant when evidence lies at or below it (every child
    when the network carries no evidence at all).
    """
    net = compile_evidence(network, evidence) if evidence else network
    tags = node_layers(net, registry)
    return {v: t for v, t in tags.items() if v in network.nodes}


def node_layers(net: Network, registry: Registry | None = None) -> dict[str, str]:
    """Layer tags for every node of a network whose evidence is already
    compiled into score nodes."""
    from .core import REGISTRY

    registry = REGISTRY if registry is None else registry
    order = topological_order(net)
    pi_ok: dict[str, bool] = {}
    for v in order:
        sf = net.nodes[v]
        pi_ok[v] = (not sf.is_score and registry.supports("compute_pi", sf)
                    and all(pi_ok[p] for p in net.parents[v]))
    below = has_evidence_below(net)
    any_evidence = any(sf.is_score for sf in net.nodes.values())
    lam_ok: dict[str, bool] = {}
    for v in reversed(order):
        relevant = [c for c in net.children(v) if below[c] or not any_evidence]
        lam_ok[v] = registry.supports("send_lambda", net.nodes[v]) and all(lam_ok[c] for c in relevant)
    tags = {}
    for v in order:
        p, l = pi_ok[v], lam_ok[v]
        tags[v] = BIDIRECTIONAL if p and l else PI_ONLY if p else LAMBDA_ONLY if l else NO_LAYER
    return tags


def pi_capable(tag: str) -> bool:
    return tag in (PI_ONLY, BIDIRECTIONAL)


def lambda_capable(tag: str) -> bool:
    return tag in (LAMBDA_ONLY, BIDIRECTIONAL)


# ---------------------------------------------------------------------------
# sampling and ranges


def network_sample(network: Network, placeholder_values: Mapping[str, Any] | None = None,
                   rng: np.random.Generator | None = None, engine: Engine | None = None) -> dict[str, Any]:
    eng = default_engine() if engine is None else engine
    rng = np.random.default_rng() if rng is None else rng
    placeholder_values = dict(placeholder_values or {})
    missing = sorted(network.placeholders - set(placeholder_values))
    if missing:
        raise InferenceError(f"no value given for placeholders {missing}")
    out: dict[str, Any] = {}
    for v in topological_order(network):
        sf = network.nodes[v]
        if sf.is_score:
            continue
        if v in network.placeholders:
            out[v] = placeholder_values[v]
        else:
            out[v] = eng.sample(sf, tuple(out[p] for p in network.parents[v]), rng)
    return out


def working_ranges(network: Network, evidence=None, engine: Engine | None = None,
                   target_size: int = DEFAULT_TARGET_SIZE,
                   prior: Mapping[str, Sequence[Any]] | None = None,
                   sizes: Mapping[str, int] | None = None) -> dict[str, list]:
    """Finite working range per value-carrying node, via the support
    operation.  Hard-evidence variables get an :class:`Observed` range."""
    eng = default_engine() if engine is None else engine
    hard = as_evidence(evidence).hard()
    prior = prior or {}
    sizes = sizes or {}
    ranges: dict[str, list] = {}
    for v in topological_order(network):
        sf = network.nodes[v]
        if sf.is_score:
            continue
        if v in hard:
            ranges[v] = Observed([hard[v]])
            continue
        pr = [ranges[p] for p in network.parents[v]]
        ranges[v] = eng.support(sf, pr, sizes.get(v, target_size), list(prior.get(v, [])))
        if not ranges[v]:
            raise InferenceError(f"support of {v!r} is empty")
    return ranges


def range_index(range_: Sequence[Any]) -> dict[Any, int]:
    return {x: i for i, x in enumerate(range_)}
