"""π/λ belief propagation over networks with per-variable capability layers.

Polytrees get an exact two-sweep schedule (collect toward a root of each
undirected component, then distribute).  Graphs with undirected cycles use
damped synchronous flooding.  Variables whose operations are missing are
reported in the coverage map instead of aborting the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .basic import Cat, SoftScore, belief_vector, ones_score, score_vector
from .core import Engine, InferenceError, UnsupportedOperation, default_engine, normalize
from .network import (
    DEFAULT_TARGET_SIZE,
    as_evidence,
    check_valid,
    compile_evidence,
    has_evidence_below,
    is_polytree,
    lambda_capable,
    node_layers,
    pi_capable,
    topological_order,
    working_ranges,
)


@dataclass
class BPResult:
    beliefs: dict[str, tuple[list, np.ndarray]]
    coverage: dict[str, dict[str, Any]]
    converged: bool
    iterations: int
    schedule: str
    ranges: dict[str, list]
    lambdas: dict[str, np.ndarray | None] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def belief(self, var: str) -> np.ndarray:
        return self.beliefs[var][1]


def compute_lambda(range_: Sequence[Any], child_lambdas: Sequence[np.ndarray | None],
                   evidence_score=None, engine: Engine | None = None) -> np.ndarray:
    """Pointwise product of child λ vectors and an optional evidence score;
    all ones when there is nothing to fuse."""
    out = np.ones(len(range_))
    for lam in child_lambdas:
        if lam is not None:
            out = out * lam
    if evidence_score is not None:
        eng = default_engine() if engine is None else engine
        out = out * score_vector(eng, evidence_score, range_)
    return out


def _msg_change(old, new) -> float:
    if old is None and new is None:
        return 0.0
    if old is None or new is None or len(old) != len(new):
        return float("inf")
    return float(np.max(np.abs(np.asarray(new) - np.asarray(old))))


class _Propagator:
    def __init__(self, network, evidence, eng: Engine, ranges, target_size):
        check_valid(network)
        self.original = network
        self.eng = eng
        self.net = compile_evidence(network, evidence)
        self.ranges = dict(ranges) if ranges is not None else working_ranges(network, evidence, eng, target_size)
        self.tags = node_layers(self.net, eng.registry)
        self.below = has_evidence_below(self.net)
        self.children = {v: self.net.children(v) for v in self.net.nodes}
        self.pi_msgs: dict[tuple[str, str], Any] = {}
        self.lam_msgs: dict[tuple[str, str], np.ndarray | None] = {}
        self.missing: dict[str, set[str]] = {v: set() for v in self.net.nodes}

    # -- local computations ----------------------------------------------

    def kind(self, v):
        return self.net.nodes[v].kind

    def pi_dist(self, v):
        sf = self.net.nodes[v]
        if sf.is_score or not pi_capable(self.tags[v]):
            return None
        parents = self.net.parents[v]
        incoming = [self.pi_msgs.get((p, v)) for p in parents]
        if any(m is None for m in incoming):
            return None
        return self.eng.compute_pi(sf, self.ranges[v], [self.ranges[p] for p in parents], incoming)

    def pi_vector(self, v, dist) -> np.ndarray:
        return normalize(self.eng.range_mass(dist, (), self.ranges[v]), f"prior of {v!r}")

    def lam_vector(self, v, exclude=None) -> np.ndarray | None:
        msgs = [self.lam_msgs.get((c, v)) for c in self.children[v] if c != exclude]
        msgs = [m for m in msgs if m is not None]
        if not msgs:
            return None
        return compute_lambda(self.ranges[v], msgs)

    def send_pi(self, v, child, as_vector=False):
        dist = self.pi_dist(v)
        if dist is None:
            return None
        other = self.lam_vector(v, exclude=child)
        if other is None and not as_vector:
            return dist
        vec = self.pi_vector(v, dist)
        if other is not None:
            vec = normalize(vec * other, f"π message from {v!r}")
        return Cat(self.ranges[v], vec)

    def send_lambda(self, child, parent):
        """λ message child → parent as a vector rescaled to sum 1, or None
        when nothing informative can be sent."""
        if not self.below[child] or not lambda_capable(self.tags[parent]):
            return None
        sf = self.net.nodes[child]
        if not lambda_capable(self.tags[child]):
            self.missing[parent].add(f"send_lambda unsupported by {sf.kind}")
            return None
        parents = self.net.parents[child]
        k = parents.index(parent)
        pis = []
        for q in parents:
            m = None if q == parent else self.pi_msgs.get((q, child))
            if m is None and q != parent:
                self.missing[parent].add(f"no π message from {q!r} to {child!r}")
                return None
            pis.append(m)
        if sf.is_score:
            lam, range_ = ones_score(), []
        else:
            vec = self.lam_vector(child)
            if vec is None:
                return None
            range_ = self.ranges[child]
            lam = SoftScore(range_, vec)
        try:
            msg = self.eng.send_lambda(sf, lam, range_, [self.ranges[q] for q in parents], pis, k)
        except UnsupportedOperation as exc:
            self.missing[parent].add(f"send_lambda unsupported by {exc.kind}")
            return None
        return normalize(score_vector(self.eng, msg, self.ranges[parent]), f"λ message {child!r}→{parent!r}")

    def message(self, a, b, as_vector=False):
        if b in self.children[a]:
            self.pi_msgs[(a, b)] = self.send_pi(a, b, as_vector)
        else:
            self.lam_msgs[(a, b)] = self.send_lambda(a, b)

    # -- schedules ----------------------------------------------------------

    def two_sweep(self):
        adj = {v: set(self.net.parents[v]) | set(self.children[v]) for v in self.net.nodes}
        seen: set[str] = set()
        for root in sorted(self.net.nodes, key=lambda v: (self.net.nodes[v].is_score, v)):
            if root in seen:
                continue
            order, tree_parent = [], {root: None}
            stack = [root]
            seen.add(root)
            while stack:
                a = stack.pop()
                order.append(a)
                for b in sorted(adj[a], reverse=True):
                    if b not in seen:
                        seen.add(b)
                        tree_parent[b] = a
                        stack.append(b)
            # children of every node come after it in ``order``
            for a in reversed(order):
                if tree_parent[a] is not None:
                    self.message(a, tree_parent[a])
            for a in order:
                for b in sorted(adj[a]):
                    if tree_parent.get(b) == a:
                        self.message(a, b)

    def edges(self):
        for c in self.net.nodes:
            for p in self.net.parents[c]:
                yield p, c

    def init_priors(self):
        for v in topological_order(self.net):
            for c in self.children[v]:
                self.pi_msgs[(v, c)] = self.send_pi(v, c, as_vector=True)

    def flood(self, damping) -> float:
        """One synchronous round; returns the largest message change."""
        change = 0.0
        new_pi, new_lam = {}, {}
        for p, c in self.edges():
            new_pi[(p, c)] = self.send_pi(p, c, as_vector=True)
            new_lam[(c, p)] = self.send_lambda(c, p)
        for key, msg in new_pi.items():
            old = self.pi_msgs.get(key)
            if msg is not None and old is not None and damping > 0:
                msg = Cat(msg.values, (1 - damping) * msg.probabilities + damping * old.probabilities)
            change = max(change, _msg_change(old and old.probabilities, msg and msg.probabilities))
            self.pi_msgs[key] = msg
        for key, vec in new_lam.items():
            old = self.lam_msgs.get(key)
            if vec is not None and old is not None and damping > 0:
                vec = (1 - damping) * vec + damping * old
            change = max(change, _msg_change(old, vec))
            self.lam_msgs[key] = vec
        return change

    # -- beliefs --------------------------------------------------------------

    def beliefs(self):
        out: dict[str, tuple[list, np.ndarray]] = {}
        coverage: dict[str, dict[str, Any]] = {}
        lambdas: dict[str, np.ndarray | None] = {}
        for v in topological_order(self.original):
            sf = self.net.nodes[v]
            if sf.is_score:
                continue
            tag = self.tags[v]
            lam = self.lam_vector(v)
            lambdas[v] = lam
            reasons = sorted(self.missing[v])
            informative = [c for c in self.children[v] if self.below[c]]
            try:
                dist = self.pi_dist(v)
            except UnsupportedOperation as exc:
                dist = None
                reasons.append(str(exc))
            if dist is None:
                if not sf.is_score and not self.eng.supports("compute_pi", sf):
                    reasons.append(f"compute_pi unsupported by {sf.kind}")
                elif not pi_capable(tag):
                    reasons.append("no π message from a parent")
                coverage[v] = {"layer": tag, "status": "none", "reasons": sorted(set(reasons))}
                continue
            pi_cat = Cat(self.ranges[v], self.pi_vector(v, dist))
            score = ones_score() if lam is None else SoftScore(self.ranges[v], lam)
            bel = self.eng.compute_bel(pi_cat, score)
            out[v] = (list(self.ranges[v]), belief_vector(self.eng, bel, self.ranges[v]))
            got = [c for c in informative if self.lam_msgs.get((c, v)) is not None]
            if not informative or len(got) == len(informative):
                status = "full"
            elif not got:
                status = "prior_only"
                if not lambda_capable(tag):
                    reasons.extend(self._lambda_blockers(v))
                    reasons.append("no λ")
            else:
                status = "partial"
            coverage[v] = {"layer": tag, "status": status, "reasons": sorted(set(reasons))}
        return out, coverage, lambdas

    def _lambda_blockers(self, v):
        reasons = set()
        stack = [v]
        seen = set()
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            if not self.eng.supports("send_lambda", self.net.nodes[u]):
                reasons.add(f"send_lambda unsupported by {self.kind(u)}")
            stack.extend(c for c in self.children[u] if self.below[c])
        return reasons


def bp_infer(network, evidence=None, engine: Engine | None = None, *, max_iterations: int = 50,
             damping: float = 0.5, tolerance: float = 1e-6, ranges=None,
             target_size: int = DEFAULT_TARGET_SIZE, schedule: str = "auto") -> BPResult:
    """Beliefs for as many variables as the registered operations allow.

    ``schedule`` is ``"auto"`` (two sweeps on polytrees, flooding otherwise),
    ``"two_sweep"`` or ``"loopy"``.
    """
    eng = default_engine() if engine is None else engine
    evidence = as_evidence(evidence)
    if not 0 <= damping < 1:
        raise InferenceError("damping must lie in [0, 1)")
    prop = _Propagator(network, evidence, eng, ranges, target_size)
    if schedule == "auto":
        schedule = "two_sweep" if is_polytree(prop.net) else "loopy"
    if schedule == "two_sweep":
        prop.two_sweep()
        beliefs, coverage, lambdas = prop.beliefs()
        return BPResult(beliefs, coverage, True, 1, schedule, prop.ranges, lambdas)
    if schedule != "loopy":
        raise InferenceError(f"unknown schedule {schedule!r}")
    prop.init_priors()
    beliefs, coverage, lambdas = prop.beliefs()
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        change = prop.flood(damping)
        new, coverage, lambdas = prop.beliefs()
        delta = max((float(np.max(np.abs(new[v][1] - beliefs[v][1]))) for v in new if v in beliefs), default=0.0)
        delta = max(delta, change)
        beliefs = new
        if delta < tolerance:
            converged = True
            break
    diags = [] if converged else [f"loopy BP stopped after {max_iterations} iterations without converging"]
    return BPResult(beliefs, coverage, converged, it, schedule, prop.ranges, lambdas, diags)
