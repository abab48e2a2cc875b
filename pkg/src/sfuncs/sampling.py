"""Generate-and-score inference: rejection, likelihood weighting and
λ-guided lookahead importance sampling.

Particles are generated in blocks of ``BLOCK`` particles; block ``b`` draws
from its own generator seeded with ``[seed, b]`` so results do not depend on
how the work is scheduled.  Within a block, particles that share parent
values are sampled together.  Weights are kept as logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import Engine, InferenceError, default_engine
from .network import (
    Network,
    as_evidence,
    check_valid,
    compile_evidence,
    lambda_capable,
    node_layers,
    topological_order,
)

BLOCK = 1024


@dataclass(frozen=True)
class Particle:
    assignment: dict[str, Any]
    weight: float


@dataclass
class ParticleSet:
    variables: list[str]
    values: dict[str, list]
    log_weights: np.ndarray
    diagnostics: list[str] = field(default_factory=list)
    proposed: int = 0

    def __len__(self):
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def accepted(self) -> int:
        return int(np.count_nonzero(np.isfinite(self.log_weights)))

    @property
    def particles(self) -> list[Particle]:
        w = self.weights
        return [Particle({v: self.values[v][i] for v in self.variables}, float(w[i])) for i in range(len(self))]

    def log_normalizer(self) -> float:
        """Log of the mean weight, an estimate of the evidence probability."""
        if len(self) == 0:
            return -math.inf
        m = np.max(self.log_weights)
        if not np.isfinite(m):
            return -math.inf
        return float(m + np.log(np.mean(np.exp(self.log_weights - m))))


def _normalized(ps: ParticleSet) -> np.ndarray:
    if len(ps) == 0:
        raise InferenceError("particle set is empty")
    m = np.max(ps.log_weights)
    if not np.isfinite(m):
        raise InferenceError("every particle has zero weight")
    w = np.exp(ps.log_weights - m)
    return w / w.sum()


def estimate_marginal(particles: ParticleSet, variable: str, range_: Sequence[Any]) -> np.ndarray:
    """Self-normalized weighted frequencies of ``variable`` over ``range_``."""
    w = _normalized(particles)
    index = {x: i for i, x in enumerate(range_)}
    out = np.zeros(len(range_))
    for x, wi in zip(particles.values[variable], w):
        if x in index:
            out[index[x]] += wi
    return out


def estimate_mean(particles: ParticleSet, variable: str) -> float:
    w = _normalized(particles)
    return float(np.dot(w, np.asarray(particles.values[variable], dtype=float)))


def effective_sample_size(particles: ParticleSet | np.ndarray) -> float:
    """(Σw)² / Σw², computed stably from log weights."""
    if isinstance(particles, ParticleSet):
        logw = particles.log_weights
    else:
        with np.errstate(divide="ignore"):
            logw = np.log(np.asarray(particles, dtype=float))
    if len(logw) == 0 or not np.isfinite(np.max(logw)):
        raise InferenceError("effective sample size needs a positive total weight")
    w = np.exp(logw - np.max(logw))
    return float(w.sum() ** 2 / np.dot(w, w))


# ---------------------------------------------------------------------------
# generation


def _base_seed(rng) -> int:
    if rng is None:
        return 0
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def _groups(keys: list) -> dict:
    out: dict = {}
    for i, k in enumerate(keys):
        out.setdefault(k, []).append(i)
    return out


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


class _Guide:
    """Proposal q(x | pa) ∝ P(x | pa) λ(x) over a complete finite range."""

    def __init__(self, range_, lam):
        self.range = list(range_)
        self.lam = np.asarray(lam, dtype=float)


def _generate(network: Network, evidence, n: int, rng, eng: Engine, mode: str,
              guides: dict[str, _Guide] | None = None) -> ParticleSet:
    check_valid(network)
    if int(n) != n or n < 1:
        raise InferenceError(f"number of samples must be a positive integer, got {n!r}")
    n = int(n)
    evidence = as_evidence(evidence)
    hard, soft = evidence.hard(), evidence.soft()
    guides = guides or {}
    order = [v for v in topological_order(network) if not network.nodes[v].is_score]
    scores = [v for v in topological_order(network) if network.nodes[v].is_score]
    seed = _base_seed(rng)
    values: dict[str, list] = {v: [] for v in order}
    logw_blocks = []
    for b, start in enumerate(range(0, n, BLOCK)):
        m = min(BLOCK, n - start)
        brng = np.random.default_rng([seed, b])
        block: dict[str, list] = {}
        logw = np.zeros(m)
        for v in order:
            sf = network.nodes[v]
            pas = network.parents[v]
            keys = [tuple(block[p][i] for p in pas) for i in range(m)] if pas else [()] * m
            col: list = [None] * m
            if v in hard and mode != "rejection":
                e = hard[v]
                col = [e] * m
                for key, idx in _groups(keys).items():
                    logw[idx] += eng.logcpdf(sf, key, e)
            else:
                for key, idx in _groups(keys).items():
                    g = guides.get(v)
                    if g is None:
                        xs = eng.sample_n(sf, key, len(idx), brng)
                        for i, x in zip(idx, xs):
                            col[i] = x
                        continue
                    p = np.asarray(eng.range_mass(sf, key, g.range), dtype=float)
                    q = p * g.lam
                    z = q.sum()
                    if not z > 0:
                        logw[idx] = -math.inf
                        xs = eng.sample_n(sf, key, len(idx), brng)
                        for i, x in zip(idx, xs):
                            col[i] = x
                        continue
                    q = q / z
                    picks = np.searchsorted(np.cumsum(q), brng.random(len(idx)), side="right")
                    picks = np.minimum(picks, len(q) - 1)
                    with np.errstate(divide="ignore"):
                        corr = np.log(p[picks]) - np.log(q[picks])
                    for i, k in zip(idx, picks):
                        col[i] = g.range[k]
                    logw[idx] += corr
                if v in soft:
                    cache: dict = {}
                    for i, x in enumerate(col):
                        s = cache.get(x)
                        if s is None:
                            s = cache[x] = _safe_log(eng.get_score(soft[v], x))
                        logw[i] += s
                if mode == "rejection" and v in hard:
                    e = hard[v]
                    logw[[i for i, x in enumerate(col) if x != e]] = -math.inf
            block[v] = col
        for v in scores:
            _apply_score(network, v, block, logw, eng, mode)
        for v in order:
            values[v].extend(block[v])
        logw_blocks.append(logw)
    logw = np.concatenate(logw_blocks)
    diags = []
    if not np.any(np.isfinite(logw)):
        diags.append("no particle has positive weight" if mode != "rejection" else "no sample was accepted")
    return ParticleSet(order, values, logw, diags, n)


def _apply_score(network, v, block, logw, eng, mode):
    """Weight each particle by a score node of the model.  Rejection only
    admits 0/1 scores, which act as acceptance constraints."""
    sf, pas = network.nodes[v], network.parents[v]
    keys = [tuple(block[p][i] for p in pas) for i in range(len(logw))]
    for key, idx in _groups(keys).items():
        s = float(eng.get_score(sf, key if len(key) > 1 else key[0]))
        if mode == "rejection" and s not in (0.0, 1.0):
            raise InferenceError(f"rejection sampling needs 0/1 scores, but node {v!r} scored {s:g}")
        logw[idx] += _safe_log(s)


def rejection_infer(network: Network, evidence, n: int, rng=None, engine: Engine | None = None) -> ParticleSet:
    """Forward samples, keeping those that match the hard evidence exactly.

    Survivors have weight 1; ``proposed`` records how many were drawn.
    """
    evidence = as_evidence(evidence)
    if evidence.soft():
        raise InferenceError("rejection sampling accepts hard evidence only")
    eng = default_engine() if engine is None else engine
    return accepted_only(_generate(network, evidence, n, rng, eng, "rejection"))


def accepted_only(ps: ParticleSet) -> ParticleSet:
    keep = np.flatnonzero(np.isfinite(ps.log_weights))
    return ParticleSet(ps.variables, {v: [ps.values[v][i] for i in keep] for v in ps.variables},
                       np.zeros(len(keep)), list(ps.diagnostics), ps.proposed)


def lw_infer(network: Network, evidence, n: int, rng=None, engine: Engine | None = None) -> ParticleSet:
    """Likelihood weighting: evidence variables are fixed and contribute
    their conditional mass (hard) or score (soft) to the weight."""
    eng = default_engine() if engine is None else engine
    return _generate(network, evidence, n, rng, eng, "lw")


def lookahead_infer(network: Network, evidence, n: int, rng=None, engine: Engine | None = None,
                    *, ranges=None) -> ParticleSet:
    """Importance sampling guided by BP λ messages.

    Each non-top-layer variable with a complete finite range and an
    informative λ is drawn from q ∝ P(x | pa) λ(x) and weighted by P/q; the
    π-only top layer is drawn from its prior.  Evidence then weights as in
    likelihood weighting.
    """
    from .bp import bp_infer

    eng = default_engine() if engine is None else engine
    evidence = as_evidence(evidence)
    res = bp_infer(network, evidence, eng, ranges=ranges)
    tags = node_layers(compile_evidence(network, evidence), eng.registry)
    hard = evidence.hard()
    guides = {}
    for v, lam in res.lambdas.items():
        sf = network.nodes[v]
        if lam is None or v in hard or sf.continuous or not lambda_capable(tags[v]):
            continue
        pr = [res.ranges[p] for p in network.parents[v]]
        quality = eng.perf("support", "support_quality", sf, (pr, len(res.ranges[v]), []))
        if quality != "complete" or np.allclose(lam, lam[0]):
            continue
        guides[v] = _Guide(res.ranges[v], lam)
    ps = _generate(network, evidence, n, rng, eng, "lookahead", guides)
    if evidence and not guides:
        ps.diagnostics.append("no λ message reached the sampled variables; ran likelihood weighting")
    return ps
