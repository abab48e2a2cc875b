"""Leaf SFuncs: parentless distributions and scores, with their operations."""

from __future__ import annotations

import heapq
import math
from statistics import NormalDist
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .core import (
    REGISTRY,
    DegenerateInput,
    InferenceError,
    Observed,
    ScoringError,
    SFunc,
    SFuncSignature,
    UnsupportedOperation,
    default_engine,
    normalize,
)

R = REGISTRY
for _kind, _parent in [("flip", "dist"), ("cat", "dist"), ("constant", "dist"),
                       ("normal", "dist"), ("hard_score", "score"),
                       ("soft_score", "score"), ("functional_score", "score")]:
    R.declare_kind(_kind, _parent)

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def _numeric(value) -> float:
    if isinstance(value, (bool, np.bool_)):
        return float(value)
    if isinstance(value, (int, float, np.integer, np.floating)):
        return float(value)
    raise TypeError(value)


def check_parents(sf: SFunc, parent_values: Sequence[Any]) -> None:
    if len(parent_values) != sf.arity:
        raise InferenceError(
            f"{sf.kind} expects {sf.arity} parent values, got {len(parent_values)}")


# ---------------------------------------------------------------------------
# distributions


class Flip(SFunc):
    kind = "flip"
    signature = SFuncSignature((), "bool", "real")

    def __init__(self, prob_true: float):
        if not 0.0 <= prob_true <= 1.0:
            raise ValueError(f"Flip probability {prob_true} outside [0, 1]")
        self.prob_true = float(prob_true)

    def __repr__(self):
        return f"Flip({self.prob_true})"


class Cat(SFunc):
    kind = "cat"
    signature = SFuncSignature((), "finite", "simplex")

    def __init__(self, values: Sequence[Any], probabilities: Sequence[float]):
        values = list(values)
        probs = np.asarray(probabilities, dtype=float)
        if len(values) != len(probs):
            raise ValueError("Cat values and probabilities differ in length")
        if len(set(values)) != len(values):
            raise ValueError("Cat values must be distinct")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"Cat probabilities must be nonnegative and sum to 1, got {probs.sum()}")
        self.values = values
        self.probabilities = probs
        self._index = {v: i for i, v in enumerate(values)}

    def prob(self, value) -> float:
        i = self._index.get(value)
        return 0.0 if i is None else float(self.probabilities[i])

    def __repr__(self):
        return f"Cat({self.values}, {self.probabilities.round(6).tolist()})"


class Constant(SFunc):
    kind = "constant"
    signature = SFuncSignature((), "any", "none")

    def __init__(self, value):
        self.value = value

    def __repr__(self):
        return f"Constant({self.value!r})"


class Normal(SFunc):
    """Gaussian with fixed variance.

    With ``conditional=True`` the SFunc takes one real parent which shifts the
    mean: ``x ~ Normal(parent + mean, variance)``.
    """

    kind = "normal"
    continuous = True

    def __init__(self, mean: float = 0.0, variance: float = 1.0, conditional: bool = False):
        if not variance > 0:
            raise ValueError("Normal variance must be positive")
        self.mean = float(mean)
        self.variance = float(variance)
        self.conditional = conditional
        self.signature = SFuncSignature(("real",) if conditional else (), "real", "real")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def location(self, parent_values=()) -> float:
        return self.mean + (float(parent_values[0]) if self.conditional else 0.0)

    def __repr__(self):
        tag = ", conditional=True" if self.conditional else ""
        return f"Normal({self.mean}, {self.variance}{tag})"


# ---------------------------------------------------------------------------
# scores


class Score(SFunc):
    def __init__(self, arity: int = 1):
        self.signature = SFuncSignature(("any",) * arity, "none", "none")


class HardScore(Score):
    kind = "hard_score"

    def __init__(self, allowed):
        super().__init__()
        self.allowed = allowed

    def __repr__(self):
        return f"HardScore({self.allowed!r})"


class SoftScore(Score):
    kind = "soft_score"

    def __init__(self, entries: Mapping[Any, float] | Sequence[Any], weights: Sequence[float] | None = None):
        super().__init__()
        if weights is not None:
            entries = dict(zip(entries, (float(w) for w in weights)))
        self.entries = {k: float(v) for k, v in dict(entries).items()}
        vals = list(self.entries.values())
        if any(not math.isfinite(w) or w < 0 for w in vals):
            raise ValueError("SoftScore weights must be finite and nonnegative")
        if vals and not any(w > 0 for w in vals):
            raise ValueError("SoftScore needs at least one positive weight")

    def __repr__(self):
        return f"SoftScore({self.entries})"


class FunctionalScore(Score):
    kind = "functional_score"

    def __init__(self, fn: Callable[..., float], arity: int = 1):
        super().__init__(arity)
        self.fn = fn

    def __repr__(self):
        return f"FunctionalScore({getattr(self.fn, '__name__', 'fn')})"


def ones_score() -> FunctionalScore:
    return FunctionalScore(lambda x: 1.0)


# ---------------------------------------------------------------------------
# sample / sample_n


@R.impl("sample", "flip", "sample.flip")
def _sample_flip(eng, sf: Flip, parent_values, rng):
    check_parents(sf, parent_values)
    return bool(rng.random() < sf.prob_true)


@R.impl("sample", "cat", "sample.cat")
def _sample_cat(eng, sf: Cat, parent_values, rng):
    check_parents(sf, parent_values)
    u = rng.random()
    i = int(np.searchsorted(np.cumsum(sf.probabilities), u, side="right"))
    return sf.values[min(i, len(sf.values) - 1)]


@R.impl("sample", "constant", "sample.constant")
def _sample_constant(eng, sf: Constant, parent_values, rng):
    check_parents(sf, parent_values)
    return sf.value


@R.impl("sample", "normal", "sample.normal")
def _sample_normal(eng, sf: Normal, parent_values, rng):
    check_parents(sf, parent_values)
    return float(sf.location(parent_values) + sf.std * rng.standard_normal())


@R.impl("sample_n", "flip", "sample_n.flip")
def _sample_n_flip(eng, sf: Flip, parent_values, n, rng):
    _check_n(n)
    check_parents(sf, parent_values)
    return [bool(b) for b in rng.random(n) < sf.prob_true]


@R.impl("sample_n", "normal", "sample_n.normal")
def _sample_n_normal(eng, sf: Normal, parent_values, n, rng):
    _check_n(n)
    check_parents(sf, parent_values)
    return list(sf.location(parent_values) + sf.std * rng.standard_normal(n))


@R.impl("sample_n", "cat", "sample_n.cat")
def _sample_n_cat(eng, sf: Cat, parent_values, n, rng):
    _check_n(n)
    check_parents(sf, parent_values)
    idx = np.searchsorted(np.cumsum(sf.probabilities), rng.random(n), side="right")
    idx = np.minimum(idx, len(sf.values) - 1)
    return [sf.values[i] for i in idx]


def _check_n(n):
    if int(n) != n or n < 1:
        raise InferenceError(f"sample_n needs a positive integer count, got {n!r}")


# ---------------------------------------------------------------------------
# densities


@R.impl("logcpdf", "flip", "logcpdf.flip")
def _logcpdf_flip(eng, sf: Flip, parent_values, value):
    if value is True or value is np.True_:
        p = sf.prob_true
    elif value is False or value is np.False_:
        p = 1.0 - sf.prob_true
    else:
        return -math.inf
    return math.log(p) if p > 0 else -math.inf


@R.impl("logcpdf", "cat", "logcpdf.cat")
def _logcpdf_cat(eng, sf: Cat, parent_values, value):
    try:
        p = sf.prob(value)
    except TypeError:
        return -math.inf
    return math.log(p) if p > 0 else -math.inf


@R.impl("logcpdf", "constant", "logcpdf.constant")
def _logcpdf_constant(eng, sf: Constant, parent_values, value):
    return 0.0 if value == sf.value else -math.inf


@R.impl("logcpdf", "normal", "logcpdf.normal")
def _logcpdf_normal(eng, sf: Normal, parent_values, value):
    z = (float(value) - sf.location(parent_values)) / sf.std
    return -0.5 * z * z - LOG_SQRT_2PI - 0.5 * math.log(sf.variance)


def normal_cell_masses(mu: float, sd: float, points: Sequence[float]) -> np.ndarray:
    """Probability of the cell around each point, cells split at midpoints.

    The outermost cells extend to infinity, so the masses sum to one.
    """
    pts = np.asarray(points, dtype=float)
    order = np.argsort(pts, kind="stable")
    srt = pts[order]
    mids = (srt[1:] + srt[:-1]) / 2
    nd = NormalDist(mu, sd)
    cdf = np.array([0.0] + [nd.cdf(m) for m in mids] + [1.0])
    out = np.empty_like(pts)
    out[order] = np.diff(cdf)
    return out


@R.impl("cpdf", "flip", "cpdf.flip")
def _cpdf_flip(eng, sf: Flip, parent_values, value):
    if value is True or value is np.True_:
        return sf.prob_true
    if value is False or value is np.False_:
        return 1.0 - sf.prob_true
    return 0.0


@R.impl("cpdf", "cat", "cpdf.cat")
def _cpdf_cat(eng, sf: Cat, parent_values, value):
    try:
        return sf.prob(value)
    except TypeError:
        return 0.0


@R.impl("range_mass", "flip", "range_mass.flip")
def _range_mass_flip(eng, sf: Flip, parent_values, range_):
    eng.tally("range_mass", len(range_))
    return np.array([_cpdf_flip(eng, sf, parent_values, x) for x in range_])


@R.impl("range_mass", "cat", "range_mass.cat")
def _range_mass_cat(eng, sf: Cat, parent_values, range_):
    eng.tally("range_mass", len(range_))
    return np.array([_cpdf_cat(eng, sf, parent_values, x) for x in range_])


@R.impl("range_mass", "normal", "range_mass.normal")
def _range_mass_normal(eng, sf: Normal, parent_values, range_):
    mu = sf.location(parent_values)
    if isinstance(range_, Observed):
        return np.array([math.exp(_logcpdf_normal(eng, sf, parent_values, x)) for x in range_])
    eng.tally("range_mass", len(range_))
    return normal_cell_masses(mu, sf.std, range_)


# ---------------------------------------------------------------------------
# moments


@R.impl("expectation", "flip", "expectation.flip")
def _exp_flip(eng, sf, parent_values):
    return sf.prob_true


@R.impl("variance", "flip", "variance.flip")
def _var_flip(eng, sf, parent_values):
    return sf.prob_true * (1 - sf.prob_true)


def _cat_numeric(sf: Cat) -> np.ndarray:
    try:
        return np.array([_numeric(v) for v in sf.values])
    except TypeError:
        raise UnsupportedOperation("expectation", sf.kind, "non-numeric values") from None


@R.impl("expectation", "cat", "expectation.cat")
def _exp_cat(eng, sf: Cat, parent_values):
    return float(_cat_numeric(sf) @ sf.probabilities)


@R.impl("variance", "cat", "variance.cat")
def _var_cat(eng, sf: Cat, parent_values):
    x = _cat_numeric(sf)
    m = x @ sf.probabilities
    return float(((x - m) ** 2) @ sf.probabilities)


@R.impl("expectation", "constant", "expectation.constant")
def _exp_const(eng, sf: Constant, parent_values):
    try:
        return _numeric(sf.value)
    except TypeError:
        raise UnsupportedOperation("expectation", sf.kind, "non-numeric value") from None


@R.impl("variance", "constant", "variance.constant")
def _var_const(eng, sf: Constant, parent_values):
    _exp_const(eng, sf, parent_values)
    return 0.0


@R.impl("expectation", "normal", "expectation.normal")
def _exp_normal(eng, sf: Normal, parent_values):
    return sf.location(parent_values)


@R.impl("variance", "normal", "variance.normal")
def _var_normal(eng, sf: Normal, parent_values):
    return sf.variance


# ---------------------------------------------------------------------------
# support


def merge_support(prior: Sequence[Any], new: Sequence[Any]) -> list:
    seen = set(prior)
    out = list(prior)
    for v in new:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def normal_grid(mu: float, sd: float, k: int) -> list[float]:
    """The k quantiles at probabilities (i - 0.5) / k."""
    nd = NormalDist(mu, sd)
    return [nd.inv_cdf((i - 0.5) / k) for i in range(1, k + 1)]


def refine_normal_grid(mu: float, sd: float, k: int, prior: Sequence[Any] = ()) -> list:
    """``prior`` extended to ``k`` points (never shrunk).

    Without a prior this is :func:`normal_grid`.  Otherwise new points go at
    the probability-level midpoint of the widest gap between existing
    points, so the grid refines where it is coarsest.
    """
    if not prior:
        return normal_grid(mu, sd, k)
    out = merge_support(prior, [])
    if len(out) >= k:
        return out
    nd = NormalDist(mu, sd)
    levels = sorted({nd.cdf(float(x)) for x in out} | {0.0, 1.0})
    gaps = [(lo - hi, lo, hi) for lo, hi in zip(levels, levels[1:]) if hi > lo]
    heapq.heapify(gaps)
    seen = set(out)
    while len(out) < k and gaps:
        _, lo, hi = heapq.heappop(gaps)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            continue
        x = nd.inv_cdf(mid)
        if x not in seen:
            seen.add(x)
            out.append(x)
        heapq.heappush(gaps, (lo - mid, lo, mid))
        heapq.heappush(gaps, (mid - hi, mid, hi))
    return out


@R.impl("support", "flip", "support.flip")
def _support_flip(eng, sf, parent_ranges, target_size, prior_support):
    return merge_support(prior_support, [False, True])


@R.impl("support", "cat", "support.cat")
def _support_cat(eng, sf: Cat, parent_ranges, target_size, prior_support):
    return merge_support(prior_support, sf.values)


@R.impl("support", "constant", "support.constant")
def _support_constant(eng, sf: Constant, parent_ranges, target_size, prior_support):
    return merge_support(prior_support, [sf.value])


@R.impl("support", "normal", "support.normal")
def _support_normal(eng, sf: Normal, parent_ranges, target_size, prior_support):
    mu, var = sf.mean, sf.variance
    if sf.conditional:
        shifts = np.array([float(u) for u in parent_ranges[0]])
        mu += shifts.mean()
        var += shifts.var()
    return refine_normal_grid(mu, math.sqrt(var), int(target_size), prior_support)


for _name in ("support.flip", "support.cat", "support.constant"):
    R.perf(_name, "support_quality", "complete")
R.perf("support.normal", "support_quality", "incremental")


# ---------------------------------------------------------------------------
# compute_pi closed form


def _normal_closed_form_applies(sf: Normal, range_, parent_ranges, incoming_pis):
    return not sf.conditional or isinstance(incoming_pis[0], Normal) and not incoming_pis[0].conditional


@R.impl("compute_pi", "normal", "compute_pi.normal_closed_form", guard=_normal_closed_form_applies)
def _compute_pi_normal(eng, sf: Normal, range_, parent_ranges, incoming_pis):
    if not sf.conditional:
        return sf
    ps = incoming_pis[0]
    mu = eng.expectation(ps, ()) + sf.mean
    var = eng.variance(ps, ()) + sf.variance
    eng.tally("compute_pi", 1)
    return Normal(mu, var)


R.perf("compute_pi.normal_closed_form", "runtime", 1)
R.perf("compute_pi.normal_closed_form", "is_exact", True)


# ---------------------------------------------------------------------------
# scores


@R.impl("get_score", "hard_score", "get_score.hard")
def _score_hard(eng, sf: HardScore, value):
    return 1.0 if value == sf.allowed else 0.0


@R.impl("get_score", "soft_score", "get_score.soft")
def _score_soft(eng, sf: SoftScore, value):
    try:
        return sf.entries.get(value, 0.0)
    except TypeError:
        return 0.0


@R.impl("get_score", "functional_score", "get_score.functional")
def _score_functional(eng, sf: FunctionalScore, value):
    try:
        out = sf.fn(*value) if sf.arity > 1 else sf.fn(value)
    except Exception as exc:  # noqa: BLE001 - user callable
        raise ScoringError(value, exc) from exc
    out = float(out)
    if out < 0 or math.isnan(out):
        raise ScoringError(value, ValueError(f"negative or NaN score {out}"))
    return out


def score_points(eng, score: Score, range_: Sequence[Any]) -> list[tuple[Any, float]]:
    """Explicit (value, weight) pairs of a score, evaluated on a range when
    the score has no explicit points of its own."""
    if isinstance(score, HardScore):
        return [(score.allowed, 1.0)]
    if isinstance(score, SoftScore):
        return [(k, w) for k, w in score.entries.items() if w > 0]
    return [(x, eng.get_score(score, x)) for x in range_]


def score_vector(eng, score: Score | None, range_: Sequence[Any]) -> np.ndarray:
    if score is None:
        return np.ones(len(range_))
    return np.array([eng.get_score(score, x) for x in range_], dtype=float)


@R.impl("send_lambda", "score", "send_lambda.score", applies=lambda reg, sf: sf.arity == 1)
def _send_lambda_score(eng, sf: Score, lam, range_, parent_ranges, incoming_pis, target):
    eng.tally("send_lambda", len(parent_ranges[target]))
    return SoftScore(parent_ranges[target], score_vector(eng, sf, parent_ranges[target]))


# ---------------------------------------------------------------------------
# beliefs


@R.impl("compute_bel", "dist", "compute_bel.cat_product", guard=lambda d, s: isinstance(d, Cat))
def _bel_exact(eng, dist: Cat, score):
    w = dist.probabilities * score_vector(eng, score, dist.values)
    return SoftScore(dist.values, w) if w.sum() > 0 else SoftScore(dist.values, np.ones(len(w)))


@R.impl("compute_bel", "dist", "compute_bel.eager", hyperparameters={"num_samples": ("int", 100)})
def _bel_eager(eng, dist, score, num_samples=100, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    acc: dict[Any, float] = {}
    for x in eng.sample_n(dist, (), int(num_samples), rng):
        acc[x] = acc.get(x, 0.0) + eng.get_score(score, x)
    if not any(w > 0 for w in acc.values()):
        raise DegenerateInput("every sampled value scored zero")
    return SoftScore(acc)


@R.impl("compute_bel", "dist", "compute_bel.lazy")
def _bel_lazy(eng, dist, score):
    def belief(x):
        return eng.cpdf(dist, (), x) * eng.get_score(score, x)

    return FunctionalScore(belief)


R.perf("compute_bel.cat_product", "is_lazy", False)
R.perf("compute_bel.eager", "is_lazy", False)
R.perf("compute_bel.lazy", "is_lazy", True)
R.perf("compute_bel.cat_product", "is_exact", True)
R.perf("compute_bel.eager", "is_exact", False)
R.perf("compute_bel.lazy", "is_exact", True)


# ---------------------------------------------------------------------------
# public wrappers


def _eng(engine):
    return default_engine() if engine is None else engine


def sample(sf, parent_values=(), rng=None, engine=None):
    rng = np.random.default_rng() if rng is None else rng
    return _eng(engine).sample(sf, tuple(parent_values), rng)


def sample_n(sf, parent_values=(), n=1, rng=None, engine=None):
    rng = np.random.default_rng() if rng is None else rng
    return _eng(engine).sample_n(sf, tuple(parent_values), n, rng)


def logcpdf(sf, parent_values, value, engine=None) -> float:
    return _eng(engine).logcpdf(sf, tuple(parent_values), value)


def cpdf(sf, parent_values, value, engine=None) -> float:
    return _eng(engine).cpdf(sf, tuple(parent_values), value)


def expectation(sf, parent_values=(), engine=None) -> float:
    return _eng(engine).expectation(sf, tuple(parent_values))


def variance(sf, parent_values=(), engine=None) -> float:
    return _eng(engine).variance(sf, tuple(parent_values))


def support(sf, parent_ranges=(), target_size=5, prior_support=(), engine=None) -> list:
    return _eng(engine).support(sf, list(parent_ranges), target_size, list(prior_support))


def get_score(score_sfunc, value, engine=None) -> float:
    return _eng(engine).get_score(score_sfunc, value)


def compute_bel(dist, score, engine=None):
    return _eng(engine).compute_bel(dist, score)


def belief_vector(eng, belief: Score, range_) -> np.ndarray:
    return normalize(score_vector(eng, belief, range_), "belief")
