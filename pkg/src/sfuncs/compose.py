"""Compositional SFuncs whose operations are derived from their components.

``Mixture`` and ``Extend`` give ``Separable`` for free; ``Conditional`` and
its table/parameter-generator descendants give ``DiscreteCPT``,
``LinearGaussian`` and ``CLG``; ``Det`` covers deterministic relationships.
"""

from __future__ import annotations

import itertools
import math
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .basic import (
    Cat,
    Normal,
    SoftScore,
    check_parents,
    merge_support,
    refine_normal_grid,
    score_points,
    score_vector,
)
from .core import REGISTRY as R
from .core import (
    DegenerateInput,
    InferenceError,
    Observed,
    SFunc,
    SFuncSignature,
    default_engine,
    min_quality,
    normalize,
)
from .enumeration import (
    compute_pi_enumerate,
    enumeration_size,
    expected_mass,
    parent_vectors,
    send_lambda_enumerate,
)

for _kind, _parent in [
    ("mixture", "cpd"), ("separable", "mixture"), ("extend", "cpd"),
    ("conditional", "cpd"), ("param_gen", "conditional"), ("table", "param_gen"),
    ("discrete_cpt", "table"), ("clg", "table"), ("linear_gaussian", "param_gen"),
    ("switch", "conditional"), ("if", "switch"),
    ("det_exact", "det"), ("det_interpolated", "det"), ("linear_det", "det"),
]:
    R.declare_kind(_kind, _parent)


def _components_support(op):
    return lambda reg, sf: all(reg.supports(op, c) for c in sf.components)


# ---------------------------------------------------------------------------
# Mixture / Extend / Separable


class Mixture(SFunc):
    kind = "mixture"

    def __init__(self, components: Sequence[SFunc], probabilities: Sequence[float]):
        components = list(components)
        probs = np.asarray(probabilities, dtype=float)
        if not components:
            raise ValueError("Mixture needs at least one component")
        if len(probs) != len(components):
            raise ValueError("one mixture probability per component")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture probabilities must sum to 1, got {probs.sum()}")
        sig = components[0].signature
        if any(c.arity != sig.arity for c in components):
            raise ValueError("mixture components must share one signature")
        self.components = components
        self.probabilities = probs
        self.signature = sig
        self.continuous = any(c.continuous for c in components)

    def active(self):
        return [(p, c) for p, c in zip(self.probabilities, self.components) if p > 0]


class Extend(SFunc):
    """Wrap a one-parent SFunc as a ``full_arity``-parent SFunc that ignores
    every parent except ``active_index`` (0-based)."""

    kind = "extend"

    def __init__(self, inner: SFunc, full_arity: int, active_index: int):
        if inner.arity != 1:
            raise ValueError("Extend needs a one-parent SFunc")
        if not 0 <= active_index < full_arity:
            raise ValueError(f"active_index {active_index} outside 0..{full_arity - 1}")
        self.inner = inner
        self.full_arity = full_arity
        self.active_index = active_index
        self.signature = SFuncSignature(("any",) * full_arity, inner.signature.output_kind)
        self.continuous = inner.continuous


class Separable(Mixture):
    kind = "separable"


def make_separable(component_cpds: Sequence[SFunc], weights: Sequence[float]) -> Separable:
    """P(x | u_1..u_n) = sum_i w_i P_i(x | u_i), as a mixture of extensions."""
    n = len(component_cpds)
    for i, c in enumerate(component_cpds):
        if c.arity != 1:
            raise ValueError(f"separable component {i} has {c.arity} parents, expected 1")
    return Separable([Extend(c, n, i) for i, c in enumerate(component_cpds)], weights)


@R.impl("sample", "mixture", "sample.mixture", applies=_components_support("sample"))
def _sample_mixture(eng, sf: Mixture, parent_values, rng):
    i = int(np.searchsorted(np.cumsum(sf.probabilities), rng.random(), side="right"))
    return eng.sample(sf.components[min(i, len(sf.components) - 1)], parent_values, rng)


@R.impl("logcpdf", "mixture", "logcpdf.mixture", applies=_components_support("logcpdf"))
def _logcpdf_mixture(eng, sf: Mixture, parent_values, value):
    terms = [math.log(p) + eng.logcpdf(c, parent_values, value) for p, c in sf.active()]
    m = max(terms)
    if m == -math.inf:
        return m
    return m + math.log(sum(math.exp(t - m) for t in terms))


@R.impl("range_mass", "mixture", "range_mass.mixture", applies=_components_support("range_mass"))
def _range_mass_mixture(eng, sf: Mixture, parent_values, range_):
    return sum(p * eng.range_mass(c, parent_values, range_) for p, c in sf.active())


@R.impl("expectation", "mixture", "expectation.mixture", applies=_components_support("expectation"))
def _exp_mixture(eng, sf: Mixture, parent_values):
    return sum(p * eng.expectation(c, parent_values) for p, c in sf.active())


@R.impl("variance", "mixture", "variance.mixture",
        applies=lambda reg, sf: all(reg.supports("variance", c) and reg.supports("expectation", c)
                                    for c in sf.components))
def _var_mixture(eng, sf: Mixture, parent_values):
    means = [(p, eng.expectation(c, parent_values), eng.variance(c, parent_values)) for p, c in sf.active()]
    mu = sum(p * m for p, m, _ in means)
    return sum(p * (v + (m - mu) ** 2) for p, m, v in means)


def component_target(prior_size: int, target_size: int, k: int) -> int:
    """Per-component target so that k components together add about
    ``target_size - prior_size`` new points."""
    extra = max(int(target_size) - prior_size, 0)
    return prior_size + -(-extra // max(k, 1))


@R.impl("support", "mixture", "support.mixture", applies=_components_support("support"))
def _support_mixture(eng, sf: Mixture, parent_ranges, target_size, prior_support):
    share = component_target(len(prior_support), target_size, len(sf.components))
    out = list(prior_support)
    for c in sf.components:
        out = merge_support(out, eng.support(c, parent_ranges, share, list(prior_support)))
    return out


@R.impl("compute_pi", "mixture", "compute_pi.mixture", applies=_components_support("compute_pi"))
def _compute_pi_mixture(eng, sf: Mixture, range_, parent_ranges, incoming_pis):
    scaled = []
    for p, c in sf.active():
        cp = eng.compute_pi(c, range_, parent_ranges, incoming_pis)
        scaled.append(p * normalize(eng.range_mass(cp, (), range_)))
    eng.tally("compute_pi", len(range_) * len(scaled))
    return Cat(range_, normalize(sum(scaled), "mixture compute_pi"))


@R.impl("send_lambda", "mixture", "send_lambda.mixture", applies=_components_support("send_lambda"))
def _send_lambda_mixture(eng, sf: Mixture, lam, range_, parent_ranges, incoming_pis, target):
    target_range = parent_ranges[target]
    out = np.zeros(len(target_range))
    for p, c in sf.active():
        msg = eng.send_lambda(c, lam, range_, parent_ranges, incoming_pis, target)
        out += p * score_vector(eng, msg, target_range)
    eng.tally("send_lambda", len(target_range) * len(sf.components))
    return SoftScore(target_range, out)


def _component_perf(measure, op):
    def evaluate(sf, args):
        vals = []
        for _, c in sf.active():
            rec, _hp = R.select_impl(_default_policy(), op, c, args)
            vals.append(R.query_perf(rec.impl_name, measure, c, args))
        return vals

    return evaluate


def _default_policy():
    from .core import DEFAULT_POLICY
    return DEFAULT_POLICY


R.perf("compute_pi.mixture", "runtime")(
    lambda sf, args: sum(_component_perf("runtime", "compute_pi")(sf, args)))
R.perf("support.mixture", "support_quality")(
    lambda sf, args: min_quality(_component_perf("support_quality", "support")(sf, args)))
R.perf("compute_pi.mixture", "is_exact", True)


def _inner_args(sf: Extend, parent_ranges, incoming_pis):
    a = sf.active_index
    return [parent_ranges[a]], [incoming_pis[a]]


@R.impl("sample", "extend", "sample.extend")
def _sample_extend(eng, sf: Extend, parent_values, rng):
    return eng.sample(sf.inner, (parent_values[sf.active_index],), rng)


@R.impl("logcpdf", "extend", "logcpdf.extend")
def _logcpdf_extend(eng, sf: Extend, parent_values, value):
    return eng.logcpdf(sf.inner, (parent_values[sf.active_index],), value)


@R.impl("range_mass", "extend", "range_mass.extend")
def _range_mass_extend(eng, sf: Extend, parent_values, range_):
    return eng.range_mass(sf.inner, (parent_values[sf.active_index],), range_)


@R.impl("expectation", "extend", "expectation.extend")
def _exp_extend(eng, sf: Extend, parent_values):
    return eng.expectation(sf.inner, (parent_values[sf.active_index],))


@R.impl("support", "extend", "support.extend")
def _support_extend(eng, sf: Extend, parent_ranges, target_size, prior_support):
    return eng.support(sf.inner, [parent_ranges[sf.active_index]], target_size, prior_support)


@R.impl("compute_pi", "extend", "compute_pi.extend")
def _compute_pi_extend(eng, sf: Extend, range_, parent_ranges, incoming_pis):
    prs, pis = _inner_args(sf, parent_ranges, incoming_pis)
    return eng.compute_pi(sf.inner, range_, prs, pis)


@R.impl("send_lambda", "extend", "send_lambda.extend")
def _send_lambda_extend(eng, sf: Extend, lam, range_, parent_ranges, incoming_pis, target):
    prs, pis = _inner_args(sf, parent_ranges, incoming_pis)
    if target == sf.active_index:
        return eng.send_lambda(sf.inner, lam, range_, prs, [None], 0)
    # an ignored parent gets a flat message; its level is the expected lambda
    # so that sums over mixture components stay correctly weighted
    level = float(expected_mass(eng, sf.inner, range_, prs, pis) @ score_vector(eng, lam, range_))
    return SoftScore(parent_ranges[target], np.full(len(parent_ranges[target]), level))


def _inner_perf(measure, op):
    def evaluate(sf, args):
        if args:
            args = (args[0], [args[1][sf.active_index]], *args[2:])
        rec, _ = R.select_impl(_default_policy(), op, sf.inner, args)
        return R.query_perf(rec.impl_name, measure, sf.inner, args)

    return evaluate


R.perf("compute_pi.extend", "runtime")(_inner_perf("runtime", "compute_pi"))
R.perf("support.extend", "support_quality")(
    lambda sf, args: R.query_perf(
        R.select_impl(_default_policy(), "support", sf.inner)[0].impl_name,
        "support_quality", sf.inner, ()))
R.perf("compute_pi.extend", "is_exact", True)


# ---------------------------------------------------------------------------
# Conditional family


class Conditional(SFunc):
    """Selector parents (first ``i_arity``) choose an SFunc over the remaining
    ``j_arity`` parents via ``generator``."""

    kind = "conditional"

    def __init__(self, i_arity: int, j_arity: int, generator: Callable[[tuple], SFunc] | None = None,
                 output_kind: str = "any"):
        self.i_arity = i_arity
        self.j_arity = j_arity
        self.generator = generator
        self.signature = SFuncSignature(("any",) * (i_arity + j_arity), output_kind)
        self._cache: dict[tuple, SFunc] = {}

    def split(self, values: Sequence[Any]):
        values = tuple(values)
        return values[:self.i_arity], values[self.i_arity:]

    def gen_sf(self, i_values: Sequence[Any]) -> SFunc:
        key = tuple(i_values)
        try:
            return self._cache[key]
        except KeyError:
            pass
        except TypeError:
            return self._generate(key)
        sfg = self._cache[key] = self._generate(key)
        return sfg

    def _generate(self, i_values: tuple) -> SFunc:
        sfg = self.generator(i_values)
        if sfg.arity != self.j_arity:
            raise InferenceError(f"generated SFunc has {sfg.arity} inputs, expected {self.j_arity}")
        return sfg


def gen_sf(conditional: Conditional, i_values) -> SFunc:
    return conditional.gen_sf(i_values)


class ParamGen(Conditional):
    """A Conditional whose selectors set the parameters of one embedded SFunc
    constructor."""

    kind = "param_gen"

    def __init__(self, i_arity, j_arity, embedded: Callable[..., SFunc], output_kind="any"):
        super().__init__(i_arity, j_arity, None, output_kind)
        self.embedded = embedded

    def gen_params(self, i_values: tuple):
        raise NotImplementedError

    def _generate(self, i_values):
        params = self.gen_params(i_values)
        sfg = self.embedded(*params)
        if sfg.arity != self.j_arity:
            raise InferenceError(f"generated SFunc has {sfg.arity} inputs, expected {self.j_arity}")
        return sfg


class Table(ParamGen):
    kind = "table"

    def __init__(self, i_value_spaces: Sequence[Sequence[Any]], param_table: Mapping[tuple, tuple],
                 embedded, j_arity: int = 0, output_kind="any"):
        super().__init__(len(i_value_spaces), j_arity, embedded, output_kind)
        self.i_value_spaces = [list(s) for s in i_value_spaces]
        self.param_table = {tuple(k): tuple(v) for k, v in param_table.items()}
        for key in itertools.product(*self.i_value_spaces):
            if key not in self.param_table:
                raise ValueError(f"parameter table has no entry for selector values {key}")

    def gen_params(self, i_values):
        try:
            return self.param_table[tuple(i_values)]
        except (KeyError, TypeError):
            raise InferenceError(f"selector values {tuple(i_values)} outside the table domain") from None


class DiscreteCPT(Table):
    """Conditional probability table: each parent tuple selects a Cat row."""

    kind = "discrete_cpt"

    def __init__(self, parent_ranges: Sequence[Sequence[Any]], values: Sequence[Any],
                 rows: Mapping[tuple, Sequence[float]] | Sequence[Sequence[float]]):
        values = list(values)
        parent_ranges = [list(r) for r in parent_ranges]
        if not isinstance(rows, Mapping):
            keys = list(itertools.product(*parent_ranges))
            rows = list(rows)
            if len(rows) != len(keys):
                raise ValueError(f"expected {len(keys)} rows, got {len(rows)}")
            rows = dict(zip(keys, rows))
        for key, row in rows.items():
            total = float(np.sum(row))
            if abs(total - 1.0) > 1e-9 or np.any(np.asarray(row) < 0):
                raise ValueError(f"CPT row for parents {tuple(key)} sums to {total:g}, expected 1")
            if len(row) != len(values):
                raise ValueError(f"CPT row for parents {tuple(key)} has {len(row)} entries, expected {len(values)}")
        self.values = values
        super().__init__(parent_ranges, {k: (tuple(r),) for k, r in rows.items()},
                         lambda probs: Cat(values, probs), output_kind="finite")

    def row(self, parent_values) -> np.ndarray:
        return np.asarray(self.gen_params(parent_values)[0], dtype=float)


class LinearGaussian(ParamGen):
    """x ~ Normal(intercept + coefficients . parents, noise_variance)."""

    kind = "linear_gaussian"
    continuous = True

    def __init__(self, coefficients: Sequence[float], intercept: float, noise_variance: float):
        if not noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.intercept = float(intercept)
        self.noise_variance = float(noise_variance)
        super().__init__(len(self.coefficients), 0, Normal, output_kind="real")

    def gen_params(self, i_values):
        mean = self.intercept + float(self.coefficients @ np.asarray(i_values, dtype=float))
        return mean, self.noise_variance

    def gen_sf(self, i_values):
        return self._generate(tuple(i_values))


class CLG(Table):
    """Discrete selectors index linear-Gaussian relations over continuous
    parents.  Table entries are ``(coefficients, intercept, variance)``."""

    kind = "clg"
    continuous = True

    def __init__(self, selector_ranges: Sequence[Sequence[Any]], entries: Mapping[tuple, tuple] | Sequence[tuple],
                 n_continuous: int):
        selector_ranges = [list(r) for r in selector_ranges]
        if not isinstance(entries, Mapping):
            entries = dict(zip(itertools.product(*selector_ranges), entries))
        for key, (coefs, _, var) in entries.items():
            if len(coefs) != n_continuous:
                raise ValueError(f"CLG entry {key} has {len(coefs)} coefficients, expected {n_continuous}")
            if not var > 0:
                raise ValueError(f"CLG entry {key} has non-positive variance")
        super().__init__(selector_ranges, entries, LinearGaussian, j_arity=n_continuous, output_kind="real")


class Switch(Conditional):
    """The first parent (an index into ``choices``) picks which SFunc relates
    the remaining parents to the output."""

    kind = "switch"

    def __init__(self, choices: Sequence[SFunc]):
        choices = list(choices)
        if any(c.arity != choices[0].arity for c in choices):
            raise ValueError("switch choices must share one signature")
        super().__init__(1, choices[0].arity, None, choices[0].signature.output_kind)
        self.choices = choices
        self.continuous = any(c.continuous for c in choices)

    def selector_values(self) -> list:
        return list(range(len(self.choices)))

    def _generate(self, i_values):
        (s,) = i_values
        return self.choices[self.selector_values().index(s)]


class If(Switch):
    kind = "if"

    def __init__(self, then: SFunc, otherwise: SFunc):
        super().__init__([then, otherwise])

    def selector_values(self):
        return [True, False]


def _gen_supports(op):
    def check(reg, sf):
        if isinstance(sf, Switch):
            return all(reg.supports(op, c) for c in sf.choices)
        return True

    return check


@R.impl("sample", "conditional", "sample.conditional", applies=_gen_supports("sample"))
def _sample_conditional(eng, sf: Conditional, parent_values, rng):
    check_parents(sf, parent_values)
    ivals, jvals = sf.split(parent_values)
    return eng.sample(sf.gen_sf(ivals), jvals, rng)


@R.impl("sample_n", "conditional", "sample_n.conditional")
def _sample_n_conditional(eng, sf: Conditional, parent_values, n, rng):
    check_parents(sf, parent_values)
    ivals, jvals = sf.split(parent_values)
    return eng.sample_n(sf.gen_sf(ivals), jvals, n, rng)


@R.impl("logcpdf", "conditional", "logcpdf.conditional", applies=_gen_supports("logcpdf"))
def _logcpdf_conditional(eng, sf: Conditional, parent_values, value):
    ivals, jvals = sf.split(parent_values)
    return eng.logcpdf(sf.gen_sf(ivals), jvals, value)


@R.impl("range_mass", "conditional", "range_mass.conditional", applies=_gen_supports("range_mass"))
def _range_mass_conditional(eng, sf: Conditional, parent_values, range_):
    ivals, jvals = sf.split(parent_values)
    return eng.range_mass(sf.gen_sf(ivals), jvals, range_)


@R.impl("expectation", "conditional", "expectation.conditional", applies=_gen_supports("expectation"))
def _exp_conditional(eng, sf: Conditional, parent_values):
    ivals, jvals = sf.split(parent_values)
    return eng.expectation(sf.gen_sf(ivals), jvals)


@R.impl("variance", "conditional", "variance.conditional", applies=_gen_supports("variance"))
def _var_conditional(eng, sf: Conditional, parent_values):
    ivals, jvals = sf.split(parent_values)
    return eng.variance(sf.gen_sf(ivals), jvals)


@R.impl("support", "linear_gaussian", "support.linear_gaussian")
def _support_lg(eng, sf: LinearGaussian, parent_ranges, target_size, prior_support):
    mean, var = sf.intercept, sf.noise_variance
    for c, pr in zip(sf.coefficients, parent_ranges):
        vals = np.asarray(pr, dtype=float)
        mean += c * vals.mean()
        var += c * c * vals.var()
    return refine_normal_grid(mean, math.sqrt(var), int(target_size), prior_support)


R.perf("support.linear_gaussian", "support_quality", "incremental")


@R.impl("support", "conditional", "support.conditional", applies=_gen_supports("support"))
def _support_conditional(eng, sf: Conditional, parent_ranges, target_size, prior_support):
    iranges, jranges = sf.split(parent_ranges)
    gens = [sf.gen_sf(ivals) for ivals in itertools.product(*iranges)]
    share = component_target(len(prior_support), target_size, len(gens))
    out = list(prior_support)
    for g in gens:
        out = merge_support(out, eng.support(g, list(jranges), share, list(prior_support)))
    return out


@R.perf("support.conditional", "support_quality")
def _support_quality_conditional(sf, args):
    if isinstance(sf, Table):
        gens = [sf.gen_sf(k) for k in itertools.product(*sf.i_value_spaces)]
    elif isinstance(sf, Switch):
        gens = sf.choices
    elif args:
        gens = [sf.gen_sf(k) for k in itertools.product(*args[0][:sf.i_arity])]
    else:
        return "best_effort"
    quals = []
    for g in gens:
        rec, _ = R.select_impl(_default_policy(), "support", g)
        quals.append(R.query_perf(rec.impl_name, "support_quality", g, ()))
    return min_quality(quals)


def _all_normal(sf, range_, parent_ranges, incoming_pis):
    return all(isinstance(p, Normal) and not p.conditional for p in incoming_pis)


@R.impl("compute_pi", "linear_gaussian", "compute_pi.linear_gaussian_closed_form", guard=_all_normal)
def _compute_pi_lg(eng, sf: LinearGaussian, range_, parent_ranges, incoming_pis):
    mean, var = sf.intercept, sf.noise_variance
    for c, p in zip(sf.coefficients, incoming_pis):
        mean += c * eng.expectation(p, ())
        var += c * c * eng.variance(p, ())
    eng.tally("compute_pi", 1)
    return Normal(mean, var)


R.perf("compute_pi.linear_gaussian_closed_form", "runtime", 1)
R.perf("compute_pi.linear_gaussian_closed_form", "is_exact", True)


@R.impl("compute_pi", "conditional", "compute_pi.conditional", applies=_gen_supports("compute_pi"))
def _compute_pi_conditional(eng, sf: Conditional, range_, parent_ranges, incoming_pis):
    iranges, jranges = sf.split(parent_ranges)
    ipis, jpis = sf.split(incoming_pis)
    ivecs = parent_vectors(eng, iranges, ipis)
    out = np.zeros(len(range_))
    for idx in itertools.product(*(range(len(r)) for r in iranges)):
        p_i = 1.0
        for k, i in enumerate(idx):
            p_i *= ivecs[k][i]
        eng.tally("compute_pi", len(idx))
        if p_i == 0.0:
            continue
        ivals = tuple(iranges[k][i] for k, i in enumerate(idx))
        p_j = eng.compute_pi(sf.gen_sf(ivals), range_, list(jranges), list(jpis))
        out += p_i * normalize(eng.range_mass(p_j, (), range_))
    return Cat(range_, normalize(out, f"compute_pi output of {sf.kind}"))


@R.perf("compute_pi.conditional", "runtime")
def _runtime_conditional(sf, args):
    range_, parent_ranges = args[0], args[1]
    iranges, jranges = sf.split(parent_ranges)
    total = 0
    for ivals in itertools.product(*iranges):
        g = sf.gen_sf(ivals)
        sub = (range_, list(jranges), [None] * len(jranges))
        rec, _ = R.select_impl(_default_policy(), "compute_pi", g)
        total += len(ivals) + R.query_perf(rec.impl_name, "runtime", g, sub)
    return total


R.perf("compute_pi.conditional", "is_exact", True)


@R.impl("send_lambda", "conditional", "send_lambda.conditional",
        applies=lambda reg, sf: _gen_supports("send_lambda")(reg, sf) and _gen_supports("range_mass")(reg, sf))
def _send_lambda_conditional(eng, sf: Conditional, lam, range_, parent_ranges, incoming_pis, target):
    iranges, jranges = sf.split(parent_ranges)
    ipis, jpis = sf.split(incoming_pis)
    ni = sf.i_arity
    lam_vec = score_vector(eng, lam, range_)
    ivecs = parent_vectors(eng, iranges, ipis, skip=target if target < ni else None)
    out = np.zeros(len(parent_ranges[target]))
    for idx in itertools.product(*(range(len(r)) for r in iranges)):
        p_i = 1.0
        for k, i in enumerate(idx):
            if k != target:
                p_i *= ivecs[k][i]
        if p_i == 0.0:
            continue
        sfg = sf.gen_sf(tuple(iranges[k][i] for k, i in enumerate(idx)))
        if target < ni:
            # selector parent: expected lambda under the selected SFunc's prior
            mass = expected_mass(eng, sfg, range_, list(jranges), list(jpis))
            out[idx[target]] += p_i * float(mass @ lam_vec)
        else:
            msg = eng.send_lambda(sfg, lam, range_, list(jranges), list(jpis), target - ni)
            out += p_i * score_vector(eng, msg, parent_ranges[target])
    eng.tally("send_lambda", len(out) * max(1, int(np.prod([len(r) for r in iranges]))))
    if not out.sum() > 0:
        raise DegenerateInput(f"lambda message from {sf.kind} has no positive mass")
    return SoftScore(parent_ranges[target], out)


R.perf("send_lambda.conditional", "is_exact", True)


# ---------------------------------------------------------------------------
# Det


class Det(SFunc):
    """Deterministic function of the parents.

    ``lambda_mode`` selects what evidential (send_lambda) support the instance
    advertises: ``None`` (none), ``"exact"`` (enumerate parent values whose
    image matches) or ``"interpolate"`` (kernel-smoothed comparison of
    generated and observed outputs).
    """

    def __init__(self, fn: Callable[..., Any], arity: int, lambda_mode: str | None = None):
        if lambda_mode not in (None, "exact", "interpolate"):
            raise ValueError(f"unknown lambda_mode {lambda_mode!r}")
        self.fn = fn
        self.lambda_mode = lambda_mode
        self.signature = SFuncSignature(("any",) * arity, "any")

    @property
    def kind(self):
        return {None: "det", "exact": "det_exact", "interpolate": "det_interpolated"}[self.lambda_mode]

    def __call__(self, *parent_values):
        return self.fn(*parent_values)


class LinearDet(Det):
    """y = matrix @ x, one parent per column.  A single-row matrix yields a
    scalar output, otherwise a tuple."""

    def __init__(self, matrix, lambda_mode: str | None = None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        super().__init__(self._apply, self.matrix.shape[1], lambda_mode)

    def _apply(self, *xs):
        y = self.matrix @ np.asarray(xs, dtype=float)
        return float(y[0]) if len(y) == 1 else tuple(float(v) for v in y)

    @property
    def kind(self):
        return "linear_det" if self.lambda_mode is None else super().kind


@R.impl("sample", "det", "sample.det")
def _sample_det(eng, sf: Det, parent_values, rng):
    check_parents(sf, parent_values)
    return sf(*parent_values)


@R.impl("sample_n", "det", "sample_n.det")
def _sample_n_det(eng, sf: Det, parent_values, n, rng):
    check_parents(sf, parent_values)
    return [sf(*parent_values)] * int(n)


@R.impl("logcpdf", "det", "logcpdf.det")
def _logcpdf_det(eng, sf: Det, parent_values, value):
    return 0.0 if sf(*parent_values) == value else -math.inf


@R.impl("cpdf", "det", "cpdf.det")
def _cpdf_det(eng, sf: Det, parent_values, value):
    return 1.0 if sf(*parent_values) == value else 0.0


@R.impl("range_mass", "det", "range_mass.det")
def _range_mass_det(eng, sf: Det, parent_values, range_):
    y = sf(*parent_values)
    eng.tally("range_mass", len(range_))
    return np.array([1.0 if x == y else 0.0 for x in range_])


@R.impl("expectation", "det", "expectation.det")
def _exp_det(eng, sf: Det, parent_values):
    return float(sf(*parent_values))


@R.impl("variance", "det", "variance.det")
def _var_det(eng, sf: Det, parent_values):
    return 0.0


@R.impl("support", "det", "support.det")
def _support_det(eng, sf: Det, parent_ranges, target_size, prior_support):
    return merge_support(prior_support, [sf(*u) for u in itertools.product(*parent_ranges)])


R.perf("support.det", "support_quality", "complete")

R.impl("send_lambda", "det_exact", "send_lambda.det_exact")(send_lambda_enumerate)
R.perf("send_lambda.det_exact", "is_exact", True)


@R.impl("send_lambda", "det_interpolated", "send_lambda.det_interpolate")
def _send_lambda_interpolate(eng, sf: Det, lam, range_, parent_ranges, incoming_pis, target):
    """Score each candidate parent value by a Gaussian kernel between its
    generated output and the observed outputs.  Bandwidth is the median
    pairwise distance among generated outputs."""
    vecs = parent_vectors(eng, parent_ranges, incoming_pis, skip=target)
    points = score_points(eng, lam, range_)
    xs = np.array([float(x) for x, _ in points])
    ws = np.array([w for _, w in points])
    combos = list(itertools.product(*(range(len(pr)) for pr in parent_ranges)))
    gen = np.array([float(sf(*(parent_ranges[k][i] for k, i in enumerate(idx)))) for idx in combos])
    diffs = np.abs(gen[:, None] - gen[None, :])[np.triu_indices(len(gen), 1)]
    h = float(np.median(diffs)) if len(diffs) else 0.0
    h = h if h > 0 else 1.0
    out = np.zeros(len(parent_ranges[target]))
    for idx, g in zip(combos, gen):
        w = 1.0
        for k, i in enumerate(idx):
            if k != target:
                w *= vecs[k][i]
        out[idx[target]] += w * float(ws @ np.exp(-((g - xs) ** 2) / (2 * h * h)))
    eng.tally("send_lambda", len(combos) * len(xs))
    if not out.sum() > 0:
        raise DegenerateInput("interpolated lambda message has no positive mass")
    return SoftScore(parent_ranges[target], out)


R.perf("send_lambda.det_interpolate", "is_exact", False)


@R.impl("invert", "linear_det", "invert.full_matmul")
def _invert_full(eng, sf: LinearDet, y):
    m = sf.matrix
    if m.shape[0] != m.shape[1]:
        raise InferenceError("exact inversion needs a square matrix")
    eng.tally("invert", 1)
    try:
        return np.linalg.solve(m, np.atleast_1d(np.asarray(y, dtype=float)))
    except np.linalg.LinAlgError as exc:
        raise InferenceError(f"singular matrix: {exc}") from None


@R.impl("invert", "linear_det", "invert.iterative_matmul",
        hyperparameters={"num_iters": ("int", 5), "step_size": ("real", 1.0)})
def _invert_iterative(eng, sf: LinearDet, y, num_iters=5, step_size=1.0):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.zeros(sf.matrix.shape[1])
    for _ in range(int(num_iters)):
        res = np.atleast_1d(sf.matrix @ x) - y
        x = x - step_size * res
    eng.tally("invert", int(num_iters))
    return x


R.perf("invert.full_matmul", "is_exact", True)
R.perf("invert.iterative_matmul", "is_exact", False)
R.perf("invert.full_matmul", "runtime")(lambda sf, args: sf.matrix.shape[1] ** 3)
R.perf("invert.iterative_matmul", "runtime")(lambda sf, args: 5 * sf.matrix.size)


def invert(det_sfunc: LinearDet, observed_output, engine=None):
    return (default_engine() if engine is None else engine).invert(det_sfunc, observed_output)


def _listed(r):
    return None if r is None else list(r)


def compute_pi(sfunc, range_, parent_ranges=(), incoming_pis=(), engine=None):
    """``range_`` and parent ranges may be None where a closed form needs none."""
    return (default_engine() if engine is None else engine).compute_pi(
        sfunc, _listed(range_), [_listed(r) for r in parent_ranges], list(incoming_pis))


def send_lambda(sfunc, lam, range_, parent_ranges, incoming_pis, target_parent_index, engine=None):
    return (default_engine() if engine is None else engine).send_lambda(
        sfunc, lam, list(range_), [list(r) for r in parent_ranges], list(incoming_pis), target_parent_index)
