"""Fallback implementations that work for any SFunc exposing the primitive
operations they are built from.

Registered after every specialized implementation so the default policy only
reaches them when nothing more specific applies.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .basic import merge_support
from .core import REGISTRY as R
from .core import InferenceError
from .enumeration import compute_pi_enumerate, enumeration_size, send_lambda_enumerate


@R.impl("sample_n", "sfunc", "sample_n.repeat", requires=("sample",))
def _sample_n_repeat(eng, sf, parent_values, n, rng):
    if int(n) != n or n < 1:
        raise InferenceError(f"sample_n needs a positive integer count, got {n!r}")
    return [eng.sample(sf, parent_values, rng) for _ in range(int(n))]


@R.impl("cpdf", "cpd", "cpdf.exp_logcpdf", requires=("logcpdf",))
def _cpdf(eng, sf, parent_values, value):
    return math.exp(eng.logcpdf(sf, parent_values, value))


@R.impl("range_mass", "cpd", "range_mass.pointwise", requires=("cpdf",),
        applies=lambda reg, sf: not sf.continuous)
def _range_mass_pointwise(eng, sf, parent_values, range_):
    eng.tally("range_mass", len(range_))
    return np.array([eng.cpdf(sf, parent_values, x) for x in range_], dtype=float)


@R.impl("expectation", "cpd", "expectation.monte_carlo", requires=("sample_n",),
        hyperparameters={"num_samples": ("int", 10_000), "seed": ("int", 0)})
def _expectation_mc(eng, sf, parent_values, num_samples=10_000, seed=0):
    xs = eng.sample_n(sf, parent_values, num_samples, np.random.default_rng(seed))
    return float(np.mean(np.asarray(xs, dtype=float)))


@R.impl("variance", "cpd", "variance.monte_carlo", requires=("sample_n",),
        hyperparameters={"num_samples": ("int", 10_000), "seed": ("int", 0)})
def _variance_mc(eng, sf, parent_values, num_samples=10_000, seed=0):
    xs = eng.sample_n(sf, parent_values, num_samples, np.random.default_rng(seed))
    return float(np.var(np.asarray(xs, dtype=float)))


R.perf("expectation.monte_carlo", "is_exact", False)
R.perf("variance.monte_carlo", "is_exact", False)


@R.impl("support", "sfunc", "support.sampled", requires=("sample",),
        hyperparameters={"seed": ("int", 0)})
def _support_sampled(eng, sf, parent_ranges, target_size, prior_support, seed=0):
    """Best effort: values seen in draws at parent values from the ranges."""
    rng = np.random.default_rng([seed, len(prior_support)])
    combos = list(itertools.product(*parent_ranges)) or [()]
    draws = []
    for i in range(int(target_size)):
        draws.append(eng.sample(sf, combos[i % len(combos)], rng))
    return merge_support(prior_support, draws)


R.perf("support.sampled", "support_quality", "best_effort")


R.impl("compute_pi", "sfunc", "compute_pi.enumerate", requires=("range_mass",))(compute_pi_enumerate)


@R.perf("compute_pi.enumerate", "runtime")
def _runtime_enumerate(sf, args):
    range_, parent_ranges = args[0], args[1]
    return enumeration_size(range_, parent_ranges)


R.perf("compute_pi.enumerate", "is_exact", True)


R.impl("send_lambda", "cpd", "send_lambda.enumerate", requires=("range_mass",))(send_lambda_enumerate)
R.perf("send_lambda.enumerate", "is_exact", True)
