"""Brute-force message computations by enumerating parent assignments."""

from __future__ import annotations

import itertools

import numpy as np

from .basic import Cat, SoftScore, score_vector
from .core import DegenerateInput, normalize


def parent_vectors(eng, parent_ranges, incoming_pis, skip=None):
    out = []
    for k, (pr, pi) in enumerate(zip(parent_ranges, incoming_pis)):
        if k == skip:
            out.append(None)
        else:
            out.append(normalize(eng.range_mass(pi, (), pr), f"pi message for parent {k}"))
    return out


def enumeration_size(range_, parent_ranges) -> int:
    n = len(range_)
    for pr in parent_ranges:
        n *= len(pr)
    return n


def compute_pi_enumerate(eng, sf, range_, parent_ranges, incoming_pis):
    """Sum over joint parent assignments of prior weight times the local
    conditional mass on the range."""
    vecs = parent_vectors(eng, parent_ranges, incoming_pis)
    out = np.zeros(len(range_))
    for idx in itertools.product(*(range(len(pr)) for pr in parent_ranges)):
        w = 1.0
        for k, i in enumerate(idx):
            w *= vecs[k][i]
        if w == 0.0:
            continue
        u = tuple(parent_ranges[k][i] for k, i in enumerate(idx))
        out += w * eng.range_mass(sf, u, range_)
    eng.tally("compute_pi", enumeration_size(range_, parent_ranges))
    return Cat(range_, normalize(out, f"compute_pi output of {sf.kind}"))


def send_lambda_enumerate(eng, sf, lam, range_, parent_ranges, incoming_pis, target):
    """lambda_t(u_t) = sum over other parents and x of lambda(x) P(x | u) prod pi_k."""
    lam_vec = score_vector(eng, lam, range_)
    vecs = parent_vectors(eng, parent_ranges, incoming_pis, skip=target)
    out = np.zeros(len(parent_ranges[target]))
    for idx in itertools.product(*(range(len(pr)) for pr in parent_ranges)):
        w = 1.0
        for k, i in enumerate(idx):
            if k != target:
                w *= vecs[k][i]
        if w == 0.0:
            continue
        u = tuple(parent_ranges[k][i] for k, i in enumerate(idx))
        out[idx[target]] += w * float(eng.range_mass(sf, u, range_) @ lam_vec)
    eng.tally("send_lambda", enumeration_size(range_, parent_ranges))
    if not out.sum() > 0:
        raise DegenerateInput(f"lambda message from {sf.kind} has no positive mass")
    return SoftScore(parent_ranges[target], out)


def expected_mass(eng, sf, range_, parent_ranges, incoming_pis) -> np.ndarray:
    """sum_u prod_k pi_k(u_k) range_mass(sf, u, range), left unnormalized so
    that masses over an observed range remain likelihoods."""
    vecs = parent_vectors(eng, parent_ranges, incoming_pis)
    out = np.zeros(len(range_))
    for idx in itertools.product(*(range(len(pr)) for pr in parent_ranges)):
        w = 1.0
        for k, i in enumerate(idx):
            w *= vecs[k][i]
        if w == 0.0:
            continue
        out += w * eng.range_mass(sf, tuple(parent_ranges[k][i] for k, i in enumerate(idx)), range_)
    return out
