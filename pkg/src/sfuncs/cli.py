"""Command-line front end: ``sfuncs infer`` and ``sfuncs learn``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Sequence

import numpy as np

from .core import POLICIES, Engine, InferenceError, Observed
from .network import compile_evidence, node_layers
from .specfile import ParsedSpec, SpecError, dump_spec, load_records, parse_spec, value_key

ALGORITHMS = ("ve", "bp", "rejection", "lw", "lookahead", "lazy")
SEMIRINGS = ("sum_product", "max_product", "boolean", "mixed")


def _marginal_doc(range_, probs) -> dict[str, float]:
    out: dict[str, float] = {}
    for x, p in zip(range_, probs):
        k = value_key(x)
        out[k] = out.get(k, 0.0) + float(p)
    return out


def _queries(spec: ParsedSpec) -> list[str]:
    if spec.queries:
        return list(spec.queries)
    return [v for v, sf in spec.network.nodes.items() if not sf.is_score]


def _full_coverage(spec: ParsedSpec, eng: Engine) -> dict[str, dict]:
    tags = node_layers(compile_evidence(spec.network, spec.evidence), eng.registry)
    return {v: {"layer": tags[v], "status": "full", "reasons": []}
            for v, sf in spec.network.nodes.items() if not sf.is_score}


def _nearest(range_, x):
    if x in range_:
        return x
    pts = np.asarray(range_, dtype=float)
    return range_[int(np.argmin(np.abs(pts - float(x))))]


def _particle_marginals(ps, spec, eng, queries):
    from .network import working_ranges
    from .sampling import estimate_marginal

    ranges = working_ranges(spec.network, spec.evidence, eng)
    out = {}
    for q in queries:
        r = list(ranges[q])
        if spec.network.nodes[q].continuous and not isinstance(ranges[q], Observed):
            vals = [_nearest(r, x) for x in ps.values[q]]
            view = type(ps)(ps.variables, {**ps.values, q: vals}, ps.log_weights)
            out[q] = _marginal_doc(r, estimate_marginal(view, q, r))
        else:
            out[q] = _marginal_doc(r, estimate_marginal(ps, q, r))
    return out


def execute_job(spec: ParsedSpec, algorithm: str = "ve", *, semiring: str = "sum_product",
                samples: int = 10000, seed: int = 0, policy: str = "default",
                tolerance: float | None = None, max_iterations: int = 50, damping: float = 0.5,
                base: str = "bp", max_rounds: int = 6) -> dict[str, Any]:
    """Run one inference job and return the result document."""
    if algorithm not in ALGORITHMS:
        raise InferenceError(f"unknown algorithm {algorithm!r}; choose from {list(ALGORITHMS)}")
    if policy not in POLICIES:
        raise InferenceError(f"unknown policy {policy!r}; choose from {sorted(POLICIES)}")
    if semiring != "sum_product" and algorithm != "ve":
        raise InferenceError(f"semiring {semiring!r} requires --algorithm ve")
    eng = Engine(policy=POLICIES[policy])
    net, ev = spec.network, spec.evidence
    queries = _queries(spec)
    marginals: dict[str, dict[str, float]] = {}
    mpe = None
    coverage: dict[str, dict] = {}
    diagnostics: list[str] = []
    rounds = 1
    if algorithm == "ve":
        from .semiring import mpe_decode, ve_query

        coverage = _full_coverage(spec, eng)
        for q in queries:
            f = ve_query(net, ev, [q], semiring=semiring, engine=eng)
            vec = f.vector()
            marginals[q] = _marginal_doc(f.ranges[0], _semiring_probs(vec, semiring))
        if semiring == "max_product":
            assignment, value = mpe_decode(net, ev, eng)
            mpe = {"assignment": {v: _jsonable(x) for v, x in assignment.items()}, "score": value}
        if semiring in ("max_product", "boolean"):
            diagnostics.append(f"marginals are normalized {semiring} values, not posterior probabilities")
    elif algorithm == "bp":
        from .bp import bp_infer

        kw = {} if tolerance is None else {"tolerance": tolerance}
        res = bp_infer(net, ev, eng, max_iterations=max_iterations, damping=damping, **kw)
        rounds = res.iterations
        coverage = res.coverage
        diagnostics.extend(res.diagnostics)
        for q in queries:
            if q in res.beliefs:
                r, b = res.beliefs[q]
                marginals[q] = _marginal_doc(r, b)
            else:
                diagnostics.append(f"no belief for {q!r}: {', '.join(res.coverage[q]['reasons']) or 'uncovered'}")
    elif algorithm in ("rejection", "lw", "lookahead"):
        from . import sampling

        fn = {"rejection": sampling.rejection_infer, "lw": sampling.lw_infer,
              "lookahead": sampling.lookahead_infer}[algorithm]
        ps = fn(net, ev, samples, seed, eng)
        diagnostics.extend(ps.diagnostics)
        coverage = _full_coverage(spec, eng)
        if ps.accepted == 0:
            raise InferenceError(ps.diagnostics[0] if ps.diagnostics else "no usable particles")
        marginals = _particle_marginals(ps, spec, eng, queries)
        from .sampling import effective_sample_size

        diagnostics.append(f"effective sample size {effective_sample_size(ps):.6g} of {len(ps)} particles")
    else:
        from .lazy import refine_infer

        res = refine_infer(net, ev, base=base, tolerance=1e-3 if tolerance is None else tolerance,
                           max_rounds=max_rounds, engine=eng)
        rounds = len(res.trace)
        coverage = _full_coverage(spec, eng)
        for v, flag in res.state.flags.items():
            if v in coverage:
                coverage[v]["reasons"] = [f"support: {flag}"]
        if not res.converged:
            diagnostics.append(f"refinement stopped after {rounds} rounds above tolerance")
        for q in queries:
            r, b = res.beliefs[q]
            marginals[q] = _marginal_doc(r, b)
    meta = {
        "seed": seed,
        "algorithm": algorithm,
        "policy": policy,
        "semiring": semiring,
        "rounds": rounds,
        "timing": {"unit": "operation_calls", "operation_calls": int(eng.counters["calls"]),
                   "counters": {k: int(v) for k, v in sorted(eng.counters.items())}},
    }
    return {"marginals": marginals, "mpe": mpe, "coverage": coverage,
            "diagnostics": diagnostics, "meta": meta}


def _semiring_probs(vec, semiring):
    vec = np.asarray(vec, dtype=float).ravel()
    total = vec.sum()
    if not total > 0:
        raise InferenceError("evidence has zero probability")
    return vec / total


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, tuple):
        return [_jsonable(v) for v in x]
    return x


def learn_job(spec: ParsedSpec, records, rounds: int = 20, smoothing: float = 1e-6) -> dict[str, Any]:
    from .em import em_train

    res = em_train(spec.network, records, rounds=rounds, smoothing=smoothing, engine=Engine())
    return {
        "model": dump_spec(spec, res.network),
        "log_likelihoods": [float(x) for x in res.log_likelihoods],
        "rounds": res.rounds,
        "diagnostics": res.diagnostics,
    }


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfuncs", description="Inference over networks of stochastic functions.")
    sub = p.add_subparsers(dest="command", required=True)
    inf = sub.add_parser("infer", help="run an inference algorithm on a model spec")
    inf.add_argument("--model", required=True, help="JSON model spec")
    inf.add_argument("--algorithm", choices=ALGORITHMS, default="ve")
    inf.add_argument("--semiring", choices=SEMIRINGS, default="sum_product")
    inf.add_argument("--samples", type=int, default=10000)
    inf.add_argument("--seed", type=int, default=0)
    inf.add_argument("--policy", choices=sorted(POLICIES), default="default")
    inf.add_argument("--tolerance", type=float, default=None)
    inf.add_argument("--max-iterations", type=int, default=50)
    inf.add_argument("--damping", type=float, default=0.5)
    inf.add_argument("--base", choices=("bp", "ve"), default="bp", help="base algorithm for lazy")
    inf.add_argument("--max-rounds", type=int, default=6, help="refinement rounds for lazy")
    inf.add_argument("--output", help="write the result here instead of standard output")
    lrn = sub.add_parser("learn", help="fit Flip/Cat/CPT parameters with EM")
    lrn.add_argument("--model", required=True)
    lrn.add_argument("--data", required=True, help="JSON list of records")
    lrn.add_argument("--rounds", type=int, default=20)
    lrn.add_argument("--smoothing", type=float, default=1e-6)
    lrn.add_argument("--output")
    return p


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _emit(doc, path):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fail(kind: str, message: str, path: str = "") -> int:
    doc = {"error": message, "type": kind}
    if path:
        doc["path"] = path
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return 1 if kind != "usage" else 2


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        spec = parse_spec(_read(args.model))
        if args.command == "infer":
            doc = execute_job(spec, args.algorithm, semiring=args.semiring, samples=args.samples,
                              seed=args.seed, policy=args.policy, tolerance=args.tolerance,
                              max_iterations=args.max_iterations, damping=args.damping,
                              base=args.base, max_rounds=args.max_rounds)
        else:
            doc = learn_job(spec, load_records(_read(args.data)), args.rounds, args.smoothing)
        _emit(doc, args.output)
    except SpecError as exc:
        return _fail("spec", exc.message, exc.path)
    except (InferenceError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail("io", f"{exc.strerror}: {exc.filename}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
