"""JSON network specifications: parsing with JSON-path diagnostics and
serialization back to a normalized document."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .basic import Cat, Constant, Flip, HardScore, Normal, SoftScore
from .compose import CLG, Det, DiscreteCPT, LinearDet, LinearGaussian, Mixture, Switch, make_separable
from .core import InferenceError, default_engine
from .network import Evidence, Network, validate

KINDS = ("flip", "cat", "normal", "constant", "cpt", "linear_gaussian", "clg", "mixture",
         "separable", "det_linear", "switch", "hard_score", "soft_score")
LEARNABLE_DEFAULTS = ("flip", "cat", "cpt")


class SpecError(InferenceError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)

    def to_json(self) -> dict:
        return {"error": self.message, "path": self.path}


@dataclass
class ParsedSpec:
    network: Network
    evidence: Evidence
    queries: list[str]
    declarations: list[dict] = field(default_factory=list)
    evidence_doc: dict = field(default_factory=dict)


def value_key(value) -> str:
    """Marginal/score key for a value: strings stay, others are JSON text."""
    return value if isinstance(value, str) else json.dumps(value)


def _path(base: str, *parts) -> str:
    out = base
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else p)
    return out


def _require(obj: dict, key: str, path: str, kind=None):
    if not isinstance(obj, dict):
        raise SpecError(path, "expected an object")
    if key not in obj:
        raise SpecError(_path(path, key), f"missing required field {key!r}")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise SpecError(_path(path, key), f"expected {_type_name(kind)}")
    return val


def _type_name(kind) -> str:
    names = {list: "a list", dict: "an object", str: "a string", (int, float): "a number"}
    return names.get(kind, str(kind))


def _number(val, path) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SpecError(path, "expected a number")
    return float(val)


def _numbers(val, path) -> list[float]:
    if not isinstance(val, list):
        raise SpecError(path, "expected a list of numbers")
    return [_number(x, _path(path, i)) for i, x in enumerate(val)]


def _finite_values(sf, parent_ranges) -> list | None:
    """Complete value set of ``sf`` given finite parent value sets, else None."""
    eng = default_engine()
    if sf.continuous or any(r is None for r in parent_ranges) or not eng.supports("support", sf):
        return None
    try:
        if eng.perf("support", "support_quality", sf, (parent_ranges, 1, [])) != "complete":
            return None
        return eng.support(sf, parent_ranges, 1, [])
    except InferenceError:
        return None


def _convert_key(key: str, candidates: list | None, path: str):
    if candidates is None:
        try:
            return json.loads(key)
        except ValueError:
            return key
    for x in candidates:
        if value_key(x) == key or x == key:
            return x
    raise SpecError(path, f"value {key!r} is not in the variable's value set")


class _Builder:
    def __init__(self):
        self.values: dict[str, list | None] = {}
        self.nodes: dict[str, Any] = {}

    def parent_values(self, parents: list[str], path: str) -> list[list]:
        out = []
        for i, p in enumerate(parents):
            vals = self.values.get(p)
            if vals is None:
                raise SpecError(_path(path, "parents", i), f"parent {p!r} has no finite value set")
            out.append(vals)
        return out

    def build(self, decl: dict, parents: list[str], path: str):
        """SFunc plus a normalized copy of the declaration."""
        kind = _require(decl, "kind", path, str)
        if kind not in KINDS:
            raise SpecError(_path(path, "kind"), f"unknown kind {kind!r}; expected one of {list(KINDS)}")
        params = decl.get("params", {})
        if not isinstance(params, dict):
            raise SpecError(_path(path, "params"), "expected an object")
        ppath = _path(path, "params")
        try:
            sf, norm = getattr(self, "_" + kind)(params, parents, ppath)
        except SpecError:
            raise
        except (ValueError, InferenceError) as exc:
            raise SpecError(ppath, str(exc)) from None
        return sf, {"kind": kind, "params": norm}

    def _arity(self, parents, n, path):
        if len(parents) != n:
            raise SpecError(path, f"expects {n} parent(s), got {len(parents)}")

    def _flip(self, params, parents, path):
        self._arity(parents, 0, path)
        p = _number(params.get("p", 0.5), _path(path, "p"))
        return Flip(p), {"p": p}

    def _cat(self, params, parents, path):
        self._arity(parents, 0, path)
        values = _require(params, "values", path, list)
        probs = params.get("probabilities")
        probs = [1.0 / len(values)] * len(values) if probs is None else _numbers(probs, _path(path, "probabilities"))
        return Cat(values, probs), {"values": values, "probabilities": probs}

    def _constant(self, params, parents, path):
        self._arity(parents, 0, path)
        value = _require(params, "value", path)
        return Constant(value), {"value": value}

    def _normal(self, params, parents, path):
        if len(parents) > 1:
            raise SpecError(path, "normal takes at most one parent")
        mean = _number(params.get("mean", 0.0), _path(path, "mean"))
        var = _number(params.get("variance", 1.0), _path(path, "variance"))
        if not var > 0:
            raise SpecError(_path(path, "variance"), "variance must be positive")
        return Normal(mean, var, conditional=bool(parents)), {"mean": mean, "variance": var}

    def _cpt(self, params, parents, path):
        values = _require(params, "values", path, list)
        pvals = self.parent_values(parents, path.rsplit(".params", 1)[0])
        keys = list(itertools.product(*pvals))
        rows = params.get("rows")
        if rows is None:
            rows = [[1.0 / len(values)] * len(values) for _ in keys]
        if not isinstance(rows, list):
            raise SpecError(_path(path, "rows"), "expected a list of rows")
        if len(rows) != len(keys):
            raise SpecError(_path(path, "rows"), f"expected {len(keys)} rows (one per parent combination), got {len(rows)}")
        clean = []
        for i, row in enumerate(rows):
            r = _numbers(row, _path(path, "rows", i))
            if len(r) != len(values):
                raise SpecError(_path(path, "rows", i), f"row has {len(r)} entries, expected {len(values)}")
            if abs(sum(r) - 1.0) > 1e-9 or min(r) < 0:
                raise SpecError(_path(path, "rows", i), f"row sums to {sum(r):g}, expected 1")
            clean.append(r)
        return DiscreteCPT(pvals, values, clean), {"values": values, "rows": clean}

    def _linear_gaussian(self, params, parents, path):
        coefs = _numbers(_require(params, "coefficients", path), _path(path, "coefficients"))
        self._arity(parents, len(coefs), path)
        intercept = _number(params.get("intercept", 0.0), _path(path, "intercept"))
        var = _number(_require(params, "variance", path), _path(path, "variance"))
        return LinearGaussian(coefs, intercept, var), {"coefficients": coefs, "intercept": intercept, "variance": var}

    def _clg(self, params, parents, path):
        k = int(_number(_require(params, "selectors", path), _path(path, "selectors")))
        if not 0 <= k <= len(parents):
            raise SpecError(_path(path, "selectors"), "selector count exceeds parent count")
        svals = self.parent_values(parents[:k], path.rsplit(".params", 1)[0])
        entries = _require(params, "entries", path, list)
        keys = list(itertools.product(*svals))
        if len(entries) != len(keys):
            raise SpecError(_path(path, "entries"), f"expected {len(keys)} entries, got {len(entries)}")
        table, norm = [], []
        for i, e in enumerate(entries):
            epath = _path(path, "entries", i)
            coefs = _numbers(_require(e, "coefficients", epath), _path(epath, "coefficients"))
            b = _number(e.get("intercept", 0.0), _path(epath, "intercept"))
            var = _number(_require(e, "variance", epath), _path(epath, "variance"))
            table.append((coefs, b, var))
            norm.append({"coefficients": coefs, "intercept": b, "variance": var})
        return CLG(svals, table, len(parents) - k), {"selectors": k, "entries": norm}

    def _components(self, params, parents, path, key):
        comps = _require(params, key, path, list)
        out, norm = [], []
        for i, c in enumerate(comps):
            sf, n = self.build(c, parents, _path(path, key, i))
            out.append(sf)
            norm.append(n)
        return out, norm

    def _mixture(self, params, parents, path):
        comps, norm = self._components(params, parents, path, "components")
        w = _numbers(_require(params, "weights", path), _path(path, "weights"))
        return Mixture(comps, w), {"components": norm, "weights": w}

    def _separable(self, params, parents, path):
        decls = _require(params, "components", path, list)
        if len(decls) != len(parents):
            raise SpecError(_path(path, "components"), "separable needs one component per parent")
        comps, norm = [], []
        for i, (d, p) in enumerate(zip(decls, parents)):
            sf, n = self.build(d, [p], _path(path, "components", i))
            comps.append(sf)
            norm.append(n)
        w = _numbers(_require(params, "weights", path), _path(path, "weights"))
        return make_separable(comps, w), {"components": norm, "weights": w}

    def _det_linear(self, params, parents, path):
        matrix = _require(params, "matrix", path, list)
        rows = [_numbers(r, _path(path, "matrix", i)) for i, r in enumerate(matrix)]
        mode = params.get("lambda")
        if mode not in (None, "exact", "interpolate"):
            raise SpecError(_path(path, "lambda"), "expected null, \"exact\" or \"interpolate\"")
        sf = LinearDet(rows, lambda_mode=mode)
        self._arity(parents, sf.matrix.shape[1], path)
        return sf, {"matrix": rows, "lambda": mode}

    def _switch(self, params, parents, path):
        if not parents:
            raise SpecError(path, "switch needs a selector parent")
        comps, norm = self._components(params, parents[1:], path, "choices")
        return Switch(comps), {"choices": norm}

    def _hard_score(self, params, parents, path):
        self._arity(parents, 1, path)
        cands = self.values.get(parents[0])
        value = _require(params, "value", path)
        if cands is not None and value not in cands:
            raise SpecError(_path(path, "value"), "value is not in the parent's value set")
        return HardScore(value), {"value": value}

    def _soft_score(self, params, parents, path):
        self._arity(parents, 1, path)
        weights = _require(params, "weights", path, dict)
        return _soft(weights, self.values.get(parents[0]), _path(path, "weights")), {"weights": weights}


def _soft(weights: dict, candidates, path) -> SoftScore:
    entries = {}
    for k, w in weights.items():
        entries[_convert_key(k, candidates, _path(path, k))] = _number(w, _path(path, k))
    try:
        return SoftScore(entries)
    except ValueError as exc:
        raise SpecError(path, str(exc)) from None


def parse_spec(data: bytes | str | dict) -> ParsedSpec:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpecError("", f"spec is not UTF-8: {exc}") from None
    if isinstance(data, str):
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise SpecError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    else:
        doc = data
    if not isinstance(doc, dict):
        raise SpecError("", "spec must be a JSON object")
    variables = _require(doc, "variables", "", list)
    b = _Builder()
    net = Network()
    decls = []
    names = set()
    for i, v in enumerate(variables):
        path = _path("variables", i)
        if not isinstance(v, dict):
            raise SpecError(path, "expected an object")
        name = _require(v, "name", path, str)
        if name in names:
            raise SpecError(_path(path, "name"), f"duplicate variable name {name!r}")
        parents = v.get("parents", [])
        if not isinstance(parents, list):
            raise SpecError(_path(path, "parents"), "expected a list of names")
        for j, p in enumerate(parents):
            if p not in names:
                known = "declared earlier" if p in {x.get("name") for x in variables if isinstance(x, dict)} else "unknown"
                msg = f"unknown parent {p!r}" if known == "unknown" else f"parent {p!r} must be declared before {name!r}"
                raise SpecError(_path(path, "parents", j), msg)
        sf, norm = b.build(v, parents, path)
        names.add(name)
        net.add(name, sf, parents)
        b.nodes[name] = sf
        b.values[name] = None if sf.is_score else _finite_values(sf, [b.values[p] for p in parents])
        decls.append({"name": name, **norm, "parents": list(parents)})
    diags = validate(net)
    if diags:
        raise SpecError("variables", diags[0].message)
    evidence_doc = doc.get("evidence", {}) or {}
    if not isinstance(evidence_doc, dict):
        raise SpecError("evidence", "expected an object")
    bindings = {}
    for name, val in evidence_doc.items():
        path = _path("evidence", name)
        if name not in net.nodes or net.nodes[name].is_score:
            raise SpecError(path, f"evidence on unknown variable {name!r}")
        cands = b.values.get(name)
        if isinstance(val, dict):
            bindings[name] = _soft(_require(val, "soft", path, dict), cands, _path(path, "soft"))
        else:
            if cands is not None and val not in cands:
                raise SpecError(path, f"value {val!r} is not in the value set of {name!r}")
            bindings[name] = val if cands is not None else _number(val, path)
    queries = doc.get("queries", [])
    if not isinstance(queries, list):
        raise SpecError("queries", "expected a list of names")
    for i, q in enumerate(queries):
        if q not in net.nodes or net.nodes[q].is_score:
            raise SpecError(_path("queries", i), f"unknown query variable {q!r}")
    return ParsedSpec(net, Evidence(bindings), list(queries), decls, dict(evidence_doc))


def dump_spec(spec: ParsedSpec, network: Network | None = None) -> dict:
    """Normalized document; parsing it yields an equivalent spec.  A fitted
    ``network`` overrides the parameters of learnable nodes."""
    decls = [dict(d) for d in spec.declarations]
    if network is not None:
        for d in decls:
            sf = network.nodes[d["name"]]
            if d["kind"] == "flip":
                d["params"] = {"p": sf.prob_true}
            elif d["kind"] == "cat":
                d["params"] = {"values": list(sf.values), "probabilities": [float(x) for x in sf.probabilities]}
            elif d["kind"] == "cpt":
                keys = list(itertools.product(*sf.i_value_spaces))
                d["params"] = {"values": list(sf.values), "rows": [[float(x) for x in sf.row(k)] for k in keys]}
    return {"variables": decls, "evidence": spec.evidence_doc, "queries": list(spec.queries)}


def load_records(data: bytes | str) -> list[dict]:
    """Dataset file: a JSON list of objects mapping variable names to values."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SpecError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, list):
        raise SpecError("", "dataset must be a JSON list of records")
    for i, rec in enumerate(doc):
        if not isinstance(rec, dict):
            raise SpecError(f"[{i}]", "record must be an object")
    return doc


def as_float_list(x) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]
