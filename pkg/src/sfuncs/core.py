"""Operation registry, implementation records, performance characteristics
and policies.

Model components are known to algorithms only through the operations
registered for their *kind*.  Kinds form an explicit lattice (each kind names
its parent kind) so an implementation registered for an abstract kind applies
to every descendant.  A kind may carry several implementations of the same
operation; a :class:`Policy` picks one per call and may override its
hyperparameters.
"""

from __future__ import annotations

import copy
import functools
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence


class InferenceError(Exception):
    """Base class for every error raised by this package."""


class RegistryError(InferenceError):
    pass


class UnsupportedOperation(InferenceError):
    def __init__(self, operation: str, kind: str, detail: str = ""):
        self.operation = operation
        self.kind = kind
        msg = f"operation {operation!r} unsupported for SFunc kind {kind!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class UnknownPerfMeasure(InferenceError):
    def __init__(self, impl_name: str, measure: str):
        self.impl_name = impl_name
        self.measure = measure
        super().__init__(f"unknown performance measure {measure!r} for {impl_name!r}")


class DegenerateInput(InferenceError):
    pass


class ScoringError(InferenceError):
    def __init__(self, value: Any, cause: BaseException):
        self.value = value
        super().__init__(f"score function failed on value {value!r}: {cause}")


# ---------------------------------------------------------------------------
# value spaces and signatures

NONE_SPACE = "none"


@dataclass(frozen=True)
class SFuncSignature:
    """Input, output and parameter value spaces of an SFunc.

    Value spaces are plain descriptors such as ``"bool"``, ``"real"``,
    ``"finite"`` or ``"any"``; ``"none"`` as output marks a scoring SFunc.
    """

    input_kinds: tuple[str, ...] = ()
    output_kind: str = "any"
    param_kind: str = "none"

    @property
    def arity(self) -> int:
        return len(self.input_kinds)


SUPPORT_QUALITIES = ("best_effort", "incremental", "complete")
PERF_MEASURES = ("runtime", "support_quality", "is_lazy", "is_exact")


def quality_rank(quality: str) -> int:
    return SUPPORT_QUALITIES.index(quality)


def min_quality(qualities: Iterable[str]) -> str:
    return min(qualities, key=quality_rank, default="complete")


class SFunc:
    """Base class for stochastic functions.

    Subclasses set ``kind`` (possibly per instance) and ``signature``.  Nothing
    else about an SFunc is visible to algorithms; all behavior is reached
    through registered operations.
    """

    kind = "sfunc"
    signature = SFuncSignature()

    @property
    def arity(self) -> int:
        return self.signature.arity

    @property
    def is_score(self) -> bool:
        return self.signature.output_kind == NONE_SPACE

    #: output is a continuum; discretized ranges then carry cell masses
    continuous = False


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class OperationId:
    name: str
    signature_transform: str = ""


@dataclass(frozen=True)
class OpImplRecord:
    impl_name: str
    operation: OperationId
    applicable_kind: str
    fn: Callable[..., Any]
    hyperparameters: Mapping[str, tuple[str, Any]] = field(default_factory=dict)
    # structural applicability on the instance, e.g. "all mixture
    # components support this operation"; called as applies(registry, sf)
    applies: Callable[["Registry", SFunc], bool] | None = None
    # argument specialization; called as guard(sf, *args)
    guard: Callable[..., bool] | None = None
    requires: tuple[str, ...] = ()

    def defaults(self) -> dict[str, Any]:
        return {name: default for name, (_, default) in self.hyperparameters.items()}


@dataclass(frozen=True)
class OpPerfRecord:
    impl_name: str
    measure: str
    evaluator: Callable[..., Any]


@dataclass(frozen=True)
class Policy:
    """Selects one candidate implementation per operation call.

    ``selector(operation, sfunc, candidates, perf)`` returns
    ``(record, overrides)`` where ``perf(record, measure)`` queries an OpPerf
    (``None`` when the implementation declares no such measure).
    """

    name: str
    selector: Callable[..., tuple[OpImplRecord, dict[str, Any]]]


def _first(operation, sfunc, candidates, perf):
    return candidates[0], {}


def _prefer(measure: str):
    def select(operation, sfunc, candidates, perf):
        for rec in candidates:
            if perf(rec, measure) is True:
                return rec, {}
        return candidates[0], {}

    return select


DEFAULT_POLICY = Policy("default", _first)
PREFER_LAZY = Policy("prefer_lazy", _prefer("is_lazy"))
PREFER_EXACT = Policy("prefer_exact", _prefer("is_exact"))

POLICIES = {p.name: p for p in (DEFAULT_POLICY, PREFER_LAZY, PREFER_EXACT)}


# ---------------------------------------------------------------------------
# registry


class Registry:
    """Operations, kinds, implementations and performance records."""

    def __init__(self):
        self.operations: dict[str, OperationId] = {}
        self.kinds: dict[str, str | None] = {"sfunc": None}
        self._impls: list[OpImplRecord] = []
        self._by_name: dict[str, OpImplRecord] = {}
        self._perfs: dict[tuple[str, str], OpPerfRecord] = {}
        self.frozen = False
        self._cache: dict[tuple[str, str], tuple[OpImplRecord, ...]] = {}

    # -- construction -----------------------------------------------------

    def _check_mutable(self):
        if self.frozen:
            raise RegistryError("registry is frozen")

    def add_operation(self, name: str, signature_transform: str = "") -> OperationId:
        self._check_mutable()
        if name in self.operations:
            raise RegistryError(f"operation {name!r} already registered")
        op = OperationId(name, signature_transform)
        self.operations[name] = op
        return op

    def declare_kind(self, kind: str, parent: str = "sfunc") -> None:
        self._check_mutable()
        if parent not in self.kinds:
            raise RegistryError(f"unknown parent kind {parent!r}")
        if kind in self.kinds and self.kinds[kind] != parent:
            raise RegistryError(f"kind {kind!r} already declared under {self.kinds[kind]!r}")
        self.kinds[kind] = parent

    def register_impl(self, record: OpImplRecord) -> None:
        self._check_mutable()
        if record.operation.name not in self.operations:
            raise RegistryError(f"unknown operation {record.operation.name!r}")
        if record.impl_name in self._by_name:
            raise RegistryError(f"duplicate implementation name {record.impl_name!r}")
        if record.applicable_kind not in self.kinds:
            raise RegistryError(f"unknown kind {record.applicable_kind!r}")
        self._impls.append(record)
        self._by_name[record.impl_name] = record
        self._cache.clear()

    def impl(self, operation: str, kind: str, name: str, *, hyperparameters=None,
             applies=None, guard=None, requires=()):
        """Decorator form of :meth:`register_impl`."""

        def wrap(fn):
            if operation not in self.operations:
                raise RegistryError(f"unknown operation {operation!r}")
            self.register_impl(OpImplRecord(
                impl_name=name,
                operation=self.operations[operation],
                applicable_kind=kind,
                fn=fn,
                hyperparameters=dict(hyperparameters or {}),
                applies=applies,
                guard=guard,
                requires=tuple(requires),
            ))
            return fn

        return wrap

    def register_perf(self, record: OpPerfRecord) -> None:
        self._check_mutable()
        if record.measure not in PERF_MEASURES:
            raise RegistryError(f"unknown measure {record.measure!r}")
        if record.impl_name not in self._by_name:
            raise RegistryError(f"no implementation named {record.impl_name!r}")
        self._perfs[(record.impl_name, record.measure)] = record

    def perf(self, impl_name: str, measure: str, value: Any = None):
        """Register a constant OpPerf, or use as a decorator for an evaluator."""
        if value is not None:
            self.register_perf(OpPerfRecord(impl_name, measure, lambda sf, args, _v=value: _v))
            return None

        def wrap(fn):
            self.register_perf(OpPerfRecord(impl_name, measure, fn))
            return fn

        return wrap

    def freeze(self) -> "Registry":
        self.frozen = True
        return self

    def copy(self) -> "Registry":
        """Unfrozen copy sharing the (immutable) records."""
        new = Registry()
        new.operations = dict(self.operations)
        new.kinds = dict(self.kinds)
        new._impls = list(self._impls)
        new._by_name = dict(self._by_name)
        new._perfs = dict(self._perfs)
        return new

    def without(self, impl_name: str) -> "Registry":
        """Unfrozen copy with one implementation (and its OpPerfs) removed."""
        new = self.copy()
        rec = new._by_name.pop(impl_name)
        new._impls.remove(rec)
        new._perfs = {k: v for k, v in new._perfs.items() if k[0] != impl_name}
        return new

    # -- lookup -------------------------------------------------------------

    def ancestors(self, kind: str) -> list[str]:
        chain = []
        k: str | None = kind
        while k is not None:
            chain.append(k)
            k = self.kinds.get(k, "sfunc" if k != "sfunc" else None)
        return chain

    def find_impls(self, operation: str, kind: str) -> list[OpImplRecord]:
        key = (operation, kind)
        hit = self._cache.get(key)
        if hit is None:
            lineage = set(self.ancestors(kind))
            hit = tuple(r for r in self._impls
                        if r.operation.name == operation and r.applicable_kind in lineage)
            if self.frozen:
                self._cache[key] = hit
        return list(hit)

    def get_impl(self, impl_name: str) -> OpImplRecord:
        try:
            return self._by_name[impl_name]
        except KeyError:
            raise RegistryError(f"no implementation named {impl_name!r}") from None

    def _usable(self, rec: OpImplRecord, sf: SFunc) -> bool:
        if rec.applies is not None and not rec.applies(self, sf):
            return False
        return all(self.supports(op, sf) for op in rec.requires)

    def candidates(self, operation: str, sf: SFunc, args: Sequence[Any] | None = None):
        """Implementations usable for this instance (and these arguments)."""
        out = []
        for rec in self.find_impls(operation, sf.kind):
            if not self._usable(rec, sf):
                continue
            if args is not None and rec.guard is not None and not rec.guard(sf, *args):
                continue
            out.append(rec)
        return out

    def supports(self, operation: str, sf: SFunc) -> bool:
        return any(self._usable(rec, sf) for rec in self.find_impls(operation, sf.kind))

    def select_impl(self, policy: Policy, operation: str, sf: SFunc,
                    args: Sequence[Any] = ()) -> tuple[OpImplRecord, dict[str, Any]]:
        cands = self.candidates(operation, sf, args)
        if not cands:
            raise UnsupportedOperation(operation, sf.kind)

        def perf(rec, measure):
            ev = self._perfs.get((rec.impl_name, measure))
            return None if ev is None else ev.evaluator(sf, tuple(args))

        rec, overrides = policy.selector(self.operations[operation], sf, cands, perf)
        if rec not in cands:
            raise RegistryError(f"policy {policy.name!r} returned a non-candidate")
        hp = rec.defaults()
        for k, v in overrides.items():
            if k in hp:
                hp[k] = v
        return rec, hp

    def query_perf(self, impl_name: str, measure: str, sf: SFunc, args: Sequence[Any] = ()):
        try:
            rec = self._perfs[(impl_name, measure)]
        except KeyError:
            raise UnknownPerfMeasure(impl_name, measure) from None
        return rec.evaluator(sf, tuple(args))


# module-level conveniences mirroring the registry methods

def register_impl(registry: Registry, record: OpImplRecord) -> Registry:
    registry.register_impl(record)
    return registry


def find_impls(registry: Registry, operation: str, sfunc_kind: str) -> list[OpImplRecord]:
    return registry.find_impls(operation, sfunc_kind)


def select_impl(registry: Registry, policy: Policy, operation: str, sfunc: SFunc, call_args=()):
    return registry.select_impl(policy, operation, sfunc, call_args)


def query_perf(registry: Registry, impl_name: str, measure: str, sfunc: SFunc, args=()):
    return registry.query_perf(impl_name, measure, sfunc, args)


# ---------------------------------------------------------------------------
# engine


class Engine:
    """A registry paired with a policy; the handle algorithms invoke
    operations through.

    ``engine.compute_pi(sf, ...)`` is shorthand for
    ``engine.invoke("compute_pi", sf, ...)``.  ``counters`` accumulates
    abstract operation counts reported by implementations.
    """

    def __init__(self, registry: Registry | None = None, policy: Policy | None = None):
        self.registry = REGISTRY if registry is None else registry
        self.policy = policy or DEFAULT_POLICY
        self.counters: Counter = Counter()
        self.trace: list[str] | None = None

    def invoke(self, operation: str, sf: SFunc, *args):
        rec, hp = self.registry.select_impl(self.policy, operation, sf, args)
        self.counters["calls"] += 1
        if self.trace is not None:
            self.trace.append(rec.impl_name)
        return rec.fn(self, sf, *args, **hp)

    def tally(self, key: str, amount: int = 1) -> None:
        self.counters[key] += amount

    def supports(self, operation: str, sf: SFunc) -> bool:
        return self.registry.supports(operation, sf)

    def perf(self, operation: str, measure: str, sf: SFunc, args: Sequence[Any] = ()):
        """OpPerf of the implementation this engine would select."""
        rec, _ = self.registry.select_impl(self.policy, operation, sf, args)
        return self.registry.query_perf(rec.impl_name, measure, sf, args)

    def with_policy(self, policy: Policy) -> "Engine":
        new = copy.copy(self)
        new.policy = policy
        new.counters = Counter()
        return new

    def __getattr__(self, name: str):
        if name.startswith("_"):
            raise AttributeError(name)
        ops = self.__dict__.get("registry")
        if ops is not None and name in ops.operations:
            return functools.partial(self.invoke, name)
        raise AttributeError(name)


# ---------------------------------------------------------------------------
# the built-in registry; populated by the sibling modules, frozen on package
# import

REGISTRY = Registry()

for _name, _sig in [
    ("sample", "(I,O): I -> O"),
    ("sample_n", "(I,O): (I, Int) -> Vector{O}"),
    ("logcpdf", "(I,O): (I, O) -> Real"),
    ("cpdf", "(I,O): (I, O) -> Real"),
    ("range_mass", "(I,O): (I, Vector{O}) -> Vector{Real}"),
    ("expectation", "(I,O): I -> O"),
    ("variance", "(I,O): I -> O"),
    ("support", "(I,O): (Vector{Vector{I}}, Int, Vector{O}) -> Vector{O}"),
    ("get_score", "(I,Nothing): I -> Real"),
    ("compute_pi", "(I,O): (Vector{O}, Vector{Vector{I}}, Vector{Dist{I}}) -> Dist{O}"),
    ("send_lambda", "(I,O): (Score{O}, Vector{O}, Vector{Vector{I}}, Vector{Dist{I}}, Int) -> Score{I_k}"),
    ("compute_bel", "(Tuple{},O): (Dist{O}, Score{O}) -> Score{O}"),
    ("invert", "(I,O): O -> I"),
    ("make_factors", "(I,O): (Semiring, Vector{Vector}, Vector{Id}) -> Vector{Factor}"),
]:
    REGISTRY.add_operation(_name, _sig)

REGISTRY.declare_kind("cpd")
REGISTRY.declare_kind("dist", "cpd")
REGISTRY.declare_kind("score")
REGISTRY.declare_kind("det")


_DEFAULT_ENGINE: Engine | None = None


def default_engine() -> Engine:
    global _DEFAULT_ENGINE
    if _DEFAULT_ENGINE is None:
        _DEFAULT_ENGINE = Engine()
    return _DEFAULT_ENGINE


class Observed(list):
    """A working range pinned by hard evidence.

    Masses over an observed range are likelihoods (density or mass at the
    observed value), not discretization cells.
    """


def normalize(weights, what: str = "weights"):
    import numpy as np

    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0 or not np.isfinite(total):
        raise DegenerateInput(f"{what} have no positive finite mass")
    return w / total
