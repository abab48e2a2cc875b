"""Operations-dispatched probabilistic inference over networks of SFuncs."""

from . import basic, compose, semiring, bp, sampling, lazy, em, specfile, cli  # noqa: F401  (registration order matters)
from . import generic  # noqa: F401  (fallbacks last)
from .basic import (
    Cat, Constant, Flip, FunctionalScore, HardScore, Normal, SoftScore,
    compute_bel, cpdf, expectation, get_score, logcpdf, sample, sample_n, support, variance,
)
from .compose import (
    CLG, Conditional, Det, DiscreteCPT, Extend, If, LinearDet, LinearGaussian, Mixture,
    ParamGen, Separable, Switch, Table, compute_pi, gen_sf, invert, make_separable, send_lambda,
)
from .core import (
    DEFAULT_POLICY, POLICIES, PREFER_EXACT, PREFER_LAZY, REGISTRY, DegenerateInput, Engine,
    InferenceError, OpImplRecord, OpPerfRecord, Policy, Registry, SFunc, SFuncSignature,
    UnknownPerfMeasure, UnsupportedOperation, find_impls, query_perf, register_impl, select_impl,
)

from .bp import bp_infer
from .em import em_train
from .lazy import refine_infer
from .network import Evidence, Network, classify_layers, network_sample, topological_order
from .sampling import effective_sample_size, estimate_marginal, lookahead_infer, lw_infer, rejection_infer
from .semiring import mpe_decode, ve_query
from .specfile import dump_spec, parse_spec

REGISTRY.freeze()
