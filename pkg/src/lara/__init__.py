"""Ensemble in-context learning over per-subgroup next-token logits.

The demonstration pool is split into size-L subgroups; each subgroup's
rendered context is queried separately for top-K next-token log-scores,
and the slices are combined under a per-subgroup weight vector before
greedy decoding. Weights are fitted without gradients: a (1+1) evolution
strategy over binary selection masks, or CMA-ES over the probability
simplex, each cross-validated on the half of the pool it was not fitted
on.
"""

from .base import ParamsMixin
from .cache import CachedLM, DiskCache, cache_key
from .cma import CMAES, minimize_on_simplex
from .decoding import (
    DecodeParams,
    EnsembleContext,
    greedy_decode,
    majority_vote_decode,
    sequence_nll,
    split_into_tokens,
)
from .errors import ConfigurationError, LaraError, ProtocolError, ProviderError
from .estimator import LogitEnsemble
from .evolution import mutate_bits, one_plus_one_es
from .fitting import (
    FitConfig,
    FitResult,
    fit_weights,
    load_fit_result,
    save_fit_result,
    select_L,
)
from .harness import (
    CostReport,
    EvalReport,
    MethodConfig,
    Task,
    cost_report,
    exact_match,
    load_task,
    run_eval,
)
from .logits import argmax_token, combine_logits, softmax, target_nll, union_align
from .partition import (
    partition_demos,
    render_context,
    render_group_contexts,
    split_halves,
)
from .providers import (
    OpenAICompletionsLM,
    ProviderConfig,
    RecordingLM,
    RequestRecorder,
    TableLM,
)
from .types import Demonstration, Partition, Template, WeightVector

__version__ = "0.1.0"

__all__ = [
    "CMAES",
    "CachedLM",
    "ConfigurationError",
    "CostReport",
    "DecodeParams",
    "Demonstration",
    "DiskCache",
    "EnsembleContext",
    "EvalReport",
    "FitConfig",
    "FitResult",
    "LaraError",
    "LogitEnsemble",
    "MethodConfig",
    "OpenAICompletionsLM",
    "ParamsMixin",
    "Partition",
    "ProtocolError",
    "ProviderConfig",
    "ProviderError",
    "RecordingLM",
    "RequestRecorder",
    "TableLM",
    "Task",
    "Template",
    "WeightVector",
    "argmax_token",
    "cache_key",
    "combine_logits",
    "cost_report",
    "exact_match",
    "fit_weights",
    "greedy_decode",
    "load_fit_result",
    "load_task",
    "majority_vote_decode",
    "minimize_on_simplex",
    "mutate_bits",
    "one_plus_one_es",
    "partition_demos",
    "render_context",
    "render_group_contexts",
    "run_eval",
    "save_fit_result",
    "select_L",
    "sequence_nll",
    "softmax",
    "split_halves",
    "split_into_tokens",
    "target_nll",
    "union_align",
]
