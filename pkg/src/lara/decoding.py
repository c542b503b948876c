"""Ensemble decoding: greedy generation and teacher-forced scoring.

At every position the decoder fetches each active group's top-K logits for
``context_i + query + generated_so_far``, combines them under the weight
vector, and appends the argmax token. Groups with weight zero are never
queried, which is where the inference savings of a sparse weight vector
come from. Temperature is fixed at zero throughout; there is no sampling
path.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .errors import ProviderError
from .logits import argmax_token, combine_logits, target_nll
from .types import WeightVector


@dataclass(frozen=True)
class DecodeParams:
    """Greedy decoding controls.

    ``delta`` is the margin subtracted from a group's minimum observed
    log-score when imputing missing union keys. ``normalize_binary``
    switches binary-weight combination from the raw sum over selected
    groups to their mean.
    """

    max_tokens: int = 16
    stop_sequences: tuple = ("\n",)
    delta: float = 0.0
    normalize_binary: bool = False

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class EnsembleContext:
    """The (contexts, weights, query) triple one decode operates on."""

    contexts: tuple
    weights: WeightVector
    query: str

    def __post_init__(self):
        object.__setattr__(self, "contexts", tuple(self.contexts))
        if len(self.contexts) != len(self.weights):
            raise ValueError(
                f"{len(self.contexts)} contexts for {len(self.weights)} weights"
            )
        if not self.weights.nonzero_indices:
            raise ValueError("empty ensemble: all weights are zero")


def fetch_group_logits(provider, prefixes, pool=None):
    """Fetch next-token logits for several prefixes, optionally in parallel.

    Results come back in input order. The first failure wins and is
    re-raised with the offending group position attached; with a pool the
    remaining fetches are not awaited beyond completion.
    """
    if pool is None or len(prefixes) <= 1:
        results = []
        for i, prefix in enumerate(prefixes):
            results.append(_fetch_one(provider, prefix, i))
        return results
    futures = [
        pool.submit(_fetch_one, provider, prefix, i)
        for i, prefix in enumerate(prefixes)
    ]
    return [f.result() for f in futures]


def _fetch_one(provider, prefix, position):
    try:
        return provider.next_token_logits(prefix)
    except ProviderError as exc:
        raise type(exc)(f"group {position}: {exc}") from exc


def _first_stop_hit(generated: str, stop_sequences):
    """Earliest index at which any stop sequence occurs, or -1."""
    earliest = -1
    for stop in stop_sequences:
        if not stop:
            continue
        idx = generated.find(stop)
        if idx != -1 and (earliest == -1 or idx < earliest):
            earliest = idx
    return earliest


def greedy_decode(ens: EnsembleContext, provider, params: DecodeParams, pool=None) -> str:
    """Greedy logit-ensemble generation.

    Stops at the first stop-sequence occurrence (the stop text is not part
    of the result) or after ``max_tokens`` tokens. Argmax ties break to the
    lexicographically smallest token string.
    """
    active = ens.weights.nonzero_indices
    generated = ""
    for _ in range(params.max_tokens):
        prefixes = [ens.contexts[i] + ens.query + generated for i in active]
        sets = fetch_group_logits(provider, prefixes, pool=pool)
        by_group = _scatter(sets, active, len(ens.weights))
        combined = combine_logits(
            by_group, ens.weights, delta=params.delta,
            normalize_binary=params.normalize_binary,
        )
        generated += argmax_token(combined)
        hit = _first_stop_hit(generated, params.stop_sequences)
        if hit != -1:
            return generated[:hit]
    return generated


def sequence_nll(ens: EnsembleContext, target_tokens, provider, params: DecodeParams,
                 pool=None) -> float:
    """Teacher-forced negative log-likelihood of a target token sequence.

    At step t the prefix carries the true tokens ``target_tokens[:t]``; the
    step cost is -log softmax(combined)[target_t], with a target missing
    from the union imputed per group exactly like any other absent key.
    """
    if not target_tokens:
        raise ValueError("target token sequence must be non-empty")
    active = ens.weights.nonzero_indices
    total = 0.0
    forced = ""
    for token in target_tokens:
        prefixes = [ens.contexts[i] + ens.query + forced for i in active]
        sets = fetch_group_logits(provider, prefixes, pool=pool)
        by_group = _scatter(sets, active, len(ens.weights))
        total += target_nll(
            by_group, ens.weights, token, delta=params.delta,
            normalize_binary=params.normalize_binary,
        )
        forced += token
    return total


def majority_vote_decode(contexts, query: str, provider, params: DecodeParams,
                         pool=None) -> str:
    """Decode each group independently and return the modal answer.

    Ties break to the answer produced by the smallest group index.
    """
    if not contexts:
        raise ValueError("majority vote needs at least one context")
    answers = []
    for i in range(len(contexts)):
        ens = EnsembleContext(
            contexts=(contexts[i],),
            weights=WeightVector.one_hot(1, 0),
            query=query,
        )
        answers.append(greedy_decode(ens, provider, params, pool=pool))
    counts = Counter(answers)
    top = max(counts.values())
    for answer in answers:  # first group to reach the top count wins ties
        if counts[answer] == top:
            return answer
    raise AssertionError("unreachable: answers is non-empty")


def _scatter(sets, active, k):
    """Place fetched sets at their group positions; inactive slots are None.

    combine_logits never touches zero-weight positions, so the placeholders
    are just index bookkeeping.
    """
    by_group = [None] * k
    for slot, group_index in enumerate(active):
        by_group[group_index] = sets[slot]
    return by_group


def split_into_tokens(text: str, vocabulary=None):
    """Split a target string into token strings for teacher forcing.

    Greedy longest-match against the provider's observed vocabulary, with a
    single-character fallback for unmatched stretches (their scores are
    then produced by the imputation rule). With no vocabulary the split is
    per character.
    """
    if not text:
        raise ValueError("cannot split an empty target")
    if not vocabulary:
        return list(text)
    by_length = sorted({len(t) for t in vocabulary if t}, reverse=True)
    vocab = set(vocabulary)
    tokens = []
    pos = 0
    while pos < len(text):
        for length in by_length:
            candidate = text[pos : pos + length]
            if len(candidate) == length and candidate in vocab:
                tokens.append(candidate)
                pos += length
                break
        else:
            tokens.append(text[pos])
            pos += 1
    return tokens
