"""Sparse-logit arithmetic: alignment, weighted combination, softmax, NLL.

Backends expose only a top-K slice of the next-token distribution, so every
group sees a different key set. Before combining, the sets are aligned on
the union of their keys; a group's missing keys are imputed with that
group's minimum observed log-score minus a margin ``delta`` (the true value
is bounded above by the observed minimum, so delta=0 is the tightest
uniform optimistic bound).

All functions are pure and operate on plain ``dict[str, float]`` maps in
natural-log units. Union keys are processed in sorted order so results are
reproducible across platforms.
"""

from __future__ import annotations

import math

from .types import WeightVector, check_sparse_logits


def union_align(logit_sets, delta=0.0):
    """Extend every logit set onto the union of all keys.

    Each group's missing keys receive that group's minimum observed
    log-score minus ``delta``. Group order is preserved; input maps are not
    mutated.
    """
    if not logit_sets:
        raise ValueError("union_align needs at least one logit set")
    for i, entries in enumerate(logit_sets):
        check_sparse_logits(entries, where=f"group {i}")
    if delta < 0:
        raise ValueError("imputation margin delta must be non-negative")
    keys = sorted(set().union(*(s.keys() for s in logit_sets)))
    aligned = []
    for entries in logit_sets:
        floor = min(entries.values()) - delta
        aligned.append({key: entries.get(key, floor) for key in keys})
    return aligned


def _weighted_sum(logit_sets, values, delta, extra_keys=()):
    """Align the given sets and form the per-key weighted sum.

    ``extra_keys`` are forced into the union (used to score a target token
    that no group placed in its top-K slice).
    """
    keys = set().union(*(s.keys() for s in logit_sets))
    keys.update(extra_keys)
    combined = {}
    floors = [min(s.values()) - delta for s in logit_sets]
    for key in sorted(keys):
        combined[key] = sum(
            w * s.get(key, floor)
            for w, s, floor in zip(values, logit_sets, floors)
        )
    return combined


def combine_logits(logit_sets, weights: WeightVector, delta=0.0, normalize_binary=False):
    """Weighted sum of per-group logits over the aligned key union.

    Groups with weight exactly zero are skipped entirely: they contribute
    neither scores nor keys, so a one-hot weight vector reproduces
    single-group decoding bit for bit. Binary mode sums the selected groups'
    logits as-is (a product of experts in probability space); pass
    ``normalize_binary=True`` to divide by the number of selected groups
    instead.
    """
    if len(logit_sets) != len(weights):
        raise ValueError(
            f"got {len(logit_sets)} logit sets for {len(weights)} weights"
        )
    if delta < 0:
        raise ValueError("imputation margin delta must be non-negative")
    nonzero = weights.nonzero_indices
    if not nonzero:
        raise ValueError("empty ensemble: all weights are zero")
    sets = [logit_sets[i] for i in nonzero]
    for i, entries in zip(nonzero, sets):
        check_sparse_logits(entries, where=f"group {i}")
    values = [weights.values[i] for i in nonzero]
    if weights.mode == "binary" and normalize_binary:
        values = [v / len(nonzero) for v in values]
    return _weighted_sum(sets, values, delta)


def softmax(logits):
    """Normalize log-scores into probabilities with max-subtraction."""
    check_sparse_logits(logits)
    peak = max(logits.values())
    exps = {token: math.exp(score - peak) for token, score in logits.items()}
    total = sum(exps.values())
    return {token: value / total for token, value in exps.items()}


def log_softmax_at(logits, token):
    """log softmax(logits)[token], computed stably; token must be present."""
    peak = max(logits.values())
    lse = peak + math.log(sum(math.exp(v - peak) for v in logits.values()))
    return logits[token] - lse


def argmax_token(logits) -> str:
    """Highest-scoring token; ties break to the smallest token string.

    Python's string ordering coincides with byte ordering of the UTF-8
    encodings, so this tie-break is platform-independent.
    """
    best = max(logits.values())
    return min(token for token, score in logits.items() if score == best)


def target_nll(logit_sets, weights: WeightVector, target: str, delta=0.0,
               normalize_binary=False) -> float:
    """-log p(target) under the combined distribution for one position.

    The target token is forced into the key union before combining, so a
    target outside every group's top-K slice is scored through the same
    imputation rule as any other missing key.
    """
    nonzero = weights.nonzero_indices
    if not nonzero:
        raise ValueError("empty ensemble: all weights are zero")
    sets = [logit_sets[i] for i in nonzero]
    values = [weights.values[i] for i in nonzero]
    if weights.mode == "binary" and normalize_binary:
        values = [v / len(nonzero) for v in values]
    combined = _weighted_sum(sets, values, delta, extra_keys=(target,))
    return -log_softmax_at(combined, target)
