"""Core domain types: demonstrations, templates, partitions, weight vectors.

Everything here is immutable after construction and safe to share across
threads. Sparse logit maps are plain ``dict[str, float]`` in natural-log
units, keyed by the token's canonical string (what a backend reports);
``check_sparse_logits`` enforces their invariants where they enter the
system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError

# A sparse next-token distribution slice: token string -> log-score.
SparseLogits = dict

SIMPLEX_TOL = 1e-9


def check_sparse_logits(entries, top_k=None, where="logits"):
    """Validate a sparse logit map: non-empty, finite, at most top_k entries."""
    if not entries:
        raise ValueError(f"{where}: sparse logits must be non-empty")
    for token, score in entries.items():
        if not isinstance(token, str):
            raise ValueError(f"{where}: token keys must be strings, got {token!r}")
        if not math.isfinite(score):
            raise ValueError(f"{where}: non-finite log-score for token {token!r}")
    if top_k is not None and len(entries) > top_k:
        raise ValueError(f"{where}: {len(entries)} entries exceed top_k={top_k}")
    return entries


@dataclass(frozen=True)
class Demonstration:
    """One labeled (input, output) pair from the demonstration pool."""

    input: str
    output: str

    def __post_init__(self):
        if not self.input:
            raise ValueError("demonstration input must be non-empty")
        if not self.output:
            raise ValueError("demonstration output must be non-empty")


def _count_placeholder(pattern, name):
    return pattern.count("{%s}" % name)


@dataclass(frozen=True)
class Template:
    """Prompt patterns for rendering demonstrations and queries.

    ``demo_pattern`` must contain ``{input}`` and ``{output}`` exactly once;
    ``query_pattern`` must contain ``{input}`` exactly once and should end at
    the answer cue. Rendering is literal substring replacement, so any other
    braces in the pattern or in the data pass through untouched.

    The full prompt for a group is ``render_context(...) + render_query(x)``:
    plain concatenation, so a query pattern normally starts with its own
    separator (e.g. ``"\\n\\nQuestion: {input}\\nAnswer:"``).
    """

    demo_pattern: str
    query_pattern: str
    separator: str = "\n\n"

    def __post_init__(self):
        if _count_placeholder(self.demo_pattern, "input") != 1:
            raise ConfigurationError(
                "template demo pattern must contain {input} exactly once"
            )
        if _count_placeholder(self.demo_pattern, "output") != 1:
            raise ConfigurationError(
                "template demo pattern must contain {output} exactly once"
            )
        if _count_placeholder(self.query_pattern, "input") != 1:
            raise ConfigurationError(
                "template query pattern must contain {input} exactly once"
            )

    def render_demo(self, demo: Demonstration) -> str:
        return self.demo_pattern.replace("{input}", demo.input).replace(
            "{output}", demo.output
        )

    def render_query(self, query_input: str) -> str:
        return self.query_pattern.replace("{input}", query_input)


@dataclass(frozen=True)
class Partition:
    """Disjoint size-L subgroups of demonstration indices, in input order.

    ``dropped`` holds the trailing indices excluded when L does not divide
    the pool size; callers are expected to surface them to the user.
    """

    L: int
    groups: tuple
    dropped: tuple = ()

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("subgroup size L must be >= 1")
        for group in self.groups:
            if len(group) != self.L:
                raise ValueError("every subgroup must have exactly L members")
        flat = [i for group in self.groups for i in group]
        if len(set(flat)) != len(flat):
            raise ValueError("subgroups must be disjoint")

    @property
    def k(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class WeightVector:
    """Per-subgroup combination weights.

    Continuous mode lives on the probability simplex (non-negative, sums to
    one within 1e-9); binary mode restricts every entry to {0, 1} and is a
    subgroup selection mask.
    """

    mode: str
    values: tuple

    def __post_init__(self):
        if self.mode not in ("continuous", "binary"):
            raise ValueError(f"unknown weight mode {self.mode!r}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("weight vector must be non-empty")
        if self.mode == "continuous":
            if any(v < 0 for v in self.values):
                raise ValueError("continuous weights must be non-negative")
            total = sum(self.values)
            if abs(total - 1.0) > SIMPLEX_TOL:
                raise ValueError(
                    f"continuous weights must sum to 1 (got {total!r})"
                )
        else:
            if any(v not in (0.0, 1.0) for v in self.values):
                raise ValueError("binary weights must be 0 or 1")

    def __len__(self):
        return len(self.values)

    @property
    def nonzero_indices(self) -> tuple:
        return tuple(i for i, v in enumerate(self.values) if v != 0.0)

    @classmethod
    def uniform(cls, k: int) -> "WeightVector":
        return cls("continuous", (1.0 / k,) * k)

    @classmethod
    def one_hot(cls, k: int, index: int) -> "WeightVector":
        values = [0.0] * k
        values[index] = 1.0
        return cls("continuous", tuple(values))

    @classmethod
    def binary(cls, bits) -> "WeightVector":
        return cls("binary", tuple(float(b) for b in bits))
