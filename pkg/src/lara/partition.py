"""Splitting demonstration pools into subgroups and rendering their contexts."""

from __future__ import annotations

import random

from .types import Partition, Template


def partition_demos(demos, L: int, shuffle_seed=None) -> Partition:
    """Split the pool into floor(n/L) disjoint subgroups of exactly L demos.

    Grouping preserves input order; the trailing ``n mod L`` demonstrations
    are dropped (reported in ``Partition.dropped``) so that every group is
    full-size. Pass ``shuffle_seed`` to shuffle indices reproducibly before
    grouping; the default is no shuffling.
    """
    n = len(demos)
    if L < 1:
        raise ValueError("subgroup size L must be >= 1")
    if L > n:
        raise ValueError(
            f"insufficient demonstrations: need at least L={L}, have {n}"
        )
    indices = list(range(n))
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(indices)
    k = n // L
    groups = tuple(
        tuple(indices[g * L : (g + 1) * L]) for g in range(k)
    )
    dropped = tuple(indices[k * L :])
    return Partition(L=L, groups=groups, dropped=dropped)


def render_context(group, template: Template) -> str:
    """Concatenate rendered demonstrations with the template separator.

    Appending a rendered query to the result yields a complete prompt.
    """
    if not group:
        raise ValueError("cannot render a context from an empty group")
    return template.separator.join(template.render_demo(d) for d in group)


def group_demos(partition: Partition, demos, group_index: int):
    """Materialize one subgroup's demonstrations."""
    return [demos[i] for i in partition.groups[group_index]]


def render_group_contexts(partition: Partition, demos, template: Template):
    """Render every subgroup context, in group order."""
    return [
        render_context(group_demos(partition, demos, g), template)
        for g in range(partition.k)
    ]


def split_halves(partition: Partition):
    """Split group indices into the cross-validation halves.

    The first half takes groups ``0 .. floor(k/2)-1``, the second the rest;
    together they cover every group exactly once.
    """
    k = partition.k
    if k < 2:
        raise ValueError("cross-validation requires at least two groups")
    cut = k // 2
    return tuple(range(cut)), tuple(range(cut, k))
