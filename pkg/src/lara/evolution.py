"""(1+1) evolution strategy over binary weight vectors.

A single parent produces one offspring per generation by flipping each bit
independently with probability 1/dim; the offspring replaces the parent
whenever its loss is less than or equal to the parent's. Accepted losses
are therefore non-increasing by construction.
"""

from __future__ import annotations

import numpy as np


def mutate_bits(bits, rng) -> np.ndarray:
    """Flip each bit independently with probability 1/dim.

    One uniform draw is consumed per bit, in index order, so a seeded
    generator reproduces the exact same offspring sequence.
    """
    bits = np.asarray(bits, dtype=np.int8)
    dim = bits.shape[0]
    if dim < 1:
        raise ValueError("bit vector must be non-empty")
    flips = rng.random(dim) < (1.0 / dim)
    return bits ^ flips.astype(np.int8)


def random_bits(dim: int, rng) -> np.ndarray:
    """Uniform random start point: each bit Bernoulli(1/2)."""
    return (rng.random(dim) < 0.5).astype(np.int8)


def one_plus_one_es(dim: int, iterations: int, loss_fn, rng, initial=None):
    """Minimize ``loss_fn`` over {0,1}^dim.

    Returns ``(best_bits, trace)`` where ``trace`` is the list of
    ``(iteration, parent_loss)`` pairs including the initial point at
    iteration 0. Ties are accepted (offspring loss equal to the parent's
    replaces the parent), which lets the search drift across plateaus.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if iterations < 1:
        raise ValueError("iteration count must be >= 1")
    parent = random_bits(dim, rng) if initial is None else np.asarray(initial, dtype=np.int8)
    if parent.shape != (dim,):
        raise ValueError(f"initial vector must have shape ({dim},)")
    parent_loss = loss_fn(parent)
    trace = [(0, float(parent_loss))]
    for j in range(1, iterations + 1):
        offspring = mutate_bits(parent, rng)
        offspring_loss = loss_fn(offspring)
        if offspring_loss <= parent_loss:
            parent = offspring
            parent_loss = offspring_loss
        trace.append((j, float(parent_loss)))
    return parent, trace
