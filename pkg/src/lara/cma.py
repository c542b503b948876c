"""Minimal (mu/mu_w, lambda)-CMA-ES and its simplex-constrained front end.

The implementation follows the standard parameterization: rank-based
recombination weights, cumulative step-size adaptation, and rank-one plus
rank-mu covariance updates. It deliberately omits restarts-with-growing
population, active covariance, and boundary handling; weight fitting needs
none of them, and a single identity restart covers numerical degeneracy.

Simplex constraint handling: candidates live in an unconstrained latent
space and are pushed through softmax before evaluation, so every vector
the loss ever sees (and the returned optimum) is non-negative and sums to
one exactly up to rounding.
"""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)


def default_population(dim: int) -> int:
    return 4 + int(3 * math.log(dim)) if dim > 1 else 4


def latent_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


class CMAES:
    """One run of CMA-ES minimizing ``loss_fn`` over R^dim."""

    def __init__(self, dim, loss_fn, rng, population=None, sigma0=1.0):
        self.dim = dim
        self.loss_fn = loss_fn
        self.rng = rng
        self.lam = population or default_population(dim)
        self.mu = self.lam // 2
        weights = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = weights / weights.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)
        n = float(dim)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.ds = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(
            1 - self.c1,
            2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff),
        )
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.sigma0 = sigma0
        self._reset()
        self.best_x = None
        self.best_loss = math.inf
        self.restarted = False

    def _reset(self):
        self.mean = np.zeros(self.dim)
        self.sigma = self.sigma0
        self.C = np.eye(self.dim)
        self.pc = np.zeros(self.dim)
        self.ps = np.zeros(self.dim)
        self.generation = 0

    def _decompose(self):
        # Guard against drift away from symmetry before eigendecomposition.
        self.C = (self.C + self.C.T) / 2.0
        eigvals, eigvecs = np.linalg.eigh(self.C)
        if not np.all(np.isfinite(eigvals)) or eigvals.min() <= 0:
            raise FloatingPointError("covariance lost positive definiteness")
        if eigvals.max() / eigvals.min() > 1e14:
            raise FloatingPointError("covariance condition number blew up")
        return eigvecs, np.sqrt(eigvals)

    def step(self):
        """Run one generation; returns the best loss seen so far."""
        try:
            B, D = self._decompose()
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            if self.restarted:
                raise FloatingPointError(
                    f"covariance degenerate twice, aborting: {exc}"
                ) from exc
            log.warning("covariance degenerate (%s); restarting from identity", exc)
            self.restarted = True
            self._reset()
            B, D = self._decompose()

        z = self.rng.standard_normal((self.lam, self.dim))
        y = z * D  # scale in eigenbasis
        candidates = self.mean + self.sigma * (y @ B.T)
        losses = np.array([self.loss_fn(c) for c in candidates])
        order = np.argsort(losses, kind="stable")
        if losses[order[0]] < self.best_loss:
            self.best_loss = float(losses[order[0]])
            self.best_x = candidates[order[0]].copy()

        selected = candidates[order[: self.mu]]
        old_mean = self.mean
        self.mean = self.weights @ selected
        y_w = (self.mean - old_mean) / self.sigma

        # Step-size path uses C^(-1/2) y_w computed in the eigenbasis.
        c_invsqrt_y = B @ ((B.T @ y_w) / D)
        self.ps = (1 - self.cs) * self.ps + math.sqrt(
            self.cs * (2 - self.cs) * self.mueff
        ) * c_invsqrt_y
        self.generation += 1
        expected = math.sqrt(
            1 - (1 - self.cs) ** (2 * self.generation)
        ) * self.chi_n
        hsig = float(
            np.linalg.norm(self.ps) / expected < 1.4 + 2 / (self.dim + 1.0)
        )
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(
            self.cc * (2 - self.cc) * self.mueff
        ) * y_w

        artifacts = (selected - old_mean) / self.sigma
        rank_mu = (self.weights[:, None] * artifacts).T @ artifacts
        delta_hsig = (1 - hsig) * self.cc * (2 - self.cc)
        self.C = (
            (1 - self.c1 - self.cmu) * self.C
            + self.c1 * (np.outer(self.pc, self.pc) + delta_hsig * self.C)
            + self.cmu * rank_mu
        )
        self.sigma *= math.exp(
            (self.cs / self.ds) * (np.linalg.norm(self.ps) / self.chi_n - 1)
        )
        return self.best_loss


def minimize_on_simplex(dim, generations, loss_fn, rng, population=None):
    """Minimize ``loss_fn`` over the probability simplex of dimension ``dim``.

    Runs CMA-ES in a latent space of the same dimension, mapping each
    candidate through softmax before evaluation, and returns
    ``(weights, trace)``: the softmax of the best latent ever sampled and
    the per-generation ``(generation, best_loss_so_far)`` trace (which is
    non-increasing by construction). dim=1 short-circuits to the only
    simplex point, [1.0].
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if generations < 1:
        raise ValueError("generation count must be >= 1")
    if dim == 1:
        only = np.array([1.0])
        return only, [(0, float(loss_fn(only)))]

    es = CMAES(dim, lambda z: loss_fn(latent_softmax(z)), rng, population=population)
    trace = []
    for g in range(1, generations + 1):
        best = es.step()
        trace.append((g, best))
    weights = latent_softmax(es.best_x)
    return weights, trace
