"""Cross-validated weight fitting and subgroup-size selection.

The groups are split into two halves; each half's weight sub-vector is
fitted with the other half's demonstrations as teacher-forced validation
targets, so no demonstration is ever scored by weights it helped fit. The
final vector is the concatenation of the two half optima.

Teacher forcing makes every prefix independent of the weights, so all
per-group logits for a half are fetched once up front and every candidate
evaluation is pure arithmetic over those cached maps.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .cma import minimize_on_simplex
from .decoding import fetch_group_logits, split_into_tokens
from .errors import ConfigurationError
from .evolution import one_plus_one_es
from .logits import target_nll
from .partition import partition_demos, render_group_contexts, split_halves
from .types import Partition, WeightVector

log = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 20
DEFAULT_CANDIDATE_LS = (2, 4, 8)


@dataclass(frozen=True)
class FitConfig:
    """Weight-search settings.

    ``iterations`` is the optimizer budget J per half: (1+1)-ES mutations
    in binary mode, CMA-ES generations in continuous mode. ``population``
    overrides the CMA-ES candidates-per-generation default of
    4 + floor(3 ln d).
    """

    mode: str = "binary"
    iterations: int = DEFAULT_ITERATIONS
    candidate_Ls: tuple = DEFAULT_CANDIDATE_LS
    seed: int = 0
    population: int = None
    delta: float = 0.0
    normalize_binary: bool = False

    def __post_init__(self):
        if self.mode not in ("binary", "continuous"):
            raise ConfigurationError(f"unknown fit mode {self.mode!r}")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if not self.candidate_Ls or any(L < 1 for L in self.candidate_Ls):
            raise ConfigurationError("candidate_Ls must be non-empty, all >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        object.__setattr__(self, "candidate_Ls", tuple(self.candidate_Ls))


@dataclass
class FitResult:
    """Fitted weights plus the evidence they were selected on."""

    mode: str
    weights: list
    chosen_L: int
    validation_loss: float
    loss_trace: list
    seed: int
    group_demo_indices: list

    def weight_vector(self) -> WeightVector:
        return WeightVector(self.mode, tuple(self.weights))

    def to_dict(self):
        return {
            "mode": self.mode,
            "L": self.chosen_L,
            "weights": list(self.weights),
            "validation_loss": self.validation_loss,
            "seed": self.seed,
            "loss_trace": [
                [[it, loss] for it, loss in half] for half in self.loss_trace
            ],
            "group_demo_indices": [list(g) for g in self.group_demo_indices],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                mode=data["mode"],
                weights=[float(w) for w in data["weights"]],
                chosen_L=int(data["L"]),
                validation_loss=(
                    None if data["validation_loss"] is None
                    else float(data["validation_loss"])
                ),
                loss_trace=[
                    [(int(it), float(loss)) for it, loss in half]
                    for half in data["loss_trace"]
                ],
                seed=int(data["seed"]),
                group_demo_indices=[
                    [int(i) for i in g] for g in data["group_demo_indices"]
                ],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed weights data: {exc}") from exc


def save_fit_result(result: FitResult, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_fit_result(path) -> FitResult:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"weights file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    return FitResult.from_dict(data)


class _HalfObjective:
    """Validation loss for one half's candidate weight vectors.

    Holds the prefetched per-step logit maps for every (validation item,
    position), evaluates candidates by pure arithmetic, and memoizes binary
    candidates. An all-zero binary candidate means "no group selected": its
    combined logits are the zero vector over the union key set, i.e. a
    uniform distribution, which gives the search a well-defined loss on the
    way to (or from) the empty selection.
    """

    def __init__(self, items, mode, delta, normalize_binary, on_eval=None,
                 eval_context=None):
        self.items = items  # [[({group -> logits}, target_token), ...], ...]
        self.mode = mode
        self.delta = delta
        self.normalize_binary = normalize_binary
        self.on_eval = on_eval
        self.eval_context = eval_context
        self._memo = {}
        self.best_nonzero = None  # (loss, bits tuple)

    def __call__(self, w):
        values = tuple(float(v) for v in np.asarray(w, dtype=float))
        if self.on_eval is not None:
            self.on_eval(*self.eval_context, values)
        if self.mode == "binary":
            cached = self._memo.get(values)
            if cached is not None:
                return cached
        loss = self._evaluate(values)
        if self.mode == "binary":
            self._memo[values] = loss
            if any(values) and (
                self.best_nonzero is None or loss < self.best_nonzero[0]
            ):
                self.best_nonzero = (loss, values)
        return loss

    def _evaluate(self, values):
        all_zero = not any(values)
        weights = None if all_zero else WeightVector(self.mode, values)
        total = 0.0
        for steps in self.items:
            for sets, target in steps:
                if all_zero:
                    keys = set().union(*(s.keys() for s in sets))
                    keys.add(target)
                    total += math.log(len(keys))
                else:
                    total += target_nll(
                        sets, weights, target, delta=self.delta,
                        normalize_binary=self.normalize_binary,
                    )
        return total / len(self.items)


def _prefetch_half(contexts, opt_groups, val_items, provider, pool):
    """Fetch the per-group logits for every validation step of one half."""
    items = []
    for query, targets in val_items:
        steps = []
        forced = ""
        for token in targets:
            prefixes = [contexts[g] + query + forced for g in opt_groups]
            sets = fetch_group_logits(provider, prefixes, pool=pool)
            steps.append((sets, token))
            forced += token
        items.append(steps)
    return items


def _optimize_half(objective, dim, config, rng):
    if config.mode == "binary":
        bits, trace = one_plus_one_es(dim, config.iterations, objective, rng)
        return [float(b) for b in bits], trace
    weights, trace = minimize_on_simplex(
        dim, config.iterations, objective, rng, population=config.population
    )
    return [float(v) for v in weights], trace


def fit_weights(partition: Partition, demos, template, provider,
                config: FitConfig, pool=None, on_loss_eval=None) -> FitResult:
    """Fit one weight vector for a fixed partition.

    Requires at least two groups; with a single group there is nothing to
    cross-validate and the degenerate full-weight vector is returned with a
    warning. ``on_loss_eval(half_index, validation_demo_indices, candidate)``
    is invoked for every loss evaluation, which is how the no-leakage
    property is asserted in tests.
    """
    k = partition.k
    group_demo_indices = [list(g) for g in partition.groups]
    if k < 2:
        log.warning(
            "cross-validation requires at least two groups (k=%d); "
            "returning %s weights unfitted",
            k, "all-ones" if config.mode == "binary" else "uniform",
        )
        values = [1.0] * k if config.mode == "binary" else [1.0 / k] * k
        return FitResult(
            mode=config.mode, weights=values, chosen_L=partition.L,
            validation_loss=None, loss_trace=[], seed=config.seed,
            group_demo_indices=group_demo_indices,
        )

    contexts = render_group_contexts(partition, demos, template)
    half_a, half_b = split_halves(partition)
    vocabulary = provider.vocabulary()

    half_weights = []
    half_losses = []
    traces = []
    objectives = []
    for half_index, (opt_groups, val_groups) in enumerate(
        ((half_a, half_b), (half_b, half_a))
    ):
        val_demo_indices = [
            i for g in val_groups for i in partition.groups[g]
        ]
        val_items = []
        for i in val_demo_indices:
            demo = demos[i]
            query = template.render_query(demo.input)
            targets = split_into_tokens(demo.output, vocabulary)
            val_items.append((query, targets))
        items = _prefetch_half(contexts, opt_groups, val_items, provider, pool)
        objective = _HalfObjective(
            items, config.mode, config.delta, config.normalize_binary,
            on_eval=on_loss_eval,
            eval_context=(half_index, tuple(val_demo_indices)),
        )
        rng = np.random.default_rng((config.seed, partition.L, half_index))
        values, trace = _optimize_half(objective, len(opt_groups), config, rng)
        half_weights.append(values)
        half_losses.append(trace[-1][1])
        traces.append(trace)
        objectives.append(objective)

    full = half_weights[0] + half_weights[1]
    if config.mode == "binary" and not any(full):
        # Never return an empty ensemble: fall back, per half, to the best
        # non-empty selection the search evaluated (all-ones if none was).
        for idx, objective in enumerate(objectives):
            dim = len(half_weights[idx])
            if objective.best_nonzero is not None:
                half_losses[idx], values = objective.best_nonzero
                half_weights[idx] = list(values)
            else:
                half_weights[idx] = [1.0] * dim
                half_losses[idx] = objective(np.ones(dim))
        full = half_weights[0] + half_weights[1]
        log.warning("search selected no groups at all; substituted %s", full)
    if config.mode == "continuous":
        total = sum(full)
        full = [v / total for v in full]

    return FitResult(
        mode=config.mode,
        weights=full,
        chosen_L=partition.L,
        validation_loss=(half_losses[0] + half_losses[1]) / 2.0,
        loss_trace=traces,
        seed=config.seed,
        group_demo_indices=group_demo_indices,
    )


def feasible_candidates(n_demos: int, candidate_Ls):
    """Split the L grid into (feasible, infeasible) for an n-demo pool.

    A candidate is feasible when it yields at least two full groups, the
    minimum for the cross-validation split.
    """
    feasible = []
    infeasible = []
    for L in candidate_Ls:
        if L <= n_demos and n_demos // L >= 2:
            feasible.append(L)
        else:
            infeasible.append(L)
    return feasible, infeasible


def select_L(demos, template, provider, config: FitConfig, pool=None,
             on_candidate=None, shuffle_seed=None) -> FitResult:
    """Fit every feasible candidate L and keep the lowest validation loss.

    Ties go to the smallest L (cheapest at inference). ``on_candidate``
    observes each candidate's finished FitResult.
    """
    feasible, infeasible = feasible_candidates(len(demos), config.candidate_Ls)
    if not feasible:
        raise ConfigurationError(
            f"no feasible subgroup size for {len(demos)} demonstrations; "
            f"infeasible candidates: {sorted(infeasible)} "
            "(each needs at least two full groups)"
        )
    if infeasible:
        log.warning(
            "skipping infeasible subgroup sizes %s for %d demonstrations",
            sorted(infeasible), len(demos),
        )
    best = None
    for L in feasible:
        partition = partition_demos(demos, L, shuffle_seed=shuffle_seed)
        if partition.dropped:
            log.warning(
                "L=%d drops %d trailing demonstrations", L, len(partition.dropped)
            )
        result = fit_weights(partition, demos, template, provider, config, pool=pool)
        if on_candidate is not None:
            on_candidate(result)
        if best is None or (result.validation_loss, result.chosen_L) < (
            best.validation_loss, best.chosen_L
        ):
            best = result
    return best
