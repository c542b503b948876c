"""Task loading, method execution, exact-match scoring, cost accounting.

A task directory holds ``train.jsonl`` (the in-context pool), ``test.jsonl``
(inputs with gold outputs), and ``template.json``. ``run_eval`` executes
one of five methods against it:

* ``icl`` — every train demo in a single context;
* ``lag_uniform`` — partition into size-L groups, equal weights;
* ``majority_vote`` — decode each group separately, keep the mode;
* ``lara`` — continuous fitted weights;
* ``blara`` — binary fitted weights (zero-weight groups are never queried).

Costs are measured in characters of the prompts actually issued, as
ratios: splitting a pool across k groups divides the longest single
request roughly by k, and a binary vector with m active groups issues m/k
of the uniform method's requests per decoded token.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .decoding import (
    DecodeParams,
    EnsembleContext,
    greedy_decode,
    majority_vote_decode,
)
from .errors import ConfigurationError, LaraError
from .fitting import FitResult, load_fit_result
from .partition import partition_demos, render_context, render_group_contexts
from .types import Demonstration, Template, WeightVector

log = logging.getLogger(__name__)

METHODS = ("icl", "lag_uniform", "majority_vote", "lara", "blara")


@dataclass(frozen=True)
class Task:
    name: str
    template: Template
    train: tuple
    test: tuple  # of (input, gold_output)


@dataclass(frozen=True)
class MethodConfig:
    method: str
    L: int = None
    weights_file: str = None
    decode: DecodeParams = field(default_factory=DecodeParams)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(
                f"unknown method {self.method!r}; choose from {METHODS}"
            )


@dataclass
class CostReport:
    max_prompt_chars: int
    total_request_count: int
    total_prompt_chars: int
    groups_active: int

    def to_dict(self):
        return {
            "max_prompt_chars": self.max_prompt_chars,
            "total_request_count": self.total_request_count,
            "total_prompt_chars": self.total_prompt_chars,
            "groups_active": self.groups_active,
        }


@dataclass
class EvalReport:
    task: str
    method: str
    accuracy: float
    n_correct: int
    n_total: int
    per_example: list
    cost: CostReport

    def to_dict(self):
        return {
            "task": self.task,
            "method": self.method,
            "accuracy": self.accuracy,
            "n_correct": self.n_correct,
            "n_total": self.n_total,
            "per_example": self.per_example,
            "cost": self.cost.to_dict(),
        }

    def table(self) -> str:
        lines = [
            f"task            {self.task}",
            f"method          {self.method}",
            f"accuracy        {self.accuracy:.4f}  ({self.n_correct}/{self.n_total})",
            f"requests        {self.cost.total_request_count}",
            f"max prompt      {self.cost.max_prompt_chars} chars",
            f"total prompt    {self.cost.total_prompt_chars} chars",
            f"groups active   {self.cost.groups_active}",
        ]
        return "\n".join(lines)


def _read_jsonl(path):
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ConfigurationError(
                        f"{path}: line {lineno}: invalid JSON: {exc.msg}"
                    ) from exc
                if not isinstance(obj, dict):
                    raise ConfigurationError(
                        f"{path}: line {lineno}: expected an object"
                    )
                rows.append((lineno, obj))
    except FileNotFoundError:
        raise ConfigurationError(f"missing file: {path}") from None
    if not rows:
        raise ConfigurationError(f"{path}: empty split")
    return rows


def _require(obj, key, path, lineno):
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise ConfigurationError(
            f"{path}: line {lineno}: missing or empty {key!r} field"
        )
    return value


def load_template(path) -> Template:
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"missing file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("demo", "query"):
        if key not in spec:
            raise ConfigurationError(f"{path}: missing {key!r} field")
    return Template(
        demo_pattern=spec["demo"],
        query_pattern=spec["query"],
        separator=spec.get("separator", "\n\n"),
    )


def load_task(directory) -> Task:
    """Load and validate a task directory (train/test JSONL + template)."""
    train_path = os.path.join(directory, "train.jsonl")
    test_path = os.path.join(directory, "test.jsonl")
    template_path = os.path.join(directory, "template.json")

    template = load_template(template_path)
    train = []
    seen_inputs = {}
    for lineno, obj in _read_jsonl(train_path):
        demo = Demonstration(
            _require(obj, "input", train_path, lineno),
            _require(obj, "output", train_path, lineno),
        )
        if demo.input in seen_inputs:
            raise ConfigurationError(
                f"{train_path}: line {lineno}: duplicate input "
                f"(first seen on line {seen_inputs[demo.input]})"
            )
        seen_inputs[demo.input] = lineno
        train.append(demo)

    test = []
    for lineno, obj in _read_jsonl(test_path):
        text = _require(obj, "input", test_path, lineno)
        gold = _require(obj, "output", test_path, lineno)
        if text in seen_inputs:
            raise ConfigurationError(
                f"{test_path}: line {lineno}: input duplicates train line "
                f"{seen_inputs[text]}"
            )
        test.append((text, gold))

    return Task(
        name=os.path.basename(os.path.normpath(directory)),
        template=template,
        train=tuple(train),
        test=tuple(test),
    )


def exact_match(pred: str, gold: str) -> bool:
    """True iff the prediction equals the gold answer after trimming outer
    whitespace; no case folding or other normalization."""
    return pred.strip() == gold.strip()


def cost_report(records, groups_active: int) -> CostReport:
    """Aggregate recorded requests into the cost summary."""
    if not records:
        raise ValueError("cost report needs at least one recorded request")
    lengths = [len(r.prefix) for r in records]
    return CostReport(
        max_prompt_chars=max(lengths),
        total_request_count=len(records),
        total_prompt_chars=sum(lengths),
        groups_active=groups_active,
    )


def _resolve_setup(task: Task, method: MethodConfig, fit_result: FitResult):
    """Build (contexts, weights-or-None) for the method; None means vote."""
    train = list(task.train)
    if method.method == "icl":
        partition = partition_demos(train, len(train))
        contexts = render_group_contexts(partition, train, task.template)
        return contexts, WeightVector.uniform(1)
    if method.method in ("lag_uniform", "majority_vote"):
        if not method.L:
            raise ConfigurationError(f"method {method.method!r} needs L")
        partition = partition_demos(train, method.L)
        if partition.dropped:
            log.warning(
                "partition drops %d trailing demonstrations", len(partition.dropped)
            )
        contexts = render_group_contexts(partition, train, task.template)
        if method.method == "majority_vote":
            return contexts, None
        return contexts, WeightVector.uniform(partition.k)
    # lara / blara: weights come from a fit
    if fit_result is None:
        if not method.weights_file:
            raise ConfigurationError(
                f"method {method.method!r} needs a weights file or an inline fit"
            )
        fit_result = load_fit_result(method.weights_file)
    expected_mode = "binary" if method.method == "blara" else "continuous"
    if fit_result.mode != expected_mode:
        raise ConfigurationError(
            f"method {method.method!r} expects {expected_mode} weights, "
            f"got {fit_result.mode}"
        )
    max_index = max(
        (i for g in fit_result.group_demo_indices for i in g), default=-1
    )
    if max_index >= len(train):
        raise ConfigurationError(
            "weights file references demonstration indices beyond the train split"
        )
    contexts = [
        render_context([train[i] for i in g], task.template)
        for g in fit_result.group_demo_indices
    ]
    return contexts, fit_result.weight_vector()


def run_eval(task: Task, method: MethodConfig, provider, recorder=None,
             fit_result: FitResult = None, jobs: int = 1,
             fail_fast: bool = False) -> EvalReport:
    """Evaluate one method over the task's test split.

    Per-example provider failures are recorded as incorrect (with the error
    message in the example record) unless ``fail_fast`` is set, in which
    case the first failure propagates with the example index attached. Pass
    the recorder that wraps ``provider`` to get request-accurate costs.
    """
    contexts, weights = _resolve_setup(task, method, fit_result)
    groups_active = (
        len(weights.nonzero_indices) if weights is not None else len(contexts)
    )
    params = method.decode

    def decode_one(index, fan_pool):
        text, gold = task.test[index]
        query = task.template.render_query(text)
        if weights is None:
            return majority_vote_decode(contexts, query, provider, params, pool=fan_pool)
        ens = EnsembleContext(contexts=tuple(contexts), weights=weights, query=query)
        return greedy_decode(ens, provider, params, pool=fan_pool)

    per_example = []
    n_correct = 0
    indices = range(len(task.test))

    def evaluate(index, fan_pool=None):
        try:
            return index, decode_one(index, fan_pool), None
        except LaraError as exc:
            if fail_fast:
                raise type(exc)(f"test example {index}: {exc}") from exc
            return index, None, str(exc)

    if jobs > 1:
        # All provider calls funnel through one bounded fan-out pool, so at
        # most `jobs` backend requests are ever in flight; the example pool
        # only orchestrates.
        with ThreadPoolExecutor(max_workers=jobs) as fan_pool:
            with ThreadPoolExecutor(max_workers=jobs) as example_pool:
                outcomes = list(
                    example_pool.map(lambda i: evaluate(i, fan_pool), indices)
                )
    else:
        outcomes = [evaluate(i) for i in indices]

    for index, prediction, error in outcomes:
        text, gold = task.test[index]
        correct = prediction is not None and exact_match(prediction, gold)
        n_correct += int(correct)
        record = {
            "index": index,
            "input": text,
            "gold": gold,
            "prediction": prediction,
            "correct": correct,
        }
        if error is not None:
            record["error"] = error
        per_example.append(record)

    if recorder is not None and recorder.records:
        cost = cost_report(recorder.records, groups_active)
    else:
        cost = CostReport(0, 0, 0, groups_active)

    return EvalReport(
        task=task.name,
        method=method.method,
        accuracy=n_correct / len(task.test),
        n_correct=n_correct,
        n_total=len(task.test),
        per_example=per_example,
        cost=cost,
    )
