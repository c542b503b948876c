"""Deterministic mock tasks with known-optimal weight vectors.

These builders construct a TableLM whose behavior depends on which
demonstration group a prompt was rendered from: rule suffixes span the
tail of a group's context plus the rendered query, which pins down the
(group, query) pair exactly. Making one group answer correctly and the
rest answer incorrectly yields a task whose optimal weight vector is known
in closed form, so optimizer and end-to-end behavior can be checked
against brute-force enumeration.
"""

from __future__ import annotations

import json
import os
import random

from .harness import Task
from .partition import partition_demos, render_context
from .providers import TableLM
from .types import Demonstration, Template

ANSWERS = ("A", "B")

PLANTED_TEMPLATE = Template(
    demo_pattern="[{input}={output}]",
    query_pattern="\n>{input}=",
    separator="\n",
)


def _assign_answers(inputs, rng):
    return {text: rng.choice(ANSWERS) for text in inputs}


def _other(answer):
    return "B" if answer == "A" else "A"


def _answer_logits(preferred, margin):
    return {preferred: 0.0, _other(preferred): -margin}


DEFAULT_LOGITS = {"\n": 0.0, "A": -12.0, "B": -12.0}


def build_planted_task(n_train=32, n_test=50, subgroup_size=8,
                       informative_group=0, seed=0, margin=6.0):
    """One informative subgroup among noise; answers are single tokens.

    Under the returned table, prompts built from the informative group's
    context score the gold answer highest; prompts from any other group
    actively prefer the wrong answer by the same margin. The uniquely
    optimal binary weight vector is therefore the one-hot mask on the
    informative group, and uniform mixing decodes the wrong answer on
    every query.
    """
    rng = random.Random(seed)
    train_inputs = [f"q{i:03d}" for i in range(n_train)]
    test_inputs = [f"t{i:03d}" for i in range(n_test)]
    gold = _assign_answers(train_inputs + test_inputs, rng)

    demos = [Demonstration(x, gold[x]) for x in train_inputs]
    partition = partition_demos(demos, subgroup_size)
    if not 0 <= informative_group < partition.k:
        raise ValueError(
            f"informative_group must be in [0, {partition.k})"
        )

    rules = []
    for g, group in enumerate(partition.groups):
        tail = PLANTED_TEMPLATE.render_demo(demos[group[-1]])
        for x in train_inputs + test_inputs:
            suffix = tail + PLANTED_TEMPLATE.render_query(x)
            preferred = gold[x] if g == informative_group else _other(gold[x])
            rules.append((suffix, _answer_logits(preferred, margin)))

    table = TableLM(DEFAULT_LOGITS, rules)
    task = Task(
        name="planted",
        template=PLANTED_TEMPLATE,
        train=tuple(demos),
        test=tuple((x, gold[x]) for x in test_inputs),
    )
    return task, table


def build_size_selective_task(n_train=16, n_test=20, informative_span=4,
                              candidate_sizes=(2, 4, 8), seed=0, margin=6.0):
    """A task where exactly one subgroup size isolates the useful context.

    The first ``informative_span`` demonstrations answer correctly only
    when they appear together, in order, at the end of the context: the
    good rule's suffix is the full rendering of that block. Every group
    tail that can arise under any candidate size gets an actively-wrong
    rule instead, so partitions at other sizes contain no informative
    group at all and their validation losses stay high.
    """
    rng = random.Random(seed)
    train_inputs = [f"q{i:03d}" for i in range(n_train)]
    test_inputs = [f"t{i:03d}" for i in range(n_test)]
    gold = _assign_answers(train_inputs + test_inputs, rng)
    demos = [Demonstration(x, gold[x]) for x in train_inputs]

    block = render_context(demos[:informative_span], PLANTED_TEMPLATE)
    tails = sorted(
        {
            partition_demos(demos, L).groups[g][-1]
            for L in candidate_sizes
            if L <= n_train
            for g in range(n_train // L)
        }
    )

    rules = []
    for x in train_inputs + test_inputs:  # long informative rules first
        suffix = block + PLANTED_TEMPLATE.render_query(x)
        rules.append((suffix, _answer_logits(gold[x], margin)))
    for tail_index in tails:
        tail = PLANTED_TEMPLATE.render_demo(demos[tail_index])
        for x in train_inputs + test_inputs:
            suffix = tail + PLANTED_TEMPLATE.render_query(x)
            rules.append((suffix, _answer_logits(_other(gold[x]), margin)))

    table = TableLM(DEFAULT_LOGITS, rules)
    task = Task(
        name="size-selective",
        template=PLANTED_TEMPLATE,
        train=tuple(demos),
        test=tuple((x, gold[x]) for x in test_inputs),
    )
    return task, table


COST_TEMPLATE = Template(
    demo_pattern="### example {input} maps to {output} ###",
    query_pattern="\n>>> query {input} maps to",
    separator="\n",
)


def build_cost_task(n_train=32, n_test=8):
    """Uniform-length fixture for request-size accounting.

    Every rendered demonstration has identical length and every decode
    emits one content token then a newline, so prompt-length ratios across
    methods reduce to clean arithmetic.
    """
    demos = [Demonstration(f"d{i:03d}", "y") for i in range(n_train)]
    test = tuple((f"e{i:03d}", "x") for i in range(n_test))
    table = TableLM(
        {"x": 0.0, "\n": -1.0},
        [("x", {"\n": 0.0, "x": -9.0})],
    )
    task = Task(
        name="uniform-cost",
        template=COST_TEMPLATE,
        train=tuple(demos),
        test=test,
    )
    return task, table


def write_task_dir(task: Task, table: TableLM, directory):
    """Persist a mock task as a CLI-consumable directory.

    Writes train.jsonl / test.jsonl / template.json and the TableLM spec
    as table.json next to them.
    """
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "train.jsonl"), "w", encoding="utf-8") as fh:
        for demo in task.train:
            fh.write(json.dumps({"input": demo.input, "output": demo.output}))
            fh.write("\n")
    with open(os.path.join(directory, "test.jsonl"), "w", encoding="utf-8") as fh:
        for text, gold in task.test:
            fh.write(json.dumps({"input": text, "output": gold}))
            fh.write("\n")
    with open(os.path.join(directory, "template.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "demo": task.template.demo_pattern,
                "query": task.template.query_pattern,
                "separator": task.template.separator,
            },
            fh, indent=2,
        )
        fh.write("\n")
    table.save_json(os.path.join(directory, "table.json"))


def main(argv=None):
    """Emit the planted fixture to a directory (python -m lara.planted DIR)."""
    import sys

    argv = sys.argv[1:] if argv is None else argv
    target = argv[0] if argv else "fixtures/planted"
    task, table = build_planted_task()
    write_task_dir(task, table, target)
    print(f"wrote planted fixture to {target}")


if __name__ == "__main__":
    main()
