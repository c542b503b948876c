import json

import pytest

from lara.errors import ConfigurationError, ProviderError
from lara.fitting import FitConfig, fit_weights, save_fit_result
from lara.harness import (
    MethodConfig,
    Task,
    cost_report,
    exact_match,
    load_task,
    run_eval,
)
from lara.partition import partition_demos
from lara.planted import (
    build_cost_task,
    build_planted_task,
    write_task_dir,
)
from lara.providers import RecordingLM, RequestRecorder, TableLM
from lara.types import Demonstration, Template


def write_lines(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def write_template(path, demo="Q: {input}\nA: {output}",
                   query="\n\nQ: {input}\nA:", separator="\n\n"):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"demo": demo, "query": query, "separator": separator}, fh)


@pytest.fixture
def task_dir(tmp_path):
    write_lines(tmp_path / "train.jsonl", [{"input": "2+2", "output": "4"}])
    write_lines(tmp_path / "test.jsonl", [{"input": "3+3", "output": "6"}])
    write_template(tmp_path / "template.json")
    return tmp_path


class TestLoadTask:
    def test_minimal_round_trip(self, task_dir):
        task = load_task(task_dir)
        assert len(task.train) == 1
        assert task.train[0] == Demonstration("2+2", "4")
        assert task.test == (("3+3", "6"),)

    def test_bbh_shaped_template_renders_question_answer(self, tmp_path):
        write_lines(tmp_path / "train.jsonl", [
            {"input": "is ice cold?", "output": "yes"},
        ])
        write_lines(tmp_path / "test.jsonl", [
            {"input": "is fire cold?", "output": "no"},
        ])
        write_template(
            tmp_path / "template.json",
            demo="Question: {input}\nAnswer: {output}",
            query="\n\nQuestion: {input}\nAnswer:",
        )
        task = load_task(tmp_path)
        demo = task.template.render_demo(task.train[0])
        prompt = demo + task.template.render_query("is fire cold?")
        assert prompt == (
            "Question: is ice cold?\nAnswer: yes"
            "\n\nQuestion: is fire cold?\nAnswer:"
        )

    def test_missing_output_names_line(self, tmp_path):
        rows = [{"input": f"q{i}", "output": "a"} for i in range(6)]
        rows.append({"input": "q6"})  # line 7 lacks output
        write_lines(tmp_path / "train.jsonl", rows)
        write_lines(tmp_path / "test.jsonl", [{"input": "t", "output": "a"}])
        write_template(tmp_path / "template.json")
        with pytest.raises(ConfigurationError, match="line 7"):
            load_task(tmp_path)

    def test_invalid_json_names_line(self, tmp_path):
        (tmp_path / "train.jsonl").write_text(
            '{"input": "a", "output": "b"}\nnot json\n'
        )
        write_lines(tmp_path / "test.jsonl", [{"input": "t", "output": "a"}])
        write_template(tmp_path / "template.json")
        with pytest.raises(ConfigurationError, match="line 2"):
            load_task(tmp_path)

    def test_missing_file(self, tmp_path):
        write_template(tmp_path / "template.json")
        with pytest.raises(ConfigurationError, match="train.jsonl"):
            load_task(tmp_path)

    def test_empty_split_rejected(self, tmp_path):
        (tmp_path / "train.jsonl").write_text("")
        write_lines(tmp_path / "test.jsonl", [{"input": "t", "output": "a"}])
        write_template(tmp_path / "template.json")
        with pytest.raises(ConfigurationError, match="empty"):
            load_task(tmp_path)

    def test_duplicate_train_input_rejected(self, tmp_path):
        write_lines(tmp_path / "train.jsonl", [
            {"input": "same", "output": "a"},
            {"input": "same", "output": "b"},
        ])
        write_lines(tmp_path / "test.jsonl", [{"input": "t", "output": "a"}])
        write_template(tmp_path / "template.json")
        with pytest.raises(ConfigurationError, match="duplicate"):
            load_task(tmp_path)

    def test_train_test_overlap_rejected(self, tmp_path):
        write_lines(tmp_path / "train.jsonl", [{"input": "x", "output": "a"}])
        write_lines(tmp_path / "test.jsonl", [{"input": "x", "output": "a"}])
        write_template(tmp_path / "template.json")
        with pytest.raises(ConfigurationError, match="duplicates train"):
            load_task(tmp_path)

    def test_written_fixture_round_trips(self, tmp_path):
        task, table = build_planted_task(n_train=8, n_test=4, subgroup_size=2)
        write_task_dir(task, table, tmp_path / "fx")
        loaded = load_task(tmp_path / "fx")
        assert loaded.train == task.train
        assert loaded.test == task.test
        assert loaded.template == task.template


class TestExactMatch:
    def test_identical(self):
        assert exact_match("42", "42")

    def test_outer_whitespace_trimmed(self):
        assert exact_match(" 42\n", "42")

    def test_byte_difference_fails(self):
        assert not exact_match("42.", "42")

    def test_no_case_folding(self):
        assert not exact_match("Yes", "yes")

    def test_inner_whitespace_preserved(self):
        assert not exact_match("4 2", "42")


class TestCostReport:
    def test_aggregates_exact_prompt_sizes(self):
        recorder = RequestRecorder()
        recorder.record("abcd", False)
        recorder.record("ab", True)
        report = cost_report(recorder.records, groups_active=2)
        assert report.max_prompt_chars == 4
        assert report.total_request_count == 2
        assert report.total_prompt_chars == 6
        assert report.groups_active == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cost_report([], groups_active=1)


def oracle_task():
    """Single-group task whose table always emits the gold answer."""
    template = Template("[{input}={output}]", "\n>{input}=", "\n")
    train = tuple(Demonstration(f"q{i}", "A") for i in range(4))
    test = (("t0", "A"), ("t1", "A"))
    rules = [(f"\n>{x}=", {"A": 0.0, "B": -5.0}) for x in ("t0", "t1")]
    table = TableLM({"\n": 0.0, "A": -9.0}, rules)
    return Task("oracle", template, train, test), table


class TestRunEval:
    def test_oracle_backend_scores_perfectly(self):
        task, table = oracle_task()
        report = run_eval(task, MethodConfig("icl"), table)
        assert report.accuracy == 1.0
        assert report.n_correct == 2
        assert report.n_total == 2

    def test_icl_equals_lag_uniform_with_single_group(self):
        task, table = oracle_task()
        icl = run_eval(task, MethodConfig("icl"), table)
        lag = run_eval(task, MethodConfig("lag_uniform", L=4), table)
        assert [r["prediction"] for r in icl.per_example] == [
            r["prediction"] for r in lag.per_example
        ]
        assert icl.accuracy == lag.accuracy

    def test_planted_blara_beats_uniform_by_wide_margin(self):
        task, table = build_planted_task(seed=0)
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        fit = fit_weights(
            partition, demos, task.template, table,
            FitConfig(mode="binary", iterations=20, seed=0),
        )
        blara = run_eval(
            task, MethodConfig("blara"), table, fit_result=fit
        )
        lag = run_eval(task, MethodConfig("lag_uniform", L=8), table)
        assert blara.accuracy - lag.accuracy >= 0.2

    def test_majority_vote_drowns_single_good_group(self):
        # Three noise groups outvote the informative one.
        task, table = build_planted_task(seed=0)
        vote = run_eval(task, MethodConfig("majority_vote", L=8), table)
        assert vote.accuracy == 0.0

    def test_weights_file_path(self, tmp_path):
        task, table = build_planted_task(seed=0)
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        fit = fit_weights(
            partition, demos, task.template, table,
            FitConfig(mode="binary", iterations=20, seed=0),
        )
        path = tmp_path / "w.json"
        save_fit_result(fit, path)
        report = run_eval(
            task, MethodConfig("blara", weights_file=str(path)), table
        )
        assert report.accuracy == 1.0
        assert report.cost.groups_active == 1

    def test_mode_mismatch_rejected(self, tmp_path):
        task, table = build_planted_task(seed=0)
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        fit = fit_weights(
            partition, demos, task.template, table,
            FitConfig(mode="binary", iterations=20, seed=0),
        )
        path = tmp_path / "w.json"
        save_fit_result(fit, path)
        with pytest.raises(ConfigurationError, match="continuous"):
            run_eval(task, MethodConfig("lara", weights_file=str(path)), table)

    def test_missing_weights_rejected(self):
        task, table = build_planted_task(seed=0)
        with pytest.raises(ConfigurationError, match="weights file"):
            run_eval(task, MethodConfig("blara"), table)

    def test_lag_uniform_requires_L(self):
        task, table = oracle_task()
        with pytest.raises(ConfigurationError, match="needs L"):
            run_eval(task, MethodConfig("lag_uniform"), table)

    def test_every_test_input_appears_exactly_once(self):
        task, table = build_planted_task(seed=1)
        report = run_eval(task, MethodConfig("lag_uniform", L=8), table)
        assert report.n_total == len(task.test)
        assert [r["index"] for r in report.per_example] == list(
            range(len(task.test))
        )
        assert {r["input"] for r in report.per_example} == {
            x for x, _ in task.test
        }

    def test_accuracy_invariant_under_test_permutation(self):
        task, table = build_planted_task(seed=0)
        permuted = Task(
            task.name, task.template, task.train, tuple(reversed(task.test))
        )
        a = run_eval(task, MethodConfig("lag_uniform", L=8), table)
        b = run_eval(permuted, MethodConfig("lag_uniform", L=8), table)
        assert a.accuracy == b.accuracy

    def test_provider_failures_recorded_not_fatal(self):
        task, table = oracle_task()

        class Flaky:
            model_id = "flaky"
            top_k = 5

            def vocabulary(self):
                return table.vocabulary()

            def next_token_logits(self, prefix):
                if ">t1=" in prefix:
                    raise ProviderError("boom", endpoint="http://x")
                return table.next_token_logits(prefix)

        report = run_eval(task, MethodConfig("icl"), Flaky())
        assert report.n_total == 2
        failed = [r for r in report.per_example if "error" in r]
        assert len(failed) == 1
        assert not failed[0]["correct"]
        assert report.accuracy == 0.5

    def test_fail_fast_propagates_with_example_index(self):
        task, table = oracle_task()

        class Broken:
            model_id = "broken"
            top_k = 5

            def vocabulary(self):
                return None

            def next_token_logits(self, prefix):
                raise ProviderError("down", endpoint="http://x")

        with pytest.raises(ProviderError, match="test example 0"):
            run_eval(task, MethodConfig("icl"), Broken(), fail_fast=True)

    def test_parallel_jobs_match_sequential(self):
        task, table = build_planted_task(seed=0, n_test=12)
        sequential = run_eval(task, MethodConfig("lag_uniform", L=8), table)
        parallel = run_eval(
            task, MethodConfig("lag_uniform", L=8), table, jobs=4
        )
        assert [r["prediction"] for r in sequential.per_example] == [
            r["prediction"] for r in parallel.per_example
        ]


class TestCostAccounting:
    def test_zero_weight_groups_generate_zero_requests(self, tmp_path):
        task, table = build_planted_task(seed=0)
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        fit = fit_weights(
            partition, demos, task.template, table,
            FitConfig(mode="binary", iterations=20, seed=0),
        )
        assert fit.weights == [1.0, 0.0, 0.0, 0.0]
        recorder = RequestRecorder()
        provider = RecordingLM(table, recorder)
        run_eval(task, MethodConfig("blara"), provider,
                 recorder=recorder, fit_result=fit)
        from lara.partition import render_group_contexts

        contexts = render_group_contexts(partition, demos, task.template)
        dead = contexts[1:]
        for record in recorder.records:
            assert record.prefix.startswith(contexts[0])
            for context in dead:
                assert not record.prefix.startswith(context)

    def test_max_prompt_shrinks_k_fold_on_uniform_fixture(self):
        task, table = build_cost_task()
        rec_icl = RequestRecorder()
        icl = run_eval(
            task, MethodConfig("icl"), RecordingLM(table, rec_icl),
            recorder=rec_icl,
        )
        rec_lag = RequestRecorder()
        lag = run_eval(
            task, MethodConfig("lag_uniform", L=8),
            RecordingLM(table, rec_lag), recorder=rec_lag,
        )
        ratio = lag.cost.max_prompt_chars / icl.cost.max_prompt_chars
        assert abs(ratio - 0.25) <= 0.025  # within 10% of 1/k, k=4

    def test_active_group_count_scales_requests(self):
        # Two of four groups selected: per decoded token, half the requests.
        task, table = build_cost_task()
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        from lara.fitting import FitResult

        fit = FitResult(
            mode="binary", weights=[1.0, 0.0, 1.0, 0.0], chosen_L=8,
            validation_loss=0.0, loss_trace=[], seed=0,
            group_demo_indices=[list(g) for g in partition.groups],
        )
        rec_blara = RequestRecorder()
        blara = run_eval(
            task, MethodConfig("blara"), RecordingLM(table, rec_blara),
            recorder=rec_blara, fit_result=fit,
        )
        rec_lag = RequestRecorder()
        lag = run_eval(
            task, MethodConfig("lag_uniform", L=8),
            RecordingLM(table, rec_lag), recorder=rec_lag,
        )
        assert blara.cost.groups_active == 2
        assert lag.cost.groups_active == 4
        assert blara.cost.total_request_count * 2 == lag.cost.total_request_count

    def test_icl_max_prompt_is_context_plus_query_plus_generation(self):
        task, table = build_cost_task()
        recorder = RequestRecorder()
        run_eval(task, MethodConfig("icl"), RecordingLM(table, recorder),
                 recorder=recorder)
        from lara.partition import render_context

        context = render_context(list(task.train), task.template)
        longest_query = max(
            len(task.template.render_query(x)) for x, _ in task.test
        )
        # Two decode steps: the longest request carries one generated char.
        expected = len(context) + longest_query + 1
        assert max(len(r.prefix) for r in recorder.records) == expected
