import itertools
import json
import math

import pytest

from lara.decoding import DecodeParams, EnsembleContext, sequence_nll, split_into_tokens
from lara.errors import ConfigurationError
from lara.fitting import (
    FitConfig,
    FitResult,
    feasible_candidates,
    fit_weights,
    load_fit_result,
    save_fit_result,
    select_L,
)
from lara.partition import partition_demos, render_group_contexts, split_halves
from lara.planted import build_planted_task, build_size_selective_task
from lara.providers import TableLM
from lara.types import Demonstration, Template, WeightVector


@pytest.fixture(scope="module")
def planted():
    task, table = build_planted_task(seed=0)
    return task, table


def half_validation_loss(task, table, partition, half, other_half, values, mode):
    """Re-derive one half's validation loss through the public decode path."""
    train, template = task
    contexts = render_group_contexts(partition, list(train), template)
    half_contexts = tuple(contexts[g] for g in half)
    vocab = table.vocabulary()
    params = DecodeParams()
    total = 0.0
    count = 0
    for g in other_half:
        for i in partition.groups[g]:
            demo = train[i]
            query = template.render_query(demo.input)
            targets = split_into_tokens(demo.output, vocab)
            if any(values):
                ens = EnsembleContext(
                    half_contexts, WeightVector(mode, values), query
                )
                total += sequence_nll(ens, targets, table, params)
            else:
                # No group selected: combined logits are identically zero
                # over the union key set, i.e. a uniform distribution.
                forced = ""
                for token in targets:
                    keys = set()
                    for c in half_contexts:
                        keys |= set(table.next_token_logits(c + query + forced))
                    keys.add(token)
                    total += math.log(len(keys))
                    forced += token
            count += 1
    return total / count


class TestFitWeights:
    def test_planted_binary_selects_informative_group(self, planted):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        config = FitConfig(mode="binary", iterations=20, seed=0)
        result = fit_weights(partition, demos, task.template, table, config)
        assert result.weights == [1.0, 0.0, 0.0, 0.0]
        assert result.chosen_L == 8
        assert result.group_demo_indices == [list(g) for g in partition.groups]

    def test_k4_binary_runs_two_dim2_searches(self, planted):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        config = FitConfig(mode="binary", iterations=20, seed=0)
        evals = []
        result = fit_weights(
            partition, demos, task.template, table, config,
            on_loss_eval=lambda half, val, w: evals.append((half, val, w)),
        )
        assert len(result.weights) == 4
        assert {len(w) for _, _, w in evals} == {2}
        assert {half for half, _, _ in evals} == {0, 1}

    def test_half_a_optimum_confirmed_by_brute_force(self, planted):
        # Enumerate all four binary vectors for the informative half and
        # check the fit returned the one with the smallest validation NLL.
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        half_a, half_b = split_halves(partition)
        losses = {
            bits: half_validation_loss(
                (task.train, task.template), table, partition, half_a, half_b,
                bits, "binary",
            )
            for bits in itertools.product((0.0, 1.0), repeat=2)
        }
        assert min(losses, key=losses.get) == (1.0, 0.0)
        config = FitConfig(mode="binary", iterations=20, seed=0)
        result = fit_weights(partition, demos, task.template, table, config)
        assert tuple(result.weights[:2]) == (1.0, 0.0)

    def test_validation_loss_matches_reevaluation(self, planted):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        half_a, half_b = split_halves(partition)
        config = FitConfig(mode="binary", iterations=20, seed=3)
        result = fit_weights(partition, demos, task.template, table, config)
        loss_a = half_validation_loss(
            (task.train, task.template), table, partition, half_a, half_b,
            tuple(result.weights[: len(half_a)]), "binary",
        )
        loss_b = half_validation_loss(
            (task.train, task.template), table, partition, half_b, half_a,
            tuple(result.weights[len(half_a):]), "binary",
        )
        assert result.validation_loss == pytest.approx(
            (loss_a + loss_b) / 2, abs=1e-12
        )

    def test_no_leakage_between_halves(self, planted):
        # Criterion: no loss evaluation may use the optimized half's own
        # demonstrations as validation data.
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        half_a, half_b = split_halves(partition)
        own = {
            0: {i for g in half_a for i in partition.groups[g]},
            1: {i for g in half_b for i in partition.groups[g]},
        }
        observed = []
        config = FitConfig(mode="binary", iterations=20, seed=0)
        fit_weights(
            partition, demos, task.template, table, config,
            on_loss_eval=lambda half, val, w: observed.append((half, set(val))),
        )
        assert observed
        for half, val_indices in observed:
            assert not (val_indices & own[half])
            assert val_indices  # validation set is never empty

    def test_loss_traces_non_increasing_binary(self, planted):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        for seed in range(10):
            config = FitConfig(mode="binary", iterations=20, seed=seed)
            result = fit_weights(partition, demos, task.template, table, config)
            for half_trace in result.loss_trace:
                losses = [l for _, l in half_trace]
                assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_seeded_determinism(self, planted):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        config = FitConfig(mode="binary", iterations=20, seed=11)
        r1 = fit_weights(partition, demos, task.template, table, config)
        r2 = fit_weights(partition, demos, task.template, table, config)
        assert r1.to_dict() == r2.to_dict()

    def test_continuous_weights_on_simplex(self, planted):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        config = FitConfig(mode="continuous", iterations=20, seed=0)
        result = fit_weights(partition, demos, task.template, table, config)
        assert all(w >= 0 for w in result.weights)
        assert sum(result.weights) == pytest.approx(1.0, abs=1e-9)
        # The informative group must dominate its half.
        assert result.weights[0] > 0.45

    def test_identical_groups_continuous_landscape_is_flat(self):
        # All demonstrations identical: every weight vector gives the same
        # combined logits, so the fitted loss equals the uniform loss.
        demos = [Demonstration("same", "A") for _ in range(8)]
        template = Template("[{input}={output}]", "\n>{input}=", "\n")
        table = TableLM({"A": -0.5, "B": -1.5})
        partition = partition_demos(demos, 2)
        config = FitConfig(mode="continuous", iterations=10, seed=0)
        result = fit_weights(partition, demos, template, table, config)
        half_a, half_b = split_halves(partition)
        uniform_loss = half_validation_loss(
            (demos, template), table, partition, half_a, half_b,
            (0.5, 0.5), "continuous",
        )
        assert result.validation_loss == pytest.approx(uniform_loss, abs=1e-6)

    def test_single_group_returns_degenerate_weights(self, planted, caplog):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, len(demos))
        config = FitConfig(mode="binary", iterations=5, seed=0)
        with caplog.at_level("WARNING"):
            result = fit_weights(partition, demos, task.template, table, config)
        assert result.weights == [1.0]
        assert result.validation_loss is None
        assert result.loss_trace == []
        assert any("two groups" in rec.message for rec in caplog.records)

    def test_all_noise_pool_substitutes_nonzero_vector(self):
        # A pool with no informative group converges to the empty selection
        # in both halves; the result must still be a usable ensemble.
        task, table = build_size_selective_task(seed=0)
        demos = list(task.train)
        partition = partition_demos(demos, 2)  # no informative group at L=2
        config = FitConfig(mode="binary", iterations=20, seed=0)
        result = fit_weights(partition, demos, task.template, table, config)
        assert any(w != 0 for w in result.weights)

    def test_fit_loss_agrees_with_public_sequence_nll(self, planted):
        # The prefetched-arithmetic objective and the public decode path
        # must produce identical numbers for the same candidate.
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        half_a, half_b = split_halves(partition)
        config = FitConfig(mode="binary", iterations=20, seed=5)
        result = fit_weights(partition, demos, task.template, table, config)
        final_a = tuple(result.weights[: len(half_a)])
        expected = half_validation_loss(
            (task.train, task.template), table, partition, half_a, half_b,
            final_a, "binary",
        )
        assert result.loss_trace[0][-1][1] == pytest.approx(expected, abs=1e-12)


class TestPersistence:
    def test_round_trip(self, tmp_path, planted):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        config = FitConfig(mode="binary", iterations=20, seed=0)
        result = fit_weights(partition, demos, task.template, table, config)
        path = tmp_path / "weights.json"
        save_fit_result(result, path)
        loaded = load_fit_result(path)
        assert loaded.to_dict() == result.to_dict()

    def test_schema_fields(self, tmp_path, planted):
        task, table = planted
        demos = list(task.train)
        partition = partition_demos(demos, 8)
        config = FitConfig(mode="binary", iterations=20, seed=0)
        result = fit_weights(partition, demos, task.template, table, config)
        path = tmp_path / "weights.json"
        save_fit_result(result, path)
        data = json.loads(path.read_text())
        assert set(data) == {
            "mode", "L", "weights", "validation_loss", "seed",
            "loss_trace", "group_demo_indices",
        }

    def test_missing_file_is_configuration_error(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_fit_result(tmp_path / "nope.json")

    def test_malformed_file_is_configuration_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"mode": "binary"}')
        with pytest.raises(ConfigurationError, match="malformed"):
            load_fit_result(path)


class TestSelectL:
    def test_feasibility_split(self):
        feasible, infeasible = feasible_candidates(32, (2, 4, 8, 20, 64))
        assert feasible == [2, 4, 8]
        assert infeasible == [20, 64]

    def test_no_feasible_candidate_errors_with_names(self, planted):
        task, table = planted
        config = FitConfig(mode="binary", candidate_Ls=(64, 100), seed=0)
        with pytest.raises(ConfigurationError, match=r"\[64, 100\]"):
            select_L(list(task.train), task.template, table, config)

    def test_single_candidate_returned_unconditionally(self, planted):
        task, table = planted
        config = FitConfig(mode="binary", candidate_Ls=(8,), seed=0)
        result = select_L(list(task.train), task.template, table, config)
        assert result.chosen_L == 8

    def test_size_selective_fixture_chooses_isolating_size(self):
        task, table = build_size_selective_task(seed=0)
        config = FitConfig(mode="binary", candidate_Ls=(2, 4, 8), seed=0)
        observed = []
        result = select_L(
            list(task.train), task.template, table, config,
            on_candidate=lambda r: observed.append(r),
        )
        assert result.chosen_L == 4
        assert result.weights == [1.0, 0.0, 0.0, 0.0]
        assert len(observed) == 3
        others = [r for r in observed if r.chosen_L != 4]
        assert all(r.validation_loss > result.validation_loss for r in others)

    def test_ties_resolve_to_smallest_L(self, planted, monkeypatch):
        task, table = planted
        config = FitConfig(mode="binary", candidate_Ls=(8, 4), seed=0)
        import lara.fitting as fitting_module

        def fake_fit(partition, *args, **kwargs):
            return FitResult(
                mode="binary", weights=[1.0] * partition.k,
                chosen_L=partition.L, validation_loss=1.0,
                loss_trace=[], seed=0,
                group_demo_indices=[list(g) for g in partition.groups],
            )

        monkeypatch.setattr(fitting_module, "fit_weights", fake_fit)
        result = select_L(list(task.train), task.template, table, config)
        assert result.chosen_L == 4

    def test_selection_minimizes_validation_loss(self, planted):
        task, table = planted
        config = FitConfig(mode="binary", candidate_Ls=(2, 4, 8, 16), seed=1)
        observed = []
        result = select_L(
            list(task.train), task.template, table, config,
            on_candidate=lambda r: observed.append(r),
        )
        assert result.validation_loss == min(r.validation_loss for r in observed)


class TestFitConfigValidation:
    def test_bad_mode(self):
        with pytest.raises(ConfigurationError):
            FitConfig(mode="quantum")

    def test_bad_iterations(self):
        with pytest.raises(ConfigurationError):
            FitConfig(iterations=0)

    def test_negative_seed(self):
        with pytest.raises(ConfigurationError):
            FitConfig(seed=-1)

    def test_empty_candidates(self):
        with pytest.raises(ConfigurationError):
            FitConfig(candidate_Ls=())
