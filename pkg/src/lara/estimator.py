"""Scikit-learn-style estimator facade over the full pipeline.

``LogitEnsemble.fit`` takes the demonstration pool as parallel text lists
(X = inputs, y = outputs), partitions it, fits combination weights, and
exposes the result through trailing-underscore attributes;
``predict``/``score`` run greedy ensemble decoding on new inputs. The class
follows the get_params/set_params contract so it composes with clone() and
parameter search from the wider ecosystem.
"""

from __future__ import annotations

from .base import ParamsMixin, check_is_fitted, check_text_pairs, check_texts
from .decoding import DecodeParams, EnsembleContext, greedy_decode
from .errors import ConfigurationError
from .fitting import FitConfig, select_L
from .harness import exact_match
from .partition import partition_demos, render_context
from .types import Demonstration, Template, WeightVector


class LogitEnsemble(ParamsMixin):
    """In-context learner that ensembles per-subgroup next-token logits.

    Parameters
    ----------
    provider : logit source (TableLM, OpenAICompletionsLM, or a wrapper)
    template : Template used to render demonstrations and queries
    mode : "binary" (subgroup selection via (1+1)-ES), "continuous"
        (simplex weights via CMA-ES), or "uniform" (no fitting; equal
        weights — with subgroup_size=None this is plain single-context ICL)
    subgroup_size : demonstrations per subgroup; None selects over
        candidate_sizes by validation loss (ignored for uniform mode, where
        None means one group holding the entire pool)
    candidate_sizes : subgroup-size grid searched when subgroup_size is None
    iterations : optimizer budget per cross-validation half
    seed : seed for every stochastic choice; fixed seed, fixed result
    delta : imputation margin for union alignment
    normalize_binary : average instead of sum selected groups' logits
    max_tokens, stop_sequences : greedy decoding limits
    shuffle : shuffle demonstrations (seeded) before partitioning
    """

    def __init__(self, provider=None, template=None, mode="binary",
                 subgroup_size=None, candidate_sizes=(2, 4, 8), iterations=20,
                 seed=0, delta=0.0, normalize_binary=False, max_tokens=16,
                 stop_sequences=("\n",), shuffle=False):
        self.provider = provider
        self.template = template
        self.mode = mode
        self.subgroup_size = subgroup_size
        self.candidate_sizes = candidate_sizes
        self.iterations = iterations
        self.seed = seed
        self.delta = delta
        self.normalize_binary = normalize_binary
        self.max_tokens = max_tokens
        self.stop_sequences = stop_sequences
        self.shuffle = shuffle

    def _decode_params(self):
        return DecodeParams(
            max_tokens=self.max_tokens,
            stop_sequences=tuple(self.stop_sequences),
            delta=self.delta,
            normalize_binary=self.normalize_binary,
        )

    def _check_configured(self):
        if self.provider is None:
            raise ConfigurationError("LogitEnsemble needs a provider")
        if self.template is None:
            raise ConfigurationError("LogitEnsemble needs a template")
        if not isinstance(self.template, Template):
            raise ConfigurationError("template must be a Template instance")
        if self.mode not in ("binary", "continuous", "uniform"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")

    def fit(self, X, y):
        """Partition the demonstration pool and fit combination weights."""
        self._check_configured()
        X, y = check_text_pairs(X, y)
        demos = [Demonstration(xi, yi) for xi, yi in zip(X, y)]
        shuffle_seed = self.seed if self.shuffle else None

        if self.mode == "uniform":
            size = self.subgroup_size or len(demos)
            partition = partition_demos(demos, size, shuffle_seed=shuffle_seed)
            self.weights_ = WeightVector.uniform(partition.k)
            self.groups_ = [list(g) for g in partition.groups]
            self.chosen_L_ = partition.L
            self.validation_loss_ = None
            self.loss_trace_ = []
            self.fit_result_ = None
        else:
            config = FitConfig(
                mode=self.mode,
                iterations=self.iterations,
                candidate_Ls=(
                    (self.subgroup_size,) if self.subgroup_size
                    else tuple(self.candidate_sizes)
                ),
                seed=self.seed,
                delta=self.delta,
                normalize_binary=self.normalize_binary,
            )
            result = select_L(
                demos, self.template, self.provider, config,
                shuffle_seed=shuffle_seed,
            )
            self.weights_ = result.weight_vector()
            self.groups_ = result.group_demo_indices
            self.chosen_L_ = result.chosen_L
            self.validation_loss_ = result.validation_loss
            self.loss_trace_ = result.loss_trace
            self.fit_result_ = result

        self.demos_ = demos
        self.contexts_ = [
            render_context([demos[i] for i in g], self.template)
            for g in self.groups_
        ]
        return self

    def predict(self, X):
        """Greedy-decode an answer for each input."""
        check_is_fitted(self, ("weights_", "contexts_"))
        X = check_texts(X)
        params = self._decode_params()
        outputs = []
        for text in X:
            ens = EnsembleContext(
                contexts=tuple(self.contexts_),
                weights=self.weights_,
                query=self.template.render_query(text),
            )
            outputs.append(greedy_decode(ens, self.provider, params))
        return outputs

    def score(self, X, y):
        """Exact-match accuracy of predictions against gold outputs."""
        X, y = check_text_pairs(X, y, where="score")
        predictions = self.predict(X)
        hits = sum(exact_match(p, g) for p, g in zip(predictions, y))
        return hits / len(y)
