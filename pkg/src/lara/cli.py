"""Command-line interface: fit weights, run inference/evaluation, manage cache.

Subcommands
-----------
fit    fit subgroup weights on a task's train split and write a weights file
eval   score a method over a task's test split (report JSON + table)
infer  decode predictions for the test split without scoring
cache  show or clear the response cache

Provider selection is exclusive: ``--mock table.json`` runs the in-process
table backend; ``--endpoint URL --model ID`` talks to an OpenAI-compatible
completion server (bearer token from LARA_API_KEY). A JSON config file can
supply any long-form option; explicit flags win over the file.

Exit codes: 0 success, 2 configuration error, 3 provider/network error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .cache import CACHE_DIR_ENV, CachedLM, DiskCache
from .decoding import DecodeParams
from .errors import ConfigurationError, LaraError, ProviderError
from .fitting import FitConfig, save_fit_result, select_L
from .harness import METHODS, MethodConfig, load_task, run_eval
from .providers import (
    OpenAICompletionsLM,
    ProviderConfig,
    RecordingLM,
    RequestRecorder,
    TableLM,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_INTERNAL = 4


def _default_jobs():
    return min(os.cpu_count() or 1, 8)


def _add_provider_args(parser):
    parser.add_argument("--mock", metavar="TABLE_JSON",
                        help="use the deterministic table backend from this spec file")
    parser.add_argument("--endpoint", metavar="URL",
                        help="OpenAI-compatible completions endpoint base URL")
    parser.add_argument("--model", metavar="ID", help="model id for --endpoint")
    parser.add_argument("--top-k", type=int, default=None,
                        help="logprob entries to request per position (default 20)")
    parser.add_argument("--timeout", type=float, default=None,
                        help="HTTP timeout in seconds (default 30)")
    parser.add_argument("--max-retries", type=int, default=None,
                        help="total backend attempts per request (default 3)")


def _add_common_args(parser):
    parser.add_argument("--task", required=True, metavar="DIR",
                        help="task directory with train.jsonl/test.jsonl/template.json")
    parser.add_argument("--cache-dir", default=None,
                        help=f"response cache directory (or ${CACHE_DIR_ENV})")
    parser.add_argument("--jobs", type=int, default=None,
                        help="parallel workers (default: CPUs, capped at 8)")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for all stochastic choices (default 0)")
    parser.add_argument("--delta", type=float, default=None,
                        help="imputation margin for missing union keys (default 0)")
    parser.add_argument("--normalize-binary", action="store_true", default=None,
                        help="average instead of sum selected groups' logits")
    parser.add_argument("--config", metavar="JSON",
                        help="JSON file of option defaults; flags win")


def _add_decode_args(parser):
    parser.add_argument("--max-tokens", type=int, default=None,
                        help="decode at most this many tokens (default 16)")
    parser.add_argument("--stop", action="append", default=None, metavar="SEQ",
                        help=r"stop sequence, backslash escapes decoded (default \n)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lara",
        description="Ensemble in-context learning over subgroup logits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit subgroup weights on the train split")
    _add_common_args(fit)
    _add_provider_args(fit)
    fit.add_argument("--mode", choices=("binary", "continuous"), default=None,
                     help="weight mode (default binary)")
    fit.add_argument("--L", type=int, default=None,
                     help="fixed subgroup size (overrides --candidate-L)")
    fit.add_argument("--candidate-L", default=None, metavar="L1,L2,...",
                     help="subgroup sizes to select over (default 2,4,8)")
    fit.add_argument("--iterations", type=int, default=None,
                     help="optimizer iterations per half (default 20)")
    fit.add_argument("--shuffle", action="store_true", default=None,
                     help="shuffle demonstrations (seeded) before grouping")
    fit.add_argument("--out", default=None, metavar="PATH",
                     help="weights file to write (default weights.json)")

    ev = sub.add_parser("eval", help="evaluate a method on the test split")
    _add_common_args(ev)
    _add_provider_args(ev)
    _add_decode_args(ev)
    ev.add_argument("--method", required=True, choices=METHODS)
    ev.add_argument("--L", type=int, default=None,
                    help="subgroup size for lag_uniform / majority_vote")
    ev.add_argument("--weights", default=None, metavar="PATH",
                    help="weights file for lara / blara")
    ev.add_argument("--fail-fast", action="store_true", default=None,
                    help="abort on the first provider error instead of recording it")
    ev.add_argument("--out", default=None, metavar="PATH",
                    help="report JSON to write (default report.json)")

    inf = sub.add_parser("infer", help="decode test-split predictions (no scoring)")
    _add_common_args(inf)
    _add_provider_args(inf)
    _add_decode_args(inf)
    inf.add_argument("--method", required=True, choices=METHODS)
    inf.add_argument("--L", type=int, default=None)
    inf.add_argument("--weights", default=None, metavar="PATH")
    inf.add_argument("--out", default=None, metavar="PATH",
                     help="predictions JSONL (default: stdout)")

    cache = sub.add_parser("cache", help="inspect or clear the response cache")
    cache.add_argument("action", choices=("stats", "clear"))
    cache.add_argument("--cache-dir", default=None,
                       help=f"cache directory (or ${CACHE_DIR_ENV})")
    return parser


class Options:
    """Merged view over CLI flags, the optional config file, and defaults."""

    def __init__(self, args):
        self.args = vars(args)
        self.file = {}
        path = self.args.get("config")
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    self.file = json.load(fh)
            except FileNotFoundError:
                raise ConfigurationError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
            if not isinstance(self.file, dict):
                raise ConfigurationError(f"{path}: config must be a JSON object")

    def get(self, key, default=None):
        value = self.args.get(key)
        if value is not None:
            return value
        if key in self.file:
            return self.file[key]
        return default


def _decode_escapes(text):
    return text.encode("utf-8").decode("unicode_escape")


def _build_provider(opts):
    mock = opts.get("mock")
    endpoint = opts.get("endpoint")
    if bool(mock) == bool(endpoint):
        raise ConfigurationError(
            "choose exactly one provider: --mock TABLE_JSON or --endpoint URL"
        )
    if mock:
        return TableLM.from_json(mock)
    model = opts.get("model")
    if not model:
        raise ConfigurationError("--endpoint requires --model")
    config = ProviderConfig(
        endpoint=endpoint,
        model_id=model,
        top_k=int(opts.get("top_k", 20)),
        timeout=float(opts.get("timeout", 30.0)),
        max_retries=int(opts.get("max_retries", 3)),
    )
    return OpenAICompletionsLM(config)


def _wrap_provider(base, opts, recorder):
    cache_dir = opts.get("cache_dir") or os.environ.get(CACHE_DIR_ENV)
    if cache_dir:
        return CachedLM(base, DiskCache(cache_dir), recorder=recorder)
    return RecordingLM(base, recorder)


def _decode_params(opts):
    stops = opts.get("stop")
    if stops is None:
        stops = ["\n"]
    else:
        stops = [_decode_escapes(s) for s in stops]
    return DecodeParams(
        max_tokens=int(opts.get("max_tokens", 16)),
        stop_sequences=tuple(stops),
        delta=float(opts.get("delta", 0.0)),
        normalize_binary=bool(opts.get("normalize_binary", False)),
    )


def _make_pool(jobs):
    return ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None


def cmd_fit(args):
    opts = Options(args)
    task = load_task(opts.get("task"))
    recorder = RequestRecorder()
    provider = _wrap_provider(_build_provider(opts), opts, recorder)

    fixed_L = opts.get("L")
    if fixed_L:
        candidates = (int(fixed_L),)
    else:
        raw = opts.get("candidate_L", "2,4,8")
        if isinstance(raw, str):
            candidates = tuple(int(part) for part in raw.split(",") if part.strip())
        else:
            candidates = tuple(int(v) for v in raw)
    config = FitConfig(
        mode=opts.get("mode", "binary"),
        iterations=int(opts.get("iterations", 20)),
        candidate_Ls=candidates,
        seed=int(opts.get("seed", 0)),
        delta=float(opts.get("delta", 0.0)),
        normalize_binary=bool(opts.get("normalize_binary", False)),
    )
    jobs = int(opts.get("jobs", _default_jobs()))
    shuffle_seed = config.seed if opts.get("shuffle") else None

    summaries = []
    pool = _make_pool(jobs)
    try:
        result = select_L(
            list(task.train), task.template, provider, config, pool=pool,
            on_candidate=lambda r: summaries.append(r),
            shuffle_seed=shuffle_seed,
        )
    finally:
        if pool is not None:
            pool.shutdown()

    out = opts.get("out", "weights.json")
    save_fit_result(result, out)
    for candidate in summaries:
        marker = "*" if candidate.chosen_L == result.chosen_L else " "
        print(
            f"{marker} L={candidate.chosen_L:<3d} "
            f"validation_loss={candidate.validation_loss:.6f}"
        )
    nonzero = sum(1 for w in result.weights if w != 0)
    print(f"chosen L:         {result.chosen_L}")
    print(f"validation loss:  {result.validation_loss:.6f}")
    print(f"nonzero groups:   {nonzero}/{len(result.weights)}")
    print(f"weights written:  {out}")
    return EXIT_OK


def _method_config(opts):
    return MethodConfig(
        method=opts.get("method"),
        L=opts.get("L") and int(opts.get("L")),
        weights_file=opts.get("weights"),
        decode=_decode_params(opts),
    )


def cmd_eval(args):
    opts = Options(args)
    task = load_task(opts.get("task"))
    recorder = RequestRecorder()
    provider = _wrap_provider(_build_provider(opts), opts, recorder)
    method = _method_config(opts)
    jobs = int(opts.get("jobs", _default_jobs()))

    report = run_eval(
        task, method, provider, recorder=recorder, jobs=jobs,
        fail_fast=bool(opts.get("fail_fast", False)),
    )
    out = opts.get("out", "report.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(report.table())
    print(f"report written:   {out}")
    return EXIT_OK


def cmd_infer(args):
    opts = Options(args)
    task = load_task(opts.get("task"))
    recorder = RequestRecorder()
    provider = _wrap_provider(_build_provider(opts), opts, recorder)
    method = _method_config(opts)
    jobs = int(opts.get("jobs", _default_jobs()))

    report = run_eval(task, method, provider, recorder=recorder, jobs=jobs)
    lines = [
        json.dumps({"input": r["input"], "prediction": r["prediction"]},
                   sort_keys=True)
        for r in report.per_example
    ]
    out = opts.get("out")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"predictions written: {out}")
    else:
        for line in lines:
            print(line)
    return EXIT_OK


def cmd_cache(args):
    cache_dir = args.cache_dir or os.environ.get(CACHE_DIR_ENV)
    if not cache_dir:
        raise ConfigurationError(
            f"cache directory required: --cache-dir or ${CACHE_DIR_ENV}"
        )
    if not os.path.isdir(cache_dir):
        if args.action == "stats":
            print("0 entries, 0 bytes")
        else:
            print("nothing to clear")
        return EXIT_OK
    cache = DiskCache(cache_dir)
    if args.action == "stats":
        count, size = cache.stats()
        print(f"{count} entries, {size} bytes")
    else:
        removed = cache.clear()
        print(f"cleared {removed} entries")
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "cache": cmd_cache,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except LaraError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
