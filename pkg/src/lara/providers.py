"""Next-token logit sources.

Every provider answers one question: given a text prefix, what are the
top-K next-token log-scores? Three implementations share that surface:

* ``OpenAICompletionsLM`` — any OpenAI-compatible ``/completions`` endpoint
  that returns ``logprobs.top_logprobs`` (a local inference server speaking
  the same wire shape is just an endpoint swap);
* ``TableLM`` — a deterministic in-process lookup table for hermetic tests;
* the wrappers in :mod:`lara.cache` — content-addressed caching and request
  recording around either backend.

Providers are stateless per call and safe for concurrent use.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass

import requests

from .errors import ConfigurationError, ProtocolError, ProviderError
from .types import check_sparse_logits

API_KEY_ENV = "LARA_API_KEY"
DEFAULT_TOP_K = 20


@dataclass(frozen=True)
class ProviderConfig:
    """Connection settings for an HTTP completion backend.

    ``top_k`` defaults to 20, the widest logprob slice commonly available
    from hosted APIs. ``max_retries`` bounds the total number of backend
    calls per logical request, and ``backoff`` is the initial sleep between
    attempts (doubled each retry).
    """

    endpoint: str
    model_id: str
    top_k: int = DEFAULT_TOP_K
    auth_token: str = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        if not (1 <= self.top_k <= 100):
            raise ConfigurationError("top_k must be in [1, 100]")
        if self.timeout <= 0:
            raise ConfigurationError("timeout must be positive")
        if self.max_retries < 1:
            raise ConfigurationError("max_retries must be >= 1")


class TableLM:
    """Deterministic mock backend driven by suffix-matching rules.

    ``rules`` is an ordered list of ``(suffix, logits)`` pairs; the first
    rule whose suffix matches the end of the prefix wins, and
    ``default_logits`` answers everything else. Because rule suffixes can
    span the tail of a group context plus the rendered query, a table can
    react to which demonstration group a prompt was built from.
    """

    def __init__(self, default_logits, rules=()):
        self.default_logits = dict(
            check_sparse_logits(default_logits, where="default")
        )
        self.rules = []
        for idx, (suffix, logits) in enumerate(rules):
            if not suffix:
                raise ConfigurationError(f"rule {idx}: empty suffix pattern")
            self.rules.append(
                (suffix, dict(check_sparse_logits(logits, where=f"rule {idx}")))
            )
        spec = self.to_spec()
        digest = hashlib.sha256(
            json.dumps(spec, sort_keys=True).encode("utf-8")
        ).hexdigest()
        self.model_id = f"table-{digest[:16]}"
        self.top_k = max(
            [len(self.default_logits)] + [len(t) for _, t in self.rules]
        )

    def next_token_logits(self, prefix: str):
        if not prefix:
            raise ValueError("prefix must be non-empty")
        for suffix, logits in self.rules:
            if prefix.endswith(suffix):
                return dict(logits)
        return dict(self.default_logits)

    def vocabulary(self):
        """Every token the table can ever score; used to split targets."""
        tokens = set(self.default_logits)
        for _, logits in self.rules:
            tokens.update(logits)
        return frozenset(tokens)

    def to_spec(self):
        return {
            "default": self.default_logits,
            "rules": [{"suffix": s, "logits": t} for s, t in self.rules],
        }

    @classmethod
    def from_spec(cls, spec):
        try:
            default = spec["default"]
            rules = [(r["suffix"], r["logits"]) for r in spec.get("rules", [])]
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed table spec: {exc}") from exc
        return cls(default, rules)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                spec = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"table spec not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_spec(spec)

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_spec(), fh, sort_keys=True, indent=2)
            fh.write("\n")


_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


class OpenAICompletionsLM:
    """Client for OpenAI-compatible completion endpoints with logprobs.

    Each call POSTs ``{endpoint}/completions`` asking for a single token at
    temperature 0 with ``logprobs=top_k`` and reads
    ``choices[0].logprobs.top_logprobs[0]``. Transient failures retry with
    exponential backoff up to ``max_retries`` total attempts.
    """

    def __init__(self, config: ProviderConfig, session=None):
        self.config = config
        self.model_id = config.model_id
        self.top_k = config.top_k
        self._session = session or requests.Session()
        token = config.auth_token or os.environ.get(API_KEY_ENV)
        self._headers = {"Content-Type": "application/json"}
        if token:
            self._headers["Authorization"] = f"Bearer {token}"

    def vocabulary(self):
        return None

    def next_token_logits(self, prefix: str):
        if not prefix:
            raise ValueError("prefix must be non-empty")
        cfg = self.config
        url = cfg.endpoint.rstrip("/") + "/completions"
        payload = {
            "model": cfg.model_id,
            "prompt": prefix,
            "max_tokens": 1,
            "temperature": 0,
            "logprobs": cfg.top_k,
        }
        last_error = None
        for attempt in range(cfg.max_retries):
            if attempt:
                time.sleep(cfg.backoff * (2 ** (attempt - 1)))
            try:
                response = self._session.post(
                    url, json=payload, headers=self._headers, timeout=cfg.timeout
                )
            except requests.RequestException as exc:
                last_error = f"request failed: {exc}"
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code in (401, 403):
                raise ConfigurationError(
                    f"authentication rejected by {url} "
                    f"(set {API_KEY_ENV}): HTTP {response.status_code}"
                )
            if response.status_code != 200:
                raise ProtocolError(
                    f"HTTP {response.status_code}: {response.text[:200]}",
                    endpoint=url,
                )
            return self._parse(response, url)
        raise ProviderError(
            f"gave up after {cfg.max_retries} attempts: {last_error}",
            endpoint=url,
        )

    def _parse(self, response, url):
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not JSON: {exc}", endpoint=url)
        try:
            logprobs = body["choices"][0]["logprobs"]
        except (KeyError, IndexError, TypeError):
            raise ProtocolError(
                "response lacks choices[0].logprobs", endpoint=url
            )
        if not logprobs or not logprobs.get("top_logprobs"):
            raise ConfigurationError(
                "backend did not return top-K logprobs; it may not support "
                "the logprobs parameter"
            )
        top = logprobs["top_logprobs"][0]
        if not isinstance(top, dict) or not top:
            raise ProtocolError(
                "top_logprobs[0] is not a token → logprob map", endpoint=url
            )
        entries = {str(tok): float(lp) for tok, lp in top.items()}
        return check_sparse_logits(entries, where="backend response")


@dataclass
class RequestRecord:
    prefix: str
    cache_hit: bool


class RequestRecorder:
    """Accumulates every logical logit request for cost accounting.

    ``cache_hit`` marks requests served from the response cache; logical
    request counts and prompt lengths are the same either way, which is
    what the cost report measures.
    """

    def __init__(self):
        self.records = []

    def record(self, prefix: str, cache_hit: bool):
        self.records.append(RequestRecord(prefix, cache_hit))

    @property
    def count(self):
        return len(self.records)

    @property
    def misses(self):
        return sum(1 for r in self.records if not r.cache_hit)

    @property
    def hits(self):
        return sum(1 for r in self.records if r.cache_hit)

    def reset(self):
        self.records.clear()


class RecordingLM:
    """Pass-through wrapper that feeds a RequestRecorder (no cache)."""

    def __init__(self, inner, recorder: RequestRecorder):
        self.inner = inner
        self.recorder = recorder
        self.model_id = inner.model_id
        self.top_k = inner.top_k

    def vocabulary(self):
        return self.inner.vocabulary()

    def next_token_logits(self, prefix: str):
        result = self.inner.next_token_logits(prefix)
        self.recorder.record(prefix, cache_hit=False)
        return result
