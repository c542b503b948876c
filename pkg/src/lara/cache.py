"""Content-addressed response cache: one JSON file per entry, atomic writes.

Entries are keyed by a SHA-256 digest of the canonical request
serialization, so identical requests hit the same file on any platform.
Writes go to a temp file in the same directory followed by an atomic
rename, which makes the cache safe for concurrent readers and writers
without a database. Disk failures degrade the cache to a pass-through with
a warning; they never corrupt results.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time

log = logging.getLogger(__name__)

CACHE_DIR_ENV = "LARA_CACHE_DIR"


def cache_key(model_id: str, prefix: str, top_k: int) -> str:
    """SHA-256 hex digest of ``model_id \\x00 top_k \\x00 prefix`` (UTF-8)."""
    payload = b"\x00".join(
        (model_id.encode("utf-8"), str(top_k).encode("utf-8"), prefix.encode("utf-8"))
    )
    return hashlib.sha256(payload).hexdigest()


class DiskCache:
    """Directory of digest-named JSON files holding sparse logit maps."""

    def __init__(self, directory):
        self.directory = str(directory)
        os.makedirs(self.directory, exist_ok=True)

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, f"{key}.json")

    def get(self, key: str):
        path = self._path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                entry = json.load(fh)
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError) as exc:
            log.warning("cache read failed for %s: %s", key, exc)
            return None
        value = entry.get("logits")
        if not isinstance(value, dict) or entry.get("key") != key:
            log.warning("cache entry %s is malformed; ignoring", key)
            return None
        return {str(t): float(v) for t, v in value.items()}

    def put(self, key: str, logits) -> None:
        entry = {"key": key, "created_at": time.time(), "logits": dict(logits)}
        path = self._path(key)
        try:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, sort_keys=True)
            os.replace(tmp, path)
        except OSError as exc:
            log.warning("cache write failed for %s: %s", key, exc)

    def stats(self):
        """(entry count, total bytes) for everything currently stored."""
        count = 0
        size = 0
        try:
            names = os.listdir(self.directory)
        except FileNotFoundError:
            return 0, 0
        for name in names:
            if not name.endswith(".json"):
                continue
            count += 1
            try:
                size += os.path.getsize(os.path.join(self.directory, name))
            except OSError:
                pass
        return count, size

    def clear(self) -> int:
        """Remove every entry; returns the number removed."""
        removed = 0
        try:
            names = os.listdir(self.directory)
        except FileNotFoundError:
            return 0
        for name in names:
            if name.endswith(".json") or name.endswith(".tmp"):
                try:
                    os.unlink(os.path.join(self.directory, name))
                    removed += 1
                except OSError:
                    pass
        return removed


class CachedLM:
    """Caching wrapper around a logit provider.

    The cache is consulted before any backend call; for a fixed
    (model_id, prefix, top_k) at most one backend request is ever made.
    An optional recorder observes every logical request with its hit flag.
    """

    def __init__(self, inner, cache: DiskCache, recorder=None):
        self.inner = inner
        self.cache = cache
        self.recorder = recorder
        self.model_id = inner.model_id
        self.top_k = inner.top_k

    def vocabulary(self):
        return self.inner.vocabulary()

    def next_token_logits(self, prefix: str):
        key = cache_key(self.model_id, prefix, self.top_k)
        cached = self.cache.get(key)
        if cached is not None:
            if self.recorder is not None:
                self.recorder.record(prefix, cache_hit=True)
            return cached
        result = self.inner.next_token_logits(prefix)
        self.cache.put(key, result)
        if self.recorder is not None:
            self.recorder.record(prefix, cache_hit=False)
        return result
