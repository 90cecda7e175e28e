"""Vision-language keyword extraction for item images.

Two fixed prompts produce two keyword sets per item: attributes of the item
itself, and aesthetic qualities of the photograph independent of the item.
Backends are pluggable; `fixture` replays canned responses for deterministic
runs, `http` is a generic prompt+image-in/text-out JSON adapter. Results are
cached per (item_id, kind, backend) and written as resumable JSONL.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Sequence

from .errors import BackendError, ConfigError, DataError, NoKeywordsError

PROMPT_ITEM_ATTRIBUTES = (
    "Describe the item in the image using keywords. Describe the color, "
    "material, pattern, style, and feeling of the item using simple, common, "
    "and many English keywords. Output as keyword1, keyword2, keyword3, "
    "... keywordn."
)

# Note: unlike the item prompt, this one carries no trailing period; it is
# reproduced exactly as used, not "fixed".
PROMPT_AESTHETIC_ATTRIBUTES = (
    "Describe the image aesthetics independent of the item using keywords. "
    "Describe qualities including image composition, color scheme, lighting, "
    "balance, symmetry, contrast, texture, and overall visual harmony, "
    "feeling of the image using simple and common English keywords. Output "
    "as keyword1, keyword2, keyword3, ... keywordn"
)


class PromptKind(Enum):
    ITEM_ATTRIBUTES = "item"
    AESTHETIC_ATTRIBUTES = "aesthetic"


_PROMPTS = {
    PromptKind.ITEM_ATTRIBUTES: PROMPT_ITEM_ATTRIBUTES,
    PromptKind.AESTHETIC_ATTRIBUTES: PROMPT_AESTHETIC_ATTRIBUTES,
}


def render_prompt(kind: PromptKind) -> str:
    """Return the immutable prompt string for a kind, byte-exact."""
    return _PROMPTS[kind]


def parse_keyword_response(raw: str) -> list[str]:
    """Normalize a raw model response into keywords.

    Splits on commas and newlines, trims whitespace and trailing periods,
    lowercases, drops chunks without any alphanumeric character, and
    deduplicates preserving first occurrence.
    """
    seen: set[str] = set()
    keywords: list[str] = []
    for chunk in raw.replace("\n", ",").split(","):
        kw = "".join(ch if ch.isprintable() else " " for ch in chunk)
        kw = kw.strip().rstrip(".").strip().lower()
        kw = " ".join(kw.split())
        if not kw or not any(ch.isalnum() for ch in kw):
            continue
        if kw not in seen:
            seen.add(kw)
            keywords.append(kw)
    if not keywords:
        raise NoKeywordsError(f"no keywords extracted from response {raw!r}")
    return keywords


@dataclass
class ExtractionRecord:
    item_id: str
    kind: PromptKind
    keywords: list[str]
    backend_name: str
    retrieved_at: str

    def to_json(self) -> str:
        return json.dumps({
            "item_id": self.item_id, "kind": self.kind.value,
            "keywords": self.keywords, "backend": self.backend_name,
            "retrieved_at": self.retrieved_at,
        }, sort_keys=True)


class FixtureBackend:
    """Replays canned responses keyed by item ID and prompt kind.

    Fixture file shape: {"<item_id>": {"item": "<raw text>",
    "aesthetic": "<raw text>"}}.
    """

    name = "fixture"

    def __init__(self, responses: dict[str, dict[str, str]]):
        self.responses = responses

    @classmethod
    def from_file(cls, path) -> "FixtureBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, item_id: str, image_ref: str | None, prompt: str) -> str:
        kind = _kind_of_prompt(prompt)
        try:
            return self.responses[item_id][kind.value]
        except KeyError:
            raise BackendError(
                f"fixture has no {kind.value} response for item {item_id!r}") from None


def _kind_of_prompt(prompt: str) -> PromptKind:
    for kind, text in _PROMPTS.items():
        if prompt == text:
            return kind
    raise ConfigError("prompt does not match any known kind")


class HttpBackend:
    """Generic JSON-over-HTTP adapter: POST {prompt, image}, read {text}.

    The auth token is read from the environment variable named by
    `auth_env` at construction time; a missing token is a startup error.
    """

    name = "http"

    def __init__(self, base_url: str, auth_env: str = "AGREC_VLM_TOKEN",
                 timeout: float = 30.0):
        if not base_url:
            raise ConfigError("http backend requires a base URL")
        token = os.environ.get(auth_env)
        if not token:
            raise ConfigError(f"auth token env var {auth_env} is not set")
        self.base_url = base_url
        self.token = token
        self.timeout = timeout

    def complete(self, item_id: str, image_ref: str | None, prompt: str) -> str:
        payload = json.dumps({"prompt": prompt, "image": image_ref}).encode("utf-8")
        req = urllib.request.Request(
            self.base_url, data=payload, method="POST",
            headers={"Content-Type": "application/json",
                     "Authorization": f"Bearer {self.token}"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.load(resp)
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise BackendError(f"backend request failed: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BackendError(f"backend returned invalid JSON: {exc.msg}") from exc
        if "text" not in body:
            raise BackendError("backend response missing 'text' field")
        return body["text"]


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class KeywordExtractor:
    """Caching front end over a backend, with bounded retries.

    Transport failures retry up to `retries` times with exponential backoff
    starting at `backoff` seconds; parse failures (no keywords) never retry.
    The cache guarantees at most one backend call per (item_id, kind).
    """

    def __init__(self, backend, retries: int = 3, backoff: float = 1.0,
                 sleep=time.sleep, now=_utc_now):
        self.backend = backend
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._now = now
        self._cache: dict[tuple[str, str, str], ExtractionRecord] = {}
        self.cache_hits = 0
        self.backend_calls = 0

    def extract(self, item_id: str, image_ref: str | None,
                kind: PromptKind) -> ExtractionRecord:
        key = (item_id, kind.value, self.backend.name)
        cached = self._cache.get(key)
        if cached is not None:
            self.cache_hits += 1
            return cached
        prompt = render_prompt(kind)
        raw = self._call_with_retries(item_id, image_ref, prompt)
        record = ExtractionRecord(item_id=item_id, kind=kind,
                                  keywords=parse_keyword_response(raw),
                                  backend_name=self.backend.name,
                                  retrieved_at=self._now())
        self._cache[key] = record
        return record

    def _call_with_retries(self, item_id, image_ref, prompt) -> str:
        delay = self.backoff
        for attempt in range(1, self.retries + 1):
            try:
                self.backend_calls += 1
                return self.backend.complete(item_id, image_ref, prompt)
            except BackendError:
                if attempt == self.retries:
                    raise
                self._sleep(delay)
                delay *= 2.0
        raise AssertionError("unreachable")


@dataclass
class BatchSummary:
    ok: int = 0
    cached: int = 0
    skipped: int = 0
    skipped_pairs: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "cached": self.cached, "skipped": self.skipped,
                "skipped_pairs": [list(p) for p in self.skipped_pairs]}


def _existing_pairs(out_path) -> set[tuple[str, str]]:
    done: set[tuple[str, str]] = set()
    if not os.path.exists(out_path):
        return done
    with open(out_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                done.add((obj["item_id"], obj["kind"]))
            except (json.JSONDecodeError, KeyError):
                raise DataError(f"corrupt extraction output line: {line[:80]!r}")
    return done


def run_extraction_batch(items: Sequence[tuple[str, str | None]],
                         kinds: Iterable[PromptKind], backend,
                         concurrency_limit: int, out_path,
                         extractor: KeywordExtractor | None = None) -> BatchSummary:
    """Extract every (item, kind) pair, appending JSONL records to out_path.

    Resumable: pairs already present in the output are counted as cached and
    not re-queried. Items whose response yields no keywords are skipped and
    reported. Output lines land in input order (waves of at most
    `concurrency_limit` in-flight requests); consumers must still not rely
    on line order.
    """
    if concurrency_limit < 1:
        raise ConfigError("concurrency_limit must be >= 1")
    extractor = extractor or KeywordExtractor(backend)
    kinds = list(kinds)
    done = _existing_pairs(out_path)
    summary = BatchSummary()

    pending: list[tuple[str, str | None, PromptKind]] = []
    for item_id, image_ref in items:
        for kind in kinds:
            if (item_id, kind.value) in done:
                summary.cached += 1
            else:
                pending.append((item_id, image_ref, kind))

    def _one(task):
        item_id, image_ref, kind = task
        try:
            return extractor.extract(item_id, image_ref, kind), None
        except NoKeywordsError:
            return None, (item_id, kind.value)

    with open(out_path, "a", encoding="utf-8") as out, \
            ThreadPoolExecutor(max_workers=concurrency_limit) as pool:
        for start in range(0, len(pending), concurrency_limit):
            wave = pending[start:start + concurrency_limit]
            for record, failed in pool.map(_one, wave):
                if record is None:
                    summary.skipped += 1
                    summary.skipped_pairs.append(failed)
                else:
                    out.write(record.to_json() + "\n")
                    summary.ok += 1
            out.flush()
    return summary
