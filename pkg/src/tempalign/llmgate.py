"""Completion-endpoint gateway with a record/replay cassette.

The live backend speaks the common completion wire shape: HTTP POST with a
JSON body {model, prompt, temperature, top_p, max_tokens}, reading the reply
from choices[0].text. Transport errors and 5xx responses are retried up to
three times with exponential backoff; 4xx responses fail immediately.

A cassette maps a request fingerprint (stable hash of prompt, top_p,
max_tokens, and model) to the recorded response text, which makes every
downstream pipeline stage deterministic and testable offline. Temperature is
deliberately not part of the fingerprint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional, Sequence, Union

import requests

from .errors import BackendError, DataError, ReplayMissError

log = logging.getLogger(__name__)

CREDENTIAL_ENV_VAR = "TEMPALIGN_API_KEY"
DEFAULT_MAX_TOKENS = 64
DEFAULT_TIMEOUT_S = 60.0
DEFAULT_MAX_RETRIES = 3
DEFAULT_MAX_IN_FLIGHT = 4


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    model: str
    top_p: float = 1.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.top_p <= 1.0:
            raise DataError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise DataError(f"max_tokens must be >= 1, got {self.max_tokens}")

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "prompt": self.prompt,
                "top_p": self.top_p,
                "max_tokens": self.max_tokens,
                "model": self.model,
            },
            ensure_ascii=False,
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReplayCassette:
    """Ordered map request-fingerprint -> recorded response text."""

    def __init__(self) -> None:
        self._responses: dict[str, str] = {}
        self._requests: dict[str, dict] = {}

    def __len__(self) -> int:
        return len(self._responses)

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self._responses

    def add(self, request: CompletionRequest, response: str) -> bool:
        """Record a response; returns False if the fingerprint already exists."""
        fp = request.fingerprint()
        if fp in self._responses:
            return False
        self._responses[fp] = response
        self._requests[fp] = {
            "prompt": request.prompt,
            "model": request.model,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        }
        return True

    def lookup(self, fingerprint: str) -> Optional[str]:
        return self._responses.get(fingerprint)

    def save(self, sink: IO[bytes]) -> None:
        for fp, response in self._responses.items():
            row = {"fp": fp, "request": self._requests[fp], "response": response}
            sink.write(json.dumps(row, ensure_ascii=False, sort_keys=True).encode("utf-8"))
            sink.write(b"\n")

    def save_file(self, path: Union[str, Path]) -> None:
        with open(path, "wb") as fh:
            self.save(fh)

    @classmethod
    def load(cls, source: IO[bytes]) -> "ReplayCassette":
        cassette = cls()
        for lineno, line in enumerate(source, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                fp, response = row["fp"], row["response"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"cassette line {lineno}: malformed entry ({exc})") from exc
            if fp in cassette._responses:
                raise DataError(f"cassette line {lineno}: duplicate fingerprint {fp}")
            cassette._responses[fp] = response
            cassette._requests[fp] = row.get("request", {})
        return cassette

    @classmethod
    def load_file(cls, path: Union[str, Path]) -> "ReplayCassette":
        with open(path, "rb") as fh:
            return cls.load(fh)


class ReplayBackend:
    """Serves recorded responses; strict mode errors on unknown fingerprints."""

    def __init__(self, cassette: ReplayCassette, strict: bool = True):
        self.cassette = cassette
        self.strict = strict

    def complete(self, request: CompletionRequest) -> str:
        fp = request.fingerprint()
        response = self.cassette.lookup(fp)
        if response is None:
            if self.strict:
                raise ReplayMissError(fp)
            log.warning("replay miss for fingerprint %s (non-strict); returning empty", fp)
            return ""
        return response


class LiveBackend:
    """Single-round-trip HTTP client with bounded retries."""

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_s: float = 0.5,
    ):
        if not base_url:
            raise DataError("live backend requires a base URL")
        self.base_url = base_url
        self.api_key = api_key if api_key is not None else os.environ.get(CREDENTIAL_ENV_VAR)
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_s = backoff_s

    def complete(self, request: CompletionRequest) -> str:
        body = {
            "model": request.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff_s * (2 ** (attempt - 1))
                log.info("retry %d/%d after %.2fs", attempt, self.max_retries, delay)
                time.sleep(delay)
            try:
                resp = requests.post(
                    self.base_url, json=body, headers=headers, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if 400 <= resp.status_code < 500:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code >= 500:
                last_error = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            try:
                payload = resp.json()
                return payload["choices"][0]["text"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion response: {exc}") from exc
        raise BackendError(
            f"exhausted {self.max_retries} retries against {self.base_url}: {last_error}"
        )


Backend = Union[LiveBackend, ReplayBackend]


def complete(request: CompletionRequest, backend: Backend) -> str:
    return backend.complete(request)


def complete_many(
    requests_seq: Sequence[CompletionRequest],
    backend: Backend,
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
) -> list[str]:
    """Complete a batch with bounded concurrency; results keep input order."""
    if not requests_seq:
        return []
    if max_in_flight < 1:
        raise DataError(f"max_in_flight must be >= 1, got {max_in_flight}")
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(backend.complete, requests_seq))


def record_run(
    requests_seq: Sequence[CompletionRequest],
    backend: LiveBackend,
    sink: IO[bytes],
) -> ReplayCassette:
    """Record one cassette entry per distinct fingerprint, flushing as it goes.

    A live failure aborts with the partial cassette already flushed to the
    sink.
    """
    cassette = ReplayCassette()
    for request in requests_seq:
        fp = request.fingerprint()
        if fp in cassette:
            continue
        try:
            response = backend.complete(request)
        except BackendError:
            sink.flush()
            raise
        cassette.add(request, response)
        row = {
            "fp": fp,
            "request": {
                "prompt": request.prompt,
                "model": request.model,
                "top_p": request.top_p,
                "max_tokens": request.max_tokens,
            },
            "response": response,
        }
        sink.write(json.dumps(row, ensure_ascii=False, sort_keys=True).encode("utf-8"))
        sink.write(b"\n")
        sink.flush()
    return cassette
