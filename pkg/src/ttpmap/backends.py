"""Chat-completion backends: live HTTP, directory replay, and in-process stubs.

All backends consume the same request payload shape
``{model, messages, temperature, top_p, max_tokens}`` and return the first
choice's message content as a string. The stub backend replays canned
responses keyed by a hash of that payload, which is what makes golden tests
runnable offline.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Callable, Optional, Protocol, Union

import requests

from .errors import BackendError

logger = logging.getLogger(__name__)


def request_payload(model: str, messages: list[dict], temperature: float,
                    top_p: Optional[float] = None,
                    max_tokens: Optional[int] = None) -> dict:
    """Canonical request body; key order is fixed so hashes are stable."""
    payload = {"model": model, "messages": messages, "temperature": temperature}
    if top_p is not None:
        payload["top_p"] = top_p
    if max_tokens is not None:
        payload["max_tokens"] = max_tokens
    return payload


def payload_key(payload: dict) -> str:
    """Stable hash of a request payload; filename stem for stub responses."""
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:24]


class ChatBackend(Protocol):
    def complete(self, payload: dict) -> str:
        """Return the assistant message content for one request payload."""
        ...


class HttpChatBackend:
    """POSTs chat-completion payloads to an HTTP endpoint, with retries.

    ``token_env`` names the environment variable holding the bearer token;
    the token itself never lives in config files.
    """

    def __init__(self, url: str, *, token_env: str = "TTPMAP_API_TOKEN",
                 retries: int = 3, timeout_s: float = 120.0,
                 max_concurrency: int = 4,
                 sleep: Callable[[float], None] = time.sleep,
                 session: Optional[requests.Session] = None):
        self.url = url
        self.token_env = token_env
        self.retries = retries
        self.timeout_s = timeout_s
        self._sleep = sleep
        self._session = session or requests.Session()
        self._semaphore = threading.Semaphore(max_concurrency)

    def complete(self, payload: dict) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._semaphore:
                    response = self._session.post(
                        self.url, json=payload, headers=headers, timeout=self.timeout_s
                    )
                response.raise_for_status()
                data = response.json()
                return data["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt < self.retries:
                    wait = 2.0 ** attempt
                    logger.warning("backend call failed (attempt %d/%d): %s",
                                   attempt + 1, self.retries + 1, exc)
                    self._sleep(wait)
        raise BackendError(f"chat completion failed after {self.retries + 1} attempts: "
                           f"{last_error}") from last_error


class StubChatBackend:
    """Replays canned responses from ``directory/<payload hash>.txt``.

    A missing response is a BackendError naming the expected file. With
    ``record_missing`` the request payload is dumped next to it so a human
    (or a test fixture) can author the response.
    """

    def __init__(self, directory: Union[str, Path], record_missing: bool = False):
        self.directory = Path(directory)
        self.record_missing = record_missing

    def complete(self, payload: dict) -> str:
        key = payload_key(payload)
        path = self.directory / f"{key}.txt"
        if not path.exists():
            if self.record_missing:
                self.directory.mkdir(parents=True, exist_ok=True)
                request_path = self.directory / f"{key}.request.json"
                request_path.write_text(
                    json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2),
                    encoding="utf-8",
                )
            raise BackendError(f"no stub response for request {key} in {self.directory}")
        return path.read_text(encoding="utf-8")

    def save(self, payload: dict, response: str) -> Path:
        """Write a canned response for this payload; returns its path."""
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / f"{payload_key(payload)}.txt"
        path.write_text(response, encoding="utf-8")
        return path


class FunctionBackend:
    """Wraps a plain callable ``payload -> str``; the test-harness workhorse.

    Records every exchange, so a run against function stubs can be mirrored
    into a replay directory with :func:`mirror_to_stub`.
    """

    def __init__(self, fn: Callable[[dict], str]):
        self._fn = fn
        self.calls: list[dict] = []
        self.history: list[tuple[dict, str]] = []

    def complete(self, payload: dict) -> str:
        self.calls.append(payload)
        response = self._fn(payload)
        self.history.append((payload, response))
        return response


def mirror_to_stub(directory: Union[str, Path], *backends: FunctionBackend) -> StubChatBackend:
    """Persist recorded exchanges as a replay directory."""
    stub = StubChatBackend(directory)
    for backend in backends:
        for payload, response in backend.history:
            stub.save(payload, response)
    return stub
