"""Local LLM server client and a fixture-replay mock.

Both backends expose ``complete(prompt) -> str``. The live client speaks
the common local ``/api/generate`` JSON contract::

    POST {"model": ..., "prompt": ..., "stream": false, "options": {...}}
    200  {"response": "..."}

Requests are refused for non-loopback hosts unless ``allow_remote`` is set.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, TypeVar
from urllib.parse import urlparse

import requests

from .errors import (
    BackendConnectionError,
    BackendError,
    BackendHTTPError,
    BackendTimeoutError,
    ConfigError,
    InputError,
    MalformedResponseError,
    MissingFixtureError,
)
from .io import atomic_write_text, load_yaml

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "http://127.0.0.1:11434/api/generate"
DEFAULT_MODEL = "qwen3:8b"
DEFAULT_FALLBACK = "Classification: NEITHER"
DEFAULT_CONCURRENCY = 4
BACKOFF_START = 0.5


@dataclass(frozen=True)
class SamplingOptions:
    temperature: float = 0.1
    top_p: float = 0.9
    top_k: int = 10
    num_predict: int = 1000
    num_ctx: int = 10000
    stream: bool = False

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must be in (0, 1]")
        if self.top_k < 1 or self.num_predict < 1 or self.num_ctx < 1:
            raise ConfigError("top_k, num_predict and num_ctx must be >= 1")
        if self.stream:
            raise ConfigError("streaming is not supported; stream must be false")

    def to_options(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "top_k": self.top_k,
            "num_predict": self.num_predict,
            "num_ctx": self.num_ctx,
        }


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str = DEFAULT_ENDPOINT
    model_name: str = DEFAULT_MODEL
    options: SamplingOptions = field(default_factory=SamplingOptions)
    timeout: float = 120.0
    max_retries: int = 2
    allow_remote: bool = False
    api: str = "generate"

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ConfigError("timeout must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.api not in ("generate", "chat"):
            raise ConfigError(f"unknown api {self.api!r} (generate | chat)")
        if not self.allow_remote and not is_loopback_url(self.endpoint_url):
            raise ConfigError(
                f"endpoint {self.endpoint_url} is not a loopback address; "
                "set allow_remote to send data off this machine"
            )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], env: Mapping[str, str] | None = None) -> BackendConfig:
        """Build from a config mapping; ``GB_ENDPOINT``/``GB_MODEL`` override it."""
        env = os.environ if env is None else env
        data = dict(data or {})
        opts = dict(data.pop("options", None) or {})
        if "endpoint_url" in data or "endpoint" in data:
            data["endpoint_url"] = data.pop("endpoint", data.get("endpoint_url"))
        if "model" in data:
            data["model_name"] = data.pop("model")
        if env.get("GB_ENDPOINT"):
            data["endpoint_url"] = env["GB_ENDPOINT"]
        if env.get("GB_MODEL"):
            data["model_name"] = env["GB_MODEL"]
        known = {f for f in cls.__dataclass_fields__} - {"options"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown backend config keys {sorted(unknown)}")
        try:
            return cls(options=SamplingOptions(**opts), **data)
        except TypeError as exc:
            raise ConfigError(f"bad backend config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["options"] = asdict(self.options)
        return d


def load_backend_config(path: str | Path | None, env: Mapping[str, str] | None = None) -> BackendConfig:
    data = load_yaml(path) if path else {}
    if isinstance(data, dict) and "backend" in data:
        data = data["backend"]
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: backend config must be a mapping")
    return BackendConfig.from_dict(data, env=env)


def is_loopback_url(url: str) -> bool:
    host = urlparse(url).hostname
    if host is None:
        return False
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


def fingerprint(prompt: str) -> str:
    """SHA-256 hex digest of the exact prompt text."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Backend(Protocol):
    name: str

    def complete(self, prompt: str) -> str: ...


class LocalLLMBackend:
    """Blocking client for a locally hosted text-generation server.

    Safe to share across threads; each call opens its own request.
    """

    def __init__(
        self,
        config: BackendConfig,
        *,
        post: Callable[..., Any] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self.name = config.model_name
        self._post = post or requests.post
        self._sleep = sleep

    def request_body(self, prompt: str) -> bytes:
        cfg = self.config
        if cfg.api == "chat":
            payload: dict[str, Any] = {
                "model": cfg.model_name,
                "messages": [{"role": "user", "content": prompt}],
            }
        else:
            payload = {"model": cfg.model_name, "prompt": prompt}
        payload["stream"] = False
        payload["options"] = cfg.options.to_options()
        return json.dumps(payload, ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    def _extract(self, data: Any) -> str:
        if self.config.api == "chat":
            text = (data.get("message") or {}).get("content") if isinstance(data, dict) else None
        else:
            text = data.get("response") if isinstance(data, dict) else None
        if not isinstance(text, str):
            raise MalformedResponseError("response body lacks a text field")
        return text

    def _attempt(self, body: bytes) -> str:
        try:
            resp = self._post(
                self.config.endpoint_url,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=self.config.timeout,
            )
        except requests.Timeout as exc:
            raise BackendTimeoutError(f"timed out after {self.config.timeout}s") from exc
        except requests.ConnectionError as exc:
            raise BackendConnectionError(f"cannot reach {self.config.endpoint_url}: {exc}") from exc
        if resp.status_code >= 400:
            raise BackendHTTPError(resp.status_code, resp.text)
        try:
            data = resp.json()
        except ValueError as exc:
            raise MalformedResponseError(f"response is not JSON: {resp.text[:200]!r}") from exc
        return self._extract(data)

    def complete(self, prompt: str) -> str:
        """Return the full, non-streamed completion for ``prompt``.

        Retries every transport failure up to ``max_retries`` times with
        exponential backoff (0.5 s, 1 s, 2 s, ...), then re-raises the last.
        """
        if not prompt.strip():
            raise InputError("prompt must be non-empty")
        body = self.request_body(prompt)
        delay = BACKOFF_START
        for attempt in range(self.config.max_retries + 1):
            try:
                return self._attempt(body)
            except BackendError as exc:
                if attempt == self.config.max_retries:
                    raise
                log.warning("attempt %d failed (%s); retrying in %.1fs", attempt + 1, exc, delay)
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")


class MockBackend:
    """Replays canned responses keyed by prompt fingerprint.

    In strict mode an unknown prompt raises :class:`MissingFixtureError`;
    otherwise ``fallback`` is returned.
    """

    replay = True

    def __init__(
        self,
        fixtures: Mapping[str, str],
        *,
        strict: bool = True,
        fallback: str = DEFAULT_FALLBACK,
        name: str = "mock",
    ) -> None:
        self.fixtures = dict(fixtures)
        self.strict = strict
        self.fallback = fallback
        self.name = name

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> MockBackend:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load fixture file {path}: {exc}") from exc
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise ConfigError(f"{path}: fixtures must map fingerprint -> response text")
        kwargs.setdefault("name", Path(path).stem)
        return cls(data, **kwargs)

    def complete(self, prompt: str) -> str:
        key = fingerprint(prompt)
        if key in self.fixtures:
            return self.fixtures[key]
        if self.strict:
            raise MissingFixtureError(f"no fixture for prompt fingerprint {key[:16]}...")
        return self.fallback


class RecordingBackend:
    """Wraps a live backend and records every response for later replay."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self.name = inner.name
        self.fixtures: dict[str, str] = {}
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        text = self.inner.complete(prompt)
        with self._lock:
            self.fixtures[fingerprint(prompt)] = text
        return text

    def save(self, path: str | Path) -> None:
        with self._lock:
            data = dict(sorted(self.fixtures.items()))
        atomic_write_text(path, json.dumps(data, indent=2, ensure_ascii=False) + "\n")


T = TypeVar("T")
R = TypeVar("R")


def bounded_map(
    fn: Callable[[T], R], items: Sequence[T] | Iterable[T], concurrency: int = DEFAULT_CONCURRENCY
) -> list[R | BaseException]:
    """Apply ``fn`` with at most ``concurrency`` calls in flight.

    Result ``i`` belongs to item ``i`` regardless of completion order;
    exceptions are returned in place rather than raised.
    """
    items = list(items)
    if concurrency < 1:
        raise ConfigError("concurrency must be >= 1")

    def safe(x: T) -> R | BaseException:
        try:
            return fn(x)
        except Exception as exc:  # noqa: BLE001 - returned to caller by position
            return exc

    if concurrency == 1 or len(items) <= 1:
        return [safe(x) for x in items]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(safe, items))


def make_backend(
    config: BackendConfig | None = None,
    fixtures: str | Path | None = None,
    strict: bool = True,
) -> Backend:
    """Replay backend when ``fixtures`` is given, else the live client."""
    if fixtures is not None:
        return MockBackend.from_file(fixtures, strict=strict)
    return LocalLLMBackend(config or BackendConfig())


def with_model(config: BackendConfig, model: str) -> BackendConfig:
    return replace(config, model_name=model)
