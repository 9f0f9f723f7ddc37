"""Completion backends: a remote chat-completion endpoint and a scripted oracle."""

from __future__ import annotations

import base64
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import httpx
import yaml

from .prompts import PromptEnvelope, Role

logger = logging.getLogger(__name__)

API_KEY_ENV = "AGENT_TESTGEN_API_KEY"

DEFAULT_MODELS = {
    Role.SELECTOR.value: "gpt-4o-2024-08-06",
    Role.OBSERVER.value: "gpt-4o-2024-08-06",
    Role.VERIFIER.value: "gpt-4o-2024-08-06",
    Role.REFLECTOR.value: "gpt-4-turbo",
}


class BackendError(RuntimeError):
    pass


class TransportFailure(BackendError):
    """The remote endpoint kept failing after all retries."""


class OracleExhausted(BackendError):
    """No scripted reply matches the request: the oracle script is incomplete."""


@dataclass
class BackendConfig:
    backend_kind: str = "scripted"
    endpoint: str | None = None
    model_name_per_role: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_MODELS))
    temperature: float = 0.0
    max_retries: int = 3
    max_reasks: int = 2
    backoff_base: float = 0.5
    timeout: float = 60.0
    credential: str | None = None

    @classmethod
    def from_env(cls, **kwargs: Any) -> BackendConfig:
        kwargs.setdefault("credential", os.environ.get(API_KEY_ENV))
        return cls(**kwargs)

    def validate(self) -> None:
        if self.backend_kind not in ("remote", "scripted"):
            raise ValueError(f"unknown backend kind {self.backend_kind!r}")
        if self.backend_kind == "remote" and not (self.endpoint and self.credential):
            raise ValueError(f"remote backend needs an endpoint and ${API_KEY_ENV}")
        if self.max_retries < 0 or self.max_reasks < 0:
            raise ValueError("retry counts must be non-negative")

    def model_for(self, role: Role) -> str:
        return self.model_name_per_role.get(role.value, DEFAULT_MODELS[role.value])


class Backend(Protocol):
    def complete(self, envelope: PromptEnvelope) -> str: ...


def complete(envelope: PromptEnvelope, backend: Backend) -> str:
    return backend.complete(envelope)


# ---------------------------------------------------------------------------
# remote
# ---------------------------------------------------------------------------


def build_request(envelope: PromptEnvelope, config: BackendConfig) -> dict[str, Any]:
    content: list[dict[str, Any]] = [{"type": "text", "text": envelope.text}]
    if envelope.image is not None:
        encoded = base64.b64encode(envelope.image.data).decode("ascii")
        content.append(
            {
                "type": "image_url",
                "image_url": {"url": f"data:{envelope.image.media_type};base64,{encoded}"},
            }
        )
    return {
        "model": config.model_for(envelope.role),
        "temperature": config.temperature,
        "messages": [{"role": "user", "content": content}],
    }


class RemoteBackend:
    """Chat-completion client with exponential backoff on transport errors and 5xx/429."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None) -> None:
        config.validate()
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self.last_retries = 0
        self.total_retries = 0

    def complete(self, envelope: PromptEnvelope) -> str:
        body = build_request(envelope, self.config)
        headers = {"Authorization": f"Bearer {self.config.credential}"}
        self.last_retries = 0
        for attempt in range(self.config.max_retries + 1):
            try:
                resp = self._client.post(self.config.endpoint, json=body, headers=headers)
            except httpx.TransportError as exc:
                problem = f"transport error: {exc}"
            else:
                if resp.status_code < 400:
                    return _message_text(resp)
                if resp.status_code < 500 and resp.status_code != 429:
                    raise TransportFailure(f"endpoint rejected request: HTTP {resp.status_code}")
                problem = f"HTTP {resp.status_code}"
            if attempt == self.config.max_retries:
                raise TransportFailure(f"giving up after {attempt + 1} attempts ({problem})")
            delay = self.config.backoff_base * 2**attempt
            logger.warning("remote completion failed (%s); retry %d in %.2fs", problem, attempt + 1, delay)
            time.sleep(delay)
            self.last_retries += 1
            self.total_retries += 1
        raise AssertionError("unreachable")

    def close(self) -> None:
        self._client.close()


def _message_text(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise TransportFailure(f"malformed completion body: {exc}") from exc
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    return str(content)


# ---------------------------------------------------------------------------
# scripted oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScriptedReply:
    """One oracle record.

    ``match`` is either absent (matches any request of the role, giving
    ordinal behaviour), a string (substring of the prompt text), or a mapping
    with any of ``text`` (substring of the prompt), ``image`` (substring of
    the decoded screenshot) and ``has_image`` (bool). Records marked
    ``repeat`` are never consumed.
    """

    role: Role
    reply: str
    match_text: str | None = None
    match_image: str | None = None
    has_image: bool | None = None
    repeat: bool = False

    def matches(self, envelope: PromptEnvelope) -> bool:
        if envelope.role is not self.role:
            return False
        if self.match_text is not None and self.match_text not in envelope.text:
            return False
        if self.has_image is not None and (envelope.image is not None) != self.has_image:
            return False
        if self.match_image is not None:
            if envelope.image is None:
                return False
            if self.match_image not in envelope.image.data.decode("utf-8"):
                return False
        return True


def _reply_text(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False)


def parse_oracle(doc: Any, source: str = "<memory>") -> list[ScriptedReply]:
    records = doc.get("replies") if isinstance(doc, Mapping) else doc
    if not isinstance(records, list):
        raise ValueError(f"{source}: oracle must be a list of records or have a 'replies' list")
    out = []
    for i, rec in enumerate(records):
        where = f"{source}: replies[{i}]"
        if not isinstance(rec, Mapping) or "role" not in rec or "reply" not in rec:
            raise ValueError(f"{where}: each record needs 'role' and 'reply'")
        try:
            role = Role(rec["role"])
        except ValueError:
            raise ValueError(f"{where}: unknown role {rec['role']!r}") from None
        match = rec.get("match")
        kwargs: dict[str, Any] = {}
        if isinstance(match, str):
            kwargs["match_text"] = match
        elif isinstance(match, Mapping):
            unknown = set(match) - {"text", "image", "has_image"}
            if unknown:
                raise ValueError(f"{where}: unknown match keys {sorted(unknown)}")
            kwargs = {
                "match_text": match.get("text"),
                "match_image": match.get("image"),
                "has_image": match.get("has_image"),
            }
        elif match is not None:
            raise ValueError(f"{where}: match must be a string or mapping")
        out.append(ScriptedReply(role, _reply_text(rec["reply"]), repeat=bool(rec.get("repeat", False)), **kwargs))
    return out


def load_oracle(path: str | Path) -> list[ScriptedReply]:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    return parse_oracle(doc, str(path))


class ScriptedBackend:
    """Deterministic oracle: serves the first unconsumed matching record for the role."""

    def __init__(self, records: Sequence[ScriptedReply], name: str = "oracle") -> None:
        self.records = list(records)
        self.name = name
        self._used = [False] * len(self.records)
        self._lock = threading.Lock()
        self.calls: list[PromptEnvelope] = []

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        return cls(load_oracle(path), name=Path(path).name)

    def complete(self, envelope: PromptEnvelope) -> str:
        with self._lock:
            self.calls.append(envelope)
            for i, rec in enumerate(self.records):
                if self._used[i] or not rec.matches(envelope):
                    continue
                if not rec.repeat:
                    self._used[i] = True
                return rec.reply
        n = sum(1 for c in self.calls if c.role is envelope.role)
        raise OracleExhausted(f"{self.name}: no scripted {envelope.role.value} reply left for call #{n}")
