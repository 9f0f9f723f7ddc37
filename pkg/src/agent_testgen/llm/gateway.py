from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

from .backends import Backend
from .parsing import ResponseParseError, RoleResponse, parse_response
from .prompts import PromptEnvelope, PromptTemplates, Role, render_prompt

logger = logging.getLogger(__name__)

REASK_NOTE = "Respond with only the JSON object described above, with no other text."


def digest(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@dataclass
class RoleExchange:
    """Audit record of one role call, including re-asks."""

    role: Role
    prompt_digest: str
    image_digest: str | None
    raw_replies: list[str] = field(default_factory=list)
    reply: RoleResponse | None = None

    @property
    def attempts(self) -> int:
        return len(self.raw_replies)


class Gateway:
    """Renders role prompts, sends them to a backend and decodes the replies.

    A reply that fails to parse is re-asked up to ``max_reasks`` times with a
    reminder appended to the prompt, then :class:`ResponseParseError` is
    raised. With ``vision`` off, no envelope ever carries a screenshot.
    """

    def __init__(
        self,
        backend: Backend,
        *,
        vision: bool = True,
        max_reasks: int = 2,
        templates: PromptTemplates | None = None,
    ) -> None:
        self.backend = backend
        self.vision = vision
        self.max_reasks = max_reasks
        self.templates = templates
        self.exchanges: list[RoleExchange] = []

    def envelope(self, role: Role | str, context: Mapping[str, Any]) -> PromptEnvelope:
        return render_prompt(role, context, self.templates, vision=self.vision)

    def ask(self, role: Role | str, context: Mapping[str, Any], note: str | None = None) -> RoleResponse:
        env = self.envelope(role, context)
        if note:
            env = PromptEnvelope(env.role, f"{env.text}\n{note}", env.image, env.decode_schema)
        assert self.vision or env.image is None
        exchange = RoleExchange(
            env.role, digest(env.text), digest(env.image.data) if env.image is not None else None
        )
        self.exchanges.append(exchange)
        prompt = env
        for attempt in range(self.max_reasks + 1):
            raw = self.backend.complete(prompt)
            exchange.raw_replies.append(raw)
            try:
                exchange.reply = parse_response(env.role, raw)
                return exchange.reply
            except ResponseParseError as exc:
                logger.info("%s reply unparseable (attempt %d): %s", env.role.value, attempt + 1, exc)
                last = exc
                prompt = PromptEnvelope(env.role, f"{env.text}\n{REASK_NOTE}", env.image, env.decode_schema)
        raise ResponseParseError(
            f"{env.role.value} reply still invalid after {self.max_reasks} re-ask(s): {last}"
        )
