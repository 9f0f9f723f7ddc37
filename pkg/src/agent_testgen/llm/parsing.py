"""Strict decoding of role replies."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Any, ClassVar, Union

from .prompts import Role


class ResponseParseError(ValueError):
    """The reply holds no JSON object, or the object violates the role schema."""


@dataclass(frozen=True)
class SelectorReply:
    role: ClassVar[Role] = Role.SELECTOR
    chosen_action: int
    action_description: str
    reason: str
    input_text: str | None = None


@dataclass(frozen=True)
class ObserverReply:
    role: ClassVar[Role] = Role.OBSERVER
    observation: str


@dataclass(frozen=True)
class VerifierReply:
    role: ClassVar[Role] = Role.VERIFIER
    screen_description: str
    task_done: bool


@dataclass(frozen=True)
class ReflectorReply:
    role: ClassVar[Role] = Role.REFLECTOR
    verdict: str
    rules: tuple[str, ...] = ()
    optimized_steps: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.verdict not in ("success", "failed"):
            raise ValueError(f"verdict must be 'success' or 'failed', not {self.verdict!r}")
        if self.verdict == "failed" and self.optimized_steps:
            raise ValueError("optimized_steps are only produced for successful runs")


RoleResponse = Union[SelectorReply, ObserverReply, VerifierReply, ReflectorReply]


def serialize(reply: RoleResponse) -> str:
    doc = asdict(reply)
    if isinstance(reply, SelectorReply) and reply.input_text is None:
        del doc["input_text"]
    if isinstance(reply, ReflectorReply):
        doc["rules"] = list(reply.rules)
        doc["optimized_steps"] = list(reply.optimized_steps)
    return json.dumps(doc, ensure_ascii=False)


def extract_object(raw: str) -> dict[str, Any]:
    """Return the first JSON object embedded in ``raw``.

    Surrounding prose and markdown code fences are ignored.
    """
    decoder = json.JSONDecoder()
    pos = raw.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(raw, pos)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        pos = raw.find("{", pos + 1)
    raise ResponseParseError("reply contains no JSON object")


def _field(obj: dict[str, Any], name: str, kind: type | tuple[type, ...], role: Role) -> Any:
    if name not in obj:
        raise ResponseParseError(f"{role.value} reply is missing {name!r}")
    value = obj[name]
    # bool is an int subclass, never accept it where a number or string is expected
    if isinstance(value, bool) and kind is not bool:
        raise ResponseParseError(f"{role.value} reply field {name!r} has the wrong type")
    if not isinstance(value, kind):
        raise ResponseParseError(f"{role.value} reply field {name!r} has the wrong type")
    return value


def _str_list(obj: dict[str, Any], name: str, role: Role) -> tuple[str, ...]:
    items = obj.get(name, [])
    if items is None:
        items = []
    if not isinstance(items, list) or not all(isinstance(i, str) for i in items):
        raise ResponseParseError(f"{role.value} reply field {name!r} must be a list of strings")
    return tuple(items)


def parse_response(role: Role | str, raw: str) -> RoleResponse:
    role = Role(role)
    obj = extract_object(raw)
    if role is Role.SELECTOR:
        input_text = obj.get("input_text")
        if input_text is not None and not isinstance(input_text, str):
            raise ResponseParseError("selector reply field 'input_text' must be a string")
        return SelectorReply(
            chosen_action=_field(obj, "chosen_action", int, role),
            action_description=_field(obj, "action_description", str, role),
            reason=_field(obj, "reason", str, role),
            input_text=input_text,
        )
    if role is Role.OBSERVER:
        return ObserverReply(_field(obj, "observation", str, role))
    if role is Role.VERIFIER:
        return VerifierReply(
            screen_description=_field(obj, "screen_description", str, role),
            task_done=_field(obj, "task_done", bool, role),
        )
    verdict = _field(obj, "verdict", str, role)
    if verdict not in ("success", "failed"):
        raise ResponseParseError(f"reflector verdict must be 'success' or 'failed', not {verdict!r}")
    steps = _str_list(obj, "optimized_steps", role) if verdict == "success" else ()
    return ReflectorReply(verdict, _str_list(obj, "rules", role), steps)
