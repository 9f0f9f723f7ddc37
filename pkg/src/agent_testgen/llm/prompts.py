"""Role prompt templates and rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from .._text import fill, placeholders
from ..app_model import CandidateAction, Screenshot, UiChange


class Role(str, Enum):
    SELECTOR = "selector"
    OBSERVER = "observer"
    VERIFIER = "verifier"
    REFLECTOR = "reflector"


class MissingContextField(KeyError):
    """The context bundle lacks a field the role's template needs."""


# Context keys each role must be given by the caller.
REQUIRED_CONTEXT: dict[Role, tuple[str, ...]] = {
    Role.SELECTOR: ("goal", "history", "candidates", "persistent_memory"),
    Role.VERIFIER: ("goal", "history", "ui_description", "persistent_memory"),
    Role.OBSERVER: ("action", "changes"),
    Role.REFLECTOR: ("goal", "actions", "observations"),
}

DECODE_SCHEMA: dict[Role, tuple[str, ...]] = {
    Role.SELECTOR: ("chosen_action", "action_description", "reason"),
    Role.OBSERVER: ("observation",),
    Role.VERIFIER: ("screen_description", "task_done"),
    Role.REFLECTOR: ("verdict", "rules", "optimized_steps"),
}

NO_MEMORY = "none"
IMAGE_ATTACHED = "see the attached screenshot image"
IMAGE_ABSENT = "no screenshot provided"


@dataclass(frozen=True)
class PromptEnvelope:
    role: Role
    text: str
    image: Screenshot | None = None
    decode_schema: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.image is not None and self.role is not Role.VERIFIER:
            raise ValueError("only verifier prompts may carry an image")


def _strip_comments(text: str) -> str:
    lines = [line for line in text.splitlines() if not line.startswith(";;")]
    return "\n".join(lines).strip("\n")


@dataclass(frozen=True)
class PromptTemplates:
    system: str
    by_role: Mapping[Role, str]

    @classmethod
    def load(cls, directory: str | Path | None = None) -> PromptTemplates:
        """Read ``system.txt`` and one ``<role>.txt`` per role."""
        if directory is None:
            base = resources.files(__package__).joinpath("templates")
            read = lambda name: base.joinpath(name).read_text(encoding="utf-8")  # noqa: E731
        else:
            root = Path(directory)
            read = lambda name: (root / name).read_text(encoding="utf-8")  # noqa: E731
        by_role = {role: _strip_comments(read(f"{role.value}.txt")) for role in Role}
        for role, body in by_role.items():
            unknown = set(placeholders(body)) - _ALL_PLACEHOLDERS
            if unknown:
                raise ValueError(f"{role.value} template uses unknown placeholder(s) {sorted(unknown)}")
        return cls(system=_strip_comments(read("system.txt")), by_role=by_role)


_ALL_PLACEHOLDERS = {
    "system_prompt", "task", "history_actions", "latest_observation", "candidate_actions",
    "persistent_memory", "ui_description", "screenshot", "action", "ui_changes", "actions",
    "observations",
}

_DEFAULT_TEMPLATES: PromptTemplates | None = None


def default_templates() -> PromptTemplates:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = PromptTemplates.load()
    return _DEFAULT_TEMPLATES


def render_history(history: Sequence[tuple[str, str]]) -> str:
    """Alternating ``[Action i]`` / ``[Observation i]`` lines; empty for no history."""
    lines = []
    for i, (action, observation) in enumerate(history, start=1):
        lines.append(f"[Action {i}]: {action}")
        lines.append(f"[Observation {i}]: {observation}")
    return "\n".join(lines)


def render_changes(changes: Sequence[UiChange]) -> str:
    if not changes:
        return "No UI changes were detected."
    return "\n".join(f"- {c.describe()}" for c in changes)


def render_candidates(candidates: Sequence[CandidateAction], dump: str | None) -> str:
    if dump is not None:
        return dump
    rows = [{"index": c.index, "action": c.kind.value, "target": c.target} for c in candidates]
    return json.dumps(rows, indent=2)


def _numbered(items: Sequence[str]) -> str:
    if not items:
        return "(none)"
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, start=1))


def render_prompt(
    role: Role | str,
    context: Mapping[str, Any],
    templates: PromptTemplates | None = None,
    vision: bool = True,
) -> PromptEnvelope:
    """Fill the role's template from ``context``.

    Context fields per role (see ``REQUIRED_CONTEXT``):

    * selector: goal, history [(action, observation)], candidates, persistent_memory,
      optional candidate_dump and latest_observation
    * verifier: goal, history, ui_description, persistent_memory, optional screenshot
    * observer: action, changes
    * reflector: goal, actions, observations

    The screenshot is attached only when ``vision`` is true.
    """
    role = Role(role)
    templates = templates or default_templates()
    missing = [k for k in REQUIRED_CONTEXT[role] if k not in context]
    if missing:
        raise MissingContextField(f"{role.value} prompt needs context field(s): {', '.join(missing)}")

    memory = context.get("persistent_memory") or NO_MEMORY
    values: dict[str, Any] = {"system_prompt": templates.system}
    image = None
    if role is Role.SELECTOR:
        history = list(context["history"])
        latest = context.get("latest_observation") or (history[-1][1] if history else "the starting page")
        values.update(
            task=context["goal"],
            history_actions=render_history(history),
            latest_observation=latest,
            candidate_actions=render_candidates(context["candidates"], context.get("candidate_dump")),
            persistent_memory=memory,
        )
    elif role is Role.VERIFIER:
        shot = context.get("screenshot")
        if vision and shot is not None:
            image = shot
        values.update(
            task=context["goal"],
            history_actions=render_history(list(context["history"])),
            ui_description=context["ui_description"],
            screenshot=IMAGE_ATTACHED if image is not None else IMAGE_ABSENT,
            persistent_memory=memory,
        )
    elif role is Role.OBSERVER:
        values.update(action=context["action"], ui_changes=render_changes(context["changes"]))
    else:
        values.update(
            task=context["goal"],
            actions=_numbered(list(context["actions"])),
            observations=_numbered(list(context["observations"])),
        )
    try:
        text = fill(templates.by_role[role], values)
    except KeyError as exc:
        raise MissingContextField(f"{role.value} template placeholder {exc} has no value") from None
    return PromptEnvelope(role, text, image, DECODE_SCHEMA[role])
