"""Declarative simulated device.

An :class:`AppModel` is a small state machine loaded from a YAML document:
screens hold element definitions, transitions map ``(screen, element, kind,
input pattern)`` to a destination screen plus app-variable effects. Element
text and visual props may reference app variables as ``{name}`` and are
resolved whenever a screen is instantiated into a :class:`UiState`.

Each state exposes two deliberately different views: :func:`textual_dump`
(what a DOM/accessibility dump would show) and :func:`render_screenshot`
(what is visible on screen). Visual-only props such as a toggle state exist
only in the screenshot.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml

from ._text import fill, placeholders

logger = logging.getLogger(__name__)

VISUAL_MEDIA_TYPE = "application/vnd.agent-testgen.visual+json"

WIDGET_CLASSES = frozenset(
    {"button", "text-field", "checkbox", "toggle", "list-item", "image", "label"}
)


class ActionKind(str, Enum):
    TOUCH = "touch"
    LONG_TOUCH = "long_touch"
    SWIPE = "swipe"
    INPUT = "input"
    BACK = "back"
    WAIT = "wait"


# Enumeration order used for candidate indices.
KIND_ORDER: tuple[ActionKind, ...] = tuple(ActionKind)
GLOBAL_KINDS = frozenset({ActionKind.BACK, ActionKind.WAIT})


class AppModelError(ValueError):
    """The app-model document could not be parsed or failed validation."""


class ExecutionError(Exception):
    """An action could not be executed against the current state."""


class NoSuchElement(ExecutionError):
    pass


class ActionNotSupported(ExecutionError):
    pass


class NoTransitionDefined(ExecutionError):
    """The app model has no transition for this action (a fixture gap)."""


@dataclass(frozen=True)
class VisualProp:
    value: str
    in_screenshot: bool = True
    in_text: bool = False


@dataclass(frozen=True)
class UiElement:
    element_id: str | None
    class_name: str
    bounds: tuple[int, int, int, int]
    text: str | None = None
    content_desc: str | None = None
    supported_actions: frozenset[ActionKind] = frozenset()
    textual_visible: bool = True
    visual_visible: bool = True
    visual_props: Mapping[str, VisualProp] = field(default_factory=dict)

    @property
    def identity(self) -> str:
        """Stable key: element_id, else (class, content_desc), else (class, text, bounds)."""
        if self.element_id:
            return self.element_id
        if self.content_desc:
            return f"{self.class_name}[desc={self.content_desc}]"
        left, top, right, bottom = self.bounds
        return f"{self.class_name}[text={self.text or ''}]@{left},{top},{right},{bottom}"

    def resolved(self, app_vars: Mapping[str, str]) -> UiElement:
        def _r(value: str | None) -> str | None:
            return None if value is None else fill(value, app_vars)

        props = {
            name: replace(prop, value=fill(prop.value, app_vars))
            for name, prop in self.visual_props.items()
        }
        return replace(
            self, text=_r(self.text), content_desc=_r(self.content_desc), visual_props=props
        )


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    target: str | None = None
    payload: str | None = None

    def __post_init__(self) -> None:
        kind = ActionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in GLOBAL_KINDS and self.target is not None:
            raise ValueError(f"{kind.value} action takes no target")
        if kind not in GLOBAL_KINDS and not self.target:
            raise ValueError(f"{kind.value} action requires a target")
        if (kind is ActionKind.INPUT) != (self.payload is not None):
            raise ValueError("payload is required for input actions and only for them")

    def to_dict(self) -> dict[str, str]:
        out = {"kind": self.kind.value}
        if self.target is not None:
            out["target"] = self.target
        if self.payload is not None:
            out["payload"] = self.payload
        return out

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> Action:
        return cls(ActionKind(doc["kind"]), doc.get("target"), doc.get("payload"))

    def __str__(self) -> str:
        parts = [self.kind.value]
        if self.target:
            parts.append(self.target)
        if self.payload is not None:
            parts.append(repr(self.payload))
        return " ".join(parts)


@dataclass(frozen=True)
class CandidateAction:
    index: int
    kind: ActionKind
    target: str | None = None

    def to_action(self, payload: str | None = None) -> Action:
        if self.kind is ActionKind.INPUT:
            return Action(self.kind, self.target, payload if payload is not None else "")
        return Action(self.kind, self.target)


@dataclass(frozen=True)
class UiState:
    screen_id: str
    elements: tuple[UiElement, ...]
    app_vars: Mapping[str, str] = field(default_factory=dict)
    loading: bool = False
    nav_stack: tuple[str, ...] = ()

    def find(self, identity: str) -> UiElement | None:
        for element in self.elements:
            if element.identity == identity:
                return element
        return None


@dataclass(frozen=True)
class Screenshot:
    media_type: str
    data: bytes

    def document(self) -> dict[str, Any]:
        return json.loads(self.data.decode("utf-8"))


class ChangeKind(str, Enum):
    ELEMENT_ADDED = "element_added"
    ELEMENT_REMOVED = "element_removed"
    ELEMENT_MODIFIED = "element_modified"
    SCREEN_NAVIGATED = "screen_navigated"


@dataclass(frozen=True)
class UiChange:
    change_kind: ChangeKind
    subject: str
    detail: tuple[tuple[str, str | None, str | None], ...] = ()

    def describe(self) -> str:
        if self.change_kind is ChangeKind.SCREEN_NAVIGATED:
            _, before, after = self.detail[0]
            return f"screen changed from {before or '(none)'} to {after}"
        if self.change_kind is ChangeKind.ELEMENT_MODIFIED:
            pairs = "; ".join(f"{attr}: {b!r} -> {a!r}" for attr, b, a in self.detail)
            return f"modified {self.subject} ({pairs})"
        verb = "added" if self.change_kind is ChangeKind.ELEMENT_ADDED else "removed"
        return f"{verb} {self.subject}"


@dataclass(frozen=True)
class ScreenDef:
    screen_id: str
    elements: tuple[UiElement, ...]
    loading: bool = False
    loading_elements: tuple[UiElement, ...] = ()


@dataclass(frozen=True)
class Transition:
    from_screen: str
    element: str
    kind: ActionKind
    to_screen: str
    input_pattern: str | None = None
    bind: str | None = None
    set_vars: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class AppModel:
    app_name: str
    initial_screen: str
    screens: Mapping[str, ScreenDef]
    transitions: tuple[Transition, ...] = ()
    initial_vars: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate_model(self)

    def instantiate(
        self,
        screen_id: str,
        app_vars: Mapping[str, str],
        nav_stack: tuple[str, ...] = (),
        loading: bool | None = None,
    ) -> UiState:
        screen = self.screens[screen_id]
        is_loading = screen.loading if loading is None else loading
        defs = screen.loading_elements if is_loading else screen.elements
        return UiState(
            screen_id=screen_id,
            elements=tuple(e.resolved(app_vars) for e in defs),
            app_vars=dict(app_vars),
            loading=is_loading,
            nav_stack=nav_stack,
        )

    def initial_state(self) -> UiState:
        return self.instantiate(self.initial_screen, self.initial_vars)

    def transition_for(self, screen_id: str, action: Action) -> Transition | None:
        wildcard = None
        for tr in self.transitions:
            if tr.from_screen != screen_id or tr.element != action.target or tr.kind is not action.kind:
                continue
            if tr.input_pattern is None or tr.input_pattern == action.payload:
                return tr
            if tr.input_pattern == "*" and wildcard is None:
                wildcard = tr
        return wildcard


# ---------------------------------------------------------------------------
# validation and loading
# ---------------------------------------------------------------------------


def _identity_is_templated(e: UiElement) -> bool:
    if e.element_id:
        return False
    if e.content_desc:
        return bool(placeholders(e.content_desc))
    return bool(placeholders(e.text or ""))


def _check_element(e: UiElement, where: str, known_vars: set[str]) -> None:
    left, top, right, bottom = e.bounds
    if min(e.bounds) < 0 or not (left < right and top < bottom):
        raise AppModelError(f"{where}: bounds {list(e.bounds)} must satisfy 0 <= left < right, 0 <= top < bottom")
    if not (e.element_id or e.content_desc or (e.class_name and e.text)):
        raise AppModelError(f"{where}: element has no resolvable identity (element_id, content_desc or text)")
    if _identity_is_templated(e):
        raise AppModelError(f"{where}: identity-bearing attribute may not reference app variables")
    if e.visual_props and any(not (p.in_screenshot or p.in_text) for p in e.visual_props.values()):
        raise AppModelError(f"{where}: visual prop must be visible in at least one channel")
    for value in [e.text, e.content_desc, *(p.value for p in e.visual_props.values())]:
        for name in placeholders(value or ""):
            if name not in known_vars:
                raise AppModelError(f"{where}: unknown app variable {{{name}}}")


def validate_model(model: AppModel) -> None:
    """Raise :class:`AppModelError` naming the first violated invariant."""
    if model.initial_screen not in model.screens:
        raise AppModelError(f"initial_screen {model.initial_screen!r} is not a defined screen")
    known_vars = set(model.initial_vars)
    for tr in model.transitions:
        known_vars.update(tr.set_vars)
        if tr.bind:
            known_vars.add(tr.bind)
    for sid, screen in model.screens.items():
        for label, elements in (("elements", screen.elements), ("loading_elements", screen.loading_elements)):
            seen: set[str] = set()
            for i, e in enumerate(elements):
                where = f"screens[{sid}].{label}[{i}]"
                _check_element(e, where, known_vars)
                if e.identity in seen:
                    raise AppModelError(f"{where}: duplicate element identity {e.identity!r}")
                seen.add(e.identity)
    keys: set[tuple[str, str, ActionKind, str | None]] = set()
    for i, tr in enumerate(model.transitions):
        where = f"transitions[{i}]"
        for end in (tr.from_screen, tr.to_screen):
            if end not in model.screens:
                raise AppModelError(f"{where}: unknown screen {end!r}")
        screen = model.screens[tr.from_screen]
        element = next(
            (e for e in (*screen.elements, *screen.loading_elements) if e.identity == tr.element), None
        )
        if element is None:
            raise AppModelError(f"{where}: screen {tr.from_screen!r} has no element {tr.element!r}")
        if tr.kind in GLOBAL_KINDS:
            raise AppModelError(f"{where}: {tr.kind.value} is handled by the simulator, not transitions")
        if tr.kind not in element.supported_actions:
            raise AppModelError(f"{where}: element {tr.element!r} does not support {tr.kind.value}")
        if tr.input_pattern is not None and tr.kind is not ActionKind.INPUT:
            raise AppModelError(f"{where}: input pattern on a {tr.kind.value} transition")
        if tr.bind and tr.kind is not ActionKind.INPUT:
            raise AppModelError(f"{where}: bind requires an input transition")
        key = (tr.from_screen, tr.element, tr.kind, tr.input_pattern)
        if key in keys:
            raise AppModelError(f"{where}: ambiguous transition, duplicates an earlier one")
        keys.add(key)


def _need(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if not isinstance(doc, Mapping):
        raise AppModelError(f"{where}: expected a mapping")
    if key not in doc:
        raise AppModelError(f"{where}: missing required field {key!r}")
    return doc[key]


def _opt_str(doc: Mapping[str, Any], key: str, where: str) -> str | None:
    value = doc.get(key)
    if value is None:
        return None
    if not isinstance(value, (str, int, float)) or isinstance(value, bool):
        raise AppModelError(f"{where}.{key}: expected a string")
    return str(value)


def _parse_kind(value: Any, where: str) -> ActionKind:
    try:
        return ActionKind(value)
    except ValueError:
        choices = ", ".join(k.value for k in ActionKind)
        raise AppModelError(f"{where}: unknown action kind {value!r} (expected one of {choices})") from None


def _parse_prop(value: Any, where: str) -> VisualProp:
    if isinstance(value, Mapping):
        channels = value.get("channels", ["screenshot"])
        if not isinstance(channels, list) or not set(channels) <= {"screenshot", "text"}:
            raise AppModelError(f"{where}.channels: expected a list drawn from [screenshot, text]")
        return VisualProp(str(_need(value, "value", where)), "screenshot" in channels, "text" in channels)
    return VisualProp(str(value))


def _parse_element(doc: Any, where: str) -> UiElement:
    class_name = _need(doc, "class_name", where)
    if class_name not in WIDGET_CLASSES:
        raise AppModelError(f"{where}.class_name: unknown widget kind {class_name!r}")
    bounds = _need(doc, "bounds", where)
    if (
        not isinstance(bounds, list)
        or len(bounds) != 4
        or not all(isinstance(b, int) and not isinstance(b, bool) for b in bounds)
    ):
        raise AppModelError(f"{where}.bounds: expected four integers [left, top, right, bottom]")
    actions = doc.get("supported_actions", [])
    if not isinstance(actions, list):
        raise AppModelError(f"{where}.supported_actions: expected a list")
    kinds = frozenset(_parse_kind(a, f"{where}.supported_actions") for a in actions)
    if kinds & GLOBAL_KINDS:
        raise AppModelError(f"{where}.supported_actions: back/wait are global, not per-element")
    props = doc.get("visual_props", {}) or {}
    if not isinstance(props, Mapping):
        raise AppModelError(f"{where}.visual_props: expected a mapping")
    return UiElement(
        element_id=_opt_str(doc, "element_id", where),
        class_name=class_name,
        bounds=tuple(bounds),  # type: ignore[arg-type]
        text=_opt_str(doc, "text", where),
        content_desc=_opt_str(doc, "content_desc", where),
        supported_actions=kinds,
        textual_visible=bool(doc.get("textual_visible", True)),
        visual_visible=bool(doc.get("visual_visible", True)),
        visual_props={str(k): _parse_prop(v, f"{where}.visual_props.{k}") for k, v in props.items()},
    )


def _parse_elements(items: Any, where: str) -> tuple[UiElement, ...]:
    if items is None:
        return ()
    if not isinstance(items, list):
        raise AppModelError(f"{where}: expected a list")
    return tuple(_parse_element(e, f"{where}[{i}]") for i, e in enumerate(items))


def model_from_dict(doc: Any, source: str = "<memory>") -> AppModel:
    """Build and validate an :class:`AppModel` from a parsed document."""
    if not isinstance(doc, Mapping):
        raise AppModelError(f"{source}: top level must be a mapping")
    screens_doc = doc.get("screens") or []
    if not isinstance(screens_doc, list):
        raise AppModelError(f"{source}: screens: expected a list")
    screens: dict[str, ScreenDef] = {}
    for i, s in enumerate(screens_doc):
        where = f"{source}: screens[{i}]"
        sid = str(_need(s, "screen_id", where))
        if sid in screens:
            raise AppModelError(f"{where}: duplicate screen_id {sid!r}")
        screens[sid] = ScreenDef(
            screen_id=sid,
            elements=_parse_elements(s.get("elements"), f"{where}.elements"),
            loading=bool(s.get("loading", False)),
            loading_elements=_parse_elements(s.get("loading_elements"), f"{where}.loading_elements"),
        )
    transitions = []
    for i, t in enumerate(doc.get("transitions") or []):
        where = f"{source}: transitions[{i}]"
        set_vars = t.get("set", {}) or {}
        if not isinstance(set_vars, Mapping):
            raise AppModelError(f"{where}.set: expected a mapping")
        transitions.append(
            Transition(
                from_screen=str(_need(t, "from", where)),
                element=str(_need(t, "element", where)),
                kind=_parse_kind(_need(t, "action", where), f"{where}.action"),
                to_screen=str(_need(t, "to", where)),
                input_pattern=_opt_str(t, "input", where),
                bind=_opt_str(t, "bind", where),
                set_vars={str(k): str(v) for k, v in set_vars.items()},
            )
        )
    initial_vars = doc.get("initial_vars", {}) or {}
    if not isinstance(initial_vars, Mapping):
        raise AppModelError(f"{source}: initial_vars: expected a mapping")
    try:
        return AppModel(
            app_name=str(_need(doc, "app_name", source)),
            initial_screen=str(_need(doc, "initial_screen", source)),
            screens=screens,
            transitions=tuple(transitions),
            initial_vars={str(k): str(v) for k, v in initial_vars.items()},
        )
    except AppModelError as exc:
        raise AppModelError(f"{source}: {exc}") from None


def load_app_model(path: str | Path) -> AppModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise AppModelError(f"{path}: cannot read app model ({exc.strerror})") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise AppModelError(f"{path}: {loc}{getattr(exc, 'problem', exc)}") from exc
    return model_from_dict(doc, str(path))


# ---------------------------------------------------------------------------
# executor
# ---------------------------------------------------------------------------


def execute(state: UiState, action: Action, model: AppModel) -> UiState:
    """Apply ``action`` to ``state`` and return the successor state."""
    if action.kind is ActionKind.BACK:
        if not state.nav_stack:
            return state
        return model.instantiate(state.nav_stack[-1], state.app_vars, state.nav_stack[:-1], loading=False)
    if action.kind is ActionKind.WAIT:
        if not state.loading:
            return state
        return model.instantiate(state.screen_id, state.app_vars, state.nav_stack, loading=False)

    element = state.find(action.target or "")
    if element is None:
        raise NoSuchElement(f"no element {action.target!r} on screen {state.screen_id!r}")
    if action.kind not in element.supported_actions:
        raise ActionNotSupported(f"element {action.target!r} does not support {action.kind.value}")
    tr = model.transition_for(state.screen_id, action)
    if tr is None:
        raise NoTransitionDefined(f"app model has no transition for {action} on screen {state.screen_id!r}")

    app_vars = dict(state.app_vars)
    if tr.bind is not None:
        app_vars[tr.bind] = action.payload or ""
    scope = {**app_vars, "payload": action.payload or ""}
    for name, template in tr.set_vars.items():
        app_vars[name] = fill(template, scope)

    if tr.to_screen == state.screen_id:
        return model.instantiate(state.screen_id, app_vars, state.nav_stack, loading=state.loading)
    return model.instantiate(tr.to_screen, app_vars, state.nav_stack + (state.screen_id,))


def extract_actionables(state: UiState) -> list[CandidateAction]:
    """Enumerate (element, kind) pairs in document order, then back (and wait while loading).

    Only elements present in the textual channel are actionable: a driver
    cannot target what the accessibility tree does not expose.
    """
    out: list[CandidateAction] = []
    for element in state.elements:
        if not element.textual_visible:
            continue
        for kind in KIND_ORDER:
            if kind in element.supported_actions:
                out.append(CandidateAction(len(out), kind, element.identity))
    out.append(CandidateAction(len(out), ActionKind.BACK))
    if state.loading:
        out.append(CandidateAction(len(out), ActionKind.WAIT))
    return out


def _compared(e: UiElement) -> dict[str, str | None]:
    attrs: dict[str, str | None] = {"text": e.text, "content_desc": e.content_desc}
    for name, prop in sorted(e.visual_props.items()):
        attrs[f"visual_props.{name}"] = prop.value
    return attrs


def detect_ui_changes(prev: UiState | None, cur: UiState) -> list[UiChange]:
    if prev is None or prev.screen_id != cur.screen_id:
        changes = [
            UiChange(
                ChangeKind.SCREEN_NAVIGATED,
                f"{prev.screen_id if prev else ''}->{cur.screen_id}",
                (("screen_id", prev.screen_id if prev else None, cur.screen_id),),
            )
        ]
        if prev is not None:
            changes += [UiChange(ChangeKind.ELEMENT_REMOVED, e.identity) for e in prev.elements]
            changes += [UiChange(ChangeKind.ELEMENT_ADDED, e.identity) for e in cur.elements]
        return changes

    changes = []
    cur_by_id = {e.identity: e for e in cur.elements}
    prev_ids = set()
    for before in prev.elements:
        prev_ids.add(before.identity)
        after = cur_by_id.get(before.identity)
        if after is None:
            changes.append(UiChange(ChangeKind.ELEMENT_REMOVED, before.identity))
            continue
        b, a = _compared(before), _compared(after)
        detail = tuple((k, b.get(k), a.get(k)) for k in sorted(b.keys() | a.keys()) if b.get(k) != a.get(k))
        if detail:
            changes.append(UiChange(ChangeKind.ELEMENT_MODIFIED, before.identity, detail))
    for e in cur.elements:
        if e.identity not in prev_ids:
            changes.append(UiChange(ChangeKind.ELEMENT_ADDED, e.identity))
    return changes


def render_screenshot(state: UiState) -> Screenshot:
    """Canonical visual snapshot: only what would be visible on screen."""
    elements = []
    for e in state.elements:
        if not e.visual_visible:
            continue
        entry: dict[str, Any] = {"class_name": e.class_name, "bounds": list(e.bounds)}
        if e.text is not None:
            entry["text"] = e.text
        shown = {k: p.value for k, p in sorted(e.visual_props.items()) if p.in_screenshot}
        if shown:
            entry["visual_props"] = shown
        elements.append(entry)
    doc = {"screen_id": state.screen_id, "loading": state.loading, "elements": elements}
    data = json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return Screenshot(VISUAL_MEDIA_TYPE, data)


def textual_dump(state: UiState, candidates: Sequence[CandidateAction] | None = None) -> str:
    """JSON description of the textual channel with candidate-action indices."""
    if candidates is None:
        candidates = extract_actionables(state)
    by_target: dict[str | None, dict[str, int]] = {}
    for c in candidates:
        by_target.setdefault(c.target, {})[c.kind.value] = c.index
    elements = []
    for e in state.elements:
        if not e.textual_visible:
            continue
        entry: dict[str, Any] = {"class_name": e.class_name}
        for key in ("element_id", "text", "content_desc"):
            value = getattr(e, key)
            if value is not None:
                entry[key] = value
        entry["bounds"] = list(e.bounds)
        props = {k: p.value for k, p in sorted(e.visual_props.items()) if p.in_text}
        if props:
            entry["props"] = props
        if e.identity in by_target:
            entry["actions"] = by_target[e.identity]
        elements.append(entry)
    doc = {
        "screen_id": state.screen_id,
        "loading": state.loading,
        "elements": elements,
        "global_actions": by_target.get(None, {}),
    }
    return json.dumps(doc, indent=2, ensure_ascii=False)


def action_space(trace: Iterable[UiState]) -> int:
    """Product of candidate counts over the visited states."""
    counts = [len(extract_actionables(s)) for s in trace]
    if not counts:
        raise ValueError("action_space needs at least one state")
    return math.prod(counts)
