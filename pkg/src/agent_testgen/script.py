"""Test-script emission, the script DSL, and fail-fast replay on the simulator.

Script DSL, one step per line, ``#`` starts a comment::

    #Task: Set alarm at 8:00am
    d = driver()
    d.find_element(text, "Alarm").click()
    d.find_element(id, "time_field").fill("8:00")
    d.back()
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from .app_model import Action, ActionKind, AppModel, ExecutionError, UiElement, UiState, execute


class LocatorStrategy(str, Enum):
    CONTENT_DESC = "content_desc"
    TEXT = "text"
    ID = "id"


# Emission preference: accessibility label first, it survives cosmetic text changes.
LOCATOR_PREFERENCE = (LocatorStrategy.CONTENT_DESC, LocatorStrategy.TEXT, LocatorStrategy.ID)

VERB_FOR_KIND = {
    ActionKind.TOUCH: "click",
    ActionKind.INPUT: "fill",
    ActionKind.LONG_TOUCH: "long_click",
    ActionKind.SWIPE: "swipe",
    ActionKind.BACK: "back",
    ActionKind.WAIT: "wait",
}
KIND_FOR_VERB = {v: k for k, v in VERB_FOR_KIND.items()}
_GLOBAL_VERBS = ("back", "wait")
_ATTR = {LocatorStrategy.CONTENT_DESC: "content_desc", LocatorStrategy.TEXT: "text", LocatorStrategy.ID: "element_id"}


class ScriptError(ValueError):
    """A script file or step is malformed."""


@dataclass(frozen=True)
class ScriptStep:
    verb: str
    locator_strategy: LocatorStrategy | None = None
    locator_value: str | None = None
    fill_value: str | None = None

    def __post_init__(self) -> None:
        if self.verb not in KIND_FOR_VERB:
            raise ScriptError(f"unknown verb {self.verb!r}")
        if self.locator_strategy is not None:
            object.__setattr__(self, "locator_strategy", LocatorStrategy(self.locator_strategy))
        if self.verb in _GLOBAL_VERBS:
            if self.locator_strategy is not None or self.locator_value is not None:
                raise ScriptError(f"{self.verb} takes no locator")
        elif self.locator_strategy is None or self.locator_value is None:
            raise ScriptError(f"{self.verb} needs a locator")
        if (self.verb == "fill") != (self.fill_value is not None):
            raise ScriptError("fill_value is required for fill steps and only for them")

    def to_line(self) -> str:
        if self.verb in _GLOBAL_VERBS:
            return f"d.{self.verb}()"
        arg = json.dumps(self.fill_value, ensure_ascii=False) if self.fill_value is not None else ""
        value = json.dumps(self.locator_value, ensure_ascii=False)
        return f"d.find_element({self.locator_strategy.value}, {value}).{self.verb}({arg})"

    def to_dict(self) -> dict[str, Any]:
        return {
            "verb": self.verb,
            "locator_strategy": self.locator_strategy.value if self.locator_strategy else None,
            "locator_value": self.locator_value,
            "fill_value": self.fill_value,
        }


@dataclass(frozen=True)
class TestScript:
    __test__ = False  # not a pytest class

    task_comment: str
    steps: tuple[ScriptStep, ...]

    def to_dsl(self) -> str:
        lines = [f"#Task: {self.task_comment}", "d = driver()"]
        lines += [s.to_line() for s in self.steps]
        return "\n".join(lines) + "\n"

    def to_doc(self) -> dict[str, Any]:
        return {"task": self.task_comment, "steps": [s.to_dict() for s in self.steps]}


@dataclass(frozen=True)
class ExecutionReport:
    status: str
    final_state: UiState
    goal_reached: bool
    failed_step_index: int | None = None
    executed_steps: int = 0
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "passed"


@dataclass(frozen=True)
class GoalCheck:
    """Final-state predicate: expected screen and/or app-variable values."""

    screen: str | None = None
    app_vars: Mapping[str, str] = field(default_factory=dict)

    def __call__(self, state: UiState) -> bool:
        if self.screen is not None and state.screen_id != self.screen:
            return False
        return all(state.app_vars.get(k) == v for k, v in self.app_vars.items())

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any] | None) -> GoalCheck | None:
        if not doc:
            return None
        return cls(doc.get("screen"), {str(k): str(v) for k, v in (doc.get("app_vars") or {}).items()})


def locate(state: UiState, strategy: LocatorStrategy, value: str) -> UiElement | None:
    """First element in the textual channel whose attribute equals ``value``."""
    attr = _ATTR[LocatorStrategy(strategy)]
    for element in state.elements:
        if element.textual_visible and getattr(element, attr) == value:
            return element
    return None


def _locator_for(element: UiElement, state: UiState) -> tuple[LocatorStrategy, str]:
    available = [(s, getattr(element, _ATTR[s])) for s in LOCATOR_PREFERENCE if getattr(element, _ATTR[s])]
    if not available:
        raise AssertionError(f"element {element.identity!r} has no locatable attribute")
    for strategy, value in available:
        found = locate(state, strategy, value)
        if found is not None and found.identity == element.identity:
            return strategy, value
    return available[0]


def emit_script(actions: Sequence[Action], trajectory: Sequence[UiState], goal: str) -> TestScript:
    """One script step per action; ``trajectory[i]`` is the state action ``i`` ran in.

    Locators prefer content_desc, then text, then id, skipping a strategy
    whose value would resolve to a different element first.
    """
    if len(trajectory) < len(actions):
        raise ValueError("trajectory is shorter than the action sequence")
    steps = []
    for action, state in zip(actions, trajectory):
        verb = VERB_FOR_KIND[action.kind]
        if action.target is None:
            steps.append(ScriptStep(verb))
            continue
        element = state.find(action.target)
        if element is None:
            raise ValueError(f"target {action.target!r} not present in state {state.screen_id!r}")
        strategy, value = _locator_for(element, state)
        steps.append(ScriptStep(verb, strategy, value, action.payload if verb == "fill" else None))
    return TestScript(goal, tuple(steps))


def step_to_action(step: ScriptStep, state: UiState) -> Action | None:
    kind = KIND_FOR_VERB[step.verb]
    if step.verb in _GLOBAL_VERBS:
        return Action(kind)
    element = locate(state, step.locator_strategy, step.locator_value)
    if element is None:
        return None
    return Action(kind, element.identity, step.fill_value)


def replay(
    script: TestScript,
    model: AppModel,
    goal_check: Callable[[UiState], bool] | None = None,
) -> ExecutionReport:
    """Run the script from the initial state, stopping at the first step that cannot execute."""
    state = model.initial_state()
    for k, step in enumerate(script.steps):
        action = step_to_action(step, state)
        if action is None:
            return ExecutionReport(
                "failed", state, False, k, k,
                f"step {k}: no element with {step.locator_strategy.value}={step.locator_value!r}",
            )
        try:
            state = execute(state, action, model)
        except ExecutionError as exc:
            return ExecutionReport("failed", state, False, k, k, f"step {k}: {exc}")
    n = len(script.steps)
    if goal_check is not None and not goal_check(state):
        return ExecutionReport("failed", state, False, None, n, "all steps ran but the goal was not reached")
    return ExecutionReport("passed", state, True, None, n, "")


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def _parse_call(line: str, lineno: int) -> ScriptStep:
    def fail(why: str) -> ScriptError:
        return ScriptError(f"line {lineno}: {why}: {line!r}")

    for verb in _GLOBAL_VERBS:
        if line == f"d.{verb}()":
            return ScriptStep(verb)
    prefix = "d.find_element("
    if not line.startswith(prefix):
        raise fail("expected d.find_element(...) or d.back()/d.wait()")
    rest = line[len(prefix):]
    strategy, sep, rest = rest.partition(",")
    if not sep or strategy.strip() not in {s.value for s in LocatorStrategy}:
        raise fail("unknown locator strategy")
    rest = rest.lstrip()
    decoder = json.JSONDecoder()
    try:
        value, end = decoder.raw_decode(rest)
    except json.JSONDecodeError:
        raise fail("locator value must be a double-quoted string") from None
    rest = rest[end:]
    if not rest.startswith(")."):
        raise fail("expected ').<verb>(' after the locator")
    verb, paren, arg = rest[2:].partition("(")
    if not paren or not arg.endswith(")"):
        raise fail("malformed verb call")
    arg = arg[:-1].strip()
    fill_value = None
    if arg:
        try:
            fill_value, end = decoder.raw_decode(arg)
        except json.JSONDecodeError:
            raise fail("fill argument must be a double-quoted string") from None
        if end != len(arg):
            raise fail("trailing text after the fill argument")
    try:
        return ScriptStep(verb, LocatorStrategy(strategy.strip()), value, fill_value)
    except ScriptError as exc:
        raise fail(str(exc)) from None


def parse_dsl(text: str) -> TestScript:
    comment = ""
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#Task:") and not comment:
                comment = line[len("#Task:"):].strip()
            continue
        if line.replace(" ", "") == "d=driver()":
            continue
        steps.append(_parse_call(line, lineno))
    return TestScript(comment, tuple(steps))


def script_from_doc(doc: Mapping[str, Any]) -> TestScript:
    try:
        steps = tuple(
            ScriptStep(s["verb"], s.get("locator_strategy"), s.get("locator_value"), s.get("fill_value"))
            for s in doc["steps"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScriptError(f"malformed script document: {exc}") from exc
    return TestScript(str(doc.get("task", "")), steps)


def write_script(script: TestScript, path: str | Path) -> tuple[Path, Path]:
    """Write the DSL file and its structured ``.yaml`` sidecar; return both paths."""
    path = Path(path)
    sidecar = path.with_suffix(".yaml")
    path.write_text(script.to_dsl(), encoding="utf-8")
    sidecar.write_text(yaml.safe_dump(script.to_doc(), sort_keys=True, allow_unicode=True), encoding="utf-8")
    return path, sidecar


def read_script(path: str | Path) -> TestScript:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        return script_from_doc(yaml.safe_load(text))
    return parse_dsl(text)
