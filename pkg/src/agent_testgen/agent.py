"""The iterative select / execute / observe / verify loop and post-run reflection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from .app_model import (
    Action,
    ActionKind,
    AppModel,
    CandidateAction,
    ExecutionError,
    Screenshot,
    UiChange,
    UiState,
    detect_ui_changes,
    execute,
    extract_actionables,
    render_screenshot,
    textual_dump,
)
from .llm import (
    BackendError,
    Gateway,
    MissingContextField,
    ReflectorReply,
    ResponseParseError,
    Role,
    digest,
)
from .memory import PersistentMemory, StepRecord, TaskMemory

logger = logging.getLogger(__name__)

DEFAULT_MAX_ACTIONS = 20


class StopReason(str, Enum):
    VERIFIER_DONE = "verifier_done"
    MAX_ACTIONS = "max_actions"
    ABORTED = "aborted"


class SelectionError(RuntimeError):
    """The selector kept choosing an index outside the candidate list."""


@dataclass
class RunResult:
    goal: str
    app_name: str
    steps: list[StepRecord]
    finished: bool
    trajectory: list[tuple[UiState, Screenshot]]
    stop_reason: StopReason
    error: str | None = None
    audit: list[dict[str, Any]] = field(default_factory=list)
    reflection: ReflectorReply | None = None

    @property
    def actions(self) -> list[Action]:
        return [s.action for s in self.steps]

    @property
    def states(self) -> list[UiState]:
        """States visited; ``states[i]`` is the state action ``i`` was taken in."""
        return [state for state, _ in self.trajectory]

    def to_trace(self) -> dict[str, Any]:
        return {
            "app_name": self.app_name,
            "goal": self.goal,
            "finished": self.finished,
            "stop_reason": self.stop_reason.value,
            "error": self.error,
            "actions": [
                {**s.action.to_dict(), "description": s.description, "reason": s.reason}
                for s in self.steps
            ],
            "trajectory": [
                {
                    "screen_id": state.screen_id,
                    "loading": state.loading,
                    "app_vars": dict(sorted(state.app_vars.items())),
                    "screenshot_sha256": digest(shot.data),
                }
                for state, shot in self.trajectory
            ],
            "audit": self.audit,
            "reflection": None
            if self.reflection is None
            else {
                "verdict": self.reflection.verdict,
                "rules": list(self.reflection.rules),
                "optimized_steps": list(self.reflection.optimized_steps),
            },
        }


def _last_digest(gateway: Gateway) -> str | None:
    return gateway.exchanges[-1].prompt_digest if gateway.exchanges else None


def select_action(
    tm: TaskMemory,
    experience: str,
    candidates: Sequence[CandidateAction],
    gateway: Gateway,
    state: UiState | None = None,
) -> StepRecord:
    """Ask the selector for the next action among ``candidates``.

    An out-of-range index gets one re-ask; a second miss raises SelectionError.
    """
    if not candidates:
        raise ValueError("select_action needs at least one candidate")
    state = state or tm.current_state
    if tm.observations:
        latest = tm.observations[-1]
    else:
        latest = f"the starting page ({state.screen_id})" if state is not None else "the starting page"
    context = {
        "goal": tm.goal,
        "history": tm.history(),
        "candidates": list(candidates),
        "candidate_dump": textual_dump(state, candidates) if state is not None else None,
        "latest_observation": latest,
        "persistent_memory": experience,
    }
    reply = gateway.ask(Role.SELECTOR, context)
    if not 0 <= reply.chosen_action < len(candidates):
        note = (
            f"Action index {reply.chosen_action} does not exist; "
            f"choose an index between 0 and {len(candidates) - 1}."
        )
        reply = gateway.ask(Role.SELECTOR, context, note=note)
        if not 0 <= reply.chosen_action < len(candidates):
            raise SelectionError(f"selector chose index {reply.chosen_action} of {len(candidates)} twice")
    cand = candidates[reply.chosen_action]
    payload = reply.input_text if cand.kind is ActionKind.INPUT else None
    return StepRecord(cand.to_action(payload), reply.action_description, reply.reason)


def observe(record: StepRecord, changes: Sequence[UiChange], gateway: Gateway) -> str:
    reply = gateway.ask(Role.OBSERVER, {"action": record.render(), "changes": list(changes)})
    return reply.observation


def verify(
    tm: TaskMemory,
    experience: str,
    state: UiState,
    shot: Screenshot | None,
    gateway: Gateway,
    vision_enabled: bool | None = None,
) -> tuple[bool, str]:
    """Decide completion from the history, the textual dump and (with vision) the screenshot."""
    if vision_enabled is None:
        vision_enabled = gateway.vision
    context = {
        "goal": tm.goal,
        "history": tm.history(),
        "ui_description": textual_dump(state),
        "screenshot": shot if vision_enabled else None,
        "persistent_memory": experience,
    }
    reply = gateway.ask(Role.VERIFIER, context)
    return reply.task_done, reply.screen_description


def reflect(tm: TaskMemory, gateway: Gateway) -> ReflectorReply:
    context = {
        "goal": tm.goal,
        "actions": [a.render() for a in tm.actions],
        "observations": list(tm.observations),
    }
    return gateway.ask(Role.REFLECTOR, context)


_ROLE_ERRORS = (BackendError, ResponseParseError, SelectionError, ExecutionError, MissingContextField)


def run_task(
    goal: str,
    model: AppModel,
    pm: PersistentMemory,
    is_training: bool,
    gateway: Gateway,
    max_actions: int = DEFAULT_MAX_ACTIONS,
) -> RunResult:
    """Generate an action sequence for ``goal`` on a fresh simulator.

    The first action is chosen before the loop; every executed action is
    diffed, observed and verified, and the loop stops on a positive verdict
    or at ``max_actions``. In training mode the run is reflected on and the
    ``(app_name, goal)`` entry of ``pm`` is updated; otherwise ``pm`` is only
    read.
    """
    if max_actions < 1:
        raise ValueError("max_actions must be at least 1")
    tm = TaskMemory(goal)
    state = model.initial_state()
    tm.current_state = state
    trajectory = [(state, render_screenshot(state))]
    experience = pm.prompt_text(model.app_name, goal)
    audit: list[dict[str, Any]] = []
    error = None
    reflection = None

    try:
        record = select_action(tm, experience, extract_actionables(state), gateway, state)
        selector_digest = _last_digest(gateway)
        prev_state: UiState | None = None
        while not tm.finished and len(tm.actions) < max_actions:
            new_state = execute(tm.current_state, record.action, model)
            tm.add_action(record)
            shot = render_screenshot(new_state)
            trajectory.append((new_state, shot))
            changes = detect_ui_changes(prev_state, new_state)
            tm.add_observation(observe(record, changes, gateway))
            observer_digest = _last_digest(gateway)
            tm.current_state = new_state
            tm.finished, description = verify(tm, experience, new_state, shot, gateway)
            audit.append(
                {
                    "step": len(tm.actions),
                    "action": record.action.to_dict(),
                    "description": record.description,
                    "observation": tm.observations[-1],
                    "screen_id": new_state.screen_id,
                    "task_done": tm.finished,
                    "screen_description": description,
                    "prompt_digests": {
                        "selector": selector_digest,
                        "observer": observer_digest,
                        "verifier": _last_digest(gateway),
                    },
                }
            )
            if not tm.finished and len(tm.actions) < max_actions:
                record = select_action(tm, experience, extract_actionables(new_state), gateway, new_state)
                selector_digest = _last_digest(gateway)
                prev_state = new_state
        stop = StopReason.VERIFIER_DONE if tm.finished else StopReason.MAX_ACTIONS
        if is_training:
            reflection = reflect(tm, gateway)
            pm.update(model.app_name, goal, reflection.verdict, reflection.rules, reflection.optimized_steps)
    except _ROLE_ERRORS as exc:
        logger.warning("run aborted after %d action(s): %s", len(tm.actions), exc)
        error = f"{type(exc).__name__}: {exc}"
        stop = StopReason.ABORTED

    return RunResult(
        goal=goal,
        app_name=model.app_name,
        steps=list(tm.actions),
        finished=tm.finished,
        trajectory=trajectory,
        stop_reason=stop,
        error=error,
        audit=audit,
        reflection=reflection,
    )
