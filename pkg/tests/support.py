"""Random app models, walks and oracles shared by the test modules."""

from __future__ import annotations

import json
import random
from typing import Any

from agent_testgen.app_model import (
    Action,
    ActionKind,
    AppModel,
    ScreenDef,
    Transition,
    UiElement,
    UiState,
    VisualProp,
    execute,
    extract_actionables,
)
from agent_testgen.llm import ScriptedBackend, parse_oracle

ELEMENT_KINDS = (ActionKind.TOUCH, ActionKind.LONG_TOUCH, ActionKind.INPUT, ActionKind.SWIPE)
CLASSES = ("button", "text-field", "checkbox", "toggle", "list-item", "image", "label")


def random_model(rng: random.Random, max_screens: int = 5, max_elements: int = 4) -> AppModel:
    """A valid model where every (screen, element, kind) has a transition.

    Element ids and texts are globally unique so that any locator resolves
    to exactly one element.
    """
    n_screens = rng.randint(1, max_screens)
    sids = [f"s{i}" for i in range(n_screens)]
    initial_vars = {"counter": "0"}
    screens: dict[str, ScreenDef] = {}
    transitions: list[Transition] = []
    for i, sid in enumerate(sids):
        elements = []
        for j in range(rng.randint(1, max_elements)):
            eid = f"{sid}_e{j}"
            textual = rng.random() > 0.15
            kinds = frozenset(k for k in ELEMENT_KINDS if rng.random() < 0.35) if textual else frozenset()
            var = f"v_{eid}"
            props = {}
            if rng.random() < 0.3:
                initial_vars[var] = "off"
                props["state"] = VisualProp(f"{{{var}}}", in_screenshot=True, in_text=rng.random() < 0.5)
            desc = f"Desc {i}-{j}" if rng.random() < 0.4 else None
            text = f"Label {i}-{j}" if desc is None or rng.random() < 0.5 else None
            elements.append(
                UiElement(
                    element_id=eid if rng.random() < 0.8 else None,
                    class_name=rng.choice(CLASSES),
                    bounds=(0, 100 * j, 1080, 100 * j + 90),
                    text=text,
                    content_desc=desc,
                    supported_actions=kinds,
                    textual_visible=textual,
                    visual_props=props,
                )
            )
        loading = rng.random() < 0.2
        spinner = (UiElement(f"{sid}_spinner", "image", (400, 800, 680, 1080), content_desc="Loading"),)
        screens[sid] = ScreenDef(sid, tuple(elements), loading, spinner if loading else ())
        for e in elements:
            for kind in sorted(e.supported_actions, key=lambda k: k.value):
                target = rng.choice(sids)
                set_vars = {}
                if var := next(iter(_prop_vars(e)), None):
                    set_vars[var] = rng.choice(["on", "off"])
                if kind is ActionKind.INPUT:
                    transitions.append(
                        Transition(sid, e.identity, kind, target, input_pattern="*", bind="last_input", set_vars=set_vars)
                    )
                else:
                    transitions.append(Transition(sid, e.identity, kind, target, set_vars=set_vars))
    initial_vars["last_input"] = ""
    return AppModel("rand", sids[0], screens, tuple(transitions), initial_vars)


def _prop_vars(e: UiElement) -> list[str]:
    return [p.value[1:-1] for p in e.visual_props.values()]


def random_walk(model: AppModel, rng: random.Random, length: int) -> tuple[list[Action], list[UiState]]:
    """Uniform random candidate choices; states[i] is the state action i ran in."""
    state = model.initial_state()
    states = [state]
    actions = []
    for _ in range(length):
        cand = rng.choice(extract_actionables(state))
        action = cand.to_action(f"txt{rng.randint(0, 99)}" if cand.kind is ActionKind.INPUT else None)
        state = execute(state, action, model)
        actions.append(action)
        states.append(state)
    return actions, states


def oracle_for_walk(
    model: AppModel, actions: list[Action], finish: bool = True, reflect: bool = True
) -> ScriptedBackend:
    """Selector replies reproducing ``actions``; the verifier says done after the last one."""
    state = model.initial_state()
    records: list[dict[str, Any]] = []
    for k, action in enumerate(actions):
        cands = extract_actionables(state)
        index = next(c.index for c in cands if c.kind is action.kind and c.target == action.target)
        reply: dict[str, Any] = {"chosen_action": index, "action_description": f"step {k}", "reason": "walk"}
        if action.payload is not None:
            reply["input_text"] = action.payload
        records.append({"role": "selector", "reply": reply})
        done = finish and k == len(actions) - 1
        records.append({"role": "verifier", "reply": {"screen_description": f"after {k}", "task_done": done}})
        state = execute(state, action, model)
    records.append({"role": "observer", "repeat": True, "reply": {"observation": "ok"}})
    if reflect:
        records.append(
            {"role": "reflector", "repeat": True,
             "reply": {"verdict": "success", "rules": ["Follow the recorded path"], "optimized_steps": ["a", "b"]}}
        )
    return ScriptedBackend(parse_oracle(records), name="walk")


_JUNK = ("", "not json", "{", "[1, 2]", '{"chosen_action": "x"}', '{"task_done": "yes"}', "```json\n{}\n```")


def adversarial_oracle(rng: random.Random) -> ScriptedBackend:
    """Random records: valid, out-of-range, wrongly typed and unparseable replies."""
    records: list[dict[str, Any]] = []
    for _ in range(rng.randint(0, 60)):
        role = rng.choice(["selector", "selector", "verifier", "observer", "reflector"])
        if rng.random() < 0.15:
            reply: Any = rng.choice(_JUNK)
        elif role == "selector":
            reply = {"chosen_action": rng.randint(-2, 8), "action_description": "x", "reason": "y"}
            if rng.random() < 0.3:
                reply["input_text"] = "typed"
        elif role == "verifier":
            reply = {"screen_description": "s", "task_done": rng.random() < 0.1}
        elif role == "observer":
            reply = {"observation": "o"}
        else:
            verdict = rng.choice(["success", "failed"])
            reply = {
                "verdict": verdict,
                "rules": [rng.choice(["Rule A", "Rule B", " Rule  A "])],
                "optimized_steps": ["p", "q"] if verdict == "success" else [],
            }
        rec: dict[str, Any] = {"role": role, "reply": reply if isinstance(reply, str) else json.dumps(reply)}
        if rng.random() < 0.2:
            rec["repeat"] = True
        records.append(rec)
    return ScriptedBackend(parse_oracle(records), name="adversarial")
