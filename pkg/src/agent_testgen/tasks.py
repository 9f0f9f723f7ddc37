"""Task files, judged-pair files and the bundled synthetic evaluation set.

A tasks file is YAML with a top-level ``tasks`` list::

    tasks:
      - app_name: clock
        goal: Set alarm at 8:00am
        ground_truth:
          - {kind: touch, target: alarm_tab}
        goal_check: {screen: alarm_list, app_vars: {alarm_enabled: "on"}}
        oracles: [clock_oracle.yaml]

Oracle paths are relative to the tasks file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .app_model import Action, ActionKind, AppModel, AppModelError, ExecutionError, UiState, execute
from .script import GoalCheck


class TaskFileError(ValueError):
    """A tasks or pairs document is malformed or inconsistent with its app model."""


@dataclass(frozen=True)
class TaskSpec:
    app_name: str
    goal: str
    ground_truth: tuple[Action, ...] = ()
    goal_check: GoalCheck | None = None
    oracles: tuple[Path, ...] = ()
    train_oracles: tuple[Path, ...] = ()
    task_id: str = ""

    def __post_init__(self) -> None:
        if not self.goal.strip():
            raise TaskFileError("task goal must be nonempty")


def slugify(text: str, limit: int = 40) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug[:limit].rstrip("-") or "task"


def task_dir_name(index: int, goal: str) -> str:
    return f"{index:03d}-{slugify(goal)}"


def _actions(raw: Any, where: str) -> tuple[Action, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise TaskFileError(f"{where}: expected a list of actions")
    try:
        return tuple(Action.from_dict(a) for a in raw)
    except (AppModelError, KeyError, TypeError, ValueError) as exc:
        raise TaskFileError(f"{where}: bad action: {exc}") from exc


def _paths(raw: Any, base: Path, where: str) -> tuple[Path, ...]:
    if raw is None:
        return ()
    if isinstance(raw, str):
        raw = [raw]
    if not isinstance(raw, list) or not all(isinstance(p, str) for p in raw):
        raise TaskFileError(f"{where}: expected a list of file paths")
    return tuple(base / p for p in raw)


def tasks_from_doc(doc: Any, base: Path = Path("."), source: str = "<tasks>") -> list[TaskSpec]:
    if not isinstance(doc, Mapping) or not isinstance(doc.get("tasks"), list):
        raise TaskFileError(f"{source}: expected a mapping with a 'tasks' list")
    specs = []
    for i, item in enumerate(doc["tasks"]):
        where = f"{source}: tasks[{i}]"
        if not isinstance(item, Mapping):
            raise TaskFileError(f"{where}: expected a mapping")
        try:
            app_name, goal = str(item["app_name"]), str(item["goal"])
        except KeyError as exc:
            raise TaskFileError(f"{where}: missing {exc.args[0]!r}") from None
        check = item.get("goal_check")
        if check is not None and not isinstance(check, Mapping):
            raise TaskFileError(f"{where}: goal_check must be a mapping")
        specs.append(
            TaskSpec(
                app_name=app_name,
                goal=goal,
                ground_truth=_actions(item.get("ground_truth"), where),
                goal_check=GoalCheck.from_doc(check),
                oracles=_paths(item.get("oracles"), base, where),
                train_oracles=_paths(item.get("train_oracles"), base, where),
                task_id=str(item.get("task_id") or task_dir_name(i, goal)),
            )
        )
    return specs


def load_tasks(path: str | Path, model: AppModel | None = None) -> list[TaskSpec]:
    """Parse a tasks file; with ``model``, check every ground truth for that app executes."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
        doc = yaml.safe_load(text)
    except OSError as exc:
        raise TaskFileError(f"{path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise TaskFileError(f"{path}: {exc}") from exc
    specs = tasks_from_doc(doc, path.parent, str(path))
    if model is not None:
        for spec in specs:
            if spec.app_name == model.app_name and spec.ground_truth:
                check_ground_truth(spec, model)
    return specs


def ground_truth_states(spec: TaskSpec, model: AppModel) -> list[UiState]:
    """States visited along the ground truth, initial state first."""
    states = [model.initial_state()]
    for k, action in enumerate(spec.ground_truth):
        try:
            states.append(execute(states[-1], action, model))
        except ExecutionError as exc:
            raise TaskFileError(f"task {spec.task_id}: ground-truth step {k} ({action}) fails: {exc}") from exc
    return states


def check_ground_truth(spec: TaskSpec, model: AppModel) -> None:
    states = ground_truth_states(spec, model)
    if spec.goal_check is not None and not spec.goal_check(states[-1]):
        raise TaskFileError(f"task {spec.task_id}: ground truth does not satisfy its goal_check")


# ---------------------------------------------------------------------------
# judged pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JudgedPair:
    task_id: str
    app_name: str
    generated: tuple[Action, ...]
    truth: tuple[Action, ...]
    finished: bool = False

    def to_doc(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "app_name": self.app_name,
            "finished": self.finished,
            "generated": [a.to_dict() for a in self.generated],
            "truth": [a.to_dict() for a in self.truth],
        }


def pairs_from_doc(doc: Any, source: str = "<pairs>") -> list[JudgedPair]:
    if not isinstance(doc, Mapping) or not isinstance(doc.get("pairs"), list):
        raise TaskFileError(f"{source}: expected a mapping with a 'pairs' list")
    out = []
    for i, item in enumerate(doc["pairs"]):
        where = f"{source}: pairs[{i}]"
        if not isinstance(item, Mapping):
            raise TaskFileError(f"{where}: expected a mapping")
        truth = _actions(item.get("truth"), where)
        if not truth:
            raise TaskFileError(f"{where}: truth must be nonempty")
        out.append(
            JudgedPair(
                str(item.get("task_id", i)),
                str(item.get("app_name", "")),
                _actions(item.get("generated"), where),
                truth,
                bool(item.get("finished", False)),
            )
        )
    return out


def load_pairs(path: str | Path) -> list[JudgedPair]:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise TaskFileError(f"{path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise TaskFileError(f"{path}: {exc}") from exc
    return pairs_from_doc(doc, str(path))


def dump_pairs(pairs: Sequence[JudgedPair]) -> str:
    return yaml.safe_dump({"pairs": [p.to_doc() for p in pairs]}, sort_keys=False)


# ---------------------------------------------------------------------------
# synthetic evaluation set
# ---------------------------------------------------------------------------

SYNTHETIC_PAIRS = "synthetic_pairs.yaml"
SYNTHETIC_APPS = 12

# (truth length, correct prefix kept, wrong actions appended); none of these covers the truth
_UNCOVERED = (
    (2, 0, 1), (2, 0, 2), (3, 0, 2), (3, 0, 3), (3, 1, 3), (4, 0, 1),
    (4, 0, 3), (4, 1, 0), (4, 1, 3), (4, 3, 1), (5, 1, 2), (6, 0, 3),
    (6, 2, 2), (7, 0, 1), (7, 0, 2), (7, 4, 3), (7, 5, 0), (7, 6, 3),
)


def _steps(prefix: str, n: int) -> list[Action]:
    return [Action(ActionKind.TOUCH, f"{prefix}_{i}") for i in range(n)]


def synthetic_pairs(n_exact: int = 131, n_completed_only: int = 1) -> list[JudgedPair]:
    """150 abstract (generated, truth) pairs with fixed judgement counts.

    ``n_exact`` pairs are identical, ``n_completed_only`` insert one extra
    action in the middle (completed but not exact), and the rest come from a
    fixed list of uncovered shapes. Truth lengths cycle through 2..8 and
    pairs are spread over twelve app names.
    """
    pairs: list[JudgedPair] = []

    def add(gen: list[Action], truth: list[Action], finished: bool) -> None:
        i = len(pairs)
        pairs.append(JudgedPair(f"syn-{i:03d}", f"app{i % SYNTHETIC_APPS:02d}", tuple(gen), tuple(truth), finished))

    for i in range(n_exact):
        truth = _steps(f"t{i}", 2 + i % 7)
        add(list(truth), truth, True)
    for i in range(n_completed_only):
        truth = _steps(f"c{i}", 4)
        add(truth[:2] + [Action(ActionKind.BACK)] + truth[2:], truth, True)
    for i, (nt, keep, wrong) in enumerate(_UNCOVERED):
        truth = _steps(f"u{i}", nt)
        add(truth[:keep] + _steps(f"w{i}", wrong), truth, wrong == 0)
    return pairs


def bundled_pairs_path() -> Path:
    return Path(str(resources.files("agent_testgen") / "fixtures" / SYNTHETIC_PAIRS))


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("agent_testgen") / "fixtures" / name))


BUNDLED_FIXTURES = ("clock", "contacts", "settings")


@dataclass(frozen=True)
class Fixture:
    name: str
    app_path: Path
    tasks_path: Path


def bundled_fixtures() -> list[Fixture]:
    return [Fixture(n, fixture_path(f"{n}.yaml"), fixture_path(f"{n}_tasks.yaml")) for n in BUNDLED_FIXTURES]
