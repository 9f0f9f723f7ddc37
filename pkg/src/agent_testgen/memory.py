"""Task (short-term) and persistent (cross-run) agent memory."""

from __future__ import annotations

import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import yaml

from ._text import normalize_ws
from .app_model import Action, UiState


class MemoryFileError(ValueError):
    """The persistent-memory file exists but cannot be decoded."""


@dataclass(frozen=True)
class StepRecord:
    action: Action
    description: str
    reason: str

    def render(self) -> str:
        return f"{self.description} ({self.action})"


@dataclass
class TaskMemory:
    goal: str
    actions: list[StepRecord] = field(default_factory=list)
    observations: list[str] = field(default_factory=list)
    finished: bool = False
    current_state: UiState | None = None

    def add_action(self, record: StepRecord) -> None:
        self.actions.append(record)

    def add_observation(self, observation: str) -> None:
        assert len(self.observations) == len(self.actions) - 1, "observation without a pending action"
        self.observations.append(observation)

    def history(self) -> list[tuple[str, str]]:
        """Completed (action, observation) pairs in execution order."""
        return [(a.render(), o) for a, o in zip(self.actions, self.observations)]


@dataclass
class MemoryEntry:
    rules: list[str] = field(default_factory=list)
    optimized_steps: list[str] = field(default_factory=list)
    verdict_history: list[str] = field(default_factory=list)

    def prompt_text(self) -> str:
        parts = []
        if self.rules:
            parts.append("Rules:\n" + "\n".join(f"- {r}" for r in self.rules))
        if self.optimized_steps:
            parts.append("Optimized steps: " + " -> ".join(self.optimized_steps))
        return "\n".join(parts)


class PersistentMemory:
    """Reflection output keyed by exact ``(app_name, goal)``."""

    def __init__(self, entries: dict[tuple[str, str], MemoryEntry] | None = None) -> None:
        self.entries: dict[tuple[str, str], MemoryEntry] = dict(entries or {})
        self._lock = threading.Lock()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PersistentMemory) and self.entries == other.entries

    def get(self, app_name: str, goal: str) -> MemoryEntry | None:
        return self.entries.get((app_name, goal))

    def prompt_text(self, app_name: str, goal: str) -> str:
        entry = self.get(app_name, goal)
        return entry.prompt_text() if entry else ""

    def update(
        self,
        app_name: str,
        goal: str,
        verdict: str,
        rules: Iterable[str],
        optimized_steps: Iterable[str] = (),
    ) -> MemoryEntry:
        """Merge one reflection.

        Rules are appended unless an equal rule (after whitespace
        normalisation) is already stored; optimized steps are replaced by the
        latest successful run's steps.
        """
        if verdict not in ("success", "failed"):
            raise ValueError(f"unknown verdict {verdict!r}")
        with self._lock:
            entry = self.entries.setdefault((app_name, goal), MemoryEntry())
            known = {normalize_ws(r) for r in entry.rules}
            for rule in rules:
                key = normalize_ws(rule)
                if key and key not in known:
                    entry.rules.append(rule.strip())
                    known.add(key)
            steps = list(optimized_steps)
            if verdict == "success" and steps:
                entry.optimized_steps = steps
            entry.verdict_history.append(verdict)
            return entry

    def to_doc(self) -> dict:
        return {
            "entries": [
                {
                    "app_name": app,
                    "goal": goal,
                    "rules": list(e.rules),
                    "optimized_steps": list(e.optimized_steps),
                    "verdict_history": list(e.verdict_history),
                }
                for (app, goal), e in sorted(self.entries.items())
            ]
        }

    @classmethod
    def from_doc(cls, doc: object, source: str = "<memory>") -> PersistentMemory:
        if doc is None:
            return cls()
        if not isinstance(doc, dict) or not isinstance(doc.get("entries", []), list):
            raise MemoryFileError(f"{source}: expected a mapping with an 'entries' list")
        entries = {}
        for i, item in enumerate(doc.get("entries") or []):
            try:
                key = (str(item["app_name"]), str(item["goal"]))
                entries[key] = MemoryEntry(
                    rules=[str(r) for r in item.get("rules") or []],
                    optimized_steps=[str(s) for s in item.get("optimized_steps") or []],
                    verdict_history=[str(v) for v in item.get("verdict_history") or []],
                )
            except (KeyError, TypeError) as exc:
                raise MemoryFileError(f"{source}: entries[{i}] is malformed ({exc})") from exc
        return cls(entries)


def dump_memory(pm: PersistentMemory) -> str:
    return yaml.safe_dump(pm.to_doc(), sort_keys=True, allow_unicode=True, default_flow_style=False)


def load_memory(path: str | Path) -> PersistentMemory:
    """Load a memory file; a missing file is an empty memory."""
    path = Path(path)
    if not path.exists():
        return PersistentMemory()
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise MemoryFileError(f"{path}: corrupt memory file ({exc})") from exc
    return PersistentMemory.from_doc(doc, str(path))


def save_memory(pm: PersistentMemory, path: str | Path) -> None:
    """Write atomically: a crash never leaves a half-written memory file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dump_memory(pm))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
