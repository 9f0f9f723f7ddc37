"""Pick the best of several independently generated sequences by term overlap with the goal."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ._text import tokenize
from .app_model import Action, UiState

DEFAULT_RUNS = 3


@dataclass(frozen=True)
class ScoredSequence:
    run_index: int
    actions: tuple[Action, ...]
    interacted_words: frozenset[str]
    finished: bool
    score: int = 0


def task_terms(goal: str) -> set[str]:
    return set(tokenize(goal))


def interacted_words(actions: Sequence[Action], trajectory: Sequence[UiState]) -> set[str]:
    """Tokens of text, content_desc and element_id of every targeted element.

    ``trajectory[i]`` must be the state in which ``actions[i]`` was taken.
    """
    if len(trajectory) < len(actions):
        raise ValueError("trajectory is shorter than the action sequence")
    words: set[str] = set()
    for action, state in zip(actions, trajectory):
        if action.target is None:
            continue
        element = state.find(action.target)
        if element is None:
            continue
        for value in (element.text, element.content_desc, element.element_id):
            words.update(tokenize(value))
    return words


def score(terms: set[str], words: frozenset[str] | set[str]) -> int:
    return sum(1 for w in terms if w in words)


def rank(candidates: Sequence[ScoredSequence], goal: str) -> ScoredSequence:
    """Return the highest-scoring candidate with its score filled in.

    Ties go to a finished sequence, then the shorter one, then the lower run index.
    """
    if not candidates:
        raise ValueError("rank needs at least one candidate")
    scored = score_all(candidates, goal)
    return min(scored, key=lambda s: (-s.score, not s.finished, len(s.actions), s.run_index))


def score_all(candidates: Sequence[ScoredSequence], goal: str) -> list[ScoredSequence]:
    terms = task_terms(goal)
    return [
        ScoredSequence(c.run_index, c.actions, c.interacted_words, c.finished, score(terms, c.interacted_words))
        for c in candidates
    ]
