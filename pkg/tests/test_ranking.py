from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agent_testgen.app_model import Action, ActionKind
from agent_testgen.ranking import ScoredSequence, interacted_words, rank, score, score_all, task_terms

from support import random_model, random_walk


def seq(i, words, finished=True, n=1):
    return ScoredSequence(i, tuple(Action(ActionKind.BACK) for _ in range(n)), frozenset(words), finished)


def test_task_terms_tokenize():
    assert task_terms("Add contact Alice to Favorites!") == {"add", "contact", "alice", "to", "favorites"}


def test_score_counts_distinct_terms():
    assert score({"alice", "favorites", "to"}, {"alice", "favorites", "search"}) == 2


def test_rank_prefers_score_then_finished_then_length_then_index():
    goal = "alpha beta"
    assert rank([seq(0, {"alpha"}), seq(1, {"alpha", "beta"})], goal).run_index == 1
    assert rank([seq(0, {"alpha"}, finished=False), seq(1, {"alpha"})], goal).run_index == 1
    assert rank([seq(0, {"alpha"}, n=3), seq(1, {"alpha"}, n=2)], goal).run_index == 1
    assert rank([seq(1, {"alpha"}), seq(0, {"alpha"})], goal).run_index == 0


def test_rank_empty():
    with pytest.raises(ValueError):
        rank([], "g")


def test_interacted_words_use_targeted_elements_only():
    rng = random.Random(3)
    model = random_model(rng)
    actions, states = random_walk(model, rng, 6)
    words = interacted_words(actions, states)
    expected = set()
    for a, s in zip(actions, states):
        if a.target:
            e = s.find(a.target)
            for v in (e.text, e.content_desc, e.element_id):
                expected |= set("".join(c if c.isalnum() else " " for c in (v or "").lower()).split())
    assert words == expected


@given(st.sets(st.sampled_from("abcdefgh"), max_size=8), st.lists(st.sets(st.sampled_from("abcdefghij")), min_size=1, max_size=4))
@settings(max_examples=300, deadline=None)
def test_permutation_invariance(terms, word_sets):
    goal = " ".join(sorted(terms))
    cands = [seq(i, w, finished=bool(i % 2), n=1 + len(w) % 3) for i, w in enumerate(word_sets)]
    winner = rank(cands, goal).run_index
    for perm in itertools.islice(itertools.permutations(cands), 24):
        assert rank(list(perm), goal).run_index == winner
    assert [c.score for c in score_all(cands, goal)] == [score(task_terms(goal), c.interacted_words) for c in cands]
