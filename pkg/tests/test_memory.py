from __future__ import annotations

import os

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from agent_testgen.memory import (
    MemoryFileError,
    PersistentMemory,
    dump_memory,
    load_memory,
    save_memory,
)


def test_rules_dedup_on_whitespace():
    pm = PersistentMemory()
    pm.update("app", "g", "failed", ["Tap  Save first", "Tap Save first ", "Scroll down"])
    assert pm.get("app", "g").rules == ["Tap  Save first", "Scroll down"]


def test_success_replaces_steps_failure_keeps_them():
    pm = PersistentMemory()
    pm.update("app", "g", "success", ["r"], ["a", "b"])
    pm.update("app", "g", "failed", ["r2"])
    pm.update("app", "g", "success", [], ["c"])
    entry = pm.get("app", "g")
    assert entry.optimized_steps == ["c"]
    assert entry.rules == ["r", "r2"]
    assert entry.verdict_history == ["success", "failed", "success"]


def test_unknown_verdict():
    with pytest.raises(ValueError):
        PersistentMemory().update("a", "g", "meh", [])


def test_prompt_text():
    pm = PersistentMemory()
    assert pm.prompt_text("a", "g") == ""
    pm.update("a", "g", "success", ["Be brief"], ["Open", "Save"])
    assert pm.prompt_text("a", "g") == "Rules:\n- Be brief\nOptimized steps: Open -> Save"


rule = st.text(st.characters(codec="utf-8", exclude_categories=("Cs", "Cc")), min_size=1, max_size=20)


@given(st.lists(st.tuples(st.sampled_from(["a", "b"]), st.sampled_from(["g1", "g2"]),
                          st.sampled_from(["success", "failed"]), st.lists(rule, max_size=3),
                          st.lists(rule, max_size=3)), max_size=8))
@settings(max_examples=150, deadline=None)
def test_round_trip_and_rule_fixed_point(updates):
    pm = PersistentMemory()
    for app, goal, verdict, rules, steps in updates:
        pm.update(app, goal, verdict, rules, steps)
    again = PersistentMemory.from_doc(yaml.safe_load(dump_memory(pm)))
    assert again == pm
    snapshot = {k: (list(e.rules), list(e.optimized_steps)) for k, e in pm.entries.items()}
    for app, goal, verdict, rules, steps in updates:
        pm.update(app, goal, verdict, rules, steps)
    # replaying the same updates changes at most the step list to the last success
    for key, (rules, _) in snapshot.items():
        assert pm.entries[key].rules == rules


def test_missing_file_is_empty(tmp_path):
    assert load_memory(tmp_path / "none.yaml") == PersistentMemory()


def test_corrupt_file(tmp_path):
    path = tmp_path / "m.yaml"
    path.write_text("entries: [\n")
    with pytest.raises(MemoryFileError):
        load_memory(path)
    path.write_text("entries:\n  - goal: only\n")
    with pytest.raises(MemoryFileError):
        load_memory(path)


def test_save_is_atomic(tmp_path, monkeypatch):
    path = tmp_path / "m.yaml"
    pm = PersistentMemory()
    pm.update("a", "g", "failed", ["keep me"])
    save_memory(pm, path)
    original = path.read_bytes()

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    pm.update("a", "g", "failed", ["new rule"])
    with pytest.raises(OSError):
        save_memory(pm, path)
    assert path.read_bytes() == original
    assert [p.name for p in tmp_path.iterdir()] == ["m.yaml"]


def test_dump_is_sorted_and_stable():
    pm = PersistentMemory()
    pm.update("z", "g", "failed", ["r"])
    pm.update("a", "g", "failed", ["r"])
    text = dump_memory(pm)
    assert text.index("app_name: a") < text.index("app_name: z")
    assert dump_memory(PersistentMemory.from_doc(yaml.safe_load(text))) == text
