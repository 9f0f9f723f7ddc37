from __future__ import annotations

import json
import shutil

import pytest
import yaml

from agent_testgen.cli import RunConfig, cmd_run, main
from agent_testgen.tasks import (
    TaskFileError,
    bundled_fixtures,
    bundled_pairs_path,
    dump_pairs,
    fixture_path,
    load_pairs,
    load_tasks,
    synthetic_pairs,
    tasks_from_doc,
)

F = fixture_path


def run_cli(*args):
    return main([str(a) for a in args])


# -- task files --------------------------------------------------------------


def test_bundled_tasks_have_executable_ground_truth():
    from agent_testgen.app_model import load_app_model

    for fx in bundled_fixtures():
        tasks = load_tasks(fx.tasks_path, load_app_model(fx.app_path))
        assert tasks and all(t.ground_truth and t.oracles for t in tasks)
        assert all(p.exists() for t in tasks for p in t.oracles + t.train_oracles)


def test_non_executable_ground_truth_rejected(tmp_path):
    from agent_testgen.app_model import load_app_model

    path = tmp_path / "t.yaml"
    path.write_text(yaml.safe_dump({"tasks": [
        {"app_name": "clock", "goal": "g", "ground_truth": [{"kind": "touch", "target": "picker_ok"}]}]}))
    with pytest.raises(TaskFileError, match="ground-truth step 0"):
        load_tasks(path, load_app_model(F("clock.yaml")))


@pytest.mark.parametrize(
    "doc", [{}, {"tasks": [{"goal": "x"}]}, {"tasks": [{"app_name": "a", "goal": " "}]},
            {"tasks": [{"app_name": "a", "goal": "g", "ground_truth": [{"kind": "fly"}]}]},
            {"tasks": [{"app_name": "a", "goal": "g", "goal_check": "yes"}]}],
)
def test_malformed_task_docs(doc):
    with pytest.raises(TaskFileError):
        tasks_from_doc(doc)


def test_bundled_pairs_match_generator():
    assert [p.to_doc() for p in load_pairs(bundled_pairs_path())] == [p.to_doc() for p in synthetic_pairs()]
    assert len(yaml.safe_load(dump_pairs(synthetic_pairs()))["pairs"]) == 150


# -- run ---------------------------------------------------------------------


def test_run_layout(tmp_path):
    out = tmp_path / "out"
    rc = run_cli("run", "--app", F("contacts.yaml"), "--tasks", F("contacts_tasks.yaml"), "--out", out)
    assert rc == 0
    task_dir = out / "000-add-contact-alice-to-favorites"
    assert sorted(p.name for p in task_dir.iterdir()) == [
        "chosen", "ranking.json", "run_0.json", "run_1.json", "run_2.json", "script.txt", "script.yaml"]
    ranking = json.loads((task_dir / "ranking.json").read_text())
    assert [r["score"] for r in ranking["runs"]] == [1, 5, 5]
    assert [r["winner"] for r in ranking["runs"]] == [False, True, False]
    assert (task_dir / "chosen").read_text() == "run_1.json\n"
    summary = json.loads((out / "summary.json").read_text())
    assert [t["chosen"] for t in summary["tasks"]] == ["run_1.json", "run_0.json"]


def test_run_is_byte_reproducible(tmp_path):
    args = ["run", "--app", F("contacts.yaml"), "--tasks", F("contacts_tasks.yaml")]
    assert run_cli(*args, "--out", tmp_path / "a") == 0
    assert run_cli(*args, "--out", tmp_path / "b", "--jobs", "2") == 0
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_oracle_flag_overrides_task_oracles(tmp_path):
    rc = run_cli("run", "--app", F("contacts.yaml"), "--tasks", F("contacts_tasks.yaml"), "--out", tmp_path,
                 "--oracle", F("favorites_direct_oracle.yaml"), "--runs", "1")
    assert rc == 0
    trace = json.loads((tmp_path / "001-export-contacts-to-a-vcf-file-classmate" / "run_0.json").read_text())
    assert [a["target"] for a in trace["actions"]] == ["contact_alice", "favorite_star"]


def test_missing_oracle_file_fails_task_continues_others(tmp_path):
    tasks = tmp_path / "tasks.yaml"
    doc = yaml.safe_load(F("clock_tasks.yaml").read_text())
    doc["tasks"][0]["oracles"] = [str(F("clock_oracle.yaml"))]
    doc["tasks"].append(dict(doc["tasks"][0], goal="Other goal", oracles=["nope.yaml"]))
    tasks.write_text(yaml.safe_dump(doc))
    rc = run_cli("run", "--app", F("clock.yaml"), "--tasks", tasks, "--out", tmp_path / "o", "--runs", "1")
    assert rc == 1
    assert (tmp_path / "o" / "000-set-alarm-at-8-00am" / "script.txt").exists()
    assert (tmp_path / "o" / "001-other-goal" / "error.txt").exists()


@pytest.mark.parametrize(
    "args",
    [
        ["run", "--app", "/nonexistent.yaml", "--tasks", "x.yaml"],
        ["run", "--app", F("clock.yaml"), "--tasks", "/nonexistent.yaml"],
        ["run", "--app", F("clock.yaml"), "--tasks", F("contacts_tasks.yaml")],
        ["run", "--app", F("clock.yaml"), "--tasks", F("clock_tasks.yaml"), "--runs", "0"],
        ["run", "--app", F("clock.yaml"), "--tasks", F("clock_tasks.yaml"), "--backend", "remote"],
        ["train", "--app", F("clock.yaml"), "--tasks", F("clock_tasks.yaml")],
        ["replay", "/nonexistent.txt", "--app", F("clock.yaml")],
        ["metrics", "--pairs", "/nonexistent.yaml"],
        ["metrics"],
    ],
)
def test_unusable_inputs_exit_2(args, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("AGENT_TESTGEN_API_KEY", raising=False)
    monkeypatch.chdir(tmp_path)
    assert run_cli(*args) == 2
    assert "error" in capsys.readouterr().err


# -- train -------------------------------------------------------------------


def test_train_writes_memory_and_is_idempotent(tmp_path):
    memory = tmp_path / "mem.yaml"
    args = ["train", "--app", F("contacts.yaml"), "--tasks", F("contacts_tasks.yaml"), "--memory", memory]
    assert run_cli(*args, "--out", tmp_path / "o1") == 0
    first = yaml.safe_load(memory.read_text())
    export = next(e for e in first["entries"] if e["goal"].startswith("Export"))
    assert export["rules"] == ["Ensure confirming the addition to avoid leaving the task incomplete"]
    assert run_cli(*args, "--out", tmp_path / "o2") == 0
    second = yaml.safe_load(memory.read_text())
    strip = lambda doc: [(e["goal"], e["rules"], e["optimized_steps"]) for e in doc["entries"]]
    assert strip(first) == strip(second)


def test_success_training_populates_steps(tmp_path):
    memory = tmp_path / "mem.yaml"
    assert run_cli("train", "--app", F("settings.yaml"), "--tasks", F("settings_tasks.yaml"),
                   "--memory", memory, "--out", tmp_path / "o") == 0
    (entry,) = yaml.safe_load(memory.read_text())["entries"]
    assert entry["optimized_steps"] == ["Display", "Wait", "Light theme", "Save"]


def test_evaluation_leaves_memory_untouched(tmp_path):
    memory = tmp_path / "mem.yaml"
    run_cli("train", "--app", F("contacts.yaml"), "--tasks", F("contacts_tasks.yaml"), "--memory", memory,
            "--out", tmp_path / "t")
    before = memory.read_bytes()
    stat = memory.stat()
    assert run_cli("run", "--app", F("contacts.yaml"), "--tasks", F("contacts_tasks.yaml"), "--memory", memory,
                   "--out", tmp_path / "e") == 0
    assert memory.read_bytes() == before and memory.stat().st_mtime_ns == stat.st_mtime_ns


def test_missing_memory_file_starts_empty(tmp_path):
    config = RunConfig(F("clock.yaml"), F("clock_tasks.yaml"), runs=1, out_dir=tmp_path / "o",
                       memory_path=tmp_path / "absent.yaml")
    (outcome,) = cmd_run(config)
    assert outcome.ok and not (tmp_path / "absent.yaml").exists()


# -- replay and metrics ------------------------------------------------------


def test_replay_of_emitted_script(tmp_path, capsys):
    run_cli("run", "--app", F("clock.yaml"), "--tasks", F("clock_tasks.yaml"), "--out", tmp_path, "--runs", "1")
    script = tmp_path / "000-set-alarm-at-8-00am" / "script.txt"
    capsys.readouterr()
    assert run_cli("replay", script, "--app", F("clock.yaml"), "--tasks", F("clock_tasks.yaml")) == 0
    assert capsys.readouterr().out.startswith("passed")
    assert run_cli("replay", script.with_suffix(".yaml"), "--app", F("clock.yaml")) == 0


def test_replay_failure_reports_step(tmp_path, capsys):
    script = tmp_path / "s.txt"
    script.write_text('#Task: t\nd = driver()\nd.find_element(text, "Alarm").click()\nd.find_element(text, "Nope").click()\n')
    assert run_cli("replay", script, "--app", F("clock.yaml")) == 1
    assert capsys.readouterr().out.startswith("failed at step 1")


def test_metrics_over_traces(tmp_path, capsys):
    out = tmp_path / "o"
    run_cli("run", "--app", F("clock.yaml"), "--tasks", F("clock_tasks.yaml"), "--out", out, "--runs", "1")
    capsys.readouterr()
    rc = run_cli("metrics", "--traces", out, "--tasks", F("clock_tasks.yaml"), "--app", F("clock.yaml"),
                 "--json", tmp_path / "r.json", "--csv", tmp_path / "r.csv")
    assert rc == 0
    assert "#Exact-match tasks" in capsys.readouterr().out
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["counts"]["exact"] == 1
    assert report["action_space"]["clock"]["max"] == 4 * 5 * 5 * 3


def test_metrics_missing_trace_exit_1(tmp_path, capsys):
    out = tmp_path / "o"
    run_cli("run", "--app", F("clock.yaml"), "--tasks", F("clock_tasks.yaml"), "--out", out, "--runs", "1")
    tasks = tmp_path / "t.yaml"
    doc = yaml.safe_load(F("clock_tasks.yaml").read_text())
    doc["tasks"].append(dict(doc["tasks"][0], goal="Unrun goal", oracles=[]))
    tasks.write_text(yaml.safe_dump(doc))
    assert run_cli("metrics", "--traces", out, "--tasks", tasks) == 1
    assert "missing trace: 001-unrun-goal" in capsys.readouterr().err
    shutil.rmtree(out)
    assert run_cli("metrics", "--traces", out, "--tasks", tasks) == 2


def test_remote_backend_via_cli(tmp_path, monkeypatch):
    from test_llm import Stub

    replies = iter([
        '{"chosen_action": 0, "action_description": "Alarm", "reason": "r"}',
        '{"observation": "picker shown"}',
        '{"screen_description": "s", "task_done": true}',
    ])

    class Replying(Stub):
        def respond(self, body):
            return next(replies)

    monkeypatch.setenv("AGENT_TESTGEN_API_KEY", "secret")
    with Replying() as stub:
        rc = run_cli("run", "--app", F("clock.yaml"), "--tasks", F("clock_tasks.yaml"), "--out", tmp_path,
                     "--runs", "1", "--backend", "remote", "--endpoint", stub.url)
    assert rc == 0
    assert all(h["Authorization"] == "Bearer secret" for h in stub.headers)
    trace = json.loads((tmp_path / "000-set-alarm-at-8-00am" / "run_0.json").read_text())
    assert [a["target"] for a in trace["actions"]] == ["alarm_tab"]
