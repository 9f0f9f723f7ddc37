"""Command-line entry point: run, train, replay and metrics.

Output layout of ``run`` (and ``train``)::

    OUT/
      summary.json
      000-set-alarm-at-8-00am/
        run_0.json ... run_{N-1}.json   one trace per independent run
        ranking.json                    scores of every run, winner marked
        chosen                          file name of the winning trace
        script.txt, script.yaml         test script emitted from the winner

Exit status: 0 on success, 1 when some task or metric could not be
produced, 2 for unusable inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .agent import DEFAULT_MAX_ACTIONS, RunResult, run_task
from .app_model import Action, AppModel, AppModelError, action_space, load_app_model
from .llm import API_KEY_ENV, BackendConfig, BackendError, Gateway, RemoteBackend, ScriptedBackend
from .memory import MemoryFileError, PersistentMemory, load_memory, save_memory
from .metrics import AggregateReport, TaskJudgement, TaskMeta, aggregate, judge, judgements_csv
from .ranking import DEFAULT_RUNS, ScoredSequence, interacted_words, rank, score_all
from .script import ExecutionReport, ScriptError, emit_script, read_script, replay, write_script
from .tasks import TaskFileError, TaskSpec, ground_truth_states, load_pairs, load_tasks

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURES, EXIT_INPUT = 0, 1, 2
CHOSEN_MARKER = "chosen"


class InputError(RuntimeError):
    """An input file is missing or unusable; maps to exit status 2."""


@dataclass
class RunConfig:
    app_path: Path
    tasks_path: Path
    backend: BackendConfig = field(default_factory=BackendConfig)
    oracles: tuple[Path, ...] = ()
    vision: bool = True
    training: bool = False
    runs: int = DEFAULT_RUNS
    max_actions: int = DEFAULT_MAX_ACTIONS
    out_dir: Path = Path("out")
    memory_path: Path | None = None
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.runs < 1:
            raise InputError("--runs must be at least 1")
        if self.max_actions < 1:
            raise InputError("--max-actions must be at least 1")
        if self.jobs < 1:
            raise InputError("--jobs must be at least 1")
        try:
            self.backend.validate()
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"{self.out_dir}: cannot create output directory: {exc}") from exc
        if not os.access(self.out_dir, os.W_OK):
            raise InputError(f"{self.out_dir}: output directory is not writable")


@dataclass
class TaskOutcome:
    task: TaskSpec
    results: list[RunResult] = field(default_factory=list)
    ranked: list[ScoredSequence] = field(default_factory=list)
    chosen: int | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.chosen is not None


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _load_inputs(config: RunConfig) -> tuple[AppModel, list[TaskSpec]]:
    try:
        model = load_app_model(config.app_path)
    except (AppModelError, OSError) as exc:
        raise InputError(f"cannot load app model: {exc}") from exc
    try:
        tasks = load_tasks(config.tasks_path, model)
    except TaskFileError as exc:
        raise InputError(f"cannot load tasks: {exc}") from exc
    tasks = [t for t in tasks if t.app_name == model.app_name]
    if not tasks:
        raise InputError(f"{config.tasks_path}: no tasks for app {model.app_name!r}")
    return model, tasks


def _oracle_for(config: RunConfig, task: TaskSpec, run_index: int) -> Path:
    pool = config.oracles or (task.train_oracles if config.training and task.train_oracles else task.oracles)
    if not pool:
        raise InputError(f"task {task.task_id}: the scripted backend needs an oracle file")
    return pool[run_index % len(pool)]


def _backend_factory(config: RunConfig) -> Callable[[TaskSpec, int], Any]:
    if config.backend.backend_kind == "remote":
        shared = RemoteBackend(config.backend)
        return lambda task, i: shared
    return lambda task, i: ScriptedBackend.from_file(_oracle_for(config, task, i))


def _run_one_task(
    config: RunConfig,
    model: AppModel,
    task: TaskSpec,
    pm: PersistentMemory,
    make_backend: Callable[[TaskSpec, int], Any],
) -> TaskOutcome:
    outcome = TaskOutcome(task)
    runs = 1 if config.training else config.runs
    try:
        for i in range(runs):
            gateway = Gateway(make_backend(task, i), vision=config.vision, max_reasks=config.backend.max_reasks)
            result = run_task(task.goal, model, pm, config.training, gateway, config.max_actions)
            outcome.results.append(result)
        candidates = [
            ScoredSequence(
                i, tuple(r.actions), frozenset(interacted_words(r.actions, r.states)), r.finished
            )
            for i, r in enumerate(outcome.results)
        ]
        winner = rank(candidates, task.goal)
        outcome.ranked = score_all(candidates, task.goal)
        outcome.chosen = winner.run_index
    except (InputError, BackendError, MemoryFileError, OSError, TaskFileError, ValueError) as exc:
        logger.error("task %s failed: %s", task.task_id, exc)
        outcome.error = f"{type(exc).__name__}: {exc}"
    return outcome


def _persist(config: RunConfig, outcome: TaskOutcome) -> None:
    task_dir = config.out_dir / outcome.task.task_id
    task_dir.mkdir(parents=True, exist_ok=True)
    for i, result in enumerate(outcome.results):
        _write_json(task_dir / f"run_{i}.json", {"run_index": i, **result.to_trace()})
    if outcome.error is not None:
        (task_dir / "error.txt").write_text(outcome.error + "\n", encoding="utf-8")
        return
    _write_json(
        task_dir / "ranking.json",
        {
            "goal": outcome.task.goal,
            "chosen": outcome.chosen,
            "runs": [
                {
                    "run_index": s.run_index,
                    "score": s.score,
                    "finished": s.finished,
                    "length": len(s.actions),
                    "stop_reason": outcome.results[s.run_index].stop_reason.value,
                    "winner": s.run_index == outcome.chosen,
                }
                for s in outcome.ranked
            ],
        },
    )
    (task_dir / CHOSEN_MARKER).write_text(f"run_{outcome.chosen}.json\n", encoding="utf-8")
    best = outcome.results[outcome.chosen]
    script = emit_script(best.actions, best.states, outcome.task.goal)
    write_script(script, task_dir / "script.txt")


def cmd_run(config: RunConfig) -> list[TaskOutcome]:
    """Run every task of the app ``runs`` times (once when training), rank and persist.

    Persistent memory is read in evaluation mode and written back atomically
    only in training mode.
    """
    config.validate()
    random.seed(config.seed)
    model, tasks = _load_inputs(config)
    try:
        pm = load_memory(config.memory_path) if config.memory_path else PersistentMemory()
    except MemoryFileError as exc:
        raise InputError(str(exc)) from exc
    make_backend = _backend_factory(config)
    merge_lock = threading.Lock()

    def worker(task: TaskSpec) -> TaskOutcome:
        outcome = _run_one_task(config, model, task, pm, make_backend)
        with merge_lock:
            _persist(config, outcome)
        return outcome

    if config.jobs == 1:
        outcomes = [worker(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(worker, tasks))

    if config.training and config.memory_path is not None:
        save_memory(pm, config.memory_path)
    _write_json(
        config.out_dir / "summary.json",
        {
            "app_name": model.app_name,
            "training": config.training,
            "vision": config.vision,
            "tasks": [
                {
                    "task_id": o.task.task_id,
                    "goal": o.task.goal,
                    "chosen": None if o.chosen is None else f"run_{o.chosen}.json",
                    "stop_reason": None if o.chosen is None else o.results[o.chosen].stop_reason.value,
                    "actions": None if o.chosen is None else len(o.results[o.chosen].steps),
                    "error": o.error,
                }
                for o in outcomes
            ],
        },
    )
    return outcomes


def cmd_train(config: RunConfig) -> list[TaskOutcome]:
    config.training = True
    if config.memory_path is None:
        raise InputError("train needs --memory")
    return cmd_run(config)


def _find_task(tasks: Sequence[TaskSpec], app_name: str, task_id: str | None) -> TaskSpec:
    pool = [t for t in tasks if t.app_name == app_name]
    if task_id is not None:
        pool = [t for t in pool if t.task_id == task_id or t.goal == task_id]
    if not pool:
        raise InputError(f"no task {task_id or ''} for app {app_name!r}".replace("  ", " "))
    return pool[0]


def cmd_replay(script_path: Path, app_path: Path, task: TaskSpec | None = None) -> ExecutionReport:
    try:
        model = load_app_model(app_path)
    except (AppModelError, OSError) as exc:
        raise InputError(f"cannot load app model: {exc}") from exc
    try:
        script = read_script(script_path)
    except (ScriptError, OSError) as exc:
        raise InputError(f"cannot read script: {exc}") from exc
    return replay(script, model, task.goal_check if task else None)


def _trace_actions(task_dir: Path) -> tuple[list[Action], bool]:
    marker = task_dir / CHOSEN_MARKER
    name = marker.read_text(encoding="utf-8").strip()
    doc = json.loads((task_dir / name).read_text(encoding="utf-8"))
    return [Action.from_dict(a) for a in doc["actions"]], bool(doc["finished"])


def cmd_metrics(
    traces_dir: Path | None = None,
    tasks_path: Path | None = None,
    pairs_path: Path | None = None,
    app_paths: Sequence[Path] = (),
) -> tuple[AggregateReport | None, list[TaskJudgement], list[TaskMeta], list[str]]:
    """Judge chosen traces (or a pairs file) against ground truth.

    Returns the report, per-task judgements with their metadata, and the
    ids of tasks that could not be judged.
    """
    judgements: list[TaskJudgement] = []
    metas: list[TaskMeta] = []
    missing: list[str] = []
    if pairs_path is not None:
        try:
            pairs = load_pairs(pairs_path)
        except TaskFileError as exc:
            raise InputError(str(exc)) from exc
        for p in pairs:
            judgements.append(judge(p.generated, p.truth, p.finished))
            metas.append(TaskMeta(p.task_id, p.app_name, len(p.truth)))
    else:
        if traces_dir is None or tasks_path is None:
            raise InputError("metrics needs --pairs, or --traces with --tasks")
        if not traces_dir.is_dir():
            raise InputError(f"{traces_dir}: no such traces directory")
        models: dict[str, AppModel] = {}
        for path in app_paths:
            try:
                m = load_app_model(path)
            except (AppModelError, OSError) as exc:
                raise InputError(f"cannot load app model: {exc}") from exc
            models[m.app_name] = m
        try:
            tasks = load_tasks(tasks_path)
        except TaskFileError as exc:
            raise InputError(str(exc)) from exc
        for task in tasks:
            if not task.ground_truth:
                continue
            try:
                actions, finished = _trace_actions(traces_dir / task.task_id)
            except (OSError, ValueError, KeyError) as exc:
                logger.error("task %s: no usable chosen trace (%s)", task.task_id, exc)
                missing.append(task.task_id)
                continue
            space = None
            if task.app_name in models:
                states = ground_truth_states(task, models[task.app_name])
                space = action_space(states[:-1])
            judgements.append(judge(actions, task.ground_truth, finished))
            metas.append(TaskMeta(task.task_id, task.app_name, len(task.ground_truth), space))
    report = aggregate(judgements, metas) if judgements else None
    return report, judgements, metas, missing


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--app", type=Path, required=True, help="app-model YAML file")
    p.add_argument("--tasks", type=Path, required=True, help="tasks YAML file")
    p.add_argument("--backend", choices=("remote", "scripted"), default="scripted")
    p.add_argument("--oracle", type=Path, action="append", default=[],
                   help="scripted oracle file; repeat to give each run its own (cycled)")
    p.add_argument("--endpoint", help="chat-completions URL for the remote backend")
    p.add_argument("--no-vision", action="store_true", help="never send screenshots to the verifier")
    p.add_argument("--runs", type=int, default=DEFAULT_RUNS, help="independent runs per task")
    p.add_argument("--max-actions", type=int, default=DEFAULT_MAX_ACTIONS)
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--memory", type=Path, help="persistent-memory YAML file")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized fixtures only")
    p.add_argument("--jobs", type=int, default=1, help="tasks executed concurrently")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agent-testgen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="generate action sequences and test scripts")
    _add_run_flags(p_run)
    p_run.add_argument("--train", action="store_true", help="training mode: reflect and update memory")

    p_train = sub.add_parser("train", help="build persistent memory from training runs")
    _add_run_flags(p_train)

    p_replay = sub.add_parser("replay", help="execute a test script on the simulator")
    p_replay.add_argument("script", type=Path)
    p_replay.add_argument("--app", type=Path, required=True)
    p_replay.add_argument("--tasks", type=Path, help="tasks file holding the goal_check")
    p_replay.add_argument("--task", help="task id or goal within --tasks (default: first for the app)")

    p_metrics = sub.add_parser("metrics", help="judge generated sequences against ground truth")
    p_metrics.add_argument("--pairs", type=Path, help="file of (generated, truth) pairs")
    p_metrics.add_argument("--traces", type=Path, help="output directory of a previous run")
    p_metrics.add_argument("--tasks", type=Path)
    p_metrics.add_argument("--app", type=Path, action="append", default=[],
                           help="app model(s), enables action-space statistics")
    p_metrics.add_argument("--json", type=Path, help="also write the report as JSON")
    p_metrics.add_argument("--csv", type=Path, help="also write per-task judgements as CSV")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    backend = BackendConfig.from_env(backend_kind=args.backend, endpoint=args.endpoint)
    return RunConfig(
        app_path=args.app,
        tasks_path=args.tasks,
        backend=backend,
        oracles=tuple(args.oracle),
        vision=not args.no_vision,
        training=bool(getattr(args, "train", False)),
        runs=args.runs,
        max_actions=args.max_actions,
        out_dir=args.out,
        memory_path=args.memory,
        seed=args.seed,
        jobs=args.jobs,
    )


def _print_outcomes(outcomes: Sequence[TaskOutcome]) -> None:
    for o in outcomes:
        if not o.ok:
            print(f"{o.task.task_id}: FAILED ({o.error})")
            continue
        scores = ", ".join(
            f"run_{s.run_index}={s.score}{'*' if s.run_index == o.chosen else ''}" for s in o.ranked
        )
        best = o.results[o.chosen]
        print(f"{o.task.task_id}: {len(best.steps)} action(s), {best.stop_reason.value}; scores {scores}")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command in ("run", "train"):
            config = _config_from_args(args)
            if config.backend.backend_kind == "remote" and not config.backend.credential:
                raise InputError(f"remote backend needs ${API_KEY_ENV}")
            outcomes = cmd_train(config) if args.command == "train" else cmd_run(config)
            _print_outcomes(outcomes)
            return EXIT_OK if all(o.ok for o in outcomes) else EXIT_FAILURES

        if args.command == "replay":
            task = None
            if args.tasks is not None:
                try:
                    model_name = load_app_model(args.app).app_name
                    task = _find_task(load_tasks(args.tasks), model_name, args.task)
                except (AppModelError, OSError, TaskFileError) as exc:
                    raise InputError(str(exc)) from exc
            report = cmd_replay(args.script, args.app, task)
            if report.passed:
                print(f"passed ({report.executed_steps} step(s))")
                return EXIT_OK
            where = "" if report.failed_step_index is None else f" at step {report.failed_step_index}"
            print(f"failed{where}: {report.message} (goal_reached={str(report.goal_reached).lower()})")
            return EXIT_FAILURES

        if args.command == "metrics":
            report, judgements, metas, missing = cmd_metrics(args.traces, args.tasks, args.pairs, args.app)
            if report is None:
                print("no task could be judged", file=sys.stderr)
                return EXIT_FAILURES
            print(report.table(), end="")
            for task_id in missing:
                print(f"missing trace: {task_id}", file=sys.stderr)
            if args.json:
                _write_json(args.json, report.to_doc())
            if args.csv:
                args.csv.write_text(judgements_csv(judgements, metas), encoding="utf-8")
            return EXIT_FAILURES if missing else EXIT_OK
    except InputError as exc:
        print(f"agent-testgen: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
