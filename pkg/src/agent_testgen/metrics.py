"""Sequence-level judgements against ground truth and their aggregation over a task set."""

from __future__ import annotations

import csv
import io
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Any, Hashable, NamedTuple, Sequence


class TaskJudgement(NamedTuple):
    exact: bool
    completed: bool
    covered: bool
    prefix_fraction: float
    precision: float
    premature: bool
    # prefix length over |generated| instead of |truth|, reported for comparison
    prefix_fraction_generated: float = 0.0


def judge(generated: Sequence[Hashable], truth: Sequence[Hashable], finished: bool = False) -> TaskJudgement:
    """Compare a generated sequence with the ground truth.

    covered: truth is an ordered subsequence of generated.
    completed: covered and both sequences end with the same action.
    exact: identical sequences.
    prefix_fraction: longest common prefix over ``len(truth)``.
    precision: truth actions matched in order (greedy) over ``len(generated)``,
    forced to zero when the prefix is empty.
    premature: the agent declared itself finished without covering the truth.
    """
    nt = len(truth)
    if nt == 0:
        raise ValueError("ground truth must be nonempty")
    ng = len(generated)
    matched = 0
    for action in generated:
        if action == truth[matched]:
            matched += 1
            if matched == nt:
                break
    lcp = 0
    for a, b in zip(generated, truth):
        if a != b:
            break
        lcp += 1
    covered = matched == nt
    return TaskJudgement(
        ng == nt and lcp == nt,
        covered and generated[-1] == truth[-1],
        covered,
        lcp / nt,
        matched / ng if lcp else 0.0,
        finished and not covered,
        lcp / ng if ng else 0.0,
    )


@dataclass(frozen=True)
class TaskMeta:
    task_id: str
    app_name: str = ""
    truth_length: int = 0
    action_space: int | None = None


_COUNTED = ("exact", "completed", "covered", "premature")


def _bucket(judgements: Sequence[TaskJudgement]) -> dict[str, Any]:
    n = len(judgements)
    out: dict[str, Any] = {"n": n}
    for key in ("exact", "completed", "covered"):
        count = sum(getattr(j, key) for j in judgements)
        out[key] = count
        out[f"{key}_pct"] = 100.0 * count / n
    return out


@dataclass
class AggregateReport:
    n: int
    counts: dict[str, int]
    percentages: dict[str, float]
    by_length: dict[int, dict[str, Any]]
    by_app: dict[str, dict[str, Any]]
    action_space: dict[str, dict[str, float]]

    def to_doc(self) -> dict[str, Any]:
        return asdict(self)

    def table(self) -> str:
        """Plain-text report shaped like a results table."""
        rows = [
            ("#Exact-match tasks", str(self.counts["exact"])),
            ("#Completed tasks", str(self.counts["completed"])),
            ("#Covered tasks", str(self.counts["covered"])),
            ("#Premature tasks", str(self.counts["premature"])),
            ("#Total tasks", str(self.n)),
            ("Exact-match (%)", f"{self.percentages['exact']:.1f}"),
            ("Task Completion (%)", f"{self.percentages['completed']:.1f}"),
            ("Task Coverage (%)", f"{self.percentages['covered']:.1f}"),
            ("Prefix-match (%)", f"{self.percentages['prefix_match']:.1f}"),
            ("Precision (%)", f"{self.percentages['precision']:.1f}"),
            ("Prefix-match over generated (%)", f"{self.percentages['prefix_match_generated']:.1f}"),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows) + "\n"


def aggregate(judgements: Sequence[TaskJudgement], metadata: Sequence[TaskMeta] | None = None) -> AggregateReport:
    """Counts and percentages over the task set, plus stratifications.

    Exact/completed/covered are count over N; prefix-match and precision are
    means over tasks.
    """
    n = len(judgements)
    if n == 0:
        raise ValueError("aggregate needs at least one judgement")
    if metadata is None:
        metadata = [TaskMeta(str(i)) for i in range(n)]
    if len(metadata) != n:
        raise ValueError("metadata must align with judgements")

    counts = {key: sum(getattr(j, key) for j in judgements) for key in _COUNTED}
    percentages = {key: 100.0 * counts[key] / n for key in ("exact", "completed", "covered")}
    percentages["prefix_match"] = 100.0 * statistics.fmean(j.prefix_fraction for j in judgements)
    percentages["precision"] = 100.0 * statistics.fmean(j.precision for j in judgements)
    percentages["prefix_match_generated"] = 100.0 * statistics.fmean(
        j.prefix_fraction_generated for j in judgements
    )

    by_length: dict[int, list[TaskJudgement]] = defaultdict(list)
    by_app: dict[str, list[TaskJudgement]] = defaultdict(list)
    spaces: dict[str, list[int]] = defaultdict(list)
    for j, meta in zip(judgements, metadata):
        by_length[meta.truth_length].append(j)
        by_app[meta.app_name].append(j)
        if meta.action_space is not None:
            spaces[meta.app_name].append(meta.action_space)

    return AggregateReport(
        n=n,
        counts=counts,
        percentages=percentages,
        by_length={k: _bucket(v) for k, v in sorted(by_length.items())},
        by_app={k: _bucket(v) for k, v in sorted(by_app.items())},
        action_space={
            app: {
                "min": min(v),
                "median": statistics.median(v),
                "mean": statistics.fmean(v),
                "max": max(v),
            }
            for app, v in sorted(spaces.items())
        },
    )


CSV_FIELDS = (
    "task_id", "app_name", "truth_length", "action_space", "exact", "completed", "covered",
    "premature", "prefix_fraction", "prefix_fraction_generated", "precision",
)


def judgements_csv(judgements: Sequence[TaskJudgement], metadata: Sequence[TaskMeta]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for j, meta in zip(judgements, metadata):
        row = {**asdict(meta), **j._asdict()}
        writer.writerow({k: row[k] for k in CSV_FIELDS})
    return buf.getvalue()
