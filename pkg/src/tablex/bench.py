"""Benchmark harness: dataset ingestion, parallel pipeline runs, scoring
and report emission.

Reports are deterministic for a fixed replay store and configuration:
tasks are processed in id order for aggregation regardless of worker
scheduling, and the runtime section holds counters rather than wall-clock
values.
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from pathlib import Path

from .errors import NoTasksFound, UnreadableFile
from .metrics import MetricReport, evaluate
from .model import (
    FlattenStyle,
    SourceText,
    Table,
    flatten_table,
    normalize_rectangular,
    parse_csv_table,
    parse_html_table,
    serialize_csv,
    serialize_html,
)
from .pipeline import PipelineConfig, PipelineResult, run_ten

SCHEMA_VERSION = 1
DATASET_FORMATS = ("html", "csv", "paired-text")


@dataclass(frozen=True)
class Task:
    id: str
    source: SourceText
    gold: Table
    provenance: str


@dataclass
class TaskOutcome:
    task_id: str
    metrics: MetricReport | None
    iterations_used: int
    converged: bool
    error: str | None = None
    result: PipelineResult | None = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "error": self.error,
        }


@dataclass
class BenchReport:
    per_task: list[TaskOutcome]
    aggregates: dict
    runtime: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "per_task": [outcome.to_dict() for outcome in self.per_task],
            "aggregates": self.aggregates,
            "runtime": self.runtime,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _read_text(path: Path) -> str:
    # bytes + decode: universal-newline translation must not rewrite CRLF
    # sources, which would shift coverage and replay fingerprints
    try:
        return path.read_bytes().decode("utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFile(str(path), str(exc)) from exc


def _load_gold(path: Path) -> Table:
    text = _read_text(path)
    try:
        if path.suffix.lower() == ".csv":
            table = parse_csv_table(text)
        else:
            table = parse_html_table(text)
    except Exception as exc:
        raise UnreadableFile(str(path), f"cannot parse gold table: {exc}") from exc
    return normalize_rectangular(table)


def ingest_dataset(directory: str | Path, fmt: str) -> list[Task]:
    """Load benchmark tasks from a directory.

    ``html``/``csv`` load gold tables and synthesize the input by
    flattening them; ``paired-text`` loads (<id>.txt, <id>.html) pairs
    as-is. Tasks come back sorted by id.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise UnreadableFile(str(directory), "not a directory")
    if fmt not in DATASET_FORMATS:
        raise ValueError(f"unknown dataset format {fmt!r}")

    tasks: list[Task] = []
    if fmt in ("html", "csv"):
        suffixes = (".html", ".htm") if fmt == "html" else (".csv",)
        for path in sorted(directory.iterdir()):
            if path.suffix.lower() not in suffixes:
                continue
            gold = _load_gold(path)
            source = flatten_table(gold, FlattenStyle.OCR)
            tasks.append(Task(id=path.stem, source=source, gold=gold, provenance=str(path)))
    else:
        for path in sorted(directory.glob("*.txt")):
            gold_path = path.with_suffix(".html")
            if not gold_path.exists():
                raise UnreadableFile(str(path), "no matching gold .html file")
            tasks.append(
                Task(
                    id=path.stem,
                    source=SourceText(_read_text(path)),
                    gold=_load_gold(gold_path),
                    provenance=str(path),
                )
            )

    if not tasks:
        raise NoTasksFound(f"no {fmt} tasks under {directory}")
    tasks.sort(key=lambda task: task.id)
    return tasks


def _run_task(task: Task, cfg: PipelineConfig) -> TaskOutcome:
    result = run_ten(task.source, cfg)
    metrics = evaluate(result.final, task.gold, task.source)
    return TaskOutcome(
        task_id=task.id,
        metrics=metrics,
        iterations_used=result.iterations_used,
        converged=result.converged,
        result=result,
    )


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def run_bench(
    tasks: list[Task],
    cfg: PipelineConfig,
    parallelism: int = 1,
    per_task_timeout: float | None = None,
) -> BenchReport:
    """Run the pipeline over every task with a bounded worker pool.

    Per-task failures (transport errors, replay misses, timeouts) are
    recorded on the task and never abort the batch; they score EM 0 and are
    excluded from the other metric means.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    outcomes: dict[str, TaskOutcome] = {}
    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=parallelism) as executor:
        futures = {task.id: executor.submit(_run_task, task, cfg) for task in tasks}
        for task in tasks:
            try:
                outcomes[task.id] = futures[task.id].result(timeout=per_task_timeout)
            except FutureTimeout:
                futures[task.id].cancel()
                outcomes[task.id] = TaskOutcome(task.id, None, 0, False, error="timeout")
            except Exception as exc:
                outcomes[task.id] = TaskOutcome(
                    task.id, None, 0, False, error=f"{type(exc).__name__}: {exc}"
                )
    elapsed = time.perf_counter() - started
    print(f"bench: {len(tasks)} tasks in {elapsed:.2f}s", file=sys.stderr)

    ordered = [outcomes[task.id] for task in sorted(tasks, key=lambda t: t.id)]
    scored = [o.metrics for o in ordered if o.metrics is not None]
    aggregates = {
        "tasks": len(ordered),
        "errored": sum(1 for o in ordered if o.error is not None),
        "em_percent": sum(m.em for m in scored) / len(ordered) * 100.0 if ordered else 0.0,
        "mean_ted": _mean([m.ted for m in scored]),
        "mean_cvm": _mean([m.cvm for m in scored]),
        "mean_colvm": _mean([m.colvm for m in scored]),
        "mean_coverage": _mean([m.coverage for m in scored if m.coverage is not None]),
        "mean_hallucination": _mean([m.hallucination for m in scored if m.hallucination is not None]),
    }
    runtime = {
        "tasks": len(ordered),
        "errored": aggregates["errored"],
        "converged": sum(1 for o in ordered if o.converged),
        "total_iterations": sum(o.iterations_used for o in ordered),
    }
    return BenchReport(per_task=ordered, aggregates=aggregates, runtime=runtime)


def write_task_outputs(outcomes: list[TaskOutcome], directory: str | Path) -> None:
    """Emit the per-task trace JSON plus standalone HTML and CSV tables."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for outcome in outcomes:
        if outcome.result is None:
            continue
        base = directory / outcome.task_id
        base.with_suffix(".trace.json").write_text(
            outcome.result.to_json(task_id=outcome.task_id), encoding="utf-8"
        )
        base.with_suffix(".html").write_text(serialize_html(outcome.result.final), encoding="utf-8")
        base.with_suffix(".csv").write_text(serialize_csv(outcome.result.final), encoding="utf-8")
