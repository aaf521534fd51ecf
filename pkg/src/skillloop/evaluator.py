"""Snapshot evaluation: N trials per (task, snapshot), success rate per cell.

Evaluation replays stored skills only -- it never touches a model client, so
every cell of the report is produced with zero inference calls. Cells are
exact fractions (integer success count divided once by N). A null snapshot
scores 0; a cell whose rollouts keep failing at the transport level is
reported as missing, which is distinct from 0.

Evaluation seeds live in their own namespace, disjoint from training seeds.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .envs import EnvHandle
from .errors import TransportError, ValidationError
from .memory import SnapshotStore
from .planning import TaskSpec
from .seeds import derive_seed


@dataclass(frozen=True)
class TrialRecord:
    task_id: str
    snapshot: int
    trial: int
    seed: int
    success: int


@dataclass
class EvalReport:
    trials: int
    snapshots: tuple[int, ...]
    task_ids: tuple[str, ...]
    cells: dict[tuple[str, int], float | None]
    trial_records: list[TrialRecord] = field(default_factory=list)

    def cell(self, task_id: str, snapshot: int) -> float | None:
        return self.cells[(task_id, snapshot)]

    def snapshot_means(self) -> dict[int, float]:
        """Mean SR per snapshot over tasks; missing cells count as 0 here."""
        means = {}
        for snapshot in self.snapshots:
            values = [self.cells[(t, snapshot)] or 0.0 for t in self.task_ids]
            means[snapshot] = sum(values) / len(values)
        return means

    def final_mean(self) -> float:
        return self.snapshot_means()[self.snapshots[-1]]

    def missing_cells(self) -> list[tuple[str, int]]:
        return sorted(k for k, v in self.cells.items() if v is None)


def eval_seed(task_id: str, snapshot: int, trial: int, global_seed: int) -> int:
    return derive_seed("eval", task_id, snapshot, trial, global_seed)


def evaluate(
    store: SnapshotStore,
    tasks: Sequence[TaskSpec],
    env_factory: Callable[[], EnvHandle],
    *,
    trials: int = 5,
    global_seed: int = 0,
    snapshots: Sequence[int] | None = None,
    transport_retries: int = 2,
    jobs: int = 1,
) -> EvalReport:
    """Success-rate matrix over all (task, snapshot) cells.

    env_factory opens one environment connection per worker; with jobs=1 a
    single connection is reused sequentially. Results merge in key order, so
    parallel runs produce the identical report.
    """
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    snapshot_list = tuple(snapshots) if snapshots is not None else tuple(store.iterations())
    if not snapshot_list:
        raise ValidationError("snapshot store is empty")
    task_ids = tuple(t.id for t in tasks)
    for task_id in task_ids:
        for snapshot in snapshot_list:
            if not store.has(snapshot, task_id):
                raise ValidationError(
                    f"snapshot store incomplete: missing ({snapshot}, {task_id!r})"
                )

    def eval_task(task_id: str) -> tuple[list[tuple[tuple[str, int], float | None]], list[TrialRecord]]:
        cells: list[tuple[tuple[str, int], float | None]] = []
        records: list[TrialRecord] = []
        with env_factory() as env:
            for snapshot in snapshot_list:
                skill = store.get(snapshot, task_id)
                if skill is None:
                    cells.append(((task_id, snapshot), 0.0))
                    continue
                successes = 0
                missing = False
                for trial in range(1, trials + 1):
                    seed = eval_seed(task_id, snapshot, trial, global_seed)
                    record = None
                    for _ in range(transport_retries + 1):
                        try:
                            record = env.rollout(task_id, skill, seed)
                            break
                        except TransportError:
                            continue
                    if record is None:
                        missing = True
                        break
                    successes += record.success
                    records.append(
                        TrialRecord(task_id, snapshot, trial, seed, record.success)
                    )
                cells.append(((task_id, snapshot), None if missing else successes / trials))
        return cells, records

    results: dict[str, tuple[list, list]] = {}
    if jobs <= 1:
        for task_id in task_ids:
            results[task_id] = eval_task(task_id)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {task_id: pool.submit(eval_task, task_id) for task_id in task_ids}
            for task_id, future in futures.items():
                results[task_id] = future.result()

    cells: dict[tuple[str, int], float | None] = {}
    trial_records: list[TrialRecord] = []
    for task_id in task_ids:  # merge deterministically in task order
        task_cells, records = results[task_id]
        cells.update(task_cells)
        trial_records.extend(records)
    return EvalReport(
        trials=trials,
        snapshots=snapshot_list,
        task_ids=task_ids,
        cells=cells,
        trial_records=trial_records,
    )


def summary_table(report: EvalReport) -> str:
    """Final-snapshot success rate per task plus the average, fixed-width text."""
    final = report.snapshots[-1]
    width = max([len(t) for t in report.task_ids] + [len("Average")])
    lines = [f"{'Task':<{width}}  SR@{final}", "-" * (width + 8)]
    for task_id in report.task_ids:
        value = report.cells[(task_id, final)]
        text = "NA" if value is None else f"{value:.2f}"
        lines.append(f"{task_id:<{width}}  {text}")
    lines.append("-" * (width + 8))
    lines.append(f"{'Average':<{width}}  {report.final_mean():.2f}")
    return "\n".join(lines) + "\n"
