"""Command-line entry point: train, eval, replay, memory tools, protocol-check."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import (
    RunConfig,
    embedding_provider,
    load_run_config,
    make_client,
    resolve_tasks,
    retrieval_config,
)
from .envs import open_env
from .errors import (
    ConfigError,
    FixtureMissError,
    ReplayMissError,
    SkillLoopError,
    TransportError,
)
from .evaluator import evaluate, summary_table
from .memory import load_memory, save_memory
from .reports import write_eval_curve, write_eval_matrix, write_train_curve
from .seeds import derive_seed
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_FIXTURE = 4


def _fail(exc: SkillLoopError) -> None:
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, ConfigError):
        sys.exit(EXIT_CONFIG)
    if isinstance(exc, TransportError):
        sys.exit(EXIT_TRANSPORT)
    if isinstance(exc, (FixtureMissError, ReplayMissError)):
        sys.exit(EXIT_FIXTURE)
    sys.exit(EXIT_ERROR)


def _run_dir(cfg: RunConfig, out_override: str | None) -> Path:
    if out_override:
        run_dir = Path(out_override)
    else:
        run_dir = Path(cfg.out) / f"{cfg.mode}-{cfg.config_hash()}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _initial_plan_memory(cfg: RunConfig, tasks) -> tuple:
    """One cold plan per task, frozen as a single-snapshot memory.

    Planning happens here (model calls allowed); the evaluation itself stays
    zero-inference. A task whose planning fails keeps a null entry and scores 0.
    """
    from .errors import CompositionError, PlanningError
    from .memory import SkillMemory, SnapshotStore
    from .planning import assemble, compose_plan, plan as plan_task

    client = make_client(cfg)
    memory = SkillMemory()
    store = SnapshotStore()
    for task in tasks:
        memory.ensure(task.id)
        try:
            instructions = plan_task(task, client, ())
            units = compose_plan(instructions, client)
            memory.commit(task.id, assemble(task, instructions, units))
        except (PlanningError, CompositionError):
            pass
        store.capture(1, task.id, memory)
    return memory, store


_shared_options = [
    click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file."),
    click.option("--mode", type=str, default=None, help="vireskill | retry | no_skill_transfer"),
    click.option("--env", "env_spec", type=str, default=None, help="builtin:<name> | cmd:<command> | tcp:<host:port>"),
    click.option("--backend", type=str, default=None, help="scripted:desk | fixture:<path> | remote | record:<path>[+inner] | replay:<path>"),
    click.option("--jobs", type=int, default=None, help="Parallel evaluation workers."),
    click.option("--seed", "global_seed", type=int, default=None, help="Global seed."),
    click.option("--out", "out_override", type=click.Path(), default=None, help="Run directory (default: <out>/<mode>-<config hash>)."),
]


def shared_options(func):
    for option in reversed(_shared_options):
        func = option(func)
    return func


def _build_config(config_path, mode, env_spec, backend, jobs, global_seed) -> RunConfig:
    overrides = {
        "mode": mode,
        "env": env_spec,
        "backend": backend,
        "jobs": jobs,
        "global_seed": global_seed,
    }
    return load_run_config(config_path, overrides)


@click.group()
def main() -> None:
    """Skill-learning loop: train, evaluate, and replay verified skills."""


@main.command("train")
@shared_options
def cmd_train(config_path, mode, env_spec, backend, jobs, global_seed, out_override) -> None:
    """Run the training loop and write memory, snapshots, log, and curves."""
    try:
        cfg = _build_config(config_path, mode, env_spec, backend, jobs, global_seed)
        run_dir = _run_dir(cfg, out_override)
        client = make_client(cfg)
        provider = embedding_provider(cfg)
        with open_env(cfg.env, timeout=cfg.timeout, env_seed=cfg.global_seed) as env:
            tasks = resolve_tasks(cfg, env.describe() if cfg.tasks is None else None)
            train_cfg = TrainConfig(
                tasks=tuple(tasks),
                rounds=cfg.rounds,
                iters_per_round=cfg.iters_per_round,
                mode=cfg.mode,
                retrieval=retrieval_config(cfg),
                global_seed=cfg.global_seed,
            )
            result = train(train_cfg, env, client, provider)
        save_memory(run_dir / "memory.json", result.memory, result.store)
        result.log.write(run_dir / "trainlog.ndjson")
        write_train_curve(train_cfg, result.log, run_dir)
        (run_dir / "config.json").write_text(
            json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        solved = sum(1 for t in tasks if result.memory.get(t.id) is not None)
        click.echo(f"trained {len(tasks)} tasks ({solved} solved); model calls: {client.total_calls}")
        click.echo(f"artifacts in {run_dir}")
    except SkillLoopError as exc:
        _fail(exc)


@main.command("eval")
@click.option("--memory", "memory_path", type=click.Path(), default=None, help="Memory file from train.")
@click.option("--trials", type=int, default=None, help="Rollouts per cell (default from config).")
@click.option(
    "--baseline-initial",
    is_flag=True,
    help="Instead of a trained memory, plan each task once cold and evaluate that "
    "single-snapshot memory (static-planner baseline).",
)
@shared_options
def cmd_eval(memory_path, trials, baseline_initial, config_path, mode, env_spec, backend,
             jobs, global_seed, out_override) -> None:
    """Evaluate every memory snapshot with N trials per task; zero model calls."""
    try:
        cfg = _build_config(config_path, mode, env_spec, backend, jobs, global_seed)
        if trials is not None:
            cfg.trials = trials
        if (memory_path is None) == (not baseline_initial):
            raise ConfigError("pass exactly one of --memory or --baseline-initial", field="memory")
        run_dir = _run_dir(cfg, out_override)

        def factory():
            return open_env(cfg.env, timeout=cfg.timeout, env_seed=cfg.global_seed)

        with factory() as env:
            tasks = resolve_tasks(cfg, env.describe() if cfg.tasks is None else None)
        if baseline_initial:
            memory, store = _initial_plan_memory(cfg, tasks)
        else:
            memory, store = load_memory(memory_path)
            tasks = [t for t in tasks if t.id in memory.entries()]
        report = evaluate(
            store,
            tasks,
            factory,
            trials=cfg.trials,
            global_seed=cfg.global_seed,
            jobs=cfg.jobs,
        )
        write_eval_matrix(report, run_dir)
        write_eval_curve(report, run_dir, label=cfg.mode)
        table = summary_table(report)
        (run_dir / "summary.txt").write_text(table, encoding="utf-8")
        click.echo(table, nl=False)
        if report.missing_cells():
            click.echo(f"missing cells (transport failures): {report.missing_cells()}")
        click.echo(f"artifacts in {run_dir}")
    except SkillLoopError as exc:
        _fail(exc)


@main.command("replay")
@click.option("--memory", "memory_path", type=click.Path(), required=True)
@click.option("--task-id", required=True)
@click.option("--env", "env_spec", default="builtin:deterministic")
@click.option("--seed", "seed", type=int, default=0)
def cmd_replay(memory_path, task_id, env_spec, seed) -> None:
    """Run one stored skill and print the rollout record. Makes zero model calls."""
    try:
        memory, _ = load_memory(memory_path)
        skill = memory.get(task_id)
        if skill is None:
            raise ConfigError(f"memory holds no skill for task {task_id!r}", field="task-id")
        with open_env(env_spec) as env:
            record = env.rollout(task_id, skill, derive_seed("replay", task_id, seed))
        click.echo(
            json.dumps(
                {
                    "task_id": task_id,
                    "success": record.success,
                    "halted_at_step": record.halted_at_step,
                    "env_note": record.env_note,
                    "steps_executed": len(record.step_boundaries),
                    "frames": len(record.frames),
                    "model_calls": 0,
                },
                indent=2,
                sort_keys=True,
            )
        )
        sys.exit(EXIT_OK if record.success == 1 else EXIT_ERROR)
    except SkillLoopError as exc:
        _fail(exc)


@main.group("memory")
def memory_group() -> None:
    """Inspect or export memory files."""


@memory_group.command("show")
@click.argument("memory_path", type=click.Path())
def cmd_memory_show(memory_path) -> None:
    """Print a one-line summary per task entry."""
    try:
        memory, store = load_memory(memory_path)
        for task_id in memory.task_ids():
            skill = memory.get(task_id)
            if skill is None:
                click.echo(f"{task_id}: (no skill)")
            else:
                click.echo(
                    f"{task_id}: {len(skill.plan)} steps, origin={skill.origin}, "
                    f"round={skill.created_at.round}, iteration={skill.created_at.iteration}"
                )
        click.echo(f"snapshots: {len(store.iterations())}")
    except SkillLoopError as exc:
        _fail(exc)


@memory_group.command("export")
@click.argument("memory_path", type=click.Path())
@click.option("--task-id", required=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write to file instead of stdout.")
def cmd_memory_export(memory_path, task_id, out_path) -> None:
    """Export one stored skill as JSON."""
    try:
        memory, _ = load_memory(memory_path)
        skill = memory.get(task_id)
        if skill is None:
            raise ConfigError(f"memory holds no skill for task {task_id!r}", field="task-id")
        obj = {
            "task_id": skill.task_id,
            "plan": list(skill.plan),
            "programs": list(skill.programs),
            "origin": skill.origin,
            "created_at": {"round": skill.created_at.round, "iteration": skill.created_at.iteration},
        }
        text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        if out_path:
            Path(out_path).write_text(text, encoding="utf-8")
            click.echo(f"wrote {out_path}")
        else:
            click.echo(text, nl=False)
    except SkillLoopError as exc:
        _fail(exc)


@main.command("protocol-check")
@click.option("--env", "env_spec", required=True, help="cmd:<command> | tcp:<host:port> executor to check.")
@click.option("--timeout", type=float, default=30.0)
def cmd_protocol_check(env_spec, timeout) -> None:
    """Drive an external executor through the conformance script."""
    from .conformance import run_protocol_check

    try:
        results = run_protocol_check(env_spec, timeout=timeout)
    except SkillLoopError as exc:
        _fail(exc)
        return
    failed = 0
    for result in results:
        click.echo(result.line())
        failed += 0 if result.ok else 1
    click.echo(f"{len(results) - failed}/{len(results)} checks passed")
    sys.exit(EXIT_OK if failed == 0 else EXIT_ERROR)


if __name__ == "__main__":
    main()
