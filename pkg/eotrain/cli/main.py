# eotrain/cli/main.py

"""Command-line entry point: plan, train, verify and sweep a model file."""

import functools
import json
import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, List, Optional, TypeVar

import click
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from eotrain import __version__
from eotrain.core.compiler import CompiledModel, compile_model, plan_report
from eotrain.core.exceptions import EotrainError
from eotrain.core.graph import ModelGraph
from eotrain.core.hashing import calculate_file_hash
from eotrain.core.models import RunConfigModel, SweepRow
from eotrain.core.planner import peak_live_lower_bound
from eotrain.core.swap import SwapMode, build_swap_schedule, swap_stats
from eotrain.core.trainer import (
    TrainOptions,
    Trainer,
    export_weights,
    load_weights,
    verify,
)
from eotrain.core.utils import bundled_models, find_config, format_bytes, load_model
from eotrain.reporters.html import render_plan_html
from eotrain.reporters.markdown import render_plan_markdown, render_sweep_markdown

console = Console()
logger = logging.getLogger("eotrain.cli")

F = TypeVar("F", bound=Callable[..., Any])

SWAP_CHOICES = ["off", "ondemand", "on_demand", "reduced", "proactive"]


def _handle_errors(func: F) -> F:
    """Turn domain and config errors into a one-line diagnostic and exit code 1."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except (EotrainError, ValueError, FileNotFoundError) as e:
            raise click.ClickException(f"{type(e).__name__}: {e}") from e

    return wrapper  # type: ignore[return-value]


def _setup_logging(verbose: bool) -> None:
    root = logging.getLogger("eotrain")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, markup=False)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


def _run_config(path: Optional[str]) -> RunConfigModel:
    config = find_config(path)
    return config.model if config is not None else RunConfigModel()


def _compile(model: str, merge: bool = True) -> CompiledModel:
    graph: ModelGraph = load_model(model)
    return compile_model(graph, merge=merge)


@click.group()
@click.version_option(__version__, prog_name="eotrain")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging on stderr")
def main(verbose: bool) -> None:
    """eotrain: execution-order planned training runtime."""
    _setup_logging(verbose)


@main.command("models")
def list_models() -> None:
    """List the model files shipped with eotrain."""
    for name in bundled_models():
        console.print(name)


@main.command()
@click.argument("model")
@click.option("--json", "as_json", is_flag=True, help="Print the machine-readable plan")
@click.option("--no-merge", is_flag=True, help="Force every spatial relation to C")
@click.option(
    "--report",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Write a .md or .html plan report",
)
@_handle_errors
def plan(model: str, as_json: bool, no_merge: bool, report: Optional[Path]) -> None:
    """Show execution orders, tensors and the memory plan of MODEL.

    MODEL is a model file path or the name of a bundled model.
    """
    compiled = _compile(model, merge=not no_merge)
    data = plan_report(compiled)

    if report is not None:
        if report.suffix.lower() in (".html", ".htm"):
            report.write_text(render_plan_html(data), encoding="utf-8")
        else:
            report.write_text(render_plan_markdown(data), encoding="utf-8")
        logger.info(f"Wrote plan report to {report}")

    if as_json:
        click.echo(json.dumps(data, indent=2))
        return

    steps = Table(title="Execution orders")
    for column in ("EO", "layer", "proc"):
        steps.add_column(column)
    for step in data["steps"]:
        steps.add_row(str(step["eo"]), step["layer"], step["proc"])
    console.print(steps)

    tensors = Table(title="Tensors")
    for column in ("name", "dim", "bytes", "spatial", "EOs", "group", "offset"):
        tensors.add_column(column)
    for t in data["tensors"]:
        offset = "ext" if t["offset"] is None else str(t["offset"])
        eos = ",".join(str(e) for e in t["eos"])
        tensors.add_row(
            t["name"], t["dim"], str(t["bytes"]), t["spatial"], eos, t["group"], offset
        )
    console.print(tensors)

    memory = compiled.memory
    bound = peak_live_lower_bound(compiled.merged)
    console.print(f"pool_bytes: {memory.pool_bytes} ({format_bytes(memory.pool_bytes)})")
    console.print(f"external_bytes: {memory.external_bytes}")
    console.print(f"total_bytes: {memory.total_bytes} ({format_bytes(memory.total_bytes)})")
    console.print(f"lower_bound: {bound} ({format_bytes(bound)})")
    if bound:
        console.print(f"pool/bound: {memory.pool_bytes / bound:.3f}")


@main.command()
@click.argument("model")
@click.option("--swap", type=click.Choice(SWAP_CHOICES, case_sensitive=False), default=None)
@click.option("--lookahead", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--steps", type=click.IntRange(min=1), default=None, help="Stop after N batches")
@click.option("--no-merge", is_flag=True, help="Force every spatial relation to C")
@click.option("--poison", is_flag=True, help="Fill dead arena regions with NaN")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="RunReport JSON path")
@click.option("--weights", type=click.Path(dir_okay=False), help="Export final weights here")
@click.option(
    "--init-weights",
    type=click.Path(exists=True, dir_okay=False),
    help="Start from weights exported by a previous run",
)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="eotrain.yaml")
@_handle_errors
def train(
    model: str,
    swap: Optional[str],
    lookahead: Optional[int],
    seed: Optional[int],
    steps: Optional[int],
    no_merge: bool,
    poison: bool,
    output: Optional[str],
    weights: Optional[str],
    init_weights: Optional[str],
    config_path: Optional[str],
) -> None:
    """Train MODEL and write a RunReport."""
    config = _run_config(config_path)
    options = TrainOptions.from_config(
        config,
        swap=swap,
        lookahead=lookahead,
        seed=seed,
        steps=steps,
        merge=False if no_merge else None,
        poison=True if poison else None,
    )
    compiled = _compile(model, merge=options.merge)
    initial = load_weights(init_weights) if init_weights else None
    result = Trainer(compiled, options).run(initial)
    report = result.report

    table = Table(title=f"{report.model}: {report.iterations} iterations")
    table.add_column("epoch")
    table.add_column("mean loss")
    for epoch, loss in enumerate(report.epoch_losses):
        table.add_row(str(epoch), f"{loss:.6g}")
    console.print(table)
    console.print(f"swap: {report.swap.mode}")
    console.print(f"peak_resident_bytes: {report.peak_resident_bytes}")
    console.print(f"swap_in: {report.swap.swap_in_count}  swap_out: {report.swap.swap_out_count}")
    console.print(f"weights_sha256: {report.weights_sha256}")

    weights = weights or config.report.weights
    if weights:
        exported = export_weights(weights, result.weights)
        digest = calculate_file_hash(exported)
        report = report.model_copy(
            update={"weights_file": str(exported), "weights_file_sha256": digest}
        )
        console.print(f"weights: {exported} (sha256 {digest})")
    output = output or config.report.output
    if output:
        Path(output).write_text(report.model_dump_json(indent=2), encoding="utf-8")
        console.print(f"report: {output}")


@main.command("verify")
@click.argument("model")
@click.option("--steps", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.option("--swap", type=click.Choice(SWAP_CHOICES, case_sensitive=False), default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="eotrain.yaml")
@_handle_errors
def verify_command(
    model: str, steps: int, tolerance: float, swap: Optional[str], config_path: Optional[str]
) -> None:
    """Train MODEL and compare its weights with the reference trainer."""
    options = TrainOptions.from_config(_run_config(config_path), swap=swap)
    result = verify(load_model(model), steps=steps, tolerance=tolerance, options=options)

    table = Table(title=f"{result.model}: {result.steps} steps")
    table.add_column("weight")
    table.add_column("max |delta|")
    for name, delta in result.deltas.items():
        table.add_row(name, f"{delta:.3e}")
    console.print(table)
    console.print(f"max_abs_delta: {result.max_abs_delta:.3e}")
    if not result.passed:
        raise click.ClickException(
            f"max |delta| {result.max_abs_delta:.3e} exceeds tolerance {tolerance:.1e}"
        )
    console.print("[green]OK[/green]")


def _parse_modes(value: str) -> List[str]:
    modes = [m.strip() for m in value.split(",") if m.strip()]
    for mode in modes:
        SwapMode.parse(mode)
    return modes


@main.command()
@click.argument("model")
@click.option(
    "--swap-modes",
    default="off,ondemand,reduced,proactive",
    show_default=True,
    help="Comma-separated swap modes",
)
@click.option("--lookahead", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--static", is_flag=True, help="Derive figures from the schedules, no training")
@click.option("--steps", type=click.IntRange(min=1), default=None, help="Batches per mode")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Write the table as CSV")
@click.option("--markdown", "md_path", type=click.Path(dir_okay=False), help="Write markdown")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="eotrain.yaml")
@_handle_errors
def sweep(
    model: str,
    swap_modes: str,
    lookahead: int,
    static: bool,
    steps: Optional[int],
    csv_path: Optional[str],
    md_path: Optional[str],
    config_path: Optional[str],
) -> None:
    """Compare swap modes on MODEL: peak resident bytes, swap counts, stalls and time."""
    modes = _parse_modes(swap_modes)
    options = TrainOptions.from_config(_run_config(config_path), steps=steps, lookahead=lookahead)
    compiled = _compile(model, merge=options.merge)

    rows: List[SweepRow] = []
    for mode in modes:
        if static:
            started = time.perf_counter()
            schedule = build_swap_schedule(
                compiled.merged, compiled.exec_plan.eo_max, mode, lookahead
            )
            stats = swap_stats(schedule, 1, compiled.memory.pool_bytes)
            wall = time.perf_counter() - started
        else:
            report = Trainer(compiled, replace(options, swap=mode)).run().report
            stats, wall = report.swap, report.wall_seconds
            stats = stats.model_copy(update={"peak_resident_bytes": report.peak_resident_bytes})
        rows.append(
            SweepRow(
                mode=stats.mode,
                lookahead=stats.lookahead,
                peak_resident_bytes=stats.peak_resident_bytes,
                swap_in_count=stats.swap_in_count,
                swap_out_count=stats.swap_out_count,
                stall_count=stats.stall_count,
                wall_seconds=wall,
            )
        )

    frame = pd.DataFrame([row.model_dump() for row in rows])
    table = Table(title=f"{compiled.graph.name}: swap modes")
    for column in frame.columns:
        table.add_column(str(column))
    for record in frame.itertuples(index=False):
        table.add_row(*("" if pd.isna(v) else str(v) for v in record))
    console.print(table)

    if csv_path:
        frame.to_csv(csv_path, index=False)
    if md_path:
        Path(md_path).write_text(
            render_sweep_markdown(compiled.graph.name, rows), encoding="utf-8"
        )


if __name__ == "__main__":
    main()
