# Copyright 2026 The fabsim Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Command-line interface.

Exit codes: 0 on success, 1 on an invalid configuration, 2 when a run diverged and 3 when
results do not match what was expected (``table1``, ``selftest``, ``validate-topology``).
"""

from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Iterator, List, Optional
import logging

from rich.console import Console
from rich.table import Table
import typer

from .checks import run_selftest
from .config import dump_config, load_config, load_sweep
from .digraph import read_edgelist, write_edgelist
from .exceptions import ConfigError, DomainError, NumericalDivergence
from .experiment import (
    RunSummary,
    check_table1,
    emit_plotdata,
    run_experiment,
    run_sweep,
    run_table1,
    slug,
    table1_markdown,
    validate_topology,
    write_sweep_csv,
)
from .mixing import export_csv, mixing_pair, validate_pair

EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_MISMATCH = 3

app = typer.Typer(
    name="fabsim",
    help="Simulate push-pull bilevel optimization over time-varying directed graphs.",
    add_completion=False,
)
console = Console()

Overrides = Annotated[
    Optional[List[str]],
    typer.Option("--set", "-s", help="Override a config key, e.g. steps.eta_x=0.05"),
]
PlotMetrics = Annotated[
    Optional[List[str]],
    typer.Option("--plot", help="Write plot data of this metric (repeatable)"),
]
LogScale = Annotated[bool, typer.Option("--log-scale", help="Mark plot data as log-scale")]


@app.callback()
def main(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log debug output")] = False,
    quiet: Annotated[bool, typer.Option("--quiet", "-q", help="Only log warnings")] = False,
) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@contextmanager
def _exit_codes() -> Iterator[None]:
    try:
        yield
    except (ConfigError, DomainError) as e:
        console.print(f"[bold red]Configuration error:[/bold red] {e}")
        raise typer.Exit(EXIT_CONFIG)
    except NumericalDivergence as e:
        console.print(f"[bold red]Diverged:[/bold red] {e}")
        raise typer.Exit(EXIT_DIVERGED)


def _shortcuts(
    overrides: Optional[List[str]],
    seed: Optional[int] = None,
    iterations: Optional[int] = None,
    output: Optional[Path] = None,
    prefix: str = "",
) -> List[str]:
    out = list(overrides or [])
    if seed is not None:
        out.append(f"{prefix}seed={seed}")
    if iterations is not None:
        out.append(f"{prefix}iterations={iterations}")
    if output is not None:
        out.append(f"{prefix}output={output}")
    return out


def _summary_table(summaries: List[RunSummary]) -> Table:
    table = Table(title="Runs")
    for column in ("name", "algorithm", "iterations", "to threshold", "rel. err.", "comm"):
        table.add_column(column)
    table.add_column("wall time", justify="right")
    table.add_column("memory", justify="right")
    for s in summaries:
        table.add_row(
            s.name,
            s.algorithm,
            str(s.iterations_run),
            s.iterations_label if s.error is None else f"{s.iterations_label} ({s.error})",
            "" if s.final_rel_err is None else f"{s.final_rel_err:.3e}",
            str(s.comm_cost_total),
            f"{s.wall_time_s:.2f}s",
            f"{s.peak_memory_bytes / 1024:.1f} KiB",
        )
    return table


@app.command()
def run(
    config: Annotated[Path, typer.Argument(help="Experiment YAML file")],
    overrides: Overrides = None,
    seed: Annotated[Optional[int], typer.Option(help="Run seed")] = None,
    iterations: Annotated[Optional[int], typer.Option(help="Iteration budget")] = None,
    output: Annotated[Optional[Path], typer.Option(help="Output directory")] = None,
    progress: Annotated[bool, typer.Option(help="Show a progress bar")] = True,
    plot: PlotMetrics = None,
    log_scale: LogScale = False,
) -> None:
    """Run one experiment."""
    with _exit_codes():
        cfg = load_config(config, _shortcuts(overrides, seed, iterations, output))
        if cfg.output is not None:
            cfg.output.mkdir(parents=True, exist_ok=True)
            (cfg.output / f"{slug(cfg.name)}.yaml").write_text(dump_config(cfg))
        result = run_experiment(cfg, progress=progress)
        console.print(_summary_table([result.summary]))
        if plot:
            out_dir = cfg.output if cfg.output is not None else Path.cwd()
            emit_plotdata({cfg.name: [result]}, plot, out_dir, log_scale=log_scale)
    if result.summary.diverged_at is not None:
        at = result.summary.diverged_at
        console.print(f"[bold red]Diverged at iteration {at}[/bold red]")
        raise typer.Exit(EXIT_DIVERGED)


@app.command()
def sweep(
    config: Annotated[Path, typer.Argument(help="Experiment YAML file with a sweep section")],
    overrides: Overrides = None,
    seed: Annotated[Optional[int], typer.Option(help="Base seed")] = None,
    output: Annotated[Optional[Path], typer.Option(help="Output directory")] = None,
    workers: Annotated[Optional[int], typer.Option(help="Parallel workers")] = None,
    plot: PlotMetrics = None,
    log_scale: LogScale = False,
) -> None:
    """Run a parameter sweep; failing cells are reported, not fatal."""
    with _exit_codes():
        spec = load_sweep(config, _shortcuts(overrides, seed, None, output))
        cells = run_sweep(spec, workers)
        table = Table(title=f"Sweep of {spec.base.name}")
        keys = list(spec.sweep.axes)
        for column in keys + ["iterations", "std", "rel. err.", "exceeded"]:
            table.add_column(column)
        for cell in cells:
            it_mean, it_std = cell.iterations()
            err_mean, _ = cell.rel_err()
            table.add_row(
                *(str(cell.params[k]) for k in keys),
                ">Max" if it_mean is None else f"{it_mean:.0f}",
                "" if it_std is None else f"{it_std:.0f}",
                "" if err_mean is None else f"{err_mean:.3e}",
                f"{cell.exceeded}/{len(cell.runs)}",
            )
        console.print(table)
        out_dir = spec.base.output if spec.base.output is not None else Path.cwd()
        write_sweep_csv(cells, out_dir / f"{slug(spec.base.name)}.sweep.csv")
        if plot:
            runs = {
                ",".join(f"{k}={v}" for k, v in cell.params.items()): cell.runs
                for cell in cells
            }
            emit_plotdata(runs, plot, out_dir, log_scale=log_scale)


@app.command("validate-topology")
def validate_topology_command(
    config: Annotated[Optional[Path], typer.Argument(help="Experiment YAML file")] = None,
    overrides: Overrides = None,
    iterations: Annotated[
        Optional[int], typer.Option(help="Iterations to check; one period by default")
    ] = None,
    edgelist: Annotated[
        Optional[Path], typer.Option(help="Validate this edge-list graph instead")
    ] = None,
    export_edgelist: Annotated[
        Optional[Path], typer.Option(help="Write the graph of iteration 0 here")
    ] = None,
    export_matrices: Annotated[
        Optional[Path], typer.Option(help="Write A.csv and B.csv of iteration 0 here")
    ] = None,
) -> None:
    """Check strong connectivity and mixing-matrix validity of a topology."""
    with _exit_codes():
        cfg = load_config(config, overrides or [])
        if edgelist is not None:
            g = read_edgelist(edgelist)
            pair = mixing_pair(g, cfg.topology.weight_scheme())
            checked = validate_pair(pair, g)
            lines, passed = checked.lines(), checked.passed
        else:
            report, g, schedule = validate_topology(cfg, iterations)
            pair = schedule.pair_at(0)
            lines, passed = report.lines(), report.passed
        for line in lines:
            console.print(line)
        if export_edgelist is not None:
            write_edgelist(g, export_edgelist)
        if export_matrices is not None:
            export_matrices.mkdir(parents=True, exist_ok=True)
            export_csv(pair.A, export_matrices / "A.csv")
            export_csv(pair.B, export_matrices / "B.csv")
    if not passed:
        console.print("[bold red]Topology validation failed[/bold red]")
        raise typer.Exit(EXIT_MISMATCH)
    console.print("[bold green]Topology valid[/bold green]")


@app.command()
def table1(
    group: Annotated[
        Optional[List[str]],
        typer.Option(help="Only run this group: lam, eta_x, eta_y, eta_z or balanced"),
    ] = None,
    workers: Annotated[Optional[int], typer.Option(help="Parallel workers")] = None,
    budget: Annotated[int, typer.Option(help="Iteration budget")] = 20000,
    seed: Annotated[int, typer.Option(help="Seed of the instance")] = 0,
    output: Annotated[Optional[Path], typer.Option(help="Also write the table here")] = None,
) -> None:
    """Reproduce the step-size and penalty sensitivity table on policy evaluation."""
    with _exit_codes():
        rows = run_table1(group, workers, budget, seed)
        markdown = table1_markdown(rows)
        console.print(markdown, markup=False)
        if output is not None:
            output.write_text(markdown + "\n")
        failures = check_table1(rows)
    for failure in failures:
        console.print(f"[bold red]Mismatch:[/bold red] {failure}")
    if failures:
        raise typer.Exit(EXIT_MISMATCH)


@app.command()
def selftest(
    check: Annotated[Optional[List[str]], typer.Option(help="Only run this check")] = None,
    slow: Annotated[bool, typer.Option(help="Include the long rate studies")] = False,
    quick: Annotated[bool, typer.Option(help="Shorten the long loops")] = False,
) -> None:
    """Run the invariant suite."""
    with _exit_codes():
        results = run_selftest(check, slow=slow, quick=quick)
    table = Table(title="Self-test")
    for column in ("check", "result", "detail", "time"):
        table.add_column(column)
    for r in results:
        mark = "[green]PASS[/green]" if r.passed else "[red]FAIL[/red]"
        table.add_row(r.name, mark, r.detail, f"{r.seconds:.2f}s")
    console.print(table)
    if not all(r.passed for r in results):
        raise typer.Exit(EXIT_MISMATCH)
