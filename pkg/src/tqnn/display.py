"""Rich progress display for circuit searches."""

import time
from typing import TYPE_CHECKING, Optional

from rich.console import Console
from rich.live import Live
from rich.panel import Panel
from rich.table import Table

if TYPE_CHECKING:
    from .experiment import SearchStats
    from .pool import EvaluationPool

FRONT_ROWS = 6


def format_duration(seconds: float) -> str:
    """Format seconds like '2h 15m', '3m 05s' or '12.3s'."""
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(seconds), 60)
    hours, minutes = divmod(minutes, 60)
    if hours > 0:
        return f"{hours}h {minutes}m"
    return f"{minutes}m {secs:02d}s"


class ProgressDisplay:
    """Rich terminal UI for a running search."""

    def __init__(self, pool: "EvaluationPool", stats: "SearchStats"):
        self.pool = pool
        self.stats = stats

        self.console = Console()
        self._live: Optional[Live] = None
        self._started_at = time.monotonic()

    def start(self) -> None:
        """Show the panel; rich redraws it from _render four times a second."""
        self._live = Live(
            console=self.console,
            get_renderable=self._render,
            refresh_per_second=4,
            transient=True,
        )
        self._live.start()

    def stop(self) -> None:
        if self._live:
            self._live.stop()
            self._live = None

    def update(self) -> None:
        """Redraw now, e.g. right after a generation closes."""
        if self._live:
            self._live.refresh()

    def _render(self) -> Panel:
        stats = self.stats
        table = Table.grid(padding=(0, 1))
        table.add_column()

        table.add_row(
            f"[bold]Dataset:[/bold] {stats.dataset}  "
            f"[bold]Qubits:[/bold] {stats.n_qubits}  "
            f"[bold]Cell:[/bold] {stats.cells_done + 1}/{stats.cells_total}"
        )
        table.add_row(
            f"[bold]Generation:[/bold] {stats.generation}/{stats.generations} "
            f"{self._make_bar(stats.generation, max(1, stats.generations))}"
        )
        table.add_row("")

        table.add_row("[bold]Pareto front:[/bold]")
        table.add_row(self._render_front())
        table.add_row("")

        done, total = self.pool.progress
        table.add_row(
            f"[bold]Evaluations ({self.pool.active_count}/{self.pool.max_workers} running):[/bold] "
            f"{done}/{total} in batch, {stats.evaluations} total"
            + (f", [red]{stats.failures} failed[/red]" if stats.failures > 0 else "")
        )
        table.add_row(f"[bold]Elapsed:[/bold] {format_duration(time.monotonic() - self._started_at)}")

        return Panel(
            table,
            title="[bold blue]tqnn search[/bold blue]",
            border_style="blue",
        )

    def _render_front(self) -> Table:
        """Render the best front members with fixed rows."""
        table = Table.grid(padding=(0, 2))
        table.add_column(width=10)  # Accuracy
        table.add_column(width=8)   # Gates
        table.add_column(width=50)  # Genome

        front = self.stats.front[:FRONT_ROWS]
        for slot in range(FRONT_ROWS):
            if slot < len(front):
                ind = front[slot]
                genome = ind.genome.to_text()
                if len(genome) > 48:
                    genome = genome[:45] + "..."
                table.add_row(f"  {ind.accuracy:.4f}", f"{ind.gates:.0f}", genome)
            else:
                table.add_row("  [dim]—[/dim]", "", "")
        return table

    def _make_bar(self, done: int, total: int, width: int = 20) -> str:
        """Create a text-based progress bar."""
        filled = int(width * done / total)
        return f"[green]{'█' * filled}[/green][dim]{'░' * (width - filled)}[/dim]"
