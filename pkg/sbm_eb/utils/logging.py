"""Rich console output and stdlib logging setup for sbm-eb.

Library code logs through ``get_logger``; the CLI and the study runner use the
``log_*`` helpers for human-facing progress on stderr.
"""

import logging
import time
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.text import Text
from rich.theme import Theme

PACKAGE_LOGGER = "sbm_eb"

STUDY_THEME = Theme(
    {
        "stage": "bold magenta",
        "model": "bold blue",
        "error_rate": "cyan",
        "path": "italic",
        "muted": "dim",
        "ok": "bold green",
        "warn": "yellow",
        "fail": "bold red",
        "info": "cyan",
        "success": "bold green",
    }
)

_console: Optional[Console] = None
# phase name -> perf_counter at start
_open_phases: dict[str, float] = {}


def _get_console() -> Console:
    global _console
    if _console is None:
        _console = Console(theme=STUDY_THEME, stderr=True, highlight=False)
    return _console


def setup_logging(level: str = "INFO") -> None:
    """Route log records through rich and set the ``sbm_eb`` logger level.

    Unknown level names fall back to INFO. Calling this twice replaces the
    root handlers rather than stacking them.
    """
    numeric_level = logging.getLevelName(level.upper())
    if not isinstance(numeric_level, int):
        numeric_level = logging.INFO

    handler = RichHandler(console=_get_console(), rich_tracebacks=True, show_path=False, markup=False)
    logging.basicConfig(level=logging.WARNING, format="%(message)s", datefmt="[%X]", handlers=[handler], force=True)
    logging.getLogger(PACKAGE_LOGGER).setLevel(numeric_level)
    logging.getLogger(PACKAGE_LOGGER).debug("log level set to %s", logging.getLevelName(numeric_level))


def get_logger(name: str) -> logging.Logger:
    """Logger for a component, namespaced under ``sbm_eb``."""
    return logging.getLogger(f"{PACKAGE_LOGGER}.{name}")


def log_phase_start(phase: str) -> None:
    """Open a study phase such as "K2 DENSE" or "WIKI BOOTSTRAP"."""
    _open_phases[phase] = time.perf_counter()
    console = _get_console()
    console.print()
    console.print(Panel.fit(Text(phase, style="stage"), title="phase", border_style="magenta"))


def log_phase_end(phase: str, success: bool) -> None:
    """Close a phase with its outcome; elapsed time is shown if it was opened."""
    started = _open_phases.pop(phase, None)
    outcome = Text("done" if success else "failed", style="ok" if success else "fail")
    outcome.append(f"  {phase}", style="stage")
    if started is not None:
        outcome.append(f"  {time.perf_counter() - started:.1f}s", style="muted")

    console = _get_console()
    console.print(Panel.fit(outcome, border_style="green" if success else "red"))
    console.print()


def log_model_result(model: str, error: float, details: Optional[str] = None) -> None:
    """One line per model: misassignment fraction plus optional details."""
    line = Text.assemble((f"{model:>5}", "model"), "  error ", (f"{error:.4f}", "error_rate"))
    if details:
        line.append(f"  {details}", style="muted")
    _get_console().print(line)


def log_file_operation(operation: str, file_path: str) -> None:
    _get_console().print(Text.assemble("  ", (operation, "muted"), " ", (str(file_path), "path")))


def log_convergence_result(model: str, rhat: float, converged: bool) -> None:
    """Report the potential scale reduction of a model's error series."""
    mark, style = ("R_hat ok", "ok") if converged else ("R_hat high", "warn")
    _get_console().print(Text.assemble("  ", (mark, style), f" {model}: {rhat:.3f}"))


def log_replicate(current: int, total: int, status: str) -> None:
    _get_console().print(Text.assemble((f"[{current}/{total}]", "muted"), f" {status}"))


class LogContext:
    """Indent a titled block of console output; exceptions are reported and re-raised."""

    def __init__(self, title: str, style: str = "info"):
        self.title = title
        self.style = style
        self.console = _get_console()

    def __enter__(self) -> "LogContext":
        self.console.print(Text(f"> {self.title}", style=self.style))
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> bool:
        if exc_type is not None:
            self.console.print(Text(f"  {self.title}: {exc_type.__name__}", style="fail"))
        return False
