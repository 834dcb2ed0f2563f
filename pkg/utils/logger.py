import logging

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

console = Console(stderr=True)

_CONFIGURED = False


def configure_logging(level: str = "INFO") -> None:
    """Route the library's logging records through rich"""
    global _CONFIGURED
    root = logging.getLogger("n3dt")
    root.setLevel(level.upper())
    if not _CONFIGURED:
        root.addHandler(RichHandler(console=console, show_path=False, rich_tracebacks=True))
        root.propagate = False
        _CONFIGURED = True


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(f"n3dt.{name}")


def progress() -> Progress:
    return Progress(
        TextColumn("[bold blue]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    )


def section(title: str):
    console.print(Panel(f"[bold cyan]{title}[/bold cyan]", border_style="cyan"))

def success(msg: str):
    console.print(f"[bold green]✓[/bold green] {msg}")

def failure(msg: str):
    console.print(f"[bold red]✗[/bold red] {msg}")

def info(msg: str):
    console.print(f"[bold]•[/bold] {msg}")

def log_start(command: str, seed: int, config_hash: str):
    console.print(f"[bold blue]Starting {command}[/bold blue] - seed {seed}, config {config_hash}")

def log_complete(command: str, duration: float, status: str = "OK"):
    status_color = "green" if status == "OK" else "red"
    console.print(f"[bold {status_color}]{command} complete: {status}[/bold {status_color}] ({duration:.2f}s)")
