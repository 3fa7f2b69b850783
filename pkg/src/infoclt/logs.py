from __future__ import annotations

import logging

from rich.console import Console
from rich.logging import RichHandler


console = Console()
err_console = Console(stderr=True)


def setup_logging(level: str = "INFO") -> None:
    root = logging.getLogger("infoclt")
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = RichHandler(console=err_console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(level.upper())
    root.propagate = False
