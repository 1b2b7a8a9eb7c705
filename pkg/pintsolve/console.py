import logging

from rich.console import Console
from rich.logging import RichHandler

from .config import settings

console = Console()
err_console = Console(stderr=True)


def setup_logging(verbose: bool = False) -> None:
    """Route the ``pintsolve`` loggers through a rich handler on stderr."""
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.WARNING)
    handler = RichHandler(console=err_console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger = logging.getLogger("pintsolve")
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False
