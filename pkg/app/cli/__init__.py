from app.cli.router import router
from app.cli import commands as _commands  # noqa: F401  registers the command handlers

__all__ = ["router"]
