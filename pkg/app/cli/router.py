import argparse
import sys
import uuid
from typing import Callable, Dict

import structlog

from app.core.errors import EdgeCodeError

logger = structlog.get_logger()

Handler = Callable[[argparse.Namespace], int]


class CommandRouter:
    def __init__(self):
        self.handlers: Dict[str, Handler] = {}

    def register(self, command: str):
        def decorator(func: Handler):
            self.handlers[command] = func
            return func

        return decorator

    def route(self, args: argparse.Namespace) -> int:
        command = getattr(args, "command", None)

        if not command:
            self.send_error("missing_command", "a command is required")
            return 1

        handler = self.handlers.get(command)

        if not handler:
            self.send_error("unknown_command", f"unknown command: {command}")
            return 1

        structlog.contextvars.bind_contextvars(command=command, run_id=uuid.uuid4().hex[:12])
        try:
            return handler(args)
        except EdgeCodeError as e:
            logger.error("command_failed", code=e.code, error=e.message)
            self.send_error(e.code, e.message)
            return e.exit_code
        except Exception as e:
            logger.exception("command_crashed", error=str(e))
            self.send_error("internal", str(e))
            return 2
        finally:
            structlog.contextvars.unbind_contextvars("command", "run_id")

    def send_error(self, code: str, error: str) -> None:
        print(f"error [{code}]: {error}", file=sys.stderr)


router = CommandRouter()
