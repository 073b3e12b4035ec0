"""
Logging configuration for command-line and server entry points.

Library modules log through ``logging.getLogger(__name__)``; entry points call
``configure_logging`` once so that stdlib records and structlog events share
one renderer on stderr.
"""
import logging
import sys
from typing import Optional, Union

import structlog

_configured = False


def configure_logging(level: Union[int, str] = "INFO", json_output: bool = False, force: bool = False) -> None:
    """Route stdlib logging and structlog through a single stderr handler"""
    global _configured
    if _configured and not force:
        return

    shared_processors = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="iso", utc=True),
    ]
    structlog.configure(
        processors=shared_processors + [structlog.stdlib.ProcessorFormatter.wrap_for_formatter],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    renderer = structlog.processors.JSONRenderer() if json_output else structlog.dev.ConsoleRenderer(colors=False)
    formatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=shared_processors,
        processors=[structlog.stdlib.ProcessorFormatter.remove_processors_meta, renderer],
    )

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)

    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(level.upper() if isinstance(level, str) else level)
    _configured = True


def get_logger(name: Optional[str] = None):
    """structlog logger for entry-point events"""
    return structlog.get_logger(name)
