import sys

from loguru import logger

LOG_FORMAT = "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | {name}:{line} - {message}"


def configure_logging(level: str = "INFO", sink=None) -> int:
    """
    Enable pfsgld logging on a single sink.

    Args:
        level: Minimum level
        sink: Target, stderr by default (the MCP stdio transport owns stdout)

    Returns:
        int: loguru handler id
    """
    logger.remove()
    handler_id = logger.add(sink or sys.stderr, level=level.upper(), format=LOG_FORMAT)
    logger.enable("pfsgld")
    return handler_id
