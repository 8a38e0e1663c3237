"""Logging setup shared by the library modules and the command line."""

import copy
import logging
from typing import Optional, Union


LOG_FORMAT = "%(asctime)-15s %(levelname)-8s %(name)-24s | %(message)s"

# ANSI foreground codes per level.
LEVEL_COLORS = {
    "DEBUG": 34,
    "INFO": 37,
    "WARNING": 33,
    "ERROR": 31,
    "CRITICAL": 35,
}
RESET_SEQ = "\033[0m"
COLOR_SEQ = "\033[1;%dm"


class Formatter(logging.Formatter):
    """Formatter that colors the level name of console records.

    Attributes
    ----------
    use_color: bool
        Whether ANSI color sequences are emitted.

    """

    def __init__(self, fmt: str = LOG_FORMAT, use_color: bool = True) -> None:
        """Instantiate.

        Parameters
        ----------
        fmt: str
            Record format string.
        use_color: bool
            Flag to set colored level names.

        """
        super().__init__(fmt)
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:  # noqa: A003
        """Format a record without mutating the original.

        Parameters
        ----------
        record: logging.LogRecord
            Record object for logging.

        Returns
        -------
        str
            Formatted string for log.

        """
        if self.use_color and record.levelname in LEVEL_COLORS:
            record = copy.copy(record)
            record.levelname = (
                COLOR_SEQ % LEVEL_COLORS[record.levelname]
                + record.levelname
                + RESET_SEQ
            )
        return super().format(record)


def setup_logging(
    log_path: Optional[str] = None,
    log_level: Union[int, str] = "DEBUG",
    print_level: Union[int, str] = "INFO",
    logger: Optional[logging.Logger] = None,
    use_color: bool = True,
) -> logging.Logger:
    """Attach a console handler, and optionally a file handler, to a logger.

    Handlers previously attached to the logger are replaced, so calling this
    twice does not duplicate output.

    Parameters
    ----------
    log_path : str, optional
        Path to a log file; the file never receives color sequences.
    log_level : str, optional
        Level of the logger itself, defaults to DEBUG.
    print_level : str, optional
        Level of the console handler, defaults to INFO.
    logger : logging.Logger, optional
        Logger to configure, the root logger if omitted.
    use_color: bool, optional
        Color the console level names.

    Returns
    -------
    logging.Logger
        The configured logger.

    """
    logger = logger if logger else logging.getLogger()
    logger.setLevel(log_level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(Formatter(use_color=use_color))
    stream_handler.setLevel(print_level)
    logger.addHandler(stream_handler)

    if log_path:
        file_handler = logging.FileHandler(log_path)
        file_handler.setFormatter(Formatter(use_color=False))
        file_handler.setLevel(log_level)
        logger.addHandler(file_handler)
    return logger


def attach_file_handler(log_path: str, logger_name: str = "kiln") -> logging.Handler:
    """Mirror every record of a logger hierarchy into a plain-text file.

    Parameters
    ----------
    log_path: str
        Destination file.
    logger_name: str
        Name of the parent logger, ``kiln`` covers every library module.

    Returns
    -------
    logging.Handler
        The handler, to be removed by the caller when the command ends.

    """
    handler = logging.FileHandler(log_path)
    handler.setFormatter(Formatter(use_color=False))
    handler.setLevel(logging.DEBUG)
    logging.getLogger(logger_name).addHandler(handler)
    return handler
