import logging
import sys


class AlertHandler(logging.StreamHandler):
    """A logging.Handler that echoes warnings and errors to the terminal.

    Progress messages go to the run log file only; anything at WARNING or
    above is also written to stderr, colored by level when stderr is a TTY.
    """

    COLORS = {
        logging.WARNING: "\033[33m",
        logging.ERROR: "\033[31m",
        logging.CRITICAL: "\033[1;31m",
    }
    RESET = "\033[0m"

    def __init__(self, stream=None, level=logging.WARNING):
        super().__init__(stream if stream is not None else sys.stderr)
        self.setLevel(level)
        self.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))

    @property
    def colored(self):
        """Only color real terminals."""
        isatty = getattr(self.stream, "isatty", None)
        return bool(isatty and isatty())

    def format(self, record: logging.LogRecord) -> str:
        msg = super().format(record)
        if not self.colored:
            return msg
        # Color by level
        color = self.COLORS.get(record.levelno, "")
        return f"{color}{msg}{self.RESET}" if color else msg
