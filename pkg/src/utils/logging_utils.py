"""
utils/logging_utils.py

Routes log records through tqdm.write so status lines interleave cleanly
with the progress bars of long search and experiment loops.
"""
import logging
import sys

from tqdm import tqdm

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


class TqdmLoggingHandler(logging.Handler):
    """A logging handler that writes through tqdm.write."""

    def __init__(self, stream=None, level=logging.NOTSET):
        super().__init__(level)
        self.stream = stream

    def emit(self, record):
        try:
            tqdm.write(self.format(record), file=self.stream or sys.stderr)
        except Exception:
            self.handleError(record)


def setup_logging(level="INFO", stream=None):
    """Configures the root logger once; later calls only change the level."""
    if isinstance(level, str):
        numeric = logging.getLevelName(level.upper())
        if not isinstance(numeric, int):
            raise ValueError(f"Unknown log level: {level!r}")
        level = numeric

    root = logging.getLogger()
    handler = next((h for h in root.handlers if isinstance(h, TqdmLoggingHandler)), None)
    if handler is None:
        handler = TqdmLoggingHandler(stream=stream)
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
        root.addHandler(handler)
    elif stream is not None:
        handler.stream = stream
    root.setLevel(level)
    return root
