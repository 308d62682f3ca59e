"""
Package logger.
"""
import logging as _logging
import sys

log = _logging.getLogger("fdconv")

FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup(verbose=False, stream=None):
    """
    Attach a stream handler to the package logger.

    Repeated calls replace the previous handler.
    """
    for handler in list(log.handlers):
        log.removeHandler(handler)

    handler = _logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(_logging.Formatter(FORMAT))
    log.addHandler(handler)
    log.setLevel(_logging.DEBUG if verbose else _logging.INFO)
    return log
