"""
Logging setup shared by every module of the package

Uses the standard python logging utilities, just provides
nice formatting out of the box.

Usage:

    from yoloret.log import get_log
    logger = get_log()

    logger.info("Something happened")
    logger.warning("Something concerning happened")
    logger.debug("Extra printing we often don't need to see.")
    # Custom level for finished long runs:
    logger.success("Training finished")

Log records go to stderr so that JSON reports written to stdout stay clean.
"""
import logging
import time
from functools import wraps

try:
    from colorlog import ColoredFormatter

    COLORS = True
except ImportError:
    from logging import Formatter

    COLORS = False

LOG_NAME = "yoloret"
SUCCESS = 25  # between INFO and WARNING


def get_log(debug=False, name=LOG_NAME, verbose=False):
    """Creates a nice log format for use across multiple files.

    Default logging level is INFO

    Args:
        debug (Optional[bool]): If true, sets logging level to DEBUG
        name (Optional[str]): The name the logger will use when printing statements
        verbose (Optional[bool]): announce the logger creation

    Returns:
        logging.Logger
    """
    logger = logging.getLogger(name)
    return format_log(logger, debug=debug, verbose=verbose)


def format_log(logger, debug=False, verbose=False):
    """Makes the logging output pretty and colored with times"""
    log_level = logging.DEBUG if debug else logging.INFO
    log_colors = {
        "DEBUG": "blue",
        "INFO": "cyan",
        "WARNING": "yellow",
        "ERROR": "red",
        "CRITICAL": "black,bg_red",
        "SUCCESS": "white,bg_blue",
    }

    if COLORS:
        format_ = "[%(asctime)s] [%(log_color)s%(levelname)s %(filename)s%(reset)s] %(message)s%(reset)s"
        formatter = ColoredFormatter(
            format_, datefmt="%m/%d %H:%M:%S", log_colors=log_colors
        )
    else:
        format_ = "[%(asctime)s] [%(levelname)s %(filename)s] %(message)s"
        formatter = Formatter(format_, datefmt="%m/%d %H:%M:%S")

    logging.addLevelName(SUCCESS, "SUCCESS")
    setattr(
        logger,
        "success",
        lambda message, *args: logger._log(SUCCESS, message, args),
    )

    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.setLevel(log_level)
        logger.propagate = False

        if verbose:
            logger.info("Logger initialized: %s", logger.name)

    if debug:
        logger.setLevel(logging.DEBUG)

    return logger


def set_debug(debug=True):
    """Switch the package logger between DEBUG and INFO after creation"""
    logger = logging.getLogger(LOG_NAME)
    logger.setLevel(logging.DEBUG if debug else logging.INFO)


def log_runtime(f):
    """
    Logs how long a decorated function takes to run

    Args:
        f (function): The function to wrap

    Returns:
        function: The wrapped function

    Example:
        >>> @log_runtime
        ... def test_func():
        ...     return 2 + 4
        >>> test_func()
        6

    This prints out to stderr the following in addition to the answer:
    [06/15 10:19:12] [INFO log.py] Total elapsed time for test_func (minutes): 0.00
    """

    @wraps(f)
    def wrapper(*args, **kwargs):
        t1 = time.perf_counter()

        result = f(*args, **kwargs)

        elapsed_time = time.perf_counter() - t1
        logger = get_log()
        logger.info(
            "Total elapsed time for %s : %.2f minutes (%.2f seconds)",
            f.__name__,
            elapsed_time / 60.0,
            elapsed_time,
        )
        return result

    return wrapper
