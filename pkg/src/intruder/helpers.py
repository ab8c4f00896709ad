import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor

from .logger import create_logger
logger = create_logger()

from . import __version__ as intruder_version
from .constants import *  # NOQA


class Error(Exception):
    """Error base class"""

    # reaching main() uncaught, an Error ends the command with its exit_code
    exit_code = EXIT_ERROR
    # print a traceback along with the message
    traceback = False

    def get_message(self):
        return type(self).__doc__.format(*self.args)


class ErrorWithTraceback(Error):
    """like Error, but show a traceback also"""
    traceback = True


class InvalidInput(Error):
    """Invalid input: {}"""


class UndefinedCorrelation(Error):
    """Correlation is undefined: {}"""


class StorageError(Error):
    """Storage error on {}: {}"""

    @classmethod
    def from_os_error(cls, path, os_error):
        return cls(path, os_error.strerror or str(os_error))


class CorruptionError(ErrorWithTraceback):
    """Corrupted checkpoint {}: {}"""


class VersionError(Error):
    """Checkpoint {} has unsupported format version {!r} (supported: {})"""


class MismatchError(Error):
    """Mismatch: {}"""


class DivergenceError(Error):
    """Training diverged at step {}: loss is {}"""
    exit_code = EXIT_DIVERGED

    @property
    def step(self):
        return self.args[0]


class NoIntrudersError(Error):
    """no intruders at (ε={}, k={})"""
    exit_code = EXIT_EMPTY


def _float(s):
    try:
        value = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError('%r is not a number' % s) from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError('%r is not finite' % s)
    return value


def EpsilonSpec(s):
    """--epsilon: cosine threshold, strictly between 0 and 1"""
    value = _float(s)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError('epsilon must be in (0, 1), got %s' % s)
    return value


def LambdaSpec(s):
    """--lambda: non-negative finite scaling factor"""
    value = _float(s)
    if value < 0:
        raise argparse.ArgumentTypeError('lambda must be >= 0, got %s' % s)
    return value


def PositiveInt(s):
    try:
        value = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError('%r is not an integer' % s) from None
    if value < 1:
        raise argparse.ArgumentTypeError('expected a positive integer, got %s' % s)
    return value


def NonNegativeInt(s):
    try:
        value = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError('%r is not an integer' % s) from None
    if value < 0:
        raise argparse.ArgumentTypeError('expected a non-negative integer, got %s' % s)
    return value


def PositiveFloat(s):
    value = _float(s)
    if value <= 0:
        raise argparse.ArgumentTypeError('expected a positive number, got %s' % s)
    return value


def _increasing(values, s):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError('values must be strictly increasing: %s' % s)
    return values


def ListOf(item):
    """comma separated list, each element checked by *item*"""
    def validator(s):
        parts = [p for p in s.split(',') if p.strip()]
        if not parts:
            raise argparse.ArgumentTypeError('empty list')
        return [item(p.strip()) for p in parts]
    return validator


def EpsilonList(s):
    """--epsilons: strictly increasing list of thresholds in (0, 1)"""
    return _increasing(ListOf(EpsilonSpec)(s), s)


def KList(s):
    """--ks: strictly increasing list of positive counts"""
    return _increasing(ListOf(PositiveInt)(s), s)


class StableDict(dict):
    """A dict subclass with stable items() ordering"""
    def items(self):
        return sorted(super().items())


def json_dumps(obj):
    """canonical JSON text: sorted keys, fixed indent, trailing newline

    floats are written with repr precision, so float64 values round-trip exactly.
    """
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + '\n'


def read_json(path):
    try:
        with open(path, encoding='utf-8') as fd:
            return json.load(fd)
    except OSError as err:
        raise StorageError.from_os_error(path, err) from None
    except ValueError as err:
        raise InvalidInput('%s is not valid JSON: %s' % (path, err)) from None


def format_float(value):
    """shortest text that reads back to the same float64 (used for CSV cells)"""
    return repr(float(value))


def csv_text(rows):
    """rows as CSV text with \\n line ends; cells holding commas or quotes get quoted"""
    out = io.StringIO()
    csv.writer(out, lineterminator='\n').writerows(rows)
    return out.getvalue()


class ProgressIndicatorPercent:
    """log ``msg % percent`` every *step* percent of *total* items

    Records go to the ``intruder.output.progress`` logger at INFO level, which
    --progress enables. Unless a logging configuration gave that logger its own
    handlers, a stderr handler is attached here, ending lines with '\\r' when
    *same_line* is set.
    """
    LOGGER_NAME = 'intruder.output.progress'

    def __init__(self, total, step=5, start=0, same_line=False, msg="%3.0f%%"):
        self.total = max(total, 1)
        self.step = step
        self.msg = msg
        self.same_line = same_line
        self.counter = 0
        self.next_percent = start
        self.logger = logging.getLogger(self.LOGGER_NAME)
        self.handler = None if self.logger.handlers else self._attach_handler()

    def _attach_handler(self):
        handler = logging.StreamHandler(stream=sys.stderr)
        handler.setLevel(logging.INFO)
        handler.terminator = '\r' if self.same_line else '\n'
        self.logger.addHandler(handler)
        self.logger.propagate = False
        if self.logger.level == logging.NOTSET:
            self.logger.setLevel(logging.WARNING)
        return handler

    def close(self):
        if self.handler is not None:
            self.logger.removeHandler(self.handler)
            self.logger.propagate = True
            self.handler.close()
            self.handler = None

    __del__ = close

    def advance(self, current=None):
        """count one item (or jump to *current*); the percentage if it is due for output, else None"""
        if current is not None:
            self.counter = current
        percent = 100.0 * self.counter / self.total
        self.counter += 1
        if percent < self.next_percent:
            return None
        self.next_percent += self.step
        return percent

    def show(self, current=None):
        percent = self.advance(current)
        if percent is not None:
            self.logger.info(self.msg % percent)

    def finish(self):
        if self.same_line:
            # blank out the last line
            self.logger.info(' ' * len(self.msg % 100.0))
        self.close()


def sysinfo():
    """versions and process details appended to crash reports"""
    import numpy
    import scipy
    return '\n'.join([
        'intruder %s on %s %s (%s)' % (intruder_version, platform.python_implementation(),
                                       platform.python_version(), platform.platform()),
        'numpy %s, scipy %s' % (numpy.__version__, scipy.__version__),
        'pid %d, cwd %s, argv %r' % (os.getpid(), os.getcwd(), sys.argv),
        '',
    ])


def log_multi(*msgs, level=logging.INFO, logger=logger):
    """log every line of every message with its own call, so each gets the log format"""
    for msg in msgs:
        for line in msg.splitlines():
            logger.log(level, line)


def parallel_map(func, items, workers=1):
    """[func(item) for item in items], fanned out over a thread pool when workers > 1; order is kept"""
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, items))
    return [func(item) for item in items]
