"""logging for intruder

Every module gets its logger at import time:

    from .logger import create_logger
    logger = create_logger()

and logs at the level the message deserves:

    debug    per-matrix scan details, per-step losses
    info     run milestones: snapshots written, stages finished
    warning  non-fatal surprises, e.g. k clamped to a small matrix
    error    fatal errors, right before a non-zero exit code

Logging goes to stderr. stdout carries only the one-line summaries the commands
print (``total=3``, ``edited=2``), so they can be piped.

A logging configuration file can replace the builtin setup. Its name comes from
the INTRUDER_LOGGING_CONF environment variable. Files ending in ``.json`` are
read with ``logging.config.dictConfig``, anything else with ``fileConfig``.
"""

import inspect
import json
import logging
import logging.config
import logging.handlers  # handlers defined there can be named in a config file
import os
import warnings

configured = False

# nan/inf from numpy are checked explicitly where they matter
warnings.filterwarnings('ignore', r'invalid value encountered in (divide|true_divide)')

LOGGER_METHODS = frozenset(['setLevel', 'isEnabledFor', 'log', 'exception',
                            'debug', 'info', 'warning', 'error', 'critical'])


def _log_warning(message, category, filename, lineno, file=None, line=None):
    # route python warnings through logging, keeping the original location in the text
    create_logger(__name__).warning('%s:%s: %s: %s', filename, lineno, category.__name__, message)


def _load_config(fname):
    fname = os.path.abspath(fname)
    # opened here: fileConfig silently ignores unreadable files
    with open(fname) as fd:
        if fname.endswith('.json'):
            logging.config.dictConfig(json.load(fd))
        else:
            logging.config.fileConfig(fd, disable_existing_loggers=False)
    return fname


def setup_logging(stream=None, conf_fname=None, env_var='INTRUDER_LOGGING_CONF', level='info'):
    """configure logging, from a config file if one is given, else a stderr handler

    returns the handler installed by the builtin setup (None when a config file
    was used), so in-process callers can remove it again with teardown_logging().
    """
    global configured
    if env_var:
        conf_fname = os.environ.get(env_var, conf_fname)
    failure = None
    if conf_fname:
        try:
            conf_fname = _load_config(conf_fname)
        except (OSError, ValueError, KeyError, TypeError) as err:
            failure = err
        else:
            configured = True
            warnings.showwarning = _log_warning
            logging.getLogger(__name__).debug('logging configured from "%s"', conf_fname)
            return None
    root = logging.getLogger('')
    handler = logging.StreamHandler(stream)
    handler.setFormatter(logging.Formatter('%(message)s'))
    root.addHandler(handler)
    root.setLevel(level.upper())
    configured = True
    warnings.showwarning = _log_warning
    if failure is not None:
        logging.getLogger(__name__).warning('cannot use logging configuration "%s": %s', conf_fname, failure)
    return handler


def teardown_logging(handler):
    """remove a handler returned by setup_logging()"""
    if handler is not None:
        logging.getLogger('').removeHandler(handler)
        handler.close()


def find_parent_module():
    """name of the first module up the stack that is not this one

    falls back to this module's name when the stack cannot be inspected.
    """
    frame = inspect.currentframe()
    while frame is not None:
        module = inspect.getmodule(frame)
        if module is not None and module.__name__ != __name__:
            return module.__name__
        frame = frame.f_back
    return __name__


class LazyLogger:
    """stands in for logging.getLogger(name) until logging is set up

    module level loggers are created at import time, before setup_logging()
    ran; the real logger is looked up on first use.
    """

    def __init__(self, name):
        self._name = name
        self._logger = None

    @property
    def name(self):
        return self._name

    def __getattr__(self, attr):
        if attr not in LOGGER_METHODS:
            raise AttributeError(attr)
        if self._logger is None:
            if not configured:
                raise RuntimeError('logger %s used before setup_logging() was called' % self._name)
            self._logger = logging.getLogger(self._name)
        return getattr(self._logger, attr)


def create_logger(name=None):
    """a LazyLogger named after the calling module unless *name* is given"""
    return LazyLogger(name or find_parent_module())
