import logging
from io import StringIO

import pytest

from .. import logger as logger_module
from ..logger import LazyLogger, find_parent_module, create_logger, setup_logging, teardown_logging
logger = create_logger()


@pytest.fixture()
def io_logger():
    io = StringIO()
    handler = setup_logging(stream=io, env_var=None)
    handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
    logger.setLevel(logging.DEBUG)
    yield io
    teardown_logging(handler)
    logger.setLevel(logging.NOTSET)


def test_module_logger_is_named_after_module():
    assert logger.name == 'intruder.testsuite.logger'
    assert find_parent_module() == __name__


def test_records_reach_stream(io_logger):
    logger.debug('profile of %s', 'body.0.weight')
    logger.warning('k=%d clamped', 64)
    assert io_logger.getvalue() == ('DEBUG intruder.testsuite.logger: profile of body.0.weight\n'
                                    'WARNING intruder.testsuite.logger: k=64 clamped\n')


def test_lazy_and_plain_loggers_share_handlers(io_logger):
    logging.getLogger(__name__).info('plain')
    create_logger(__name__).info('lazy')
    assert io_logger.getvalue().splitlines() == ['INFO intruder.testsuite.logger: plain',
                                                 'INFO intruder.testsuite.logger: lazy']


def test_exception_includes_traceback(io_logger):
    try:
        raise ValueError('bad payload')
    except ValueError:
        logger.exception('load failed')
    text = io_logger.getvalue()
    assert text.startswith('ERROR intruder.testsuite.logger: load failed\n')
    assert 'ValueError: bad payload' in text


def test_teardown_removes_handler():
    io = StringIO()
    handler = setup_logging(stream=io, env_var=None)
    teardown_logging(handler)
    logger.warning('not captured')
    assert io.getvalue() == ''
    teardown_logging(None)


def test_unreadable_config_falls_back(tmpdir, monkeypatch):
    missing = str(tmpdir.join('logging.conf'))
    monkeypatch.setenv('INTRUDER_LOGGING_CONF', missing)
    io = StringIO()
    handler = setup_logging(stream=io)
    try:
        assert handler is not None
        assert io.getvalue().startswith('cannot use logging configuration "%s"' % missing)
    finally:
        teardown_logging(handler)


def test_lazy_logger_before_setup(monkeypatch):
    monkeypatch.setattr(logger_module, 'configured', False)
    lazy = LazyLogger('intruder.testsuite.unconfigured')
    with pytest.raises(RuntimeError):
        lazy.info('too early')
    with pytest.raises(AttributeError):
        lazy.handlers
