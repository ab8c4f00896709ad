import argparse
import logging

import pytest

from ..helpers import Error, InvalidInput, DivergenceError, NoIntrudersError, StorageError
from ..helpers import EpsilonSpec, LambdaSpec, PositiveInt, NonNegativeInt, PositiveFloat, EpsilonList, KList, ListOf
from ..helpers import StableDict, json_dumps, read_json, format_float, parallel_map, ProgressIndicatorPercent
from ..constants import *  # NOQA
from . import BaseTestCase


class ErrorTestCase(BaseTestCase):

    def test_message_from_docstring(self):
        self.assert_equal(InvalidInput('k must be positive').get_message(), 'Invalid input: k must be positive')
        self.assert_equal(NoIntrudersError('0.5', 10).get_message(), 'no intruders at (ε=0.5, k=10)')

    def test_exit_codes(self):
        self.assert_equal(Error().exit_code, EXIT_ERROR)
        self.assert_equal(NoIntrudersError('0.5', 10).exit_code, EXIT_EMPTY)
        err = DivergenceError(17, float('inf'))
        self.assert_equal(err.exit_code, EXIT_DIVERGED)
        self.assert_equal(err.step, 17)
        self.assert_equal(err.get_message(), 'Training diverged at step 17: loss is inf')

    def test_storage_error_from_os_error(self):
        try:
            open('/nonexistent/dir/file')
        except OSError as os_err:
            err = StorageError.from_os_error('/nonexistent/dir/file', os_err)
        self.assert_equal(err.get_message(), 'Storage error on /nonexistent/dir/file: No such file or directory')


class ArgumentTypesTestCase(BaseTestCase):

    def test_epsilon(self):
        self.assert_equal(EpsilonSpec('0.5'), 0.5)
        for bad in ('0', '1', '1.5', '-0.1', 'nan', 'inf', 'half'):
            with self.assert_raises(argparse.ArgumentTypeError):
                EpsilonSpec(bad)

    def test_lambda(self):
        self.assert_equal(LambdaSpec('0'), 0.0)
        self.assert_equal(LambdaSpec('2.5'), 2.5)
        for bad in ('-1', 'inf', 'nan'):
            with self.assert_raises(argparse.ArgumentTypeError):
                LambdaSpec(bad)

    def test_counts(self):
        self.assert_equal(PositiveInt('3'), 3)
        self.assert_equal(NonNegativeInt('0'), 0)
        for func, bad in ((PositiveInt, '0'), (PositiveInt, '1.5'), (NonNegativeInt, '-1')):
            with self.assert_raises(argparse.ArgumentTypeError):
                func(bad)
        with self.assert_raises(argparse.ArgumentTypeError):
            PositiveFloat('0')

    def test_grids(self):
        self.assert_equal(EpsilonList('0.1,0.5,0.9'), [0.1, 0.5, 0.9])
        self.assert_equal(KList('1,10,100'), [1, 10, 100])
        self.assert_equal(ListOf(NonNegativeInt)('3,1,2'), [3, 1, 2])
        for func, bad in ((EpsilonList, '0.5,0.5'), (EpsilonList, '0.9,0.1'), (EpsilonList, '0.5,1'),
                          (KList, '3,2'), (KList, '0,1'), (KList, '')):
            with self.assert_raises(argparse.ArgumentTypeError):
                func(bad)


class StableDictTestCase(BaseTestCase):

    def test(self):
        d = StableDict(foo=1, bar=2, boo=3, baz=4)
        self.assert_equal(list(d.items()), [('bar', 2), ('baz', 4), ('boo', 3), ('foo', 1)])


def test_json_dumps_is_canonical():
    assert json_dumps({'b': 1, 'a': [0.1, 1e-300]}) == '{\n  "a": [\n    0.1,\n    1e-300\n  ],\n  "b": 1\n}\n'
    with pytest.raises(ValueError):
        json_dumps({'x': float('nan')})


def test_read_json(tmpdir):
    good, bad = tmpdir.join('good.json'), tmpdir.join('bad.json')
    good.write('{"k": 10}')
    bad.write('{"k": ')
    assert read_json(str(good)) == {'k': 10}
    with pytest.raises(InvalidInput):
        read_json(str(bad))
    with pytest.raises(StorageError):
        read_json(str(tmpdir.join('missing.json')))


def test_format_float():
    assert format_float(0.5) == '0.5'
    assert format_float(1) == '1.0'
    x = 0.1 + 0.2
    assert float(format_float(x)) == x


def test_parallel_map_keeps_order():
    def square(x):
        return x * x

    assert parallel_map(square, range(20), workers=4) == [x * x for x in range(20)]
    assert parallel_map(square, range(5)) == [0, 1, 4, 9, 16]
    assert parallel_map(square, []) == []


def test_parallel_map_propagates_errors():
    def fail(x):
        if x == 3:
            raise InvalidInput('three')
        return x

    with pytest.raises(InvalidInput):
        parallel_map(fail, range(6), workers=3)


@pytest.fixture()
def progress_logger():
    logger = logging.getLogger('intruder.output.progress')
    logger.setLevel(logging.INFO)
    yield logger
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.propagate = True
    logger.setLevel(logging.NOTSET)


def test_progress_every_step_percent(capfd, progress_logger):
    pi = ProgressIndicatorPercent(200, step=25, msg='training %3.0f%%')
    for i in range(200):
        pi.show(i)
    pi.finish()
    assert capfd.readouterr().err.splitlines() == ['training   0%', 'training  25%', 'training  50%', 'training  75%']


def test_progress_counts_calls(progress_logger):
    pi = ProgressIndicatorPercent(10, step=20, start=10)
    assert [pi.advance() for _ in range(4)] == [None, 10.0, None, 30.0]
    assert pi.advance(9) == 90.0
    pi.close()


def test_progress_same_line(capfd, progress_logger):
    pi = ProgressIndicatorPercent(4, step=50, same_line=True)
    pi.show(2)
    pi.finish()
    assert capfd.readouterr().err == ' 50%\r    \r'
    assert not progress_logger.handlers


def test_progress_hidden_without_flag(capfd, progress_logger):
    progress_logger.setLevel(logging.WARNING)
    pi = ProgressIndicatorPercent(10, step=10)
    for i in range(10):
        pi.show(i)
    pi.finish()
    assert capfd.readouterr().err == ''


def test_progress_restores_logger_state(capfd, progress_logger):
    for same_line in (False, True):
        pi = ProgressIndicatorPercent(2, step=50, same_line=same_line, msg='stage %3.0f%%')
        pi.show(1)
        pi.finish()
        assert not progress_logger.handlers
        assert progress_logger.propagate
    assert capfd.readouterr().err == 'stage  50%\nstage  50%\r          \r'
