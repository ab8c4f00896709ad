"""
Self testing module
===================

The selftest() function runs a small suite of fast tests meant to discover a broken numeric stack
(numpy / LAPACK builds that return non-orthonormal factors, wrong sorting, unstable random streams)
before any analysis result is trusted.

These tests are a subset of intruder/testsuite and are run with Python's built-in unittest, so none of
them may use py.test functionality.

To assert that self test discovery works correctly the number of tests is kept in SELFTEST_COUNT, which
must be updated whenever tests are added to or removed from the cases listed here.

Setting INTRUDER_SELFTEST=disabled skips the self test.
"""

import sys
import time
from unittest import TestResult, TestSuite, defaultTestLoader

from .constants import EXIT_ERROR
from .testsuite.linalg import SvdTestCase, MaxAbsCosineTestCase, EffectiveRankTestCase, SpearmanTestCase
from .testsuite.linalg import RngTestCase

SELFTEST_CASES = [
    SvdTestCase,
    MaxAbsCosineTestCase,
    EffectiveRankTestCase,
    SpearmanTestCase,
    RngTestCase,
]

SELFTEST_COUNT = 25


class SelfTestResult(TestResult):
    def __init__(self):
        super().__init__()
        self.successes = []

    def addSuccess(self, test):
        super().addSuccess(test)
        self.successes.append(test)

    def test_name(self, test):
        return test.shortDescription() or str(test)

    def log_results(self, logger):
        for test, failure in self.errors + self.failures:
            logger.error('self test %s FAILED:\n%s', self.test_name(test), failure)
        for test in self.unexpectedSuccesses:
            logger.error('self test %s passed but was expected to fail', self.test_name(test))
        for test, reason in self.skipped:
            logger.warning('self test %s skipped: %s', self.test_name(test), reason)

    def successful_test_count(self):
        return len(self.successes)


def selftest(logger):
    started = time.perf_counter()
    result = SelfTestResult()
    suite = TestSuite()
    for case in SELFTEST_CASES:
        suite.addTest(defaultTestLoader.loadTestsFromTestCase(case))
    suite.run(result)
    result.log_results(logger)
    successful = result.successful_test_count()
    count_mismatch = successful != SELFTEST_COUNT
    if result.wasSuccessful() and count_mismatch:
        logger.error("self test count (%d != %d) mismatch, either test discovery is broken or a test was added "
                     "without updating intruder.selftest", successful, SELFTEST_COUNT)
    if not result.wasSuccessful() or count_mismatch:
        logger.error("self test failed\n"
                     "This is a bug either in intruder or in the numpy / scipy installation you use.")
        sys.exit(EXIT_ERROR)
    logger.debug("%d self tests completed in %.2f seconds", successful, time.perf_counter() - started)
