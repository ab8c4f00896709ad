from intruder.logger import setup_logging

# Ensure that the loggers exist for all tests
setup_logging()

import numpy
import scipy

from intruder import constants


def pytest_report_header(config):
    return 'numpy %s, scipy %s, rng %s' % (numpy.__version__, scipy.__version__, constants.RNG_ALGORITHM)
