import os
import unittest

import numpy as np

# Note: this is used by intruder.selftest, do not use or import py.test functionality here.

try:
    from pytest import raises
except ImportError:
    raises = None

# 1/sqrt(3): |cos| between (1,1,1)/sqrt(3) and any standard basis vector
INJECTED_COSINE = 1 / np.sqrt(3)


class BaseTestCase(unittest.TestCase):
    """
    """
    assert_in = unittest.TestCase.assertIn
    assert_not_in = unittest.TestCase.assertNotIn
    assert_equal = unittest.TestCase.assertEqual
    assert_not_equal = unittest.TestCase.assertNotEqual
    assert_true = unittest.TestCase.assertTrue
    assert_almost_equal = unittest.TestCase.assertAlmostEqual

    if raises:
        assert_raises = staticmethod(raises)
    else:
        assert_raises = unittest.TestCase.assertRaises

    def assert_allclose(self, actual, desired, atol=1e-12):
        np.testing.assert_allclose(actual, desired, rtol=0, atol=atol)


def seeded_matrix(seed, rows, cols):
    return np.random.Generator(np.random.PCG64(seed)).standard_normal((rows, cols))


def injected_pair(n=3, strength=5.0):
    """(I_n, I_n + strength * v v^T) with v the uniform unit vector

    v is an eigenvector with eigenvalue 1 + strength, all other eigenvalues are 1,
    so the tuned top singular vector is v and its |cos| to every base vector is 1/sqrt(n).
    """
    base = np.eye(n)
    v = np.full(n, 1 / np.sqrt(n))
    return base, base + strength * np.outer(v, v)


def regen_golden():
    return os.environ.get('INTRUDER_REGEN_GOLDEN') == '1'
