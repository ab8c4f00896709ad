# This is a python package

try:
    from ._version import version as __version__
except ImportError:  # running from a source tree that was never built
    __version__ = '0.0.0'
