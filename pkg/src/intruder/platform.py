"""
platform module
===============

File durability helpers based on what Python itself provides.

Every file intruder writes (checkpoints, reports, plans, run summaries) goes
through SaveFile, so a reader never sees a half-written output: the data is
written to a temporary file next to the target and renamed over it.
"""

import os
import tempfile

fdatasync = getattr(os, 'fdatasync', os.fsync)


def sync_dir(path):
    try:
        fd = os.open(path or '.', os.O_RDONLY)
    except OSError:
        # e.g. windows can't open directories
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


class SaveFile:
    """
    Write a file atomically: temp file in the destination directory, fsync, rename, fsync the directory.

    Use as a context manager. If the block raises, the temp file is removed and the target is untouched::

        with SaveFile(path) as fd:
            fd.write(data)

    binary=False opens the temp file in text mode (utf-8, '\\n' newlines).

    Note that POSIX doesn't specify *anything* about power failures (or similar failures), so durability
    is only as good as fsync() on the platform. Atomicity of the rename holds on every POSIX file system.
    """

    def __init__(self, path, binary=True):
        self.path = os.path.abspath(path)
        self.binary = binary
        self.tmppath = None
        self.fd = None

    def __enter__(self):
        dirname, basename = os.path.split(self.path)
        fileno, self.tmppath = tempfile.mkstemp(prefix=basename + '.', suffix='.tmp', dir=dirname)
        if self.binary:
            self.fd = os.fdopen(fileno, 'wb')
        else:
            self.fd = os.fdopen(fileno, 'w', encoding='utf-8', newline='\n')
        return self.fd

    def __exit__(self, exc_type, exc_val, exc_tb):
        try:
            if exc_type is None:
                self.fd.flush()
                fdatasync(self.fd.fileno())
            self.fd.close()
            if exc_type is None:
                os.replace(self.tmppath, self.path)
                self.tmppath = None
                sync_dir(os.path.dirname(self.path))
        finally:
            if self.tmppath is not None:
                try:
                    os.unlink(self.tmppath)
                except FileNotFoundError:
                    pass


def save_bytes(path, data):
    with SaveFile(path) as fd:
        fd.write(data)


def save_text(path, text):
    with SaveFile(path, binary=False) as fd:
        fd.write(text)
