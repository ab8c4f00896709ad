import os

import pytest

from ..platform import SaveFile, save_bytes, save_text, sync_dir


def test_save_text(tmpdir):
    path = str(tmpdir.join('report.csv'))
    save_text(path, 'name,total\nw,ε\n')
    with open(path, encoding='utf-8', newline='') as fd:
        assert fd.read() == 'name,total\nw,ε\n'
    assert os.listdir(str(tmpdir)) == ['report.csv']


def test_save_bytes_replaces(tmpdir):
    path = str(tmpdir.join('payload.bin'))
    save_bytes(path, b'old')
    save_bytes(path, b'new contents')
    with open(path, 'rb') as fd:
        assert fd.read() == b'new contents'


def test_failed_write_leaves_target_untouched(tmpdir):
    path = str(tmpdir.join('summary.json'))
    save_text(path, '{}\n')
    with pytest.raises(RuntimeError):
        with SaveFile(path, binary=False) as fd:
            fd.write('{"partial": ')
            raise RuntimeError
    with open(path) as fd:
        assert fd.read() == '{}\n'
    assert os.listdir(str(tmpdir)) == ['summary.json']


def test_missing_directory(tmpdir):
    with pytest.raises(FileNotFoundError):
        save_text(str(tmpdir.join('nowhere', 'x.json')), '')


def test_sync_dir(tmpdir):
    sync_dir(str(tmpdir))
    sync_dir(str(tmpdir.join('missing')))
