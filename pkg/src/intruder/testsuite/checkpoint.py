import json
import os

import numpy as np
import pytest

from ..checkpoint import Checkpoint, save, load, validate_pair, load_pair, checkpoint_paths, read_manifest
from ..constants import *  # NOQA
from ..helpers import CorruptionError, InvalidInput, MismatchError, StorageError, VersionError
from . import BaseTestCase, seeded_matrix


def two_tensor_checkpoint():
    return Checkpoint({'layer.b': seeded_matrix(1, 3, 2), 'layer.a': seeded_matrix(2, 4, 5)},
                      metadata={'step': '7', 'mode': 'lora'})


class CheckpointTestCase(BaseTestCase):

    def test_lexicographic_order(self):
        c = two_tensor_checkpoint()
        self.assert_equal(c.names, ['layer.a', 'layer.b'])
        self.assert_equal(list(c), ['layer.a', 'layer.b'])
        self.assert_equal(c.shapes(), {'layer.a': (4, 5), 'layer.b': (3, 2)})

    def test_immutable(self):
        m = np.eye(2)
        c = Checkpoint({'w': m})
        m[0, 0] = 5
        self.assert_equal(c['w'][0, 0], 1.0)
        with self.assert_raises(ValueError):
            c['w'][0, 0] = 2

    def test_invalid(self):
        with self.assert_raises(InvalidInput):
            Checkpoint({'': np.eye(2)})
        with self.assert_raises(InvalidInput):
            Checkpoint({'w': np.ones(3)})
        with self.assert_raises(InvalidInput):
            Checkpoint({'w': np.eye(2)}, metadata={'step': 3})

    def test_equality_is_bitwise(self):
        a = Checkpoint({'w': np.array([[0.0]])})
        self.assert_equal(a, Checkpoint({'w': np.array([[0.0]])}))
        self.assert_not_equal(a, Checkpoint({'w': np.array([[-0.0]])}))
        self.assert_not_equal(a, Checkpoint({'w': np.array([[0.0]])}, metadata={'k': 'v'}))

    def test_replace(self):
        c = two_tensor_checkpoint()
        d = c.replace({'layer.a': np.zeros((4, 5))}, metadata={'step': '8'})
        self.assert_equal(d.metadata, {'mode': 'lora', 'step': '8'})
        self.assert_equal(d['layer.b'].tobytes(), c['layer.b'].tobytes())
        self.assert_equal(np.count_nonzero(d['layer.a']), 0)
        self.assert_not_equal(np.count_nonzero(c['layer.a']), 0)

    def test_unknown_name(self):
        with self.assert_raises(MismatchError):
            two_tensor_checkpoint()['nope']


def test_checkpoint_paths():
    expected = ('run/base' + MANIFEST_SUFFIX, 'run/base' + PAYLOAD_SUFFIX)
    assert checkpoint_paths('run/base') == expected
    assert checkpoint_paths('run/base.manifest.json') == expected
    assert checkpoint_paths('run/base.bin') == expected


def test_round_trip(tmpdir):
    c = two_tensor_checkpoint()
    path = str(tmpdir.join('ckpt'))
    save(c, path)
    loaded = load(path)
    assert loaded == c
    assert loaded.metadata == {'mode': 'lora', 'step': '7'}
    for name in c:
        assert loaded[name].tobytes() == c[name].tobytes()


def test_empty_checkpoint(tmpdir):
    path = str(tmpdir.join('empty'))
    save(Checkpoint(), path)
    assert os.path.getsize(path + PAYLOAD_SUFFIX) == 0
    assert len(load(path)) == 0


def test_manifest_layout(tmpdir):
    path = str(tmpdir.join('ckpt'))
    save(two_tensor_checkpoint(), path)
    manifest = read_manifest(path)
    assert manifest['version'] == CHECKPOINT_VERSION
    entries = manifest['tensors']
    assert [e['name'] for e in entries] == ['layer.a', 'layer.b']
    assert [e['offset'] for e in entries] == [0, 4 * 5 * 8]
    assert os.path.getsize(path + PAYLOAD_SUFFIX) == (4 * 5 + 3 * 2) * 8
    with open(path + PAYLOAD_SUFFIX, 'rb') as fd:
        fd.seek(entries[1]['offset'])
        first = np.frombuffer(fd.read(8), dtype='<f8')[0]
    assert first == two_tensor_checkpoint()['layer.b'][0, 0]


def flip_byte(path, offset):
    with open(path, 'r+b') as fd:
        fd.seek(offset)
        byte = fd.read(1)
        fd.seek(offset)
        fd.write(bytes([byte[0] ^ 0x01]))


def test_single_byte_corruption_names_tensor(tmpdir):
    path = str(tmpdir.join('ckpt'))
    save(two_tensor_checkpoint(), path)
    payload_size = os.path.getsize(path + PAYLOAD_SUFFIX)
    for offset in range(payload_size):
        flip_byte(path + PAYLOAD_SUFFIX, offset)
        with pytest.raises(CorruptionError) as excinfo:
            load(path)
        expected = 'layer.a' if offset < 4 * 5 * 8 else 'layer.b'
        assert expected in excinfo.value.get_message()
        flip_byte(path + PAYLOAD_SUFFIX, offset)
    assert load(path) == two_tensor_checkpoint()


def rewrite_manifest(path, change):
    manifest_path = path + MANIFEST_SUFFIX
    with open(manifest_path) as fd:
        manifest = json.load(fd)
    change(manifest)
    with open(manifest_path, 'w') as fd:
        json.dump(manifest, fd)


def test_out_of_bounds_offset(tmpdir):
    path = str(tmpdir.join('ckpt'))
    save(two_tensor_checkpoint(), path)
    rewrite_manifest(path, lambda m: m['tensors'][1].update(offset=10 ** 9))
    with pytest.raises(CorruptionError) as excinfo:
        load(path)
    assert 'layer.b' in excinfo.value.get_message()


def test_overlapping_offsets(tmpdir):
    path = str(tmpdir.join('ckpt'))
    save(two_tensor_checkpoint(), path)
    rewrite_manifest(path, lambda m: m['tensors'][1].update(offset=8))
    with pytest.raises(CorruptionError):
        load(path)


def test_truncated_payload(tmpdir):
    path = str(tmpdir.join('ckpt'))
    save(two_tensor_checkpoint(), path)
    with open(path + PAYLOAD_SUFFIX, 'r+b') as fd:
        fd.truncate(os.path.getsize(path + PAYLOAD_SUFFIX) - 3)
    with pytest.raises(CorruptionError):
        load(path)


def test_unknown_version(tmpdir):
    path = str(tmpdir.join('ckpt'))
    save(two_tensor_checkpoint(), path)
    rewrite_manifest(path, lambda m: m.update(version=2))
    with pytest.raises(VersionError):
        load(path)


def test_garbled_manifest(tmpdir):
    path = str(tmpdir.join('ckpt'))
    save(two_tensor_checkpoint(), path)
    with open(path + MANIFEST_SUFFIX, 'w') as fd:
        fd.write('{"version": 1, "tensors": [')
    with pytest.raises(CorruptionError):
        load(path)
    rewrite_manifest_text = json.dumps({'version': 1, 'tensors': [{'name': 'w', 'rows': 0, 'cols': 1, 'offset': 0, 'crc32': 0}]})
    with open(path + MANIFEST_SUFFIX, 'w') as fd:
        fd.write(rewrite_manifest_text)
    with pytest.raises(CorruptionError):
        load(path)


def test_missing_file_names_path(tmpdir):
    path = str(tmpdir.join('nothere'))
    with pytest.raises(StorageError) as excinfo:
        load(path)
    assert 'nothere' in excinfo.value.get_message()
    assert excinfo.value.exit_code == EXIT_ERROR


def test_save_does_not_leave_temp_files(tmpdir):
    save(two_tensor_checkpoint(), str(tmpdir.join('ckpt')))
    assert sorted(os.listdir(str(tmpdir))) == ['ckpt.bin', 'ckpt.manifest.json']


class ValidatePairTestCase(BaseTestCase):

    def test_identical(self):
        c = two_tensor_checkpoint()
        pair = validate_pair(c, c)
        self.assert_true(pair.base is c and pair.tuned is c)

    def test_missing_tensor(self):
        c = two_tensor_checkpoint()
        tuned = Checkpoint({'layer.a': c['layer.a']})
        with self.assert_raises(MismatchError) as excinfo:
            validate_pair(c, tuned)
        self.assert_in('layer.b', excinfo.value.get_message())

    def test_transposed_shape(self):
        c = two_tensor_checkpoint()
        tuned = c.replace({'layer.b': c['layer.b'].T})
        with self.assert_raises(MismatchError) as excinfo:
            validate_pair(c, tuned)
        self.assert_in('layer.b', excinfo.value.get_message())


def test_load_pair(tmpdir):
    c = two_tensor_checkpoint()
    save(c, str(tmpdir.join('base')))
    save(c.replace({'layer.a': np.ones((4, 5))}), str(tmpdir.join('tuned')))
    pair = load_pair(str(tmpdir.join('base')), str(tmpdir.join('tuned')))
    assert pair.base == c
    assert np.all(pair.tuned['layer.a'] == 1)
