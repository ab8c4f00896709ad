"""
checkpoint store
================

A checkpoint is a set of named 2-D float64 matrices plus string metadata.
On disk it is two files sharing a prefix::

    <prefix>.manifest.json   {"version": 1,
                              "tensors": [{"name", "rows", "cols", "offset", "crc32"}, ...],
                              "metadata": {...}}
    <prefix>.bin             the tensors' data, concatenated in manifest order,
                             row-major little-endian float64

Tensors are stored (and iterated) in lexicographic name order. Every tensor
carries the CRC32 of its payload bytes; load() verifies bounds, overlap and
checksums before handing out any matrix.
"""

import json
import os
from collections import namedtuple
from zlib import crc32

import numpy as np

from .constants import *  # NOQA
from .helpers import Error, InvalidInput, CorruptionError, MismatchError, StorageError, VersionError, json_dumps
from .linalg import as_matrix
from .logger import create_logger
from .platform import SaveFile

logger = create_logger()

CheckpointPair = namedtuple('CheckpointPair', 'base tuned')


class Checkpoint:
    """immutable mapping tensor name -> read-only float64 matrix, plus string metadata"""

    def __init__(self, entries=None, metadata=None):
        tensors = {}
        for name, value in dict(entries or {}).items():
            if not isinstance(name, str) or not name:
                raise InvalidInput('tensor names must be nonempty strings, got %r' % (name, ))
            m = as_matrix(value, name)
            if m.flags.writeable:
                m = m.copy()
                m.flags.writeable = False
            tensors[name] = m
        self._tensors = {name: tensors[name] for name in sorted(tensors)}
        meta = dict(metadata or {})
        for key, value in meta.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise InvalidInput('metadata must map strings to strings, got %r: %r' % (key, value))
        self.metadata = {key: meta[key] for key in sorted(meta)}

    def __repr__(self):
        return '<%s %d tensors>' % (self.__class__.__name__, len(self._tensors))

    def __len__(self):
        return len(self._tensors)

    def __iter__(self):
        return iter(self._tensors)

    def __contains__(self, name):
        return name in self._tensors

    def __getitem__(self, name):
        try:
            return self._tensors[name]
        except KeyError:
            raise MismatchError('no tensor named %r in checkpoint' % (name, )) from None

    @property
    def names(self):
        return list(self._tensors)

    def items(self):
        return list(self._tensors.items())

    def shapes(self):
        return {name: m.shape for name, m in self._tensors.items()}

    def __eq__(self, other):
        """bitwise equality of names, shapes, payload bytes and metadata"""
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if self.names != other.names or self.metadata != other.metadata:
            return False
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self._tensors.values(), other._tensors.values()))

    __hash__ = None

    def replace(self, updates=None, metadata=None):
        """new checkpoint with the tensors in *updates* replaced (or added) and *metadata* merged in"""
        entries = dict(self._tensors)
        entries.update(updates or {})
        meta = dict(self.metadata)
        meta.update(metadata or {})
        return Checkpoint(entries, meta)


def checkpoint_paths(path):
    """(manifest path, payload path) for a bare prefix or either of the two file names"""
    path = os.fspath(path)
    for suffix in (MANIFEST_SUFFIX, PAYLOAD_SUFFIX):
        if path.endswith(suffix):
            path = path[:-len(suffix)]
            break
    return path + MANIFEST_SUFFIX, path + PAYLOAD_SUFFIX


def save(checkpoint, path):
    """write *checkpoint* to <path>.manifest.json and <path>.bin (each atomically, payload first)"""
    manifest_path, payload_path = checkpoint_paths(path)
    tensors = []
    chunks = []
    offset = 0
    for name, m in checkpoint.items():
        data = m.astype(PAYLOAD_DTYPE, copy=False).tobytes(order='C')
        tensors.append(dict(name=name, rows=m.shape[0], cols=m.shape[1], offset=offset,
                            crc32=crc32(data) & 0xffffffff))
        chunks.append(data)
        offset += len(data)
    manifest = dict(version=CHECKPOINT_VERSION, tensors=tensors, metadata=checkpoint.metadata)
    try:
        with SaveFile(payload_path) as fd:
            for data in chunks:
                fd.write(data)
        with SaveFile(manifest_path, binary=False) as fd:
            fd.write(json_dumps(manifest))
    except OSError as err:
        raise StorageError.from_os_error(err.filename or path, err) from None
    logger.debug('saved %d tensors (%d bytes) to %s', len(tensors), offset, payload_path)


def _is_count(value, minimum):
    return isinstance(value, int) and not isinstance(value, bool) and value >= minimum


def read_manifest(path):
    """load and structurally validate a manifest, without touching the payload"""
    manifest_path, _ = checkpoint_paths(path)
    try:
        with open(manifest_path, encoding='utf-8') as fd:
            text = fd.read()
    except OSError as err:
        raise StorageError.from_os_error(manifest_path, err) from None
    try:
        manifest = json.loads(text)
    except ValueError as err:
        raise CorruptionError(manifest_path, 'manifest is not valid JSON (%s)' % err) from None
    if not isinstance(manifest, dict):
        raise CorruptionError(manifest_path, 'manifest is not a JSON object')
    version = manifest.get('version')
    if version != CHECKPOINT_VERSION:
        raise VersionError(manifest_path, version, CHECKPOINT_VERSION)
    tensors = manifest.get('tensors')
    metadata = manifest.get('metadata', {})
    if not isinstance(tensors, list) or not isinstance(metadata, dict):
        raise CorruptionError(manifest_path, 'manifest lacks a tensor list or metadata object')
    seen = set()
    for entry in tensors:
        if not isinstance(entry, dict):
            raise CorruptionError(manifest_path, 'tensor entry %r is not an object' % (entry, ))
        name = entry.get('name')
        if not isinstance(name, str) or not name:
            raise CorruptionError(manifest_path, 'tensor entry without a name')
        if name in seen:
            raise CorruptionError(manifest_path, 'tensor %s is listed twice' % name)
        seen.add(name)
        if not (_is_count(entry.get('rows'), 1) and _is_count(entry.get('cols'), 1) and
                _is_count(entry.get('offset'), 0) and _is_count(entry.get('crc32'), 0)):
            raise CorruptionError(manifest_path, 'tensor %s has invalid rows/cols/offset/crc32' % name)
    return manifest


def load(path):
    """load and verify a checkpoint written by save()"""
    manifest_path, payload_path = checkpoint_paths(path)
    manifest = read_manifest(manifest_path)
    try:
        payload_size = os.stat(payload_path).st_size
    except OSError as err:
        raise StorageError.from_os_error(payload_path, err) from None
    tensors = manifest['tensors']
    # bounds and overlap are checked before anything is read or allocated
    end = 0
    for entry in sorted(tensors, key=lambda e: e['offset']):
        size = entry['rows'] * entry['cols'] * ITEMSIZE
        start = entry['offset']
        if start + size > payload_size:
            raise CorruptionError(payload_path, 'tensor %s: bytes [%d, %d) beyond end of payload (%d bytes)' % (
                entry['name'], start, start + size, payload_size))
        if start < end:
            raise CorruptionError(payload_path, 'tensor %s overlaps the previous tensor' % entry['name'])
        end = start + size
    entries = {}
    try:
        with open(payload_path, 'rb') as fd:
            for entry in tensors:
                name, rows, cols = entry['name'], entry['rows'], entry['cols']
                size = rows * cols * ITEMSIZE
                fd.seek(entry['offset'])
                data = fd.read(size)
                if len(data) != size:
                    raise CorruptionError(payload_path, 'tensor %s: short read, expected %d, got %d bytes' % (
                        name, size, len(data)))
                if crc32(data) & 0xffffffff != entry['crc32']:
                    raise CorruptionError(payload_path, 'tensor %s: checksum mismatch' % name)
                m = np.frombuffer(data, dtype=PAYLOAD_DTYPE).reshape(rows, cols).astype(np.float64)
                if not np.all(np.isfinite(m)):
                    raise CorruptionError(payload_path, 'tensor %s has non-finite entries' % name)
                entries[name] = m
    except OSError as err:
        raise StorageError.from_os_error(payload_path, err) from None
    try:
        checkpoint = Checkpoint(entries, manifest['metadata'])
    except Error as err:
        raise CorruptionError(manifest_path, err.get_message()) from None
    logger.debug('loaded %d tensors from %s', len(checkpoint), payload_path)
    return checkpoint


def validate_pair(base, tuned):
    """CheckpointPair(base, tuned) if both hold the same tensor names with the same shapes"""
    missing_in_tuned = [name for name in base if name not in tuned]
    missing_in_base = [name for name in tuned if name not in base]
    if missing_in_tuned or missing_in_base:
        parts = []
        if missing_in_tuned:
            parts.append('missing in tuned: %s' % ', '.join(missing_in_tuned))
        if missing_in_base:
            parts.append('missing in base: %s' % ', '.join(missing_in_base))
        raise MismatchError('tensor names differ (%s)' % '; '.join(parts))
    for name in base:
        if base[name].shape != tuned[name].shape:
            raise MismatchError('tensor %s: shape %r in base vs %r in tuned' % (
                name, base[name].shape, tuned[name].shape))
    return CheckpointPair(base, tuned)


def load_pair(base_path, tuned_path):
    return validate_pair(load(base_path), load(tuned_path))
