"""
SALF sample archive, little endian:

    b'SALF' | u32 version | u32 id length | id (utf-8) | u64 N | u64 M
    | f32 input cloud (N x 3) | f32 queries (M x 3) | f32 h (M) | u32 CRC-32 of all previous bytes
"""
import pathlib
import struct
import zlib

import numpy as np

from salforge.autodiff.tensor import ContractError
from salforge.sdfield.samples import SampleSet

MAGIC = b'SALF'
VERSION = 1
FLOAT = np.dtype('<f4')


class ArchiveIntegrityError(ValueError):

    def __init__(self, path, field, message):
        self.path = str(path)
        self.field = field
        super().__init__(f'{self.path}: {field}: {message}')


def encode_archive(samples: SampleSet) -> bytes:
    shape_id = samples.shape_id.encode('utf-8')
    parts = [
        MAGIC,
        struct.pack('<II', VERSION, len(shape_id)),
        shape_id,
        struct.pack('<QQ', samples.n_input, samples.n_queries),
        samples.input_cloud.astype(FLOAT).tobytes(),
        samples.queries.astype(FLOAT).tobytes(),
        samples.h.astype(FLOAT).tobytes(),
    ]
    payload = b''.join(parts)
    return payload + struct.pack('<I', zlib.crc32(payload))


def write_archive(samples: SampleSet, path):
    path = pathlib.Path(path)
    partial = path.with_name(path.name + '.partial')
    partial.write_bytes(encode_archive(samples))
    partial.replace(path)


class _Reader:

    def __init__(self, path, data: bytes):
        self.path = path
        self.data = data
        self.offset = 0

    def take(self, field, size) -> bytes:
        if self.offset + size > len(self.data):
            raise ArchiveIntegrityError(self.path, field, f'truncated at byte {self.offset}')
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, field, fmt):
        return struct.unpack(fmt, self.take(field, struct.calcsize(fmt)))

    def floats(self, field, count, columns):
        return np.frombuffer(self.take(field, FLOAT.itemsize * count * columns), dtype=FLOAT).reshape(count, columns)


def decode_archive(data: bytes, path='<bytes>') -> SampleSet:
    reader = _Reader(path, data)
    if reader.take('magic', 4) != MAGIC:
        raise ArchiveIntegrityError(path, 'magic', 'not a SALF archive')
    version, id_length = reader.unpack('version', '<II')
    if version != VERSION:
        raise ArchiveIntegrityError(path, 'version', f'unsupported version {version}, expected {VERSION}')
    try:
        shape_id = reader.take('shape id', id_length).decode('utf-8')
    except UnicodeDecodeError:
        raise ArchiveIntegrityError(path, 'shape id', 'not valid utf-8')
    n_input, n_queries = reader.unpack('counts', '<QQ')
    if FLOAT.itemsize * (3 * n_input + 4 * n_queries) > len(data):
        raise ArchiveIntegrityError(path, 'counts', f'N={n_input}, M={n_queries} exceed the file size')
    cloud = reader.floats('input_cloud', n_input, 3)
    queries = reader.floats('queries', n_queries, 3)
    h = reader.floats('h', n_queries, 1)
    payload_end = reader.offset
    (crc,) = reader.unpack('crc', '<I')
    if reader.offset != len(data):
        raise ArchiveIntegrityError(path, 'crc', f'{len(data) - reader.offset} unexpected trailing bytes')
    if zlib.crc32(data[:payload_end]) != crc:
        raise ArchiveIntegrityError(path, 'crc', 'checksum mismatch')
    try:
        return SampleSet(shape_id, cloud, queries, h)
    except ContractError as e:
        raise ArchiveIntegrityError(path, 'h', str(e))


def read_archive(path) -> SampleSet:
    path = pathlib.Path(path)
    return decode_archive(path.read_bytes(), path)
