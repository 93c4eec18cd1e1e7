"""
SALC training checkpoint, little endian:

    b'SALC' | u32 version | u32 length + config snapshot (canonical YAML) | u64 epoch | u64 step
    | u32 tensor count | per tensor: u32 name length + name, u32 ndim, u64 dims, f32 data, u32 CRC-32
    | u64 Adam step | u32 moment count | per moment pair: u32 name length + name, f32 m, f32 v, u32 CRC-32
    | u32 length + JSON random generator states | u32 CRC-32 of all previous bytes

Parameter tensors and Adam moments are always stored in float32.
"""
import dataclasses
import json
import logging
import pathlib
import struct
import typing
import zlib

import numpy as np
import yaml

from salforge.autodiff.tensor import Tensor, FLOAT32
from salforge.config import Config, ConfigError
from salforge.nn.architectures import get_model
from salforge.nn.params import ModelParams
from salforge.training.optim import AdamState

MAGIC = b'SALC'
VERSION = 1
FLOAT = np.dtype('<f4')


class CheckpointIntegrityError(ValueError):

    def __init__(self, path, block, message):
        self.path = str(path)
        self.block = block
        super().__init__(f'{self.path}: {block}: {message}')


@dataclasses.dataclass(eq=False)
class Checkpoint:
    config: Config
    epoch: int
    step: int
    params: ModelParams
    adam: AdamState
    rng_states: typing.Dict[str, dict] = dataclasses.field(default_factory=dict)

    @property
    def arch(self) -> str:
        return self.params.arch


def _string(value: str) -> bytes:
    data = value.encode('utf-8')
    return struct.pack('<I', len(data)) + data


def _floats(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=FLOAT).tobytes()


def _with_crc(block: bytes) -> bytes:
    return block + struct.pack('<I', zlib.crc32(block))


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    parts = [
        MAGIC,
        struct.pack('<I', VERSION),
        _string(checkpoint.config.dump()),
        struct.pack('<QQ', checkpoint.epoch, checkpoint.step),
        struct.pack('<I', len(checkpoint.params)),
    ]
    for name, tensor in checkpoint.params.items():
        header = _string(name) + struct.pack('<I', tensor.ndim) + struct.pack(f'<{tensor.ndim}Q', *tensor.shape)
        parts.append(_with_crc(header + _floats(tensor.data)))

    adam = checkpoint.adam
    parts.append(struct.pack('<QI', adam.t, len(adam.m)))
    for name in adam.names():
        parts.append(_with_crc(_string(name) + _floats(adam.m[name]) + _floats(adam.v[name])))

    parts.append(_string(json.dumps(checkpoint.rng_states, sort_keys=True)))
    payload = b''.join(parts)
    return payload + struct.pack('<I', zlib.crc32(payload))


def save_checkpoint(checkpoint: Checkpoint, path):
    path = pathlib.Path(path)
    partial = path.with_name(path.name + '.partial')
    partial.write_bytes(encode_checkpoint(checkpoint))
    partial.replace(path)
    logging.info(f'CHECKPOINT: epoch {checkpoint.epoch}, step {checkpoint.step} saved to {path}')


class _Reader:

    def __init__(self, path, data: bytes):
        self.path = path
        self.data = data
        self.offset = 0

    def take(self, block, size) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise CheckpointIntegrityError(self.path, block, f'truncated at byte {self.offset}')
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, block, fmt):
        return struct.unpack(fmt, self.take(block, struct.calcsize(fmt)))

    def string(self, block) -> str:
        (length,) = self.unpack(block, '<I')
        try:
            return self.take(block, length).decode('utf-8')
        except UnicodeDecodeError:
            raise CheckpointIntegrityError(self.path, block, 'not valid utf-8')

    def floats(self, block, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        data = self.take(block, FLOAT.itemsize * count)
        return np.frombuffer(data, dtype=FLOAT).reshape(shape).astype(FLOAT32)

    def check_crc(self, block, start):
        content = self.data[start:self.offset]
        (crc,) = self.unpack(block, '<I')
        if zlib.crc32(content) != crc:
            raise CheckpointIntegrityError(self.path, block, 'checksum mismatch')


def decode_checkpoint(data: bytes, path='<bytes>') -> Checkpoint:
    reader = _Reader(path, data)
    if reader.take('magic', 4) != MAGIC:
        raise CheckpointIntegrityError(path, 'magic', 'not a SALC checkpoint')
    (version,) = reader.unpack('version', '<I')
    if version != VERSION:
        raise CheckpointIntegrityError(path, 'version', f'unsupported version {version}, expected {VERSION}')

    try:
        config = Config.from_dict(yaml.safe_load(reader.string('config')))
    except (ConfigError, yaml.YAMLError) as e:
        raise CheckpointIntegrityError(path, 'config', str(e))
    epoch, step = reader.unpack('counters', '<QQ')

    expected = dict(get_model(config.model.arch).param_shapes())
    (count,) = reader.unpack('tensors', '<I')
    if count > len(expected):
        raise CheckpointIntegrityError(path, 'tensors', f'{count} tensors, {config.model.arch} has {len(expected)}')
    params = ModelParams(config.model.arch, config.model.init, config.train.seed)
    for index in range(count):
        start = reader.offset
        name = reader.string(f'tensor #{index}')
        (ndim,) = reader.unpack(name, '<I')
        if ndim not in (1, 2):
            raise CheckpointIntegrityError(path, name, f'unexpected rank {ndim}')
        shape = reader.unpack(name, f'<{ndim}Q')
        if name in params:
            raise CheckpointIntegrityError(path, name, 'duplicate tensor')
        if expected.get(name) != tuple(shape):
            raise CheckpointIntegrityError(path, name, f'shape {shape} does not fit {config.model.arch}')
        values = reader.floats(name, shape)
        reader.check_crc(name, start)
        params.add(name, Tensor(values, requires_grad=True, dtype=FLOAT32))
    if params.names() != list(expected):
        raise CheckpointIntegrityError(path, 'tensors', f'parameter names do not match {config.model.arch}')

    t, moments = reader.unpack('adam', '<QI')
    adam = AdamState(m={}, v={}, t=t)
    for index in range(moments):
        start = reader.offset
        name = reader.string(f'adam #{index}')
        if name not in params:
            raise CheckpointIntegrityError(path, f'adam {name}', 'moments for an unknown parameter')
        adam.m[name] = reader.floats(f'adam {name}', params[name].shape)
        adam.v[name] = reader.floats(f'adam {name}', params[name].shape)
        reader.check_crc(f'adam {name}', start)

    try:
        rng_states = json.loads(reader.string('rng'))
    except json.JSONDecodeError as e:
        raise CheckpointIntegrityError(path, 'rng', str(e))

    payload_end = reader.offset
    (crc,) = reader.unpack('crc', '<I')
    if reader.offset != len(data):
        raise CheckpointIntegrityError(path, 'crc', f'{len(data) - reader.offset} unexpected trailing bytes')
    if zlib.crc32(data[:payload_end]) != crc:
        raise CheckpointIntegrityError(path, 'crc', 'checksum mismatch')
    return Checkpoint(config, epoch, step, params, adam, rng_states)


def load_checkpoint(path) -> Checkpoint:
    path = pathlib.Path(path)
    return decode_checkpoint(path.read_bytes(), path)
