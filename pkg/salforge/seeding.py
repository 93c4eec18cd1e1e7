import zlib

import numpy as np

DATA = 'data'
INIT = 'init'
LATENT = 'latent'
EVAL = 'eval'


def _key(value) -> int:
    if isinstance(value, int):
        return value
    return zlib.crc32(str(value).encode('utf-8'))


def stream(seed: int, name: str, *keys) -> np.random.Generator:
    """
    Independent random stream for one pipeline stage.

    Streams are addressed by (seed, stage name, optional keys such as a shape id), so
    changing how one stage draws numbers never shifts the numbers of another stage.
    """
    sequence = np.random.SeedSequence(seed, spawn_key=(_key(name),) + tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(sequence))
