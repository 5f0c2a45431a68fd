"""
Binary weight checkpoints. See README.md for the byte layout. All integers are little-endian; payloads are written
in row-major order as little-endian float32 or float64.
"""
import json
import os
import struct
from collections import OrderedDict

import numpy as np

from dc_bdl_tools.Utils.errors import ContractError

MAGIC = b'DCBW'
VERSION = 1

DTYPE_CODES = {1: np.dtype('<f4'), 2: np.dtype('<f8')}
CODE_FOR_DTYPE = {np.dtype('float32'): 1, np.dtype('float64'): 2}


def save_checkpoint(path, tensors, header=None):
    """
    Write named arrays plus a JSON header to path.

    Parameters
    ----------
    path: str
    tensors: OrderedDict
        name -> float32 or float64 array. Written in iteration order.
    header: dict
        JSON-serializable description of the network (config, normalization constants).
    """
    header_bytes = json.dumps(header or {}, sort_keys=True).encode('utf-8')
    chunks = [MAGIC, struct.pack('<B', VERSION), struct.pack('<I', len(header_bytes)), header_bytes,
              struct.pack('<I', len(tensors))]

    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in CODE_FOR_DTYPE:
            raise ContractError('cannot checkpoint {} with dtype {}'.format(name, arr.dtype))
        code = CODE_FOR_DTYPE[arr.dtype]
        name_bytes = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack('<BB', code, arr.ndim))
        chunks.append(struct.pack('<{}I'.format(arr.ndim), *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())

    save_dir = os.path.dirname(path)
    if save_dir and not os.path.exists(save_dir):
        os.makedirs(save_dir)
    with open(path, 'wb') as f:
        f.write(b''.join(chunks))


def load_checkpoint(path):
    """
    Read a checkpoint written by save_checkpoint.

    Returns
    -------
    header: dict
    tensors: OrderedDict
        name -> array with the stored dtype (native byte order)
    """
    with open(path, 'rb') as f:
        buf = f.read()
    try:
        return _parse_checkpoint(buf, path)
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as e:
        raise ContractError('{} is truncated or corrupt: {}: {}'.format(path, type(e).__name__, e))


def _parse_checkpoint(buf, path):
    if buf[:4] != MAGIC:
        raise ContractError('{} is not a weight checkpoint'.format(path))
    version, = struct.unpack_from('<B', buf, 4)
    if version != VERSION:
        raise ContractError('unsupported checkpoint version {}'.format(version))
    offset = 5
    header_len, = struct.unpack_from('<I', buf, offset)
    offset += 4
    header = json.loads(buf[offset:offset + header_len].decode('utf-8'))
    offset += header_len
    n_layers, = struct.unpack_from('<I', buf, offset)
    offset += 4

    tensors = OrderedDict()
    for _ in range(n_layers):
        name_len, = struct.unpack_from('<H', buf, offset)
        offset += 2
        name = buf[offset:offset + name_len].decode('utf-8')
        offset += name_len
        code, rank = struct.unpack_from('<BB', buf, offset)
        offset += 2
        shape = struct.unpack_from('<{}I'.format(rank), buf, offset)
        offset += 4 * rank
        dtype = DTYPE_CODES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(buf, dtype=dtype, count=n_bytes // dtype.itemsize, offset=offset).reshape(shape)
        tensors[name] = arr.astype(dtype.newbyteorder('='))
        offset += n_bytes
    if offset != len(buf):
        raise ContractError('{} has {} trailing bytes'.format(path, len(buf) - offset))
    return header, tensors
