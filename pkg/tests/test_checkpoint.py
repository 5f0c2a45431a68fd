import struct
from collections import OrderedDict

import numpy as np
import pytest

from dc_bdl_tools.Utils.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from dc_bdl_tools.Utils.errors import ContractError


def test_round_trip(tmp_path, rng):
    tensors = OrderedDict([('conv1.kernel', rng.standard_normal((3, 2, 3, 3)).astype(np.float32)),
                           ('conv1.bias', rng.standard_normal(3)),
                           ('dropout1.p_logit', np.array(-2.2, dtype=np.float32))])
    path = str(tmp_path / 'w.dcbw')
    save_checkpoint(path, tensors, {'seed': 4, 'network': {'filters': [3]}})

    header, loaded = load_checkpoint(path)
    assert header == {'seed': 4, 'network': {'filters': [3]}}
    assert list(loaded) == list(tensors)
    for name, arr in tensors.items():
        assert loaded[name].dtype == arr.dtype
        np.testing.assert_array_equal(loaded[name], arr)


def test_layout(tmp_path):
    path = str(tmp_path / 'w.dcbw')
    save_checkpoint(path, OrderedDict(b=np.array([1., 2.], dtype=np.float32)), {})
    with open(path, 'rb') as f:
        buf = f.read()

    assert buf[:4] == MAGIC
    assert buf[4] == 1
    header_len, = struct.unpack_from('<I', buf, 5)
    assert buf[9:9 + header_len] == b'{}'
    offset = 9 + header_len
    assert struct.unpack_from('<IH', buf, offset) == (1, 1)
    offset += 6
    assert buf[offset:offset + 1] == b'b'
    assert struct.unpack_from('<BBI', buf, offset + 1) == (1, 1, 2)
    assert struct.unpack_from('<2f', buf, offset + 7) == (1., 2.)
    assert len(buf) == offset + 15


def test_rejects_integer_arrays(tmp_path):
    with pytest.raises(ContractError):
        save_checkpoint(str(tmp_path / 'w.dcbw'), OrderedDict(n=np.arange(3)))


def test_rejects_other_files(tmp_path):
    path = tmp_path / 'not_weights.dcbw'
    path.write_bytes(b'DCG1' + bytes(20))
    with pytest.raises(ContractError):
        load_checkpoint(str(path))


@pytest.mark.parametrize('cut', [3, 7, 20, -1])
def test_truncated_checkpoint_is_a_contract_error(tmp_path, cut):
    path = tmp_path / 'w.dcbw'
    save_checkpoint(str(path), OrderedDict(a=np.ones((2, 3), dtype=np.float32)), {'seed': 1})
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises(ContractError, match='w.dcbw'):
        load_checkpoint(str(path))


def test_trailing_bytes_are_rejected(tmp_path):
    path = tmp_path / 'w.dcbw'
    save_checkpoint(str(path), OrderedDict(a=np.ones(2, dtype=np.float32)))
    path.write_bytes(path.read_bytes() + b'\x00')
    with pytest.raises(ContractError, match='trailing'):
        load_checkpoint(str(path))
