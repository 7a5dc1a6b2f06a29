import struct

import numpy as np
import pytest

from arpgnet.checkpoint import (
    MAGIC,
    CheckpointError,
    CheckpointVersionError,
    checkpoint_bytes,
    load_checkpoint,
    model_from_bytes,
    save_checkpoint,
)
from arpgnet.model import ArpgNet, ArpgNetConfig


@pytest.fixture
def model():
    m = ArpgNet(ArpgNetConfig(T=4, H=32, W=32, embed_dim=16, P=3, trs=1, heads=2, n_classes=2, seed=4))
    for p in m.parameters():  # move away from the initial values
        p.data += np.float32(0.01)
    return m


def test_save_load_save_byte_identical(model, tmp_path):
    a = save_checkpoint(model, tmp_path / "a.ckpt")
    b = save_checkpoint(load_checkpoint(a), tmp_path / "b.ckpt")
    assert a.read_bytes() == b.read_bytes()


def test_logits_bit_equal_after_reload(model, tmp_path):
    x = np.random.default_rng(0).standard_normal((2, 4, 3, 32, 32)).astype(np.float32)
    before = model.eval()(x).data
    after = load_checkpoint(save_checkpoint(model, tmp_path / "m.ckpt")).eval()(x).data
    assert before.tobytes() == after.tobytes()


def test_layout_header(model):
    buf = checkpoint_bytes(model)
    assert buf.startswith(MAGIC)
    (n,) = struct.unpack("<I", buf[5:9])
    assert buf[9:9 + n].startswith(b'{"')


def test_every_truncation_is_reported(model):
    buf = checkpoint_bytes(model)
    for cut in (0, 3, 7, 20, len(buf) // 2, len(buf) - 1):
        with pytest.raises(CheckpointError):
            model_from_bytes(buf[:cut])


def test_trailing_bytes_rejected(model):
    with pytest.raises(CheckpointError, match="trailing"):
        model_from_bytes(checkpoint_bytes(model) + b"\0")


def test_version_and_magic(model):
    buf = checkpoint_bytes(model)
    with pytest.raises(CheckpointVersionError):
        model_from_bytes(b"ARPG2" + buf[5:])
    with pytest.raises(CheckpointError):
        model_from_bytes(b"XXXXX" + buf[5:])
