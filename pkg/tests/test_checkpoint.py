import struct

import numpy as np
import pandas as pd
import pytest

from fdconv.checkpoint import (
    MAGIC,
    METRIC_COLUMNS,
    BadMagic,
    Checkpoint,
    ChecksumMismatch,
    CheckpointError,
    TruncatedCheckpoint,
    UnsupportedVersion,
    crc64,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from fdconv.layer import param_count
from fdconv.train import init_model


def with_trailer(body):
    return body + struct.pack("<Q", crc64(body))


@pytest.fixture
def checkpoint(tiny_train):
    params = init_model(tiny_train, np.random.default_rng(3))
    metrics = pd.DataFrame(
        [[1, 5, 1.25, 0.5, 0.25, 1e-17], [2, 10, 0.75, 0.625, 0.5, 3e-17]],
        columns=list(METRIC_COLUMNS),
        dtype=float,
    )
    return Checkpoint(tiny_train, params, 10, metrics)


class TestEncoding:
    def test_layout(self, checkpoint):
        data = encode_checkpoint(checkpoint)
        assert data[:4] == MAGIC
        assert struct.unpack("<H", data[4:6]) == (1,)
        (size,) = struct.unpack("<I", data[6:10])
        assert data[10 : 10 + size].decode("utf8").startswith("# fdconv configuration")
        assert struct.unpack("<Q", data[-8:]) == (crc64(data[:-8]),)

    def test_round_trip(self, checkpoint):
        back = decode_checkpoint(encode_checkpoint(checkpoint))
        assert back.config == checkpoint.config
        assert back.step == 10
        assert set(back.tensors) == set(checkpoint.tensors)
        for name, value in checkpoint.tensors.items():
            assert back.tensors[name].shape == value.shape
            assert np.array_equal(back.tensors[name], value)
        pd.testing.assert_frame_equal(back.metrics, checkpoint.metrics)

    def test_canonical(self, checkpoint):
        data = encode_checkpoint(checkpoint)
        shuffled = dict(reversed(list(checkpoint.tensors.items())))
        assert encode_checkpoint(checkpoint._replace(tensors=shuffled)) == data
        assert encode_checkpoint(decode_checkpoint(data)) == data

    def test_empty_metric_log(self, tiny_train):
        ckpt = Checkpoint(tiny_train, {"scalar": np.array(2.5)})
        back = decode_checkpoint(encode_checkpoint(ckpt))
        assert back.metrics.shape == (0, len(METRIC_COLUMNS))
        assert back.step == 0
        assert back.tensors["scalar"].shape == ()
        assert float(back.tensors["scalar"]) == 2.5

    def test_shapes_match_parameter_tally(self, checkpoint):
        layer = checkpoint.config.layer
        back = decode_checkpoint(encode_checkpoint(checkpoint))
        total = sum(v.size for v in back.tensors.values())
        head = (layer.c_out + 1) * layer.band_count
        assert total == param_count(layer).total + head


class TestCorruption:
    def test_flipped_payload_byte(self, checkpoint):
        data = bytearray(encode_checkpoint(checkpoint))
        data[-12] ^= 0x01
        with pytest.raises(ChecksumMismatch, match="checksum mismatch"):
            decode_checkpoint(bytes(data))

    @pytest.mark.parametrize("size", [0, 3, 10, 13])
    def test_truncated(self, checkpoint, size):
        data = encode_checkpoint(checkpoint)
        with pytest.raises(TruncatedCheckpoint, match="truncated"):
            decode_checkpoint(data[:size])

    def test_cut_file_fails_checksum(self, checkpoint):
        data = encode_checkpoint(checkpoint)
        with pytest.raises(ChecksumMismatch):
            decode_checkpoint(data[: len(data) // 2])

    def test_corrupted_length_field(self, checkpoint):
        data = bytearray(encode_checkpoint(checkpoint))
        data[6] ^= 0x40
        with pytest.raises(ChecksumMismatch):
            decode_checkpoint(bytes(data))

    def test_truncated_in_tensor_record(self, checkpoint):
        data = encode_checkpoint(checkpoint)
        (size,) = struct.unpack("<I", data[6:10])
        body = data[: 10 + size + 4 + 2]
        with pytest.raises(TruncatedCheckpoint):
            decode_checkpoint(with_trailer(body))

    def test_invalid_tensor_name(self, checkpoint):
        data = bytearray(encode_checkpoint(checkpoint)[:-8])
        (size,) = struct.unpack("<I", data[6:10])
        data[10 + size + 4] = 0xFF
        with pytest.raises(CheckpointError, match="invalid tensor name"):
            decode_checkpoint(with_trailer(bytes(data)))

    def test_bad_magic(self, checkpoint):
        data = b"PK\x03\x04" + encode_checkpoint(checkpoint)[4:]
        with pytest.raises(BadMagic):
            decode_checkpoint(data)

    def test_unsupported_version(self, checkpoint):
        data = encode_checkpoint(checkpoint)
        data = data[:4] + struct.pack("<H", 7) + data[6:]
        with pytest.raises(UnsupportedVersion) as info:
            decode_checkpoint(data)
        assert info.value.version == 7

    def test_errors_are_distinct(self):
        kinds = [TruncatedCheckpoint, BadMagic, UnsupportedVersion, ChecksumMismatch]
        assert all(issubclass(kind, CheckpointError) for kind in kinds)


class TestFiles:
    def test_save_load_save(self, tmp_path, checkpoint):
        first = save_checkpoint(checkpoint, tmp_path / "a.fdcv")
        loaded = load_checkpoint(first)
        second = save_checkpoint(loaded, tmp_path / "b.fdcv")
        assert first.read_bytes() == second.read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError, match="cannot read checkpoint"):
            load_checkpoint(tmp_path / "missing.fdcv")

    def test_unwritable_path(self, tmp_path, checkpoint):
        with pytest.raises(OSError, match="cannot write checkpoint"):
            save_checkpoint(checkpoint, tmp_path / "no" / "such" / "dir.fdcv")
