"""
Binary checkpoint format.

Layout (all integers little-endian):

    "FDCV" | u16 version | u32 length + manifest (config text, UTF-8)
    per tensor: u32 length + name | u8 rank | u64 extent × rank | float64 payload
    u64 CRC-64 of everything above

Tensors are written in name order, so encoding is canonical: equal checkpoints
give byte-identical files. The step count and metric log travel as the tensors
``train.step`` and ``train.metrics``.
"""
import struct
from pathlib import Path
from typing import ClassVar, NamedTuple

import crcmod.predefined
import numpy as np
import pandas as pd

from .config import TrainConfig, parse_config, render_config
from .logging import log

MAGIC = b"FDCV"
VERSION = 1
STEP_RECORD = "train.step"
METRICS_RECORD = "train.metrics"
METRIC_COLUMNS = ("epoch", "step", "loss", "train_acc", "heldout_acc", "max_similarity")

crc64 = crcmod.predefined.mkPredefinedCrcFun("crc-64-we")


class CheckpointError(ValueError):
    """
    Malformed checkpoint file.
    """


class TruncatedCheckpoint(CheckpointError):
    pass


class BadMagic(CheckpointError):
    pass


class UnsupportedVersion(CheckpointError):
    def __init__(self, *args, version):
        super().__init__(*args)
        self.version = version


class ChecksumMismatch(CheckpointError):
    pass


class Checkpoint(NamedTuple):
    config: TrainConfig
    tensors: dict  # model parameters by name
    step: int = 0
    metrics: pd.DataFrame = None

    def metric_log(self):
        if self.metrics is None:
            return pd.DataFrame(columns=list(METRIC_COLUMNS))
        return self.metrics


class _Format:
    header: ClassVar[struct.Struct] = struct.Struct("<4sH")
    length: ClassVar[struct.Struct] = struct.Struct("<I")
    rank: ClassVar[struct.Struct] = struct.Struct("<B")
    extent: ClassVar[struct.Struct] = struct.Struct("<Q")
    trailer: ClassVar[struct.Struct] = struct.Struct("<Q")
    payload: ClassVar[np.dtype] = np.dtype("<f8")


class _Reader:
    def __init__(self, data, end):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, size, what):
        if self.pos + size > self.end:
            raise TruncatedCheckpoint(
                f"truncated checkpoint: {what} needs {size} bytes at offset {self.pos}, "
                f"only {max(self.end - self.pos, 0)} left"
            )
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt, what):
        return fmt.unpack(self.take(fmt.size, what))


#
# Encoding
#
def checkpoint_tensors(checkpoint: Checkpoint):
    """
    Every tensor record of a checkpoint, by name.
    """
    metrics = checkpoint.metric_log()
    table = metrics.reindex(columns=list(METRIC_COLUMNS)).to_numpy(dtype=float)
    return {
        **checkpoint.tensors,
        STEP_RECORD: np.array(float(checkpoint.step)),
        METRICS_RECORD: table.reshape(len(metrics), len(METRIC_COLUMNS)),
    }


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    f = _Format
    manifest = render_config(checkpoint.config).encode("utf8")
    parts = [f.header.pack(MAGIC, VERSION), f.length.pack(len(manifest)), manifest]

    tensors = checkpoint_tensors(checkpoint)
    for name in sorted(tensors):
        value = np.asarray(tensors[name], dtype=float)
        if value.ndim > 255:
            raise ValueError(f"tensor {name!r} has too many axes ({value.ndim})")
        encoded = name.encode("utf8")
        parts.extend([f.length.pack(len(encoded)), encoded, f.rank.pack(value.ndim)])
        parts.extend(f.extent.pack(n) for n in value.shape)
        parts.append(np.ascontiguousarray(value, dtype=f.payload).tobytes())

    body = b"".join(parts)
    return body + f.trailer.pack(crc64(body))


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Decode checkpoint bytes.

    Raise TruncatedCheckpoint, BadMagic, UnsupportedVersion or ChecksumMismatch,
    checked in this order: the checksum is verified before any record is parsed.
    """
    f = _Format
    data = bytes(data)
    if len(data) < f.header.size + f.trailer.size:
        raise TruncatedCheckpoint(f"truncated checkpoint: only {len(data)} bytes")

    reader = _Reader(data, len(data) - f.trailer.size)
    magic, version = reader.unpack(f.header, "header")
    if magic != MAGIC:
        raise BadMagic(f"bad magic bytes {magic!r} (expect {MAGIC!r})")
    if version != VERSION:
        raise UnsupportedVersion(
            f"unsupported checkpoint version {version} (expect {VERSION})",
            version=version,
        )

    (expected,) = f.trailer.unpack(data[reader.end :])
    actual = crc64(data[: reader.end])
    if actual != expected:
        raise ChecksumMismatch(
            f"checksum mismatch: stored {expected:016x}, computed {actual:016x}"
        )

    (size,) = reader.unpack(f.length, "manifest length")
    manifest = reader.take(size, "manifest")
    tensors = {}
    while reader.pos < reader.end:
        (size,) = reader.unpack(f.length, "name length")
        raw = reader.take(size, "tensor name")
        try:
            name = raw.decode("utf8")
        except UnicodeDecodeError as ex:
            raise CheckpointError(f"invalid tensor name {raw!r}: {ex}") from ex
        (rank,) = reader.unpack(f.rank, f"rank of {name!r}")
        extents = [reader.unpack(f.extent, f"extent of {name!r}") for _ in range(rank)]
        shape = tuple(n for (n,) in extents)
        count = int(np.prod(shape, dtype=object))
        payload = reader.take(count * f.payload.itemsize, f"payload of {name!r}")
        values = np.frombuffer(payload, dtype=f.payload).astype(float)
        tensors[name] = values.reshape(shape)

    try:
        config = parse_config(manifest.decode("utf8"), "<checkpoint manifest>")
        step = int(tensors.pop(STEP_RECORD))
        table = tensors.pop(METRICS_RECORD)
    except (KeyError, UnicodeDecodeError, ValueError) as ex:
        raise CheckpointError(f"invalid checkpoint content: {ex}") from ex
    metrics = pd.DataFrame(table, columns=list(METRIC_COLUMNS))
    return Checkpoint(config, tensors, step, metrics)


def save_checkpoint(checkpoint: Checkpoint, path):
    path = Path(path)
    data = encode_checkpoint(checkpoint)
    try:
        path.write_bytes(data)
    except OSError as ex:
        raise OSError(f"cannot write checkpoint {path}: {ex.strerror}") from ex
    log.info("checkpoint saved to %s (%d bytes)", path, len(data))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as ex:
        raise OSError(f"cannot read checkpoint {path}: {ex.strerror}") from ex
    return decode_checkpoint(data)
