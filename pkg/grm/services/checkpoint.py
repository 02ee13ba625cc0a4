"""
Checkpoint file format

Little-endian binary layout:

    magic        4 bytes   b"GRMC"
    version      uint32    FORMAT_VERSION
    digest       32 bytes  SHA-256 of the config blob
    config_len   uint32
    config       config_len bytes, canonical JSON of the model configuration
    count        uint32    number of entries
    entries      sorted by name, each:
        name_len uint16, name (UTF-8), ndim uint8, dims uint32 × ndim,
        payload float64 × prod(dims)

The same (config, parameters) always serializes to the same bytes.
"""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np
from pydantic import ValidationError

from grm.core.errors import CheckpointVersionError, UsageError
from grm.models.network import GRMNetwork
from grm.schemas.config import ModelConfig, config_error

logger = logging.getLogger(__name__)

MAGIC = b"GRMC"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: ModelConfig
    state: Dict[str, np.ndarray]
    digest: str

    def to_network(self) -> GRMNetwork:
        return GRMNetwork.from_state(self.model, self.state)


def config_blob(cfg: ModelConfig) -> bytes:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize_checkpoint(cfg: ModelConfig, state: Mapping[str, np.ndarray]) -> bytes:
    blob = config_blob(cfg)
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        hashlib.sha256(blob).digest(),
        struct.pack("<I", len(blob)),
        blob,
        struct.pack("<I", len(state)),
    ]
    for name in sorted(state):
        array = np.ascontiguousarray(state[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointVersionError(f"checkpoint truncated at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize_checkpoint(data: bytes) -> Checkpoint:
    """
    Parse checkpoint bytes

    Raises:
        CheckpointVersionError: wrong magic, unsupported version or truncated file
    """
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointVersionError("not a GRM checkpoint (bad magic bytes)")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    digest = reader.take(32)
    (blob_len,) = reader.unpack("<I")
    blob = reader.take(blob_len)
    if hashlib.sha256(blob).digest() != digest:
        logger.warning("Checkpoint config digest does not match its config blob")
    try:
        model = ModelConfig.model_validate(json.loads(blob.decode("utf-8")))
    except ValidationError as e:
        raise config_error(e) from e

    (count,) = reader.unpack("<I")
    state: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(data):
        raise CheckpointVersionError(f"{len(data) - reader.offset} trailing bytes after the last entry")
    return Checkpoint(model=model, state=state, digest=digest.hex())


def save_checkpoint(path: Union[str, Path], cfg: ModelConfig, state: Mapping[str, np.ndarray]) -> str:
    """Write a checkpoint; returns the SHA-256 of the written file"""
    data = serialize_checkpoint(cfg, state)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    file_digest = hashlib.sha256(data).hexdigest()
    logger.info(f"Saved checkpoint {path} ({len(state)} tensors, sha256 {file_digest[:12]})")
    return file_digest


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint {path} not found")
    return deserialize_checkpoint(path.read_bytes())
