"""
Versioned, checksummed binary container shared by encoder checkpoints and indexes.

Layout (little-endian):

    magic        8 bytes  b"FSRETR\\x00\\x01"
    version      u32
    header_len   u64
    header       JSON, UTF-8
    payload_len  u64
    payload      raw bytes
    checksum     SHA-256 of every preceding byte
"""

import hashlib
import struct
from pathlib import Path
from typing import TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from project.errors import ContainerError

MAGIC = b"FSRETR\x00\x01"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_CHECKSUM_LEN = 32

HeaderT = TypeVar("HeaderT", bound=BaseModel)


def write_container(path: str | Path, header: BaseModel, payload: bytes) -> None:
    header_bytes = header.model_dump_json().encode("utf-8")
    body = b"".join(
        [
            MAGIC,
            _U32.pack(FORMAT_VERSION),
            _U64.pack(len(header_bytes)),
            header_bytes,
            _U64.pack(len(payload)),
            payload,
        ]
    )
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_container(
    path: str | Path, header_type: type[HeaderT]
) -> tuple[HeaderT, bytes]:
    """
    Reads and verifies a container.

    Args:
        path (str | Path): File to read.
        header_type (type[HeaderT]): Pydantic model the JSON header must validate against.

    Returns:
        tuple[HeaderT, bytes]: The parsed header and the raw payload.

    Raises:
        ContainerError: On a missing file, bad magic, unknown version, truncation or checksum mismatch.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ContainerError(f"cannot read {path}: {e}")

    minimum = len(MAGIC) + _U32.size + _U64.size + _U64.size + _CHECKSUM_LEN
    if len(data) < minimum:
        raise ContainerError(f"{path}: truncated file ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: not a retrieval artifact (bad magic)")

    offset = len(MAGIC)
    (version,) = _U32.unpack_from(data, offset)
    offset += _U32.size
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")

    (header_len,) = _U64.unpack_from(data, offset)
    offset += _U64.size
    if offset + header_len + _U64.size + _CHECKSUM_LEN > len(data):
        raise ContainerError(f"{path}: truncated header")
    header_bytes = data[offset : offset + header_len]
    offset += header_len

    (payload_len,) = _U64.unpack_from(data, offset)
    offset += _U64.size
    if offset + payload_len + _CHECKSUM_LEN != len(data):
        raise ContainerError(f"{path}: truncated or padded payload")
    payload = data[offset : offset + payload_len]
    offset += payload_len

    if hashlib.sha256(data[:offset]).digest() != data[offset:]:
        raise ContainerError(f"{path}: checksum mismatch")

    try:
        header = header_type.model_validate_json(header_bytes)
    except ValidationError as e:
        raise ContainerError(f"{path}: malformed header: {e.errors()[0]['msg']}")
    return header, payload


def pack_arrays(*arrays: np.ndarray) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def unpack_arrays(payload: bytes, *shapes: tuple[int, ...]) -> list[np.ndarray]:
    """
    Splits a payload written by pack_arrays back into float64 arrays of the given shapes.

    Raises:
        ContainerError: If the payload size does not match the shapes.
    """
    expected = sum(int(np.prod(shape)) for shape in shapes) * 8
    if expected != len(payload):
        raise ContainerError(
            f"payload holds {len(payload)} bytes, shapes {shapes} need {expected}"
        )
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        if count == 0:
            arrays.append(np.zeros(shape, dtype=np.float64))
            continue
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays.append(flat.astype(np.float64).reshape(shape))
        offset += count * 8
    return arrays
