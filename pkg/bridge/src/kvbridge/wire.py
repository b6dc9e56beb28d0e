"""Length-prefixed frame codec for the model-server wire protocol.

A frame is a 4-byte little-endian length followed by exactly that many
bytes: an ASCII JSON header, then an optional raw binary payload whose
dtype/shape the header describes.  The header is a single JSON value and
therefore self-delimiting; the byte offset where it ends is where the
payload begins.  This file is an independent implementation of the same
byte format the engine's client speaks; the bytes on the wire are the
contract.
"""

from __future__ import annotations

import json
import struct

import numpy as np

PROTOCOL_VERSION = 1


class FrameError(Exception):
    """Malformed frame."""


def pack_frame(header: dict, payload: bytes = b"") -> bytes:
    head = json.dumps(header, sort_keys=True).encode("ascii")
    body = head + payload
    return struct.pack("<I", len(body)) + body


def split_frame(body: bytes) -> tuple[dict, bytes]:
    # latin-1 is a bijection between bytes and the first 256 code points,
    # so the JSON decoder's end index equals the payload's byte offset
    try:
        header, idx = json.JSONDecoder().raw_decode(body.decode("latin-1"))
    except json.JSONDecodeError as exc:
        raise FrameError(f"unparseable header: {exc}") from exc
    return header, body[idx:]


def read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise EOFError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> tuple[dict, bytes]:
    (length,) = struct.unpack("<I", read_exact(stream, 4))
    return split_frame(read_exact(stream, length))


def write_frame(stream, header: dict, payload: bytes = b"") -> None:
    stream.write(pack_frame(header, payload))
    stream.flush()


def array_header(arr: np.ndarray) -> dict:
    return {"dtype": arr.dtype.str, "shape": list(arr.shape)}


def array_from(desc: dict, payload: bytes) -> np.ndarray:
    arr = np.frombuffer(payload, dtype=np.dtype(desc["dtype"]))
    return arr.reshape(desc["shape"]).copy()
