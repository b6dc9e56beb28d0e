"""Client for remote model backends speaking the length-prefixed frame protocol.

A frame is a 4-byte little-endian length followed by exactly that many
bytes: an ASCII JSON header and, optionally, a raw binary payload (row-major
little-endian array described by the header's dtype/shape).  JSON values are
self-delimiting, so the header parses without a separate length field and
concatenated frames split unambiguously.

Request headers carry an ``op`` of ``hello``, ``extend`` or ``drop``; replies
carry ``ok`` plus either results or an ``error`` name from the shared error
vocabulary.  Cache state lives server-side: extend returns a ``cache_id``
that later calls reference as a prefix.
"""

from __future__ import annotations

import json
import socket
import struct

import numpy as np

from .errors import (
    ModelMismatch,
    PositionUnsupported,
    ProtocolVersionMismatch,
    RemoteProtocolError,
    UnknownCacheId,
)
from .model import ExtendResult, KVCacheHandle, ModelShape

PROTOCOL_VERSION = 1

_ERROR_TYPES = {
    "UnknownCacheId": UnknownCacheId,
    "ProtocolVersionMismatch": ProtocolVersionMismatch,
    "PositionUnsupported": PositionUnsupported,
    "ModelMismatch": ModelMismatch,
}


def pack_frame(header: dict, payload: bytes = b"") -> bytes:
    head = json.dumps(header, sort_keys=True).encode("ascii")
    body = head + payload
    return struct.pack("<I", len(body)) + body


def split_frame(body: bytes) -> tuple[dict, bytes]:
    """Parse one frame body into (header, payload).

    latin-1 maps bytes to code points one-to-one, so the decoder's end index
    is also the byte offset where the binary payload begins.
    """
    text = body.decode("latin-1")
    try:
        header, idx = json.JSONDecoder().raw_decode(text)
    except json.JSONDecodeError as exc:
        raise RemoteProtocolError(f"unparseable frame header: {exc}") from exc
    return header, body[idx:]


def read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise RemoteProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream) -> tuple[dict, bytes]:
    (length,) = struct.unpack("<I", read_exact(stream, 4))
    return split_frame(read_exact(stream, length))


def array_header(arr: np.ndarray) -> dict:
    return {"dtype": arr.dtype.str, "shape": list(arr.shape)}


def array_from(desc: dict, payload: bytes) -> np.ndarray:
    arr = np.frombuffer(payload, dtype=np.dtype(desc["dtype"]))
    return arr.reshape(desc["shape"]).copy()


class RemoteBackend:
    """Engine-side view of a model served behind the wire protocol.

    KV handles are identifiers into server-resident state; the payload never
    crosses the wire.  One request is in flight per connection.
    """

    def __init__(self, address: str):
        host, _, port = address.rpartition(":")
        self._sock = socket.create_connection((host or "127.0.0.1", int(port)))
        self._stream = self._sock.makefile("rwb")
        reply, _ = self._call({"op": "hello", "protocol": PROTOCOL_VERSION})
        if reply.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolVersionMismatch(
                f"server protocol {reply.get('protocol')}, client {PROTOCOL_VERSION}"
            )
        self.model_id = reply["model_id"]
        self.shape = ModelShape(**reply["shape"])
        self.supports_attention_summary = bool(reply["supports_attention_summary"])
        self.eos_token_id = int(reply["eos_token_id"])

    def close(self) -> None:
        self._stream.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _call(self, header: dict, payload: bytes = b"") -> tuple[dict, bytes]:
        self._stream.write(pack_frame(header, payload))
        self._stream.flush()
        reply, body = read_frame(self._stream)
        if not reply.get("ok", False):
            err = _ERROR_TYPES.get(reply.get("error", ""), RemoteProtocolError)
            raise err(reply.get("message", "remote error"))
        return reply, body

    def extend(self, prefix, tokens, positions, want_summary=False, **_):
        prefix_ids = []
        for handle in prefix:
            if handle.remote_id is None:
                raise ModelMismatch("local KV handle passed to a remote backend")
            if handle.model_id != self.model_id:
                raise ModelMismatch(f"handle from {handle.model_id!r}")
            prefix_ids.append(handle.remote_id)
        positions = np.asarray(positions, dtype="<f8")
        header = {
            "op": "extend",
            "prefix_ids": prefix_ids,
            "tokens": [int(t) for t in tokens],
            "positions": array_header(positions),
            "want_summary": bool(want_summary),
        }
        reply, body = self._call(header, positions.tobytes())
        logits = array_from(reply["logits"], body)
        handle = KVCacheHandle(
            model_id=self.model_id,
            positions=positions.astype(np.float64),
            keys=None,
            values=None,
            fingerprint=reply["cache_id"],
            remote_id=reply["cache_id"],
        )
        summary = None
        if reply.get("summary") is not None:
            summary = np.asarray(reply["summary"], dtype=np.float64)
        return ExtendResult(handle, logits, summary)

    def extend_batch(self, prefixes, tokens, positions, want_summary=False):
        return [self.extend(p, tokens, positions, want_summary) for p in prefixes]

    def drop(self, handles) -> None:
        ids = [h.remote_id for h in handles if h.remote_id is not None]
        self._call({"op": "drop", "cache_ids": ids})
