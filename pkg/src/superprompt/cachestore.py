"""Persistent KV cache keyed by path prefix, with memory accounting.

Records are content-addressed: the key hashes the model id together with the
full ancestor (token, position) stream and the segment's own stream, so any
change anywhere upstream produces a different key.  Storage is two-tier: an
in-memory LRU map in front of a directory of one file per record.

On-disk layout (all little-endian), followed by an 8-byte checksum over
everything before it:

    magic "SPKV" | version u16 | hash fn id u16 | model-id hash 16B |
    layers u16 | heads u16 | head_dim u16 | elem code u8 | meta len u32 |
    token count u32 | metadata JSON | positions f64*T |
    K tensors layer-major f32 | V tensors layer-major f32 | checksum u64
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptRecord, DimensionMismatch, StorageFull
from .model import KVCacheHandle, ModelShape

MAGIC = b"SPKV"
FORMAT_VERSION = 1
HASH_FN_SHA256 = 1
ELEM_F32 = 1
_HEADER = struct.Struct("<4sHH16sHHHBI I")


def memory_estimate(shape: ModelShape, token_count: int) -> int:
    """Bytes needed to cache ``token_count`` tokens: 2 * L * d_model * elem."""
    if token_count < 0:
        raise ValueError("token count must be non-negative")
    return 2 * shape.layers * shape.d_model * shape.kv_bytes * token_count


def cache_key(model_id: str, ancestors: list[tuple[tuple[int, ...], np.ndarray]],
              tokens: tuple[int, ...], positions: np.ndarray) -> str:
    """Content hash over the ancestor stream plus the segment's own stream.

    ``ancestors`` is the ordered list of (tokens, positions) pairs of every
    upstream segment.  Any differing token id or position value anywhere in
    the streams changes the key.
    """
    digest = hashlib.sha256()
    digest.update(model_id.encode())
    digest.update(struct.pack("<I", len(ancestors)))
    for toks, pos in ancestors:
        digest.update(struct.pack("<I", len(toks)))
        digest.update(np.asarray(toks, dtype=np.uint32).tobytes())
        digest.update(np.asarray(pos, dtype=np.float64).tobytes())
    digest.update(struct.pack("<I", len(tokens)))
    digest.update(np.asarray(tokens, dtype=np.uint32).tobytes())
    digest.update(np.asarray(positions, dtype=np.float64).tobytes())
    return digest.hexdigest()


@dataclass
class CacheRecord:
    """A serializable KV segment: tensors, positions, and free-form metadata."""

    model_id: str
    keys: np.ndarray  # (L, T, H, Dh) float32
    values: np.ndarray
    positions: np.ndarray  # (T,) float64
    metadata: dict = field(default_factory=dict)

    @property
    def token_count(self) -> int:
        return self.keys.shape[1]

    def nbytes(self) -> int:
        return self.keys.nbytes + self.values.nbytes

    def to_bytes(self) -> bytes:
        model_hash = hashlib.sha256(self.model_id.encode()).digest()[:16]
        meta = json.dumps({"model_id": self.model_id, **self.metadata}, sort_keys=True).encode()
        L, T, H, D = self.keys.shape
        header = _HEADER.pack(
            MAGIC, FORMAT_VERSION, HASH_FN_SHA256, model_hash,
            L, H, D, ELEM_F32, len(meta), T,
        )
        body = b"".join([
            header,
            meta,
            self.positions.astype("<f8").tobytes(),
            self.keys.astype("<f4").tobytes(),
            self.values.astype("<f4").tobytes(),
        ])
        checksum = hashlib.sha256(body).digest()[:8]
        return body + checksum

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CacheRecord":
        if len(blob) < _HEADER.size + 8:
            raise CorruptRecord("record too short")
        body, checksum = blob[:-8], blob[-8:]
        if hashlib.sha256(body).digest()[:8] != checksum:
            raise CorruptRecord("checksum mismatch")
        magic, version, hash_fn, _model_hash, L, H, D, elem, meta_len, T = _HEADER.unpack(
            body[: _HEADER.size]
        )
        if magic != MAGIC:
            raise CorruptRecord("bad magic")
        if version != FORMAT_VERSION or hash_fn != HASH_FN_SHA256 or elem != ELEM_F32:
            raise CorruptRecord("unsupported record format")
        off = _HEADER.size
        meta = json.loads(body[off : off + meta_len].decode())
        off += meta_len
        positions = np.frombuffer(body, dtype="<f8", count=T, offset=off).copy()
        off += T * 8
        kv_count = L * T * H * D
        keys = np.frombuffer(body, dtype="<f4", count=kv_count, offset=off).reshape(L, T, H, D).copy()
        off += kv_count * 4
        values = np.frombuffer(body, dtype="<f4", count=kv_count, offset=off).reshape(L, T, H, D).copy()
        model_id = meta.pop("model_id")
        return cls(model_id, keys, values, positions, meta)

    @classmethod
    def from_handle(cls, handle: KVCacheHandle, metadata: dict | None = None) -> "CacheRecord":
        if handle.keys is None:
            raise DimensionMismatch("handle has no local payload to persist")
        return cls(handle.model_id, handle.keys, handle.values, handle.positions,
                   dict(metadata or {}))

    def to_handle(self, fingerprint: str) -> KVCacheHandle:
        return KVCacheHandle(self.model_id, self.positions, self.keys, self.values, fingerprint)


class CacheStore:
    """In-memory LRU tier over an optional one-file-per-record directory.

    Writes are atomic (temp file + rename); readers never observe a torn
    record.  ``budget_bytes`` bounds the in-memory tier; least-recently-used
    records spill out of memory but stay on disk.
    """

    def __init__(self, root: str | Path | None = None, budget_bytes: int | None = None,
                 shape: ModelShape | None = None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self.budget_bytes = budget_bytes
        self.shape = shape
        self._mem: OrderedDict[str, CacheRecord] = OrderedDict()
        self._mem_bytes = 0

    def _validate(self, record: CacheRecord) -> None:
        if record.keys.shape != record.values.shape:
            raise DimensionMismatch("key/value tensor shapes differ")
        if record.keys.shape[1] != len(record.positions):
            raise DimensionMismatch("token count does not match position vector")
        if self.shape is not None:
            expect = (self.shape.layers, record.token_count, self.shape.heads, self.shape.head_dim)
            if record.keys.shape != expect:
                raise DimensionMismatch(f"tensor dims {record.keys.shape} != model {expect}")

    def put(self, key: str, record: CacheRecord) -> None:
        self._validate(record)
        size = record.nbytes()
        if self.budget_bytes is not None and size > self.budget_bytes and self.root is None:
            raise StorageFull(f"record of {size} bytes exceeds budget {self.budget_bytes}")
        if self.root is not None:
            path = self.root / key
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(record.to_bytes())
            tmp.replace(path)
        if key in self._mem:
            self._mem_bytes -= self._mem[key].nbytes()
            del self._mem[key]
        self._mem[key] = record
        self._mem_bytes += size
        self._evict()

    def _evict(self) -> None:
        if self.budget_bytes is None:
            return
        while self._mem_bytes > self.budget_bytes and self._mem:
            _, dropped = self._mem.popitem(last=False)
            self._mem_bytes -= dropped.nbytes()

    def get(self, key: str) -> CacheRecord | None:
        """Stored record, or None when the key was never put (not an error)."""
        if key in self._mem:
            self._mem.move_to_end(key)
            return self._mem[key]
        if self.root is not None:
            path = self.root / key
            if path.exists():
                record = CacheRecord.from_bytes(path.read_bytes())
                self._mem[key] = record
                self._mem_bytes += record.nbytes()
                self._evict()
                return record
        return None

    def __contains__(self, key: str) -> bool:
        if key in self._mem:
            return True
        return self.root is not None and (self.root / key).exists()
