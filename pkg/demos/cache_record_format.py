"""Walkthrough: the on-disk KV record format and content-addressed keys.

Every cached segment is one file whose name is a hash over the model id and
the full (token, position) streams of the segment and all its ancestors.
The byte layout is fixed and checksummed, so records survive round trips
bit for bit and corruption is detected on read.
"""

import numpy as np

from superprompt import CacheStore, TokenSegment, cache_key, make_backend, preprocess
from superprompt.cachestore import CacheRecord

backend = make_backend("reference-alibi")
preamble = TokenSegment("p", (1, 2, 3, 4), "preamble")
docs = [TokenSegment("d0", (9, 8, 7), "document")]

store = CacheStore("/tmp/superprompt-demo-records")
prep = preprocess(backend, preamble, docs, store=store)

key = cache_key(backend.model_id, [], preamble.tokens, prep.preamble_positions)
print("preamble record key:", key[:32], "...")
path = store.root / key
blob = path.read_bytes()
print("file size:", len(blob), "bytes")
print("magic    :", blob[:4])
print("version  :", int.from_bytes(blob[4:6], "little"),
      "  hash fn:", int.from_bytes(blob[6:8], "little"))
print("checksum :", blob[-8:].hex())

record = CacheRecord.from_bytes(blob)
print("\ndecoded record:")
print("  model   :", record.model_id)
print("  tensors :", record.keys.shape, record.keys.dtype)
print("  positions:", record.positions)
print("  metadata:", {k: v for k, v in record.metadata.items() if k != "fingerprint"})
print("  round trip byte-exact:", record.to_bytes() == blob)

# any change to an ancestor token or a position yields a different key
other = cache_key(backend.model_id, [], (1, 2, 3, 5), prep.preamble_positions)
shifted = cache_key(backend.model_id, [], preamble.tokens, prep.preamble_positions + 1.0)
print("\nkey sensitivity:")
print("  different token   ->", other[:16], "...")
print("  shifted positions ->", shifted[:16], "...")

# flip one payload byte: the checksum catches it
broken = bytearray(blob)
broken[80] ^= 0xFF
try:
    CacheRecord.from_bytes(bytes(broken))
except Exception as exc:
    print("\nflipped byte detected:", type(exc).__name__)

print("\nper-token memory for this backend:",
      2 * 2 * 32 * 4, "bytes  (2 tensors x layers x width x 4-byte floats)")
print("store accounting:", np.round(record.nbytes() / len(record.positions), 1),
      "payload bytes/token")
