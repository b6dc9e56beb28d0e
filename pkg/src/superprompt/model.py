"""Language-model interface over KV caches, plus the reference transformer.

The engine talks to any backend through two calls: ``extend`` (grow one KV
prefix by a token segment, returning the new segment's KV state and logits)
and ``extend_batch`` (the same token/position payload fanned across many
prefixes).  New tokens attend densely to every prefix token and causally to
their within-segment predecessors; positions are real-valued.

The in-process reference model is a small deterministic decoder (2 layers,
2 heads, width 32, byte-level vocab of 256) with fixed-seed pseudorandom
weights.  It exists to be exhaustively checkable, not to be good: every
runtime optimization in this package is validated by comparing against a
monolithic dense forward on this model.  Two variants cover both positional
encoding families: additive linear attention bias (alibi) and sinusoidal
pair rotation (rotary), each accepting arbitrary real positions.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import (
    ModelMismatch,
    NegativeDistance,
    PositionOrderViolation,
    VocabOverflow,
)


@dataclass(frozen=True)
class ModelShape:
    """Transformer dimensions used by cost and memory formulas."""

    param_count: float
    layers: int
    d_model: int
    heads: int
    head_dim: int
    vocab: int
    position_scheme: str  # "alibi" | "rotary"
    kv_bytes: int

    def __post_init__(self):
        if self.d_model != self.heads * self.head_dim:
            raise ValueError("d_model must equal heads * head_dim")
        for name in ("param_count", "layers", "d_model", "heads", "head_dim", "vocab", "kv_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.position_scheme not in ("alibi", "rotary"):
            raise ValueError(f"unknown position scheme {self.position_scheme!r}")


@dataclass
class KVCacheHandle:
    """Per-segment key/value state, opaque to callers.

    ``keys``/``values`` have shape (layers, tokens, heads, head_dim) and are
    immutable once created.  Remote backends return handles whose payload
    lives server-side (``keys is None``); those carry only the identifier.
    """

    model_id: str
    positions: np.ndarray
    keys: np.ndarray | None
    values: np.ndarray | None
    fingerprint: str
    remote_id: str | None = None

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class ExtendResult:
    cache: KVCacheHandle
    logits: np.ndarray  # (segment length, vocab)
    summary: np.ndarray | None = None  # attention mass per prefix part (+ self)
    attention: list[np.ndarray] | None = None  # per-layer (new, heads, keys), debug only


# --- positional encodings -------------------------------------------------

def alibi_slopes(n_heads: int) -> np.ndarray:
    """Head slopes: the standard geometric sequence starting at 2^(-8/n)."""

    def pow2_slopes(n: int) -> list[float]:
        start = 2.0 ** (-8.0 / n)
        return [start ** (i + 1) for i in range(n)]

    if n_heads & (n_heads - 1) == 0:
        return np.asarray(pow2_slopes(n_heads), dtype=np.float64)
    closest = 2 ** int(math.floor(math.log2(n_heads)))
    extra = pow2_slopes(2 * closest)[0::2][: n_heads - closest]
    return np.asarray(pow2_slopes(closest) + extra, dtype=np.float64)


def alibi_bias(q_pos: float, k_pos: float, head: int, n_heads: int) -> float:
    """Additive attention bias -slope_head * (q_pos - k_pos); distances only."""
    if q_pos < k_pos:
        raise NegativeDistance(f"key position {k_pos} ahead of query {q_pos}")
    return float(-alibi_slopes(n_heads)[head] * (q_pos - k_pos))


def rotary_rotate(vec: np.ndarray, pos: float, base: float = 10000.0) -> np.ndarray:
    """Rotate each adjacent 2-D sub-pair of ``vec`` by angle theta_j * pos.

    ``pos`` may be any real number; fractional positions interpolate the
    argument of the sinusoids.
    """
    d = vec.shape[-1]
    if d % 2:
        raise ValueError("head dim must be even for rotary")
    theta = base ** (-2.0 * np.arange(d // 2, dtype=np.float64) / d)
    ang = theta * pos
    cos, sin = np.cos(ang), np.sin(ang)
    x = vec[..., 0::2]
    y = vec[..., 1::2]
    out = np.empty_like(vec)
    out[..., 0::2] = x * cos - y * sin
    out[..., 1::2] = x * sin + y * cos
    return out


def _rotate_batch(x: np.ndarray, positions: np.ndarray, base: float = 10000.0) -> np.ndarray:
    """rotary_rotate applied per token; x is (tokens, heads, head_dim)."""
    d = x.shape[-1]
    theta = base ** (-2.0 * np.arange(d // 2, dtype=np.float64) / d)
    ang = positions[:, None] * theta[None, :]  # (tokens, d/2)
    cos = np.cos(ang)[:, None, :].astype(x.dtype)
    sin = np.sin(ang)[:, None, :].astype(x.dtype)
    out = np.empty_like(x)
    out[..., 0::2] = x[..., 0::2] * cos - x[..., 1::2] * sin
    out[..., 1::2] = x[..., 0::2] * sin + x[..., 1::2] * cos
    return out


# --- reference model ------------------------------------------------------

REF_LAYERS = 2
REF_HEADS = 2
REF_DMODEL = 32
REF_HEAD_DIM = 16
REF_VOCAB = 256
REF_MLP = 4 * REF_DMODEL
REF_SEED = {"alibi": 7001, "rotary": 7002}
REF_EOS = 0  # byte 0 terminates greedy decoding


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mean) / np.sqrt(var + 1e-5) + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0).astype(x.dtype)))


class ReferenceModel:
    """Deterministic in-process decoder used as the correctness oracle.

    Weights come from a fixed-seed generator, so two instances with the same
    scheme are bitwise identical.  All math is float32; forward calls are
    pure and reentrant.
    """

    supports_attention_summary = True
    eos_token_id = REF_EOS

    def __init__(self, scheme: str = "alibi", seed: int | None = None):
        if scheme not in ("alibi", "rotary"):
            raise ValueError(f"unknown position scheme {scheme!r}")
        self.scheme = scheme
        self.seed = REF_SEED[scheme] if seed is None else seed
        self.model_id = f"reference-{scheme}-{self.seed}"
        rng = np.random.default_rng(self.seed)

        def w(*shape, scale):
            return (rng.standard_normal(shape) * scale).astype(np.float32)

        d, m = REF_DMODEL, REF_MLP
        self.wte = w(REF_VOCAB, d, scale=1.0)
        self.blocks = []
        for _ in range(REF_LAYERS):
            self.blocks.append(
                {
                    "ln1_g": np.ones(d, np.float32),
                    "ln1_b": np.zeros(d, np.float32),
                    "wq": w(d, d, scale=d**-0.5),
                    "wk": w(d, d, scale=d**-0.5),
                    "wv": w(d, d, scale=d**-0.5),
                    "wo": w(d, d, scale=d**-0.5),
                    "ln2_g": np.ones(d, np.float32),
                    "ln2_b": np.zeros(d, np.float32),
                    "w1": w(d, m, scale=d**-0.5),
                    "w2": w(m, d, scale=m**-0.5),
                }
            )
        self.lnf_g = np.ones(d, np.float32)
        self.lnf_b = np.zeros(d, np.float32)
        self.wun = w(d, REF_VOCAB, scale=d**-0.5)
        self.slopes = alibi_slopes(REF_HEADS)
        self.shape = ModelShape(
            param_count=self._count_params(),
            layers=REF_LAYERS,
            d_model=REF_DMODEL,
            heads=REF_HEADS,
            head_dim=REF_HEAD_DIM,
            vocab=REF_VOCAB,
            position_scheme=scheme,
            kv_bytes=4,
        )

    def _count_params(self) -> int:
        n = self.wte.size + self.wun.size + self.lnf_g.size + self.lnf_b.size
        for blk in self.blocks:
            n += sum(arr.size for arr in blk.values())
        return n

    # -- public interface --

    def extend(
        self,
        prefix: list[KVCacheHandle],
        tokens: tuple[int, ...],
        positions: np.ndarray,
        want_summary: bool = False,
        want_attention: bool = False,
    ) -> ExtendResult:
        """Grow the cache by one segment; returns the segment's KV and logits.

        New tokens attend to all prefix tokens (dense) and causally within
        the segment.  Every prefix position must precede every new position.
        """
        tokens = tuple(int(t) for t in tokens)
        positions = np.asarray(positions, dtype=np.float64)
        self._check_inputs(prefix, tokens, positions)

        part_lengths = [len(h) for h in prefix]
        n_prefix = sum(part_lengths)
        n_new = len(tokens)
        k_pos = np.concatenate([h.positions for h in prefix] + [positions])

        if prefix:
            pk = np.concatenate([h.keys for h in prefix], axis=1)
            pv = np.concatenate([h.values for h in prefix], axis=1)
        else:
            pk = np.zeros((REF_LAYERS, 0, REF_HEADS, REF_HEAD_DIM), np.float32)
            pv = np.zeros_like(pk)

        # key t is visible to new token i iff it is prefix or predecessor/self
        visible = np.arange(n_prefix + n_new)[None, :] <= (n_prefix + np.arange(n_new))[:, None]

        x = self.wte[list(tokens)]
        new_k = np.empty((REF_LAYERS, n_new, REF_HEADS, REF_HEAD_DIM), np.float32)
        new_v = np.empty_like(new_k)
        attn_maps: list[np.ndarray] = []
        mass_sum = np.zeros(len(prefix) + 1, dtype=np.float64)

        for li, blk in enumerate(self.blocks):
            h = _layer_norm(x, blk["ln1_g"], blk["ln1_b"])
            q = (h @ blk["wq"]).reshape(n_new, REF_HEADS, REF_HEAD_DIM)
            k = (h @ blk["wk"]).reshape(n_new, REF_HEADS, REF_HEAD_DIM)
            v = (h @ blk["wv"]).reshape(n_new, REF_HEADS, REF_HEAD_DIM)
            if self.scheme == "rotary":
                q = _rotate_batch(q, positions)
                k = _rotate_batch(k, positions)
            new_k[li] = k
            new_v[li] = v
            k_all = np.concatenate([pk[li], k], axis=0)
            v_all = np.concatenate([pv[li], v], axis=0)

            scores = np.einsum("nhd,thd->nht", q, k_all) / np.float32(REF_HEAD_DIM**0.5)
            if self.scheme == "alibi":
                dist = positions[:, None] - k_pos[None, :]
                bias = -self.slopes[None, :, None] * dist[:, None, :]
                scores = scores + bias.astype(np.float32)
            scores = np.where(visible[:, None, :], scores, -np.inf)
            scores = scores - scores.max(axis=-1, keepdims=True)
            # normalize in float64 so rows sum to 1 even over long contexts;
            # weights are cast back so activations stay single precision
            weights64 = np.exp(scores, dtype=np.float64)
            weights64 /= weights64.sum(axis=-1, keepdims=True)
            assert np.all(np.abs(weights64.sum(axis=-1) - 1.0) < 1e-6), \
                "attention rows must sum to 1"
            weights = weights64.astype(np.float32)

            if want_attention:
                attn_maps.append(weights.copy())
            if want_summary:
                offset = 0
                for pi, plen in enumerate(part_lengths):
                    mass_sum[pi] += weights[:, :, offset : offset + plen].sum()
                    offset += plen
                mass_sum[-1] += weights[:, :, offset:].sum()

            ctx = np.einsum("nht,thd->nhd", weights, v_all).reshape(n_new, REF_DMODEL)
            x = x + ctx @ blk["wo"]
            h2 = _layer_norm(x, blk["ln2_g"], blk["ln2_b"])
            x = x + _gelu(h2 @ blk["w1"]) @ blk["w2"]

        logits = _layer_norm(x, self.lnf_g, self.lnf_b) @ self.wun

        summary = None
        if want_summary:
            summary = mass_sum / (REF_LAYERS * REF_HEADS * n_new)

        handle = KVCacheHandle(
            model_id=self.model_id,
            positions=positions,
            keys=new_k,
            values=new_v,
            fingerprint=self._fingerprint(prefix, tokens, positions),
        )
        return ExtendResult(handle, logits, summary, attn_maps if want_attention else None)

    def extend_batch(
        self,
        prefixes: list[list[KVCacheHandle]],
        tokens: tuple[int, ...],
        positions: np.ndarray,
        want_summary: bool = False,
    ) -> list[ExtendResult]:
        """Fan one token/position payload across many prefixes.

        Element i equals ``extend(prefixes[i], ...)`` exactly: each element
        is evaluated with the same contraction order, so batching never
        changes a single bit of the output.
        """
        return [self.extend(p, tokens, positions, want_summary) for p in prefixes]

    # -- internals --

    def _check_inputs(self, prefix, tokens, positions):
        if len(tokens) == 0:
            raise ValueError("cannot extend by an empty segment")
        if len(positions) != len(tokens):
            raise PositionOrderViolation("positions length must equal token count")
        if any(t < 0 or t >= REF_VOCAB for t in tokens):
            raise VocabOverflow(f"token id outside vocab of {REF_VOCAB}")
        if len(positions) > 1 and not np.all(np.diff(positions) > 0):
            raise PositionOrderViolation("segment positions must strictly increase")
        for h in prefix:
            if h.model_id != self.model_id:
                raise ModelMismatch(f"prefix from {h.model_id!r}, model is {self.model_id!r}")
            if h.keys is None:
                raise ModelMismatch("remote handle passed to in-process model")
            if len(h) and h.positions.max() >= positions.min():
                raise PositionOrderViolation(
                    f"prefix position {h.positions.max()} not before new min {positions.min()}"
                )

    def _fingerprint(self, prefix, tokens, positions) -> str:
        digest = hashlib.sha256()
        digest.update(self.model_id.encode())
        for h in prefix:
            digest.update(bytes.fromhex(h.fingerprint))
        digest.update(np.asarray(tokens, dtype=np.uint32).tobytes())
        digest.update(np.asarray(positions, dtype=np.float64).tobytes())
        return digest.hexdigest()


def concat_caches(parts: list[KVCacheHandle]) -> KVCacheHandle:
    """In-order concatenation of caches whose position ranges are increasing."""
    if not parts:
        raise ValueError("nothing to concatenate")
    if len(parts) == 1:
        return parts[0]
    model_ids = {h.model_id for h in parts}
    if len(model_ids) != 1:
        raise ModelMismatch(f"cannot concatenate caches from models {sorted(model_ids)}")
    for a, b in zip(parts, parts[1:]):
        if a.positions[-1] >= b.positions[0]:
            raise PositionOrderViolation(
                f"part ending at {a.positions[-1]} not before part starting at {b.positions[0]}"
            )
    digest = hashlib.sha256()
    for h in parts:
        digest.update(bytes.fromhex(h.fingerprint))
    return KVCacheHandle(
        model_id=parts[0].model_id,
        positions=np.concatenate([h.positions for h in parts]),
        keys=np.concatenate([h.keys for h in parts], axis=1),
        values=np.concatenate([h.values for h in parts], axis=1),
        fingerprint=digest.hexdigest(),
    )


# --- instrumentation ------------------------------------------------------

@dataclass
class CallCounter:
    """Counts backend traffic: one batched call is one call, many path evals."""

    calls: int = 0
    path_evals: int = 0
    new_tokens: int = 0


class CountingBackend:
    """Wraps any backend and tallies extend traffic (for budget contracts)."""

    def __init__(self, inner):
        self.inner = inner
        self.counter = CallCounter()

    @property
    def model_id(self):
        return self.inner.model_id

    @property
    def shape(self):
        return self.inner.shape

    @property
    def supports_attention_summary(self):
        return self.inner.supports_attention_summary

    @property
    def eos_token_id(self):
        return self.inner.eos_token_id

    def extend(self, prefix, tokens, positions, want_summary=False, **kw):
        self.counter.calls += 1
        self.counter.path_evals += 1
        self.counter.new_tokens += len(tokens)
        return self.inner.extend(prefix, tokens, positions, want_summary, **kw)

    def extend_batch(self, prefixes, tokens, positions, want_summary=False):
        self.counter.calls += 1
        self.counter.path_evals += len(prefixes)
        self.counter.new_tokens += len(tokens) * len(prefixes)
        return self.inner.extend_batch(prefixes, tokens, positions, want_summary)


# --- byte-level text interface ---------------------------------------------

def encode_text(text: str) -> tuple[int, ...]:
    """UTF-8 bytes as token ids (the reference model's vocabulary)."""
    return tuple(text.encode("utf-8"))


def decode_tokens(tokens) -> str:
    return bytes(int(t) for t in tokens if 0 <= int(t) < 256).decode("utf-8", errors="replace")
