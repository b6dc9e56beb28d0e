import math

import numpy as np
import pytest

from superprompt.errors import (
    ModelMismatch,
    NegativeDistance,
    PositionOrderViolation,
    VocabOverflow,
)
from superprompt.model import (
    REF_VOCAB,
    ReferenceModel,
    alibi_bias,
    alibi_slopes,
    concat_caches,
    decode_tokens,
    encode_text,
    rotary_rotate,
)

from conftest import unit_positions


@pytest.fixture(params=["alibi", "rotary"])
def model(request, alibi_model, rotary_model):
    return alibi_model if request.param == "alibi" else rotary_model


def rand_tokens(rng, n):
    return tuple(int(t) for t in rng.integers(0, REF_VOCAB, n))


class TestExtend:
    def test_shape_contract(self, model):
        rng = np.random.default_rng(0)
        result = model.extend([], rand_tokens(rng, 5), unit_positions(0, 5))
        assert len(result.cache) == 5
        assert result.logits.shape == (5, REF_VOCAB)
        assert np.all(np.isfinite(result.logits))

    def test_incremental_equals_batch(self, model):
        rng = np.random.default_rng(1)
        toks = rand_tokens(rng, 5)
        mono = model.extend([], toks, unit_positions(0, 5))
        parts, rows = [], []
        for i in range(5):
            r = model.extend(parts, toks[i : i + 1], unit_positions(i, 1))
            parts.append(r.cache)
            rows.append(r.logits[0])
        assert np.abs(np.asarray(rows) - mono.logits).max() <= 1e-5

    def test_position_order_enforced(self, model):
        rng = np.random.default_rng(2)
        first = model.extend([], rand_tokens(rng, 4), unit_positions(0, 4))
        with pytest.raises(PositionOrderViolation):
            model.extend([first.cache], rand_tokens(rng, 2), unit_positions(2, 2))

    def test_vocab_overflow(self, model):
        with pytest.raises(VocabOverflow):
            model.extend([], (1, REF_VOCAB), unit_positions(0, 2))

    def test_model_mismatch(self, alibi_model, rotary_model):
        rng = np.random.default_rng(3)
        handle = alibi_model.extend([], rand_tokens(rng, 3), unit_positions(0, 3)).cache
        with pytest.raises(ModelMismatch):
            rotary_model.extend([handle], rand_tokens(rng, 2), unit_positions(3, 2))

    def test_deterministic_bitwise(self, model):
        rng = np.random.default_rng(4)
        toks = rand_tokens(rng, 12)
        a = model.extend([], toks, unit_positions(0, 12))
        fresh = ReferenceModel(model.scheme)
        b = fresh.extend([], toks, unit_positions(0, 12))
        assert np.array_equal(a.logits, b.logits)
        assert a.cache.fingerprint == b.cache.fingerprint

    def test_fractional_positions_accepted(self, model):
        rng = np.random.default_rng(5)
        result = model.extend([], rand_tokens(rng, 3), np.array([0.0, 1.5, 2.25]))
        assert result.logits.shape == (3, REF_VOCAB)


class TestExtendBatch:
    def test_matches_sequential(self, model):
        rng = np.random.default_rng(6)
        prefixes = []
        for i in range(3):
            r = model.extend([], rand_tokens(rng, 4 + i), unit_positions(0, 4 + i))
            prefixes.append([r.cache])
        toks = rand_tokens(rng, 3)
        pos = unit_positions(10, 3)
        batched = model.extend_batch(prefixes, toks, pos)
        for prefix, res in zip(prefixes, batched):
            solo = model.extend(prefix, toks, pos)
            assert np.array_equal(solo.logits, res.logits)
            assert np.array_equal(solo.cache.keys, res.cache.keys)

    def test_single_prefix_identical(self, model):
        rng = np.random.default_rng(7)
        pre = model.extend([], rand_tokens(rng, 4), unit_positions(0, 4))
        toks = rand_tokens(rng, 2)
        pos = unit_positions(4, 2)
        assert np.array_equal(
            model.extend_batch([[pre.cache]], toks, pos)[0].logits,
            model.extend([pre.cache], toks, pos).logits,
        )

    def test_heterogeneous_prefix_lengths(self, model):
        rng = np.random.default_rng(8)
        short = model.extend([], rand_tokens(rng, 2), unit_positions(0, 2))
        long = model.extend([], rand_tokens(rng, 50), unit_positions(0, 50))
        toks = rand_tokens(rng, 3)
        pos = unit_positions(60, 3)
        batched = model.extend_batch([[short.cache], [long.cache]], toks, pos)
        assert np.array_equal(batched[0].logits,
                              model.extend([short.cache], toks, pos).logits)
        assert np.array_equal(batched[1].logits,
                              model.extend([long.cache], toks, pos).logits)


class TestConcat:
    def test_length_additivity(self, model):
        rng = np.random.default_rng(9)
        a = model.extend([], rand_tokens(rng, 4), unit_positions(0, 4)).cache
        b = model.extend([a], rand_tokens(rng, 3), unit_positions(4, 3)).cache
        c = model.extend([a, b], rand_tokens(rng, 2), unit_positions(7, 2)).cache
        merged = concat_caches([a, b, c])
        assert len(merged) == 9

    def test_identity_single_part(self, model):
        rng = np.random.default_rng(10)
        a = model.extend([], rand_tokens(rng, 4), unit_positions(0, 4)).cache
        assert concat_caches([a]) is a

    def test_order_violation(self, model):
        rng = np.random.default_rng(11)
        a = model.extend([], rand_tokens(rng, 4), unit_positions(0, 4)).cache
        b = model.extend([a], rand_tokens(rng, 3), unit_positions(4, 3)).cache
        with pytest.raises(PositionOrderViolation):
            concat_caches([b, a])

    def test_decode_from_composite_matches_chain(self, model):
        # appending one token to p (+) d (+) q must match appending it to a
        # cache built by a single chain forward over the same stream
        rng = np.random.default_rng(12)
        toks = rand_tokens(rng, 9)
        p = model.extend([], toks[:4], unit_positions(0, 4)).cache
        d = model.extend([p], toks[4:7], unit_positions(4, 3)).cache
        q = model.extend([p, d], toks[7:9], unit_positions(7, 2)).cache
        composite = concat_caches([p, d, q])
        mono = model.extend([], toks, unit_positions(0, 9)).cache

        probe = rand_tokens(rng, 1)
        via_parts = model.extend([composite], probe, unit_positions(9, 1))
        via_mono = model.extend([mono], probe, unit_positions(9, 1))
        assert np.abs(via_parts.logits - via_mono.logits).max() <= 1e-5


class TestChainEquivalence:
    @pytest.mark.parametrize("scheme", ["alibi", "rotary"])
    def test_segmentwise_equals_monolithic(self, scheme, alibi_model, rotary_model):
        model = alibi_model if scheme == "alibi" else rotary_model
        rng = np.random.default_rng(13)
        for _ in range(10):
            total = int(rng.integers(8, 64))
            toks = rand_tokens(rng, total)
            cuts = sorted(rng.choice(np.arange(1, total), size=int(rng.integers(1, 4)),
                                     replace=False).tolist())
            bounds = [0, *cuts, total]
            parts, blocks = [], []
            for lo, hi in zip(bounds, bounds[1:]):
                r = model.extend(parts, toks[lo:hi], unit_positions(lo, hi - lo))
                parts.append(r.cache)
                blocks.append(r.logits)
            mono = model.extend([], toks, unit_positions(0, total))
            assert np.abs(np.concatenate(blocks) - mono.logits).max() <= 1e-5


class TestPositionalEncodings:
    def test_alibi_zero_distance(self):
        for head in range(2):
            assert alibi_bias(5.0, 5.0, head, 2) == 0.0

    def test_alibi_negative_distance(self):
        with pytest.raises(NegativeDistance):
            alibi_bias(1.0, 2.0, 0, 2)

    def test_alibi_slopes_geometric(self):
        slopes = alibi_slopes(8)
        assert slopes[0] == pytest.approx(2 ** -1)
        assert slopes[-1] == pytest.approx(2 ** -8)
        ratios = slopes[1:] / slopes[:-1]
        assert np.allclose(ratios, ratios[0])

    def test_rotary_identity_at_zero(self):
        vec = np.arange(16, dtype=np.float64)
        assert np.allclose(rotary_rotate(vec, 0.0), vec)

    def test_rotary_fractional_matches_rotation_matrix(self):
        rng = np.random.default_rng(14)
        vec = rng.standard_normal(16)
        pos = 2.5
        out = rotary_rotate(vec, pos)
        for j in range(8):
            theta = 10000.0 ** (-2.0 * j / 16) * pos
            rot = np.array([[math.cos(theta), -math.sin(theta)],
                            [math.sin(theta), math.cos(theta)]])
            expect = rot @ vec[2 * j : 2 * j + 2]
            assert np.allclose(out[2 * j : 2 * j + 2], expect)


class TestVisibility:
    def test_keys_visible_iff_ancestor_or_predecessor(self, model):
        # the engine's attention context is exactly: all prefix tokens plus
        # within-segment predecessors (and self); future tokens get zero mass
        rng = np.random.default_rng(21)
        p = model.extend([], rand_tokens(rng, 3), unit_positions(0, 3)).cache
        res = model.extend([p], rand_tokens(rng, 4), unit_positions(3, 4),
                           want_attention=True)
        for layer in res.attention:  # (new, heads, keys)
            n_prefix = 3
            for i in range(4):
                visible = layer[i, :, : n_prefix + i + 1]
                future = layer[i, :, n_prefix + i + 1:]
                assert np.all(future == 0.0)
                assert np.allclose(visible.sum(axis=-1), 1.0, atol=1e-6)


class TestAttentionSummary:
    def test_matches_manual_aggregation(self, model):
        rng = np.random.default_rng(15)
        p = model.extend([], rand_tokens(rng, 4), unit_positions(0, 4)).cache
        d = model.extend([p], rand_tokens(rng, 6), unit_positions(4, 6)).cache
        toks = rand_tokens(rng, 3)
        pos = unit_positions(10, 3)
        res = model.extend([p, d], toks, pos, want_summary=True, want_attention=True)
        # manual: average over layers, heads and new tokens of summed mass
        stacked = np.stack(res.attention)  # (L, new, heads, keys)
        manual_p = stacked[..., :4].sum(-1).mean()
        manual_d = stacked[..., 4:10].sum(-1).mean()
        manual_self = stacked[..., 10:].sum(-1).mean()
        assert res.summary[0] == pytest.approx(manual_p, abs=1e-6)
        assert res.summary[1] == pytest.approx(manual_d, abs=1e-6)
        assert res.summary[2] == pytest.approx(manual_self, abs=1e-6)
        assert res.summary.sum() == pytest.approx(1.0, abs=1e-6)


class TestByteText:
    def test_round_trip(self):
        text = "hello, superposition"
        assert decode_tokens(encode_text(text)) == text

    def test_vocab_range(self):
        toks = encode_text("héllo ✓")
        assert all(0 <= t < 256 for t in toks)
