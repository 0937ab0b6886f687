"""
Tests for multi-head attention, SRA and linear SRA.
"""

from dataclasses import replace

import numpy as np
import pytest

from attention.attention import SRA, AttentionWeights, LinearSRA, attention_core, mha, parse_attention_kind
from attention.sra import linear_sra_forward, sra_forward
from tensor.ops import mul, sum_all
from tensor.tensor import Tensor
from utils.config import MODEL_GRAD_TOL, ORACLE_TOL
from utils.errors import InvalidConfigError, InvalidShapeError
from verify.oracles import naive_attention, naive_linear_sra, naive_sra, random_attention_weights


def identity_weights(c):
    eye = Tensor(np.eye(c), dtype=np.float64)
    zero = Tensor(np.zeros(c), dtype=np.float64)
    return AttentionWeights(eye, zero, eye, zero, eye, zero, eye, zero)


def probe_sum(out, seed=5):
    r = np.random.default_rng(seed).normal(size=out.shape)
    return sum_all(mul(out, Tensor(r, dtype=out.dtype)))


@pytest.fixture
def tokens(rng):
    def make(n, t, c):
        return Tensor(rng.normal(size=(n, t, c)), dtype=np.float64)
    return make


# =============================================================================
# Attention kinds
# =============================================================================

class TestAttentionKind:

    def test_parse(self):
        assert parse_attention_kind("sra:8") == SRA(8)
        assert parse_attention_kind(" linear:7 ") == LinearSRA(7)
        assert SRA(2).describe() == "sra:2"
        assert LinearSRA().describe() == "linear:7"

    @pytest.mark.parametrize("text", ["sra", "sra:x", "conv:3", "sra:0", "linear:-1"])
    def test_parse_rejects(self, text):
        with pytest.raises(InvalidConfigError):
            parse_attention_kind(text)


# =============================================================================
# Multi-head attention
# =============================================================================

class TestMha:

    def test_single_key_returns_value(self, tokens):
        q, k, v = tokens(1, 1, 4), tokens(1, 1, 4), tokens(1, 1, 4)
        out = mha(q, k, v, 1, identity_weights(4))
        np.testing.assert_allclose(out.numpy(), v.numpy(), atol=1e-12)

    def test_identical_keys_give_uniform_weights(self, tokens):
        q = tokens(2, 5, 4)
        same = Tensor(np.broadcast_to(tokens(2, 1, 4).numpy(), (2, 6, 4)), dtype=np.float64)
        _, weights = mha(q, same, same, 2, identity_weights(4), return_weights=True)
        assert weights.shape == (2, 2, 5, 6)
        np.testing.assert_allclose(weights.numpy(), 1.0 / 6, atol=1e-6)

    def test_matches_naive_loops(self, rng, tokens):
        weights = random_attention_weights(rng, 4)
        x = tokens(1, 3, 4)
        fast = mha(x, x, x, 2, weights).numpy()[0]
        slow = naive_attention(x.numpy()[0], x.numpy()[0], 2, weights)
        np.testing.assert_allclose(fast, slow, atol=ORACLE_TOL)

    def test_heads_must_divide_channels(self, rng, tokens):
        x = tokens(1, 3, 4)
        with pytest.raises(InvalidConfigError):
            mha(x, x, x, 3, random_attention_weights(rng, 4))

    def test_key_value_permutation_invariance(self, rng, tokens):
        q, k, v = tokens(1, 4, 6), tokens(1, 7, 6), tokens(1, 7, 6)
        weights = random_attention_weights(rng, 6)
        order = rng.permutation(7)
        k_perm = Tensor(k.numpy()[:, order], dtype=np.float64)
        v_perm = Tensor(v.numpy()[:, order], dtype=np.float64)
        np.testing.assert_allclose(mha(q, k, v, 3, weights).numpy(),
                                   mha(q, k_perm, v_perm, 3, weights).numpy(), atol=1e-10)

    def test_core_rejects_mismatched_keys(self, tokens):
        with pytest.raises(InvalidShapeError):
            attention_core(tokens(1, 3, 4), tokens(1, 5, 4), tokens(1, 6, 4), 2)


# =============================================================================
# SRA
# =============================================================================

class TestSra:

    def test_ratio_one_is_plain_attention(self, rng, tokens):
        weights = random_attention_weights(rng, 8)
        x = tokens(2, 12, 8)
        out = sra_forward(x, 3, 4, 1, 2, weights)
        expected = mha(x, x, x, 2, weights)
        assert out.numpy().tobytes() == expected.numpy().tobytes()

    def test_reduced_token_counts(self, rng, tokens):
        x = tokens(2, 64, 4)
        out, attn = sra_forward(x, 8, 8, 2, 2, random_attention_weights(rng, 4, 2), return_weights=True)
        assert out.shape == (2, 64, 4)
        assert attn.shape == (2, 2, 64, 16)
        _, attn = sra_forward(x, 8, 8, 4, 2, random_attention_weights(rng, 4, 4), return_weights=True)
        assert attn.shape[-1] == 4

    def test_side_must_be_divisible(self, rng, tokens):
        with pytest.raises(InvalidShapeError):
            sra_forward(tokens(1, 30, 4), 5, 6, 2, 1, random_attention_weights(rng, 4, 2))

    def test_token_count_checked(self, rng, tokens):
        with pytest.raises(InvalidShapeError):
            sra_forward(tokens(1, 10, 4), 3, 3, 1, 1, random_attention_weights(rng, 4))

    @pytest.mark.parametrize("h, w, r, c, heads", [
        (4, 4, 2, 4, 1), (8, 8, 2, 8, 2), (6, 4, 2, 4, 2), (8, 8, 4, 8, 1), (3, 5, 1, 6, 2), (8, 4, 4, 2, 2),
    ])
    def test_matches_naive_reference(self, rng, tokens, h, w, r, c, heads):
        weights = random_attention_weights(rng, c, r if r > 1 else None)
        x = tokens(1, h * w, c)
        fast = sra_forward(x, h, w, r, heads, weights).numpy()
        np.testing.assert_allclose(fast, naive_sra(x.numpy(), h, w, r, heads, weights), atol=ORACLE_TOL)

    def test_weights_rows_sum_to_one(self, rng, tokens):
        _, attn = sra_forward(tokens(1, 16, 4), 4, 4, 2, 2, random_attention_weights(rng, 4, 2),
                              return_weights=True)
        np.testing.assert_allclose(attn.numpy().sum(axis=-1), 1.0, atol=1e-6)

    def test_gradients(self, rng, tokens, tape_vs_fd):
        weights = random_attention_weights(rng, 4, 2)
        x = tokens(1, 16, 4)
        assert tape_vs_fd(lambda t: probe_sum(sra_forward(t, 4, 4, 2, 2, weights)), x) < MODEL_GRAD_TOL
        for name in ("sr_weight", "norm_weight", "k_weight", "proj_bias"):
            value = getattr(weights, name)

            def loss(t, name=name):
                return probe_sum(sra_forward(x, 4, 4, 2, 2, replace(weights, **{name: t})))

            assert tape_vs_fd(loss, value) < MODEL_GRAD_TOL, name


# =============================================================================
# Linear SRA
# =============================================================================

class TestLinearSra:

    def test_identity_pool_size(self, rng, tokens):
        _, attn = linear_sra_forward(tokens(1, 49, 4), 7, 7, 7, 1, random_attention_weights(rng, 4, 1),
                                     return_weights=True)
        assert attn.shape == (1, 1, 49, 49)

    def test_stage_one_size(self, rng, tokens):
        out, attn = linear_sra_forward(tokens(1, 56 * 56, 4), 56, 56, 7, 1, random_attention_weights(rng, 4, 1),
                                       return_weights=True)
        assert out.shape == (1, 3136, 4)
        assert attn.shape == (1, 1, 3136, 49)

    @pytest.mark.parametrize("h, w", [(1, 1), (3, 11), (7, 7), (20, 9)])
    def test_key_count_independent_of_size(self, rng, tokens, h, w):
        _, attn = linear_sra_forward(tokens(1, h * w, 4), h, w, 7, 2, random_attention_weights(rng, 4, 1),
                                     return_weights=True)
        assert attn.shape == (1, 2, h * w, 49)

    def test_constant_input_gives_uniform_weights(self, rng):
        x = Tensor(np.tile(rng.normal(size=(1, 1, 4)), (1, 196, 1)), dtype=np.float64)
        out, attn = linear_sra_forward(x, 14, 14, 7, 2, random_attention_weights(rng, 4, 1),
                                       return_weights=True)
        np.testing.assert_allclose(attn.numpy(), 1.0 / 49, atol=1e-6)
        values = out.numpy()
        np.testing.assert_allclose(values, np.broadcast_to(values[:, :1], values.shape), atol=1e-10)

    @pytest.mark.parametrize("h, w, p, c, heads, refine", [
        (4, 4, 2, 4, 1, True), (5, 3, 2, 4, 2, True), (2, 2, 3, 6, 2, False),
        (8, 8, 7, 8, 2, True), (7, 6, 3, 2, 1, False), (1, 4, 2, 4, 2, True),
    ])
    def test_matches_naive_reference(self, rng, tokens, h, w, p, c, heads, refine):
        weights = random_attention_weights(rng, c, 1 if refine else None)
        x = tokens(2, h * w, c)
        fast = linear_sra_forward(x, h, w, p, heads, weights).numpy()
        np.testing.assert_allclose(fast, naive_linear_sra(x.numpy(), h, w, p, heads, weights), atol=ORACLE_TOL)

    def test_weights_rows_sum_to_one(self, rng, tokens):
        _, attn = linear_sra_forward(tokens(2, 30, 4), 5, 6, 3, 2, random_attention_weights(rng, 4, 1),
                                     return_weights=True)
        np.testing.assert_allclose(attn.numpy().sum(axis=-1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("refine", [True, False])
    def test_gradients(self, rng, tokens, tape_vs_fd, refine):
        weights = random_attention_weights(rng, 4, 1 if refine else None)
        x = tokens(1, 15, 4)
        assert tape_vs_fd(lambda t: probe_sum(linear_sra_forward(t, 3, 5, 2, 2, weights)), x) < MODEL_GRAD_TOL
        names = ("sr_weight", "norm_bias", "v_weight") if refine else ("q_weight", "v_bias")
        for name in names:
            value = getattr(weights, name)

            def loss(t, name=name):
                return probe_sum(linear_sra_forward(x, 3, 5, 2, 2, replace(weights, **{name: t})))

            assert tape_vs_fd(loss, value) < MODEL_GRAD_TOL, name
