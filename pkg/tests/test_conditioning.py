import numpy as np
import pytest

from paintflow.autodiff import Tensor, backward, grad_check, mul, sum_
from paintflow.conditioning import (
    ContextEmbedding,
    FusionWeights,
    SemanticEncoder,
    TextEncoder,
    concat_conditions,
    fused_cross_attention,
    multi_head_attention,
    prepare_condition_channels,
    style_align_kv,
)
from paintflow.image import BinaryMask, RasterImage


@pytest.fixture(scope="module")
def encoder():
    return SemanticEncoder(ref_size=32, patch_size=4, embed_dim=64, heads=8, n_query=8, ctx_dim=64, seed=0)


def random_image(seed, n=32):
    rng = np.random.default_rng(seed)
    return RasterImage(rng.random((n, n, 3)))


def random_ctx(seed, n=8, d=64, source="reference"):
    rng = np.random.default_rng(seed)
    return ContextEmbedding(Tensor(rng.standard_normal((n, d)) * 0.5), source)


class TestConcatConditions:
    def test_five_channels_from_rgb_latent(self):
        rng = np.random.default_rng(0)
        z = Tensor(rng.standard_normal((3, 8, 8)))
        m = BinaryMask(np.ones((8, 8), dtype=np.uint8))
        s = BinaryMask(np.zeros((8, 8), dtype=np.uint8))
        out = concat_conditions(z, m, s)
        assert out.shape == (5, 8, 8)

    def test_latent_slice_bit_equal_and_zero_conditions(self):
        rng = np.random.default_rng(1)
        z = Tensor(rng.standard_normal((3, 6, 6)))
        zeros = BinaryMask(np.zeros((6, 6), dtype=np.uint8))
        out = concat_conditions(z, zeros, zeros)
        assert np.array_equal(out.data[:3], z.data)
        assert not out.data[3:].any()

    def test_spatial_mismatch_rejected(self):
        z = Tensor(np.zeros((3, 8, 8)))
        m = BinaryMask(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            concat_conditions(z, m, m)

    def test_prepare_condition_channels(self):
        rng = np.random.default_rng(2)
        m = BinaryMask(rng.random((16, 16)) > 0.5)
        s = BinaryMask(rng.random((16, 16)) > 0.8)
        mr, sr = prepare_condition_channels(m, s, 8, 8)
        assert mr.shape == (8, 8) and sr.shape == (8, 8)
        assert set(np.unique(mr.data)) <= {0, 1}
        assert set(np.unique(sr.data)) <= {0, 1}


class TestSemanticEncoder:
    def test_sequence_length_and_output_shape(self, encoder):
        img = random_image(0)
        seq = encoder.token_sequence(img)
        assert seq.shape == (65, 64)  # 32x32 with 4px patches -> 64 + class token
        ctx = encoder.encode(img)
        assert ctx.tokens.shape == (8, 64)

    def test_deterministic(self, encoder):
        img = random_image(1)
        a = encoder.encode(img).tokens.data
        b = encoder.encode(img).tokens.data
        assert np.array_equal(a, b)

    def test_identical_references_identical_embeddings(self, encoder):
        img = random_image(2)
        other = RasterImage(img.data.copy())
        assert np.array_equal(encoder.encode(img).tokens.data, encoder.encode(other).tokens.data)

    def test_patch_swap_changes_embedding(self, encoder):
        # position sensitivity: exchanging two distinct patches must move
        # the embedding by more than numerical noise
        img = random_image(3)
        arr = img.data.copy()
        a = arr[0:4, 0:4].copy()
        arr[0:4, 0:4] = arr[8:12, 8:12]
        arr[8:12, 8:12] = a
        swapped = RasterImage(arr)
        d = np.abs(encoder.encode(img).tokens.data - encoder.encode(swapped).tokens.data).max()
        assert d > 1e-6

    def test_small_reference_rejected(self, encoder):
        with pytest.raises(ValueError):
            encoder.encode(RasterImage(np.zeros((2, 2, 3))))

    def test_resizes_nonstandard_references(self, encoder):
        ctx = encoder.encode(random_image(4, n=48))
        assert ctx.tokens.shape == (8, 64)

    def test_brightness_shift_drift_is_bounded_smoke(self, encoder):
        img = random_image(5)
        brighter = RasterImage(np.clip(img.data + 0.05, 0, 1))
        d = np.abs(encoder.encode(img).tokens.data - encoder.encode(brighter).tokens.data)
        assert np.isfinite(d).all()
        assert d.max() < 10.0  # smoke-level bound only

    def test_gradients_reach_query_bank_and_mapper_only(self, encoder):
        for p in encoder.parameters().values():
            p.zero_grad()
        out = encoder.encode(random_image(6)).tokens
        backward(sum_(mul(out, out)))
        params = encoder.parameters()
        for name in ("cond/enc/query_bank", "cond/enc/mapper_w1", "cond/enc/mapper_b1",
                     "cond/enc/mapper_w2", "cond/enc/mapper_b2"):
            assert params[name].grad is not None, name
        for name in encoder.frozen_names():
            assert params[name].grad is None, name


class TestTextEncoder:
    def test_empty_prompt_gives_zero_tokens(self):
        enc = TextEncoder(ctx_dim=64, seed=0)
        ctx = enc.encode("")
        assert ctx.tokens.shape == (1, 64)
        assert not ctx.tokens.data.any()

    def test_same_prompt_same_embedding(self):
        enc = TextEncoder(seed=0)
        a = enc.encode("a red disk").tokens.data
        b = enc.encode("a red disk").tokens.data
        assert np.array_equal(a, b)

    def test_token_count_capped(self):
        enc = TextEncoder(max_tokens=4, seed=0)
        ctx = enc.encode("one two three four five six")
        assert ctx.tokens.shape[0] == 4


class TestFusion:
    def test_lambda_zero_equals_reference_only(self):
        w = FusionWeights(seed=0)
        w.lam.data = np.asarray(0.0)
        q = Tensor(np.random.default_rng(0).standard_normal((5, 32)))
        c_ref = random_ctx(1)
        c_t = random_ctx(2, n=4, source="text")
        with_text = fused_cross_attention(q, c_ref, c_t=c_t, weights=w)
        ref_only = fused_cross_attention(q, c_ref, weights=w)
        assert np.array_equal(with_text.data, ref_only.data)

    def test_zero_text_tokens_contribute_nothing(self):
        w = FusionWeights(seed=1, lambda_init=2.5)
        q = Tensor(np.random.default_rng(1).standard_normal((3, 32)))
        c_ref = random_ctx(3)
        c_t = ContextEmbedding(Tensor(np.zeros((4, 64))), "text")
        with_text = fused_cross_attention(q, c_ref, c_t=c_t, weights=w)
        ref_only = fused_cross_attention(q, c_ref, weights=w)
        assert np.array_equal(with_text.data, ref_only.data)

    def test_style_equal_to_ref_is_identity(self):
        w = FusionWeights(seed=2)
        q = Tensor(np.random.default_rng(2).standard_normal((4, 32)))
        c_ref = random_ctx(4)
        styled = fused_cross_attention(q, c_ref, c_style=c_ref, weights=w)
        plain = fused_cross_attention(q, c_ref, weights=w)
        assert np.allclose(styled.data, plain.data, atol=1e-5)

    def test_lambda_affinity(self):
        w = FusionWeights(seed=3)
        q = Tensor(np.random.default_rng(3).standard_normal((6, 32)))
        c_ref = random_ctx(5)
        c_t = random_ctx(6, n=5, source="text")

        def out(lam):
            w.lam.data = np.asarray(float(lam))
            return fused_cross_attention(q, c_ref, c_t=c_t, weights=w).data

        base = out(0.0)
        slope = out(1.0) - base
        for lam in (-1.0, 0.5, 3.0):
            resid = out(lam) - base - lam * slope
            assert np.abs(resid).max() < 1e-6

    def test_dimension_mismatch_rejected(self):
        w = FusionWeights(seed=4)
        q = Tensor(np.zeros((3, 16)))  # wrong attn dim
        with pytest.raises(ValueError):
            fused_cross_attention(q, random_ctx(0), weights=w)
        q = Tensor(np.zeros((3, 32)))
        bad_ctx = ContextEmbedding(Tensor(np.zeros((8, 32))), "reference")
        with pytest.raises(ValueError):
            fused_cross_attention(q, bad_ctx, weights=w)

    def test_gradients_hit_trainables_not_frozen(self):
        enc = SemanticEncoder(seed=0)
        txt = TextEncoder(seed=0)
        w = FusionWeights(seed=5, train_lambda=True)
        for p in {**enc.parameters(), **txt.parameters(), **w.parameters()}.values():
            p.zero_grad()
        q = Tensor(np.random.default_rng(5).standard_normal((4, 32)), requires_grad=True)
        c_ref = enc.encode(random_image(7))
        c_t = txt.encode("a violet square")
        out = fused_cross_attention(q, c_ref, c_t=c_t, weights=w)
        backward(sum_(mul(out, out)))
        assert q.grad is not None
        assert enc.query_bank.grad is not None
        assert enc.mapper_w1.grad is not None
        assert w.w_k_ref.grad is not None and w.w_v_ref.grad is not None
        assert w.lam.grad is not None
        assert enc.patch_proj.grad is None
        assert enc.cls_embed.grad is None
        assert enc.pos_embed.grad is None
        assert txt.table.grad is None
        assert w.w_k_txt.grad is None and w.w_v_txt.grad is None

    def test_grad_check_through_fusion(self):
        w = FusionWeights(seed=6, train_lambda=True)
        rng = np.random.default_rng(6)
        q = Tensor(rng.standard_normal((3, 32)), requires_grad=True)
        c_ref_t = Tensor(rng.standard_normal((4, 64)) * 0.5, requires_grad=True)
        c_sty_t = Tensor(rng.standard_normal((4, 64)) * 0.5)
        c_txt_t = Tensor(rng.standard_normal((3, 64)) * 0.5)

        def fn(q, c_ref, wk, wv, lam):
            w.w_k_ref = wk
            w.w_v_ref = wv
            w.lam = lam
            out = fused_cross_attention(
                q,
                ContextEmbedding(c_ref, "reference"),
                c_style=ContextEmbedding(c_sty_t, "style"),
                c_t=ContextEmbedding(c_txt_t, "text"),
                weights=w,
            )
            return sum_(mul(out, out))

        err = grad_check(fn, [q, c_ref_t, w.w_k_ref, w.w_v_ref, w.lam])
        assert err < 1e-5


class TestStyleAlign:
    def test_style_equal_ref_unchanged(self):
        w = FusionWeights(seed=0)
        c_ref = random_ctx(0)
        k_hat, v_hat = style_align_kv(c_ref, c_ref, w)
        from paintflow.autodiff import matmul

        assert np.allclose(k_hat.data, matmul(c_ref.tokens, w.w_k_ref).data, atol=1e-5)
        assert np.allclose(v_hat.data, matmul(c_ref.tokens, w.w_v_ref).data, atol=1e-5)

    def test_aligned_statistics_match_style(self):
        w = FusionWeights(seed=1)
        c_ref = random_ctx(1)
        c_sty = random_ctx(2, source="style")
        k_hat, v_hat = style_align_kv(c_ref, c_sty, w)
        k_sty = c_sty.tokens.data @ w.w_k_ref.data
        v_sty = c_sty.tokens.data @ w.w_v_ref.data
        assert np.allclose(k_hat.data.mean(axis=0), k_sty.mean(axis=0), atol=1e-5)
        assert np.allclose(k_hat.data.std(axis=0), k_sty.std(axis=0), atol=1e-5)
        assert np.allclose(v_hat.data.mean(axis=0), v_sty.mean(axis=0), atol=1e-5)
        assert np.allclose(v_hat.data.std(axis=0), v_sty.std(axis=0), atol=1e-5)

    def test_two_token_numeric_oracle(self):
        # direct numpy evaluation of the projection + renormalisation chain
        w = FusionWeights(ctx_dim=2, attn_dim=2, seed=3)
        c_ref = ContextEmbedding(Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])), "reference")
        c_sty = ContextEmbedding(Tensor(np.array([[2.0, 1.0], [0.0, -1.0]])), "style")
        k_hat, _ = style_align_kv(c_ref, c_sty, w)

        def np_adain(x, y, eps=1e-5):
            mx, sx = x.mean(0), x.std(0)
            my, sy = y.mean(0), y.std(0)
            return sy * (x - mx) / np.maximum(sx, eps) + my

        k_ref = c_ref.tokens.data @ w.w_k_ref.data
        k_sty = c_sty.tokens.data @ w.w_k_ref.data
        assert np.allclose(k_hat.data, np_adain(k_ref, k_sty), atol=1e-9)


class TestMultiHead:
    def test_indivisible_heads_rejected(self):
        q = Tensor(np.zeros((2, 6)))
        with pytest.raises(ValueError):
            multi_head_attention(q, q, q, 4)

    def test_single_head_equals_plain_attention(self):
        from paintflow.autodiff import attention

        rng = np.random.default_rng(0)
        q = Tensor(rng.standard_normal((3, 8)))
        k = Tensor(rng.standard_normal((5, 8)))
        v = Tensor(rng.standard_normal((5, 8)))
        assert np.allclose(
            multi_head_attention(q, k, v, 1).data, attention(q, k, v).data, atol=1e-12
        )
