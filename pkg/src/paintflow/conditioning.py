"""Conditioning machinery for the denoiser.

Three context sources feed cross-attention: a frozen seeded patch encoder
pooled by learnable queries (reference images), a frozen hashed-token
embedding table (text), and the reference encoder applied to style crops.
Spatial constraints (mask, sketch) bypass attention entirely and ride along
as extra input channels.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import (
    Tensor,
    adain,
    attention,
    concat,
    matmul,
    maximum_scalar,
    mean,
    mlp,
    mul,
    narrow,
    sqrt,
)
from .image import BinaryMask, RasterImage, resize

FROZEN_INIT_SCALE = 0.02


def seeded_tensor(
    rng: np.random.Generator,
    shape,
    scale: float = FROZEN_INIT_SCALE,
    requires_grad: bool = False,
) -> Tensor:
    """Gaussian init snapped onto the float32 grid so checkpoints round-trip
    bit-exactly."""
    return Tensor(ad.float32_snap(rng.standard_normal(shape) * scale), requires_grad=requires_grad)


@dataclass
class ContextEmbedding:
    tokens: Tensor  # (n_tokens, ctx_dim)
    source: str  # "reference" | "style" | "text" | "null"

    def __post_init__(self):
        if self.tokens.data.ndim != 2:
            raise ValueError(f"context tokens must be 2-d, got {self.tokens.shape}")
        if not np.isfinite(self.tokens.data).all():
            raise ValueError("context tokens must be finite")


def rms_normalize(tokens: Tensor, eps: float = 1e-5) -> Tensor:
    """Scale each token row to unit root-mean-square. Keeps context
    embeddings on a common magnitude so attention over them carries real
    weight in the denoiser's residual stream; zero rows stay zero."""
    ms = mean(mul(tokens, tokens), axis=1, keepdims=True)
    return ad.div(tokens, maximum_scalar(sqrt(ms), eps))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Split the feature axis into heads, attend per head, re-concatenate."""
    d = q.shape[1]
    if d % heads:
        raise ValueError(f"feature dim {d} not divisible by {heads} heads")
    dh = d // heads
    outs = [
        attention(
            narrow(q, 1, i * dh, dh),
            narrow(k, 1, i * dh, dh),
            narrow(v, 1, i * dh, dh),
        )
        for i in range(heads)
    ]
    return concat(outs, axis=1)


class SemanticEncoder:
    """Reference-image encoder: frozen patch projection with class and
    position embeddings, pooled into a fixed token budget by trainable
    queries, then mapped into the context dimension by a two-layer MLP.

    Only the query bank and the mapper train; everything else stays frozen.
    """

    def __init__(
        self,
        ref_size: int = 32,
        patch_size: int = 4,
        channels: int = 3,
        embed_dim: int = 64,
        heads: int = 8,
        n_query: int = 8,
        ctx_dim: int = 64,
        seed: int = 0,
    ):
        if ref_size % patch_size:
            raise ValueError("ref_size must be a multiple of patch_size")
        if embed_dim % heads:
            raise ValueError("embed_dim must be divisible by heads")
        self.ref_size = ref_size
        self.patch_size = patch_size
        self.channels = channels
        self.embed_dim = embed_dim
        self.heads = heads
        self.n_query = n_query
        self.ctx_dim = ctx_dim
        self.n_patches = (ref_size // patch_size) ** 2

        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 0xC0ED]))
        p2c = patch_size * patch_size * channels
        self.patch_proj = seeded_tensor(rng, (p2c, embed_dim))
        self.cls_embed = seeded_tensor(rng, (1, embed_dim))
        self.pos_embed = seeded_tensor(rng, (self.n_patches + 1, embed_dim))
        self.query_bank = seeded_tensor(rng, (n_query, embed_dim), requires_grad=True)
        self.mapper_w1 = seeded_tensor(
            rng, (embed_dim, embed_dim), scale=1.0 / np.sqrt(embed_dim), requires_grad=True
        )
        self.mapper_b1 = Tensor(np.zeros(embed_dim), requires_grad=True)
        self.mapper_w2 = seeded_tensor(
            rng, (embed_dim, ctx_dim), scale=1.0 / np.sqrt(embed_dim), requires_grad=True
        )
        self.mapper_b2 = Tensor(np.zeros(ctx_dim), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "cond/enc/patch_proj": self.patch_proj,
            "cond/enc/cls_embed": self.cls_embed,
            "cond/enc/pos_embed": self.pos_embed,
            "cond/enc/query_bank": self.query_bank,
            "cond/enc/mapper_w1": self.mapper_w1,
            "cond/enc/mapper_b1": self.mapper_b1,
            "cond/enc/mapper_w2": self.mapper_w2,
            "cond/enc/mapper_b2": self.mapper_b2,
        }

    def frozen_names(self) -> set[str]:
        return {"cond/enc/patch_proj", "cond/enc/cls_embed", "cond/enc/pos_embed"}

    def _patchify(self, image: RasterImage) -> np.ndarray:
        if image.height < self.patch_size or image.width < self.patch_size:
            raise ValueError(
                f"reference {image.shape} smaller than one {self.patch_size}px patch"
            )
        if image.shape != (self.ref_size, self.ref_size) or image.channels != self.channels:
            img = image
            if image.channels != self.channels:
                arr = np.repeat(image.data, self.channels, axis=2)[:, :, : self.channels]
                img = RasterImage(arr)
            image = resize(img, self.ref_size, self.ref_size, "bilinear")
        p = self.patch_size
        g = self.ref_size // p
        arr = image.data.reshape(g, p, g, p, self.channels)
        return arr.transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * self.channels)

    def token_sequence(self, image: RasterImage) -> Tensor:
        """Class token + projected patches + position embedding: the
        (N+1, D) sequence fed to the pooling attention."""
        patches = Tensor(self._patchify(image))
        emb = matmul(patches, self.patch_proj)
        seq = concat([self.cls_embed, emb], axis=0)
        return seq + self.pos_embed

    def encode(self, image: RasterImage, source: str = "reference") -> ContextEmbedding:
        seq = self.token_sequence(image)
        pooled = multi_head_attention(self.query_bank, seq, seq, self.heads)
        tokens = mlp(pooled, self.mapper_w1, self.mapper_b1, self.mapper_w2, self.mapper_b2)
        return ContextEmbedding(tokens=rms_normalize(tokens), source=source)


class TextEncoder:
    """Stand-in prompt encoder: whitespace tokens hashed into a frozen seeded
    embedding table. Interface-compatible with a real text encoder; the
    semantics of the embedding are not meaningful."""

    def __init__(self, ctx_dim: int = 64, vocab_size: int = 256, max_tokens: int = 8, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 0x7E87]))
        self.ctx_dim = ctx_dim
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens
        # unit-scale rows keep the text branch on the same footing as the
        # normalized reference tokens
        self.table = seeded_tensor(rng, (vocab_size, ctx_dim), scale=1.0)

    def parameters(self) -> dict[str, Tensor]:
        return {"cond/text/table": self.table}

    def frozen_names(self) -> set[str]:
        return {"cond/text/table"}

    def token_ids(self, prompt: str) -> list[int]:
        toks = prompt.lower().split()[: self.max_tokens]
        return [zlib.crc32(t.encode("utf-8")) % self.vocab_size for t in toks]

    def encode(self, prompt: str) -> ContextEmbedding:
        ids = self.token_ids(prompt)
        if not ids:
            rows = np.zeros((1, self.ctx_dim))
        else:
            rows = self.table.data[ids]
        return ContextEmbedding(tokens=Tensor(rows), source="text")


class FusionWeights:
    """Key/value projections for reference context (trainable) and text
    context (frozen), plus the learnable text-mixing coefficient."""

    def __init__(
        self,
        ctx_dim: int = 64,
        attn_dim: int = 32,
        seed: int = 0,
        lambda_init: float = 1.0,
        train_lambda: bool = False,
    ):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 0xF05E]))
        scale = 1.0 / np.sqrt(ctx_dim)
        self.ctx_dim = ctx_dim
        self.attn_dim = attn_dim
        self.w_k_ref = seeded_tensor(rng, (ctx_dim, attn_dim), scale=scale, requires_grad=True)
        self.w_v_ref = seeded_tensor(rng, (ctx_dim, attn_dim), scale=scale, requires_grad=True)
        self.w_k_txt = seeded_tensor(rng, (ctx_dim, attn_dim), scale=scale)
        self.w_v_txt = seeded_tensor(rng, (ctx_dim, attn_dim), scale=scale)
        self.lam = Tensor(np.asarray(float(lambda_init)), requires_grad=train_lambda)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "cond/fusion/w_k_ref": self.w_k_ref,
            "cond/fusion/w_v_ref": self.w_v_ref,
            "cond/fusion/w_k_txt": self.w_k_txt,
            "cond/fusion/w_v_txt": self.w_v_txt,
            "cond/fusion/lambda": self.lam,
        }

    def frozen_names(self) -> set[str]:
        return {"cond/fusion/w_k_txt", "cond/fusion/w_v_txt"}


def style_align_kv(
    c_ref: ContextEmbedding, c_style: ContextEmbedding, weights: FusionWeights
) -> tuple[Tensor, Tensor]:
    """Project both contexts with the shared reference weights, then carry
    the style statistics onto the reference keys/values."""
    if c_ref.tokens.shape[1] != c_style.tokens.shape[1]:
        raise ValueError("reference and style contexts disagree on ctx_dim")
    k_ref = matmul(c_ref.tokens, weights.w_k_ref)
    v_ref = matmul(c_ref.tokens, weights.w_v_ref)
    k_sty = matmul(c_style.tokens, weights.w_k_ref)
    v_sty = matmul(c_style.tokens, weights.w_v_ref)
    return adain(k_ref, k_sty), adain(v_ref, v_sty)


def fused_cross_attention(
    q: Tensor,
    c_ref: ContextEmbedding,
    c_style: ContextEmbedding | None = None,
    c_t: ContextEmbedding | None = None,
    weights: FusionWeights | None = None,
) -> Tensor:
    """Reference-conditioned attention, optionally style-aligned, plus a
    lambda-weighted text branch. Affine in lambda by construction."""
    if weights is None:
        raise ValueError("fusion weights are required")
    if q.data.ndim != 2 or q.shape[1] != weights.attn_dim:
        raise ValueError(f"query must be (n, {weights.attn_dim}), got {q.shape}")
    if c_ref.tokens.shape[1] != weights.ctx_dim:
        raise ValueError(
            f"context dim {c_ref.tokens.shape[1]} != fusion ctx_dim {weights.ctx_dim}"
        )
    if c_style is not None:
        k_hat, v_hat = style_align_kv(c_ref, c_style, weights)
    else:
        k_hat = matmul(c_ref.tokens, weights.w_k_ref)
        v_hat = matmul(c_ref.tokens, weights.w_v_ref)
    out = attention(q, k_hat, v_hat)
    if c_t is not None:
        k_t = matmul(c_t.tokens, weights.w_k_txt)
        v_t = matmul(c_t.tokens, weights.w_v_txt)
        out = out + weights.lam * attention(q, k_t, v_t)
    return out


def prepare_condition_channels(
    mask: BinaryMask, sketch: BinaryMask, h: int, w: int
) -> tuple[BinaryMask, BinaryMask]:
    """Resize spatial conditions onto the latent grid: nearest for the mask,
    bilinear-then-threshold for the sketch (the bilinear mask path already
    thresholds at 0.5)."""
    return resize(mask, h, w, "nearest"), resize(sketch, h, w, "bilinear")


def concat_conditions(z_t: Tensor, mask: BinaryMask, sketch: BinaryMask) -> Tensor:
    """Stack [z_t; mask; sketch] along the channel axis. The mask and sketch
    must already live on z_t's spatial grid."""
    if z_t.data.ndim != 3:
        raise ValueError(f"latent must be (C, h, w), got {z_t.shape}")
    _, h, w = z_t.shape
    if mask.shape != (h, w) or sketch.shape != (h, w):
        raise ValueError(
            f"conditions {mask.shape}/{sketch.shape} do not match latent grid {(h, w)}"
        )
    m = Tensor(mask.data.astype(np.float64).reshape(1, h, w))
    s = Tensor(sketch.data.astype(np.float64).reshape(1, h, w))
    return concat([z_t, m, s], axis=0)
