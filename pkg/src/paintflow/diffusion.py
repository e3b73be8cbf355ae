"""Toy-scale conditional denoising diffusion in pixel space.

The "latent" is the RGB image scaled to [-1, 1]; with the mask and sketch
channels the denoiser input is 5 channels. A small encoder-decoder with two
downsampling stages carries self-attention and reference cross-attention in
the bottleneck. Sampling is deterministic DDIM with per-step known-region
compositing so unmasked content survives exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import (
    Tensor,
    backward,
    concat,
    conv2d,
    group_norm,
    linear,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    silu,
    sub,
    transpose,
    upsample2x,
)
from .conditioning import (
    ContextEmbedding,
    FusionWeights,
    SemanticEncoder,
    TextEncoder,
    concat_conditions,
    fused_cross_attention,
    prepare_condition_channels,
    seeded_tensor,
)
from .dataset import Manifest, TrainingPair, load_pair, reference_crop
from .image import BinaryMask, RasterImage, composite


class TrainingError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


# ---------------------------------------------------------------------------
# schedule


class NoiseSchedule:
    """Linear-beta schedule with cumulative signal fractions."""

    def __init__(self, timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
        if timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        betas = np.linspace(beta_start, beta_end, timesteps)
        if betas.min() <= 0 or betas.max() >= 1:
            raise ValueError("betas must lie strictly inside (0, 1)")
        abar = np.cumprod(1.0 - betas)
        if not np.all(np.diff(abar) < 0):
            raise ValueError("cumulative signal fraction must strictly decrease")
        self.timesteps = timesteps
        self.betas = betas
        self.alphas_cumprod = abar

    def alpha_bar(self, t: int) -> float:
        """Signal fraction at step t; t is 1-based, t=0 means the clean image."""
        if t == 0:
            return 1.0
        if not (1 <= t <= self.timesteps):
            raise ValueError(f"t must be in [1, {self.timesteps}], got {t}")
        return float(self.alphas_cumprod[t - 1])


def add_noise(z0: Tensor, t: int, eps: Tensor, schedule: NoiseSchedule) -> Tensor:
    """sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps."""
    z0, eps = ad.ensure_tensor(z0), ad.ensure_tensor(eps)
    if z0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} must match signal shape {z0.shape}")
    if not (1 <= t <= schedule.timesteps):
        raise ValueError(f"t must be in [1, {schedule.timesteps}], got {t}")
    ab = schedule.alpha_bar(t)
    return z0 * float(np.sqrt(ab)) + eps * float(np.sqrt(1.0 - ab))


def cfg_combine(eps_cond: Tensor, eps_uncond: Tensor, w: float) -> Tensor:
    """Classifier-free guidance: w * conditional + (1 - w) * unconditional."""
    eps_cond, eps_uncond = ad.ensure_tensor(eps_cond), ad.ensure_tensor(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("guidance branches must share a shape")
    return eps_cond * float(w) + eps_uncond * float(1.0 - w)


# ---------------------------------------------------------------------------
# model config


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 24
    latent_channels: int = 3
    widths: tuple[int, int] = (16, 32)
    groups: int = 4
    t_embed_dim: int = 32
    t_hidden_dim: int = 64
    ref_size: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    encoder_heads: int = 8
    n_query: int = 8
    ctx_dim: int = 64
    vocab_size: int = 256
    max_tokens: int = 8
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    train_text_branch: bool = False
    seed: int = 0

    @property
    def in_channels(self) -> int:
        return self.latent_channels + 2  # mask + sketch ride along as channels

    @property
    def attn_dim(self) -> int:
        return self.widths[1]

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return json.dumps(d, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


def sinusoidal_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


# ---------------------------------------------------------------------------
# denoiser


class Denoiser:
    """Two-stage encoder-decoder with bottleneck self-attention and fused
    cross-attention to the conditioning contexts."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        c0, c1 = cfg.widths
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[cfg.seed, 0xD1FF]))

        def conv_w(cout, cin, k=3):
            scale = np.sqrt(2.0 / (cin * k * k))
            return seeded_tensor(rng, (cout, cin, k, k), scale=scale, requires_grad=True)

        def lin_w(cin, cout):
            return seeded_tensor(rng, (cin, cout), scale=1.0 / np.sqrt(cin), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def gn_params(c):
            return Tensor(np.ones(c), requires_grad=True), zeros(c)

        # convs followed directly by a group norm run bias-free: the norm
        # would cancel a per-channel shift and starve the bias of gradient
        p: dict[str, Tensor] = {}
        p["conv_in_w"] = conv_w(c0, cfg.in_channels)
        p["conv_in_b"] = zeros(c0)
        p["block0_w"] = conv_w(c0, c0)
        p["gn0_g"], p["gn0_b"] = gn_params(c0)
        p["down1_w"] = conv_w(c1, c0)
        p["down1_b"] = zeros(c1)
        p["block1_w"] = conv_w(c1, c1)
        p["gn1_g"], p["gn1_b"] = gn_params(c1)
        p["down2_w"] = conv_w(c1, c1)
        p["down2_b"] = zeros(c1)

        p["gn_attn_g"], p["gn_attn_b"] = gn_params(c1)
        p["attn_wq"] = lin_w(c1, c1)
        p["attn_wk"] = lin_w(c1, c1)
        p["attn_wv"] = lin_w(c1, c1)
        p["attn_wo"] = lin_w(c1, c1)
        p["gn_cross_g"], p["gn_cross_b"] = gn_params(c1)
        p["cross_wq"] = lin_w(c1, cfg.attn_dim)
        p["cross_wo"] = lin_w(cfg.attn_dim, c1)
        p["mid_w"] = conv_w(c1, c1)
        p["gn_mid_g"], p["gn_mid_b"] = gn_params(c1)

        p["up1_w"] = conv_w(c0, c1 + c1)
        p["gn_up1_g"], p["gn_up1_b"] = gn_params(c0)
        p["up2_w"] = conv_w(c0, c0 + c0)
        p["gn_up2_g"], p["gn_up2_b"] = gn_params(c0)
        p["conv_out_w"] = conv_w(cfg.latent_channels, c0)
        p["conv_out_b"] = zeros(cfg.latent_channels)

        p["t_w1"] = lin_w(cfg.t_embed_dim, cfg.t_hidden_dim)
        p["t_b1"] = zeros(cfg.t_hidden_dim)
        p["t_w2"] = lin_w(cfg.t_hidden_dim, cfg.t_hidden_dim)
        p["t_b2"] = zeros(cfg.t_hidden_dim)
        for name, c in (("t0", c0), ("t1", c1), ("tm", c1), ("tu1", c0), ("tu2", c0)):
            p[f"tproj_{name}_w"] = lin_w(cfg.t_hidden_dim, c)
            p[f"tproj_{name}_b"] = zeros(c)

        self.p = p
        self.fusion = FusionWeights(
            ctx_dim=cfg.ctx_dim,
            attn_dim=cfg.attn_dim,
            seed=cfg.seed,
            train_lambda=cfg.train_text_branch,
        )

    def parameters(self) -> dict[str, Tensor]:
        out = {f"unet/{k}": v for k, v in self.p.items()}
        out.update(self.fusion.parameters())
        return out

    def _t_features(self, t: int) -> Tensor:
        emb = Tensor(sinusoidal_embedding(t, self.cfg.t_embed_dim).reshape(1, -1))
        h = silu(linear(emb, self.p["t_w1"], self.p["t_b1"]))
        return linear(h, self.p["t_w2"], self.p["t_b2"])

    def _inject_t(self, h: Tensor, t_feat: Tensor, tag: str) -> Tensor:
        """Per-channel time shift, applied after normalisation so the norm
        cannot cancel it."""
        proj = linear(t_feat, self.p[f"tproj_{tag}_w"], self.p[f"tproj_{tag}_b"])
        return h + reshape(proj, (h.shape[0], 1, 1))

    def forward(
        self,
        z: Tensor,
        t: int,
        ctx: ContextEmbedding,
        c_style: ContextEmbedding | None = None,
        c_t: ContextEmbedding | None = None,
    ) -> Tensor:
        cfg = self.cfg
        if z.data.ndim != 3 or z.shape[0] != cfg.in_channels:
            raise ValueError(f"denoiser expects ({cfg.in_channels}, h, w) input, got {z.shape}")
        _, h, w = z.shape
        if h % 4 or w % 4:
            raise ValueError(f"spatial size must be a multiple of 4, got {h}x{w}")
        p = self.p
        t_feat = self._t_features(t)

        h0 = silu(conv2d(z, p["conv_in_w"], p["conv_in_b"], padding=1))
        h0 = group_norm(conv2d(h0, p["block0_w"], padding=1), cfg.groups, p["gn0_g"], p["gn0_b"])
        h0 = silu(self._inject_t(h0, t_feat, "t0"))

        h1 = silu(conv2d(h0, p["down1_w"], p["down1_b"], stride=2, padding=1))
        h1 = group_norm(conv2d(h1, p["block1_w"], padding=1), cfg.groups, p["gn1_g"], p["gn1_b"])
        h1 = silu(self._inject_t(h1, t_feat, "t1"))

        h2 = silu(conv2d(h1, p["down2_w"], p["down2_b"], stride=2, padding=1))

        # bottleneck: self-attention over spatial tokens
        c1 = cfg.widths[1]
        hb, wb = h2.shape[1], h2.shape[2]
        tokens = transpose(reshape(group_norm(h2, cfg.groups, p["gn_attn_g"], p["gn_attn_b"]),
                                   (c1, hb * wb)))
        q = matmul(tokens, p["attn_wq"])
        k = matmul(tokens, p["attn_wk"])
        v = matmul(tokens, p["attn_wv"])
        attn_out = matmul(ad.attention(q, k, v), p["attn_wo"])
        h2 = h2 + reshape(transpose(attn_out), (c1, hb, wb))

        # bottleneck: cross-attention into the conditioning contexts
        tokens = transpose(reshape(group_norm(h2, cfg.groups, p["gn_cross_g"], p["gn_cross_b"]),
                                   (c1, hb * wb)))
        qx = matmul(tokens, p["cross_wq"])
        cross = fused_cross_attention(qx, ctx, c_style=c_style, c_t=c_t, weights=self.fusion)
        h2 = h2 + reshape(transpose(matmul(cross, p["cross_wo"])), (c1, hb, wb))

        hm = group_norm(conv2d(h2, p["mid_w"], padding=1), cfg.groups, p["gn_mid_g"], p["gn_mid_b"])
        hm = silu(self._inject_t(hm, t_feat, "tm"))

        u1 = concat([upsample2x(hm), h1], axis=0)
        u1 = group_norm(conv2d(u1, p["up1_w"], padding=1), cfg.groups, p["gn_up1_g"], p["gn_up1_b"])
        u1 = silu(self._inject_t(u1, t_feat, "tu1"))

        u2 = concat([upsample2x(u1), h0], axis=0)
        u2 = group_norm(conv2d(u2, p["up2_w"], padding=1), cfg.groups, p["gn_up2_g"], p["gn_up2_b"])
        u2 = silu(self._inject_t(u2, t_feat, "tu2"))

        return conv2d(u2, p["conv_out_w"], p["conv_out_b"], padding=1)


# ---------------------------------------------------------------------------
# full model bundle


class DiffusionInpainter:
    """Denoiser plus its conditioning encoders, schedule, and null context."""

    def __init__(self, cfg: ModelConfig | None = None):
        self.cfg = cfg or ModelConfig()
        c = self.cfg
        self.schedule = NoiseSchedule(c.timesteps, c.beta_start, c.beta_end)
        self.encoder = SemanticEncoder(
            ref_size=c.ref_size,
            patch_size=c.patch_size,
            channels=c.latent_channels,
            embed_dim=c.embed_dim,
            heads=c.encoder_heads,
            n_query=c.n_query,
            ctx_dim=c.ctx_dim,
            seed=c.seed,
        )
        self.text_encoder = TextEncoder(
            ctx_dim=c.ctx_dim, vocab_size=c.vocab_size, max_tokens=c.max_tokens, seed=c.seed
        )
        self.denoiser = Denoiser(c)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[c.seed, 0x0]))
        # unit scale to match the normalized reference context it stands in for
        self.null_ctx = seeded_tensor(rng, (c.n_query, c.ctx_dim), scale=1.0, requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.encoder.parameters())
        out.update(self.text_encoder.parameters())
        out.update(self.denoiser.parameters())
        out["cond/null_ctx"] = self.null_ctx
        return out

    def frozen_names(self) -> set[str]:
        return (
            self.encoder.frozen_names()
            | self.text_encoder.frozen_names()
            | self.denoiser.fusion.frozen_names()
            | ({"cond/fusion/lambda"} if not self.cfg.train_text_branch else set())
        )

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if v.requires_grad}

    def null_context(self) -> ContextEmbedding:
        return ContextEmbedding(self.null_ctx, "null")

    def predict_eps(self, z: Tensor, t: int, ctx: ContextEmbedding,
                    c_style: ContextEmbedding | None = None,
                    c_t: ContextEmbedding | None = None) -> Tensor:
        return self.denoiser.forward(z, t, ctx, c_style=c_style, c_t=c_t)

    # -- persistence: tensor container plus a config sidecar

    def save(self, path) -> None:
        path = Path(path)
        ad.save_checkpoint(path, self.parameters())
        Path(str(path) + ".config.json").write_text(self.cfg.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DiffusionInpainter":
        path = Path(path)
        cfg = ModelConfig.from_json(Path(str(path) + ".config.json").read_text(encoding="utf-8"))
        model = cls(cfg)
        loaded = ad.load_checkpoint(path)
        params = model.parameters()
        missing = set(params) - set(loaded)
        if missing:
            raise ValueError(f"checkpoint missing tensors: {sorted(missing)[:4]}")
        for name, tensor in params.items():
            arr = loaded[name]
            if arr.shape != tensor.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {tensor.data.shape}")
            tensor.data = arr
        return model


def latent_from_image(img: RasterImage) -> np.ndarray:
    """RGB [0,1] HWC -> [-1,1] CHW."""
    return (img.data * 2.0 - 1.0).transpose(2, 0, 1)


def image_from_latent(lat: np.ndarray) -> RasterImage:
    arr = ((lat + 1.0) / 2.0).transpose(1, 2, 0)
    return RasterImage(np.clip(arr, 0.0, 1.0))


# ---------------------------------------------------------------------------
# loss


def diffusion_loss(
    model: DiffusionInpainter,
    pair: TrainingPair,
    c_ref: ContextEmbedding,
    t: int,
    eps: Tensor,
    schedule: NoiseSchedule | None = None,
) -> Tensor:
    """Mean squared error between the drawn noise and the denoiser's
    prediction on the noised, condition-stacked target."""
    schedule = schedule or model.schedule
    z0 = Tensor(latent_from_image(pair.target))
    z_t = add_noise(z0, t, eps, schedule)
    h, w = pair.target.shape
    mask_r, sketch_r = prepare_condition_channels(pair.mask, pair.sketch, h, w)
    z_in = concat_conditions(z_t, mask_r, sketch_r)
    pred = model.predict_eps(z_in, t, c_ref)
    diff = sub(pred, eps)
    loss = mean(mul(diff, diff))
    if not np.isfinite(loss.data).all():
        raise TrainingError("diffusion loss is not finite")
    return loss


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    guidance_weight: float = 3.0
    eta: float = 0.0
    seed: int = 0
    composite_known: bool = True
    style_align: bool = True
    use_text: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.guidance_weight < 0:
            raise ValueError("guidance weight must be >= 0")
        if self.eta != 0.0:
            raise ValueError("only the deterministic eta=0 sampler is supported")


def _timestep_subsequence(timesteps: int, steps: int) -> list[int]:
    taus = np.unique(np.round(np.linspace(timesteps, 1, steps)).astype(int))
    return list(taus[::-1])


def ddim_sample(
    model: DiffusionInpainter,
    mask: BinaryMask,
    sketch: BinaryMask,
    c_ref: ContextEmbedding,
    c_style: ContextEmbedding | None,
    c_t: ContextEmbedding | None,
    source: RasterImage,
    cfg: SamplerConfig | None = None,
) -> RasterImage:
    """Deterministic DDIM inpainting. The known region (mask == 0) is
    overwritten with the correspondingly-noised source at every step and
    composited exactly at the end, so pixels outside the mask equal the
    source bit-for-bit."""
    cfg = cfg or SamplerConfig()
    schedule = model.schedule
    if cfg.steps > schedule.timesteps:
        raise ValueError(f"steps {cfg.steps} exceed schedule length {schedule.timesteps}")
    if mask.shape != source.shape or sketch.shape != source.shape:
        raise ValueError("mask/sketch must match the source shape")

    rng = np.random.default_rng(cfg.seed)
    src_latent = latent_from_image(source)
    x = rng.standard_normal(src_latent.shape)
    m = mask.data.astype(np.float64)[None, :, :]
    taus = _timestep_subsequence(schedule.timesteps, cfg.steps)

    with no_grad():
        for i, t in enumerate(taus):
            t_prev = taus[i + 1] if i + 1 < len(taus) else 0
            z_in = concat_conditions(Tensor(x), mask, sketch)
            eps_c = model.predict_eps(z_in, t, c_ref, c_style=c_style, c_t=c_t).data
            if cfg.guidance_weight != 1.0:
                eps_u = model.predict_eps(z_in, t, model.null_context()).data
                eps = cfg.guidance_weight * eps_c + (1.0 - cfg.guidance_weight) * eps_u
            else:
                eps = eps_c
            ab_t = schedule.alpha_bar(t)
            ab_p = schedule.alpha_bar(t_prev)
            x0 = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
            x0 = np.clip(x0, -1.0, 1.0)
            x = np.sqrt(ab_p) * x0 + np.sqrt(1.0 - ab_p) * eps
            if cfg.composite_known and t_prev > 0:
                noise = rng.standard_normal(x.shape)
                known = np.sqrt(ab_p) * src_latent + np.sqrt(1.0 - ab_p) * noise
                x = m * x + (1.0 - m) * known

    out = image_from_latent(x)
    if cfg.composite_known:
        out = composite(out, source, mask)
    return out


def style_crop(source: RasterImage, seed: int) -> RasterImage:
    """Seeded random crop of the source covering 25-75% of its area, used as
    the style condition at inference."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 0x57]))
    h, w = source.shape
    frac = rng.uniform(0.25, 0.75)
    ch = max(1, int(round(h * np.sqrt(frac))))
    cw = max(1, int(round(w * np.sqrt(frac))))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    return RasterImage(source.data[y0 : y0 + ch, x0 : x0 + cw])


def sample_edit(
    model: DiffusionInpainter,
    source: RasterImage,
    mask: BinaryMask,
    sketch: BinaryMask,
    reference: RasterImage | None = None,
    prompt: str = "",
    cfg: SamplerConfig | None = None,
) -> RasterImage:
    """Encode the edit conditions and run the sampler: reference context (or
    the learned null context when absent), style context from a seeded source
    crop, text context when a prompt is given."""
    cfg = cfg or SamplerConfig()
    with no_grad():
        c_ref = (
            model.encoder.encode(reference)
            if reference is not None
            else model.null_context()
        )
        c_style = (
            model.encoder.encode(style_crop(source, cfg.seed), source="style")
            if cfg.style_align
            else None
        )
        c_t = model.text_encoder.encode(prompt) if (cfg.use_text and prompt) else None
    return ddim_sample(model, mask, sketch, c_ref, c_style, c_t, source, cfg)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 0.02
    cfg_dropout: float = 0.1
    seed: int = 0
    log_every: int = 200
    smooth_window: int = 100


def train_step(model: DiffusionInpainter, samples: list[tuple[TrainingPair, ContextEmbedding, int, Tensor]],
               lr: float) -> float:
    """One SGD update over a micro-batch of (pair, context, t, eps) samples.
    Returns the mean loss. Parameters land on the float32 grid after the
    update so checkpoints round-trip exactly."""
    trainables = model.trainable_parameters()
    for p in trainables.values():
        p.zero_grad()
    total = 0.0
    for pair, ctx, t, eps in samples:
        loss = diffusion_loss(model, pair, ctx, t, eps)
        backward(mul(loss, 1.0 / len(samples)))
        total += float(loss.data)
    for p in trainables.values():
        if p.grad is not None:
            p.data = ad.float32_snap(p.data - lr * p.grad)
    return total / len(samples)


@dataclass
class TrainResult:
    losses: list[float]
    logged: list[tuple[int, float]]  # (step, smoothed loss)

    def smoothed(self, upto: int, window: int) -> float:
        lo = max(0, upto - window)
        chunk = self.losses[lo:upto]
        return float(np.mean(chunk)) if chunk else float("nan")


def train_toy(
    dataset_dir,
    config: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    manifest: Manifest | None = None,
    checkpoint_path=None,
) -> tuple[DiffusionInpainter, TrainResult]:
    """Optimise the denoising objective over the dataset pairs with plain
    seeded SGD; deterministic for a fixed seed and data order."""
    config = config or TrainConfig()
    dataset_dir = Path(dataset_dir)
    manifest = manifest or Manifest.read(dataset_dir / "manifest.txt")
    if not manifest.entries:
        raise ValueError("manifest is empty")
    pairs = [load_pair(dataset_dir / e.path) for e in manifest.entries]
    refs = [reference_crop(p) for p in pairs]

    model = DiffusionInpainter(model_cfg)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(losses=[], logged=[])

    for step in range(1, config.steps + 1):
        i = int(rng.integers(0, len(pairs)))
        t = int(rng.integers(1, model.schedule.timesteps + 1))
        eps = Tensor(rng.standard_normal((model.cfg.latent_channels,) + pairs[i].target.shape))
        if rng.random() < config.cfg_dropout:
            ctx = model.null_context()
        else:
            ctx = model.encoder.encode(refs[i])
        loss = train_step(model, [(pairs[i], ctx, t, eps)], config.learning_rate)
        result.losses.append(loss)
        if step % config.log_every == 0:
            result.logged.append((step, result.smoothed(step, config.smooth_window)))

    if checkpoint_path is not None:
        model.save(checkpoint_path)
        hist = {"logged": result.logged, "final_loss": result.losses[-1]}
        Path(str(checkpoint_path) + ".history.json").write_text(
            json.dumps(hist), encoding="utf-8"
        )
    return model, result
