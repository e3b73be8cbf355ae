"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the criterion lines.
The toy-training fixtures are session-scoped; the whole suite stays well
inside its runtime budgets on one desktop core.
"""

import time

import numpy as np
import pytest

from paintflow import autodiff as ad
from paintflow.autodiff import Tensor, adain, attention, backward, grad_check, mul, softmax, sum_
from paintflow.conditioning import ContextEmbedding, FusionWeights, fused_cross_attention
from paintflow.dataset import (
    BACKGROUND,
    FOREGROUND,
    Manifest,
    ManifestEntry,
    balance_corpus,
    load_pair,
    prepare_dataset,
    reference_crop,
    synth_corpus,
    validate_manifest,
)
from paintflow.diffusion import (
    DiffusionInpainter,
    ModelConfig,
    SamplerConfig,
    TrainConfig,
    diffusion_loss,
    sample_edit,
    train_step,
    train_toy,
)
from paintflow.image import BinaryMask, RasterImage, dilate, distort_mask
from paintflow.metrics import gram_style_score
from paintflow.sbr import SbrConfig, mean_fill_canvas, replay_log, stylize
from paintflow.service import EditService, StubInference

# ---------------------------------------------------------------------------
# frozen golden values
#
# Recorded from the seed-0 reference run of the toy trainer on the bundled
# synthetic corpus (64 records, 24x24, 2000 steps, lr 0.02, smoothing
# window 100). Tolerance is 5% relative per logged checkpoint.
GOLDEN_TRAIN_CURVE = [
    (200, 0.5741023413876806),
    (400, 0.35649944216731067),
    (600, 0.2782662431758238),
    (800, 0.22656524777717924),
    (1000, 0.2214267592739098),
    (1200, 0.2159284455840318),
    (1400, 0.17303420026513208),
    (1600, 0.16913548868708564),
    (1800, 0.15767058055465116),
    (2000, 0.16820617911320176),
]

GRAD_MICRO = ModelConfig(
    image_size=8, widths=(3, 4), groups=1, t_embed_dim=6, t_hidden_dim=8,
    ref_size=8, patch_size=4, embed_dim=8, encoder_heads=2, n_query=2,
    ctx_dim=8, timesteps=20, seed=0,
)


def report(criterion: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {criterion}: {status}{suffix}")


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    td = tmp_path_factory.mktemp("acceptance")
    corpus = td / "corpus"
    out = td / "ds"
    synth_corpus(corpus, count=64, size=24, seed=0)
    prepare_dataset(corpus, out, ratio=(4, 1), seed=0)
    return out


@pytest.fixture(scope="session")
def trained(dataset_dir, tmp_path_factory):
    td = tmp_path_factory.mktemp("ckpt")
    t0 = time.monotonic()
    model, result = train_toy(
        dataset_dir,
        TrainConfig(steps=2000, learning_rate=0.02, seed=0, log_every=200, smooth_window=100),
        checkpoint_path=td / "toy.ckpt",
    )
    return model, result, time.monotonic() - t0, td / "toy.ckpt"


def micro_training_pair(rng, size=8):
    from paintflow.dataset import TrainingPair

    target = RasterImage(rng.random((size, size, 3)))
    m = np.zeros((size, size), dtype=np.uint8)
    m[2:6, 2:6] = 1
    sketch = BinaryMask((m & (rng.random((size, size)) > 0.6)).astype(np.uint8))
    masked = RasterImage(target.data * (1 - m)[:, :, None])
    return TrainingPair(masked, sketch, BinaryMask(m), "p", target, FOREGROUND)


class TestGradientSuite:
    def test_gradient_suite(self):
        t0 = time.monotonic()
        worst = 0.0
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)

            x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
            w = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
            worst = max(worst, grad_check(
                lambda x, w: sum_(mul(ad.matmul(x, w), ad.matmul(x, w))), [x, w]))

            xc = Tensor(rng.standard_normal((2, 5, 5)), requires_grad=True)
            wc = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
            worst = max(worst, grad_check(
                lambda xc, wc: sum_(mul(ad.conv2d(xc, wc, padding=1),
                                        ad.conv2d(xc, wc, padding=1))), [xc, wc]))

            s = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
            worst = max(worst, grad_check(
                lambda s: sum_(mul(softmax(s), softmax(s))), [s]))

            q = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
            k = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
            v = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
            worst = max(worst, grad_check(
                lambda q, k, v: sum_(mul(attention(q, k, v), attention(q, k, v))),
                [q, k, v]))

            xa = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
            ya = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
            worst = max(worst, grad_check(
                lambda xa, ya: sum_(mul(adain(xa, ya), adain(xa, ya))), [xa, ya]))

            fw = FusionWeights(ctx_dim=8, attn_dim=6, seed=seed, train_lambda=True)
            qf = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
            cr = Tensor(rng.standard_normal((4, 8)) * 0.5, requires_grad=True)
            cs = Tensor(rng.standard_normal((4, 8)) * 0.5)
            ct = Tensor(rng.standard_normal((3, 8)) * 0.5)

            def fused(qf, cr, wk, wv, lam):
                fw.w_k_ref, fw.w_v_ref, fw.lam = wk, wv, lam
                out = fused_cross_attention(
                    qf, ContextEmbedding(cr, "reference"),
                    c_style=ContextEmbedding(cs, "style"),
                    c_t=ContextEmbedding(ct, "text"), weights=fw)
                return sum_(mul(out, out))

            worst = max(worst, grad_check(fused, [qf, cr, fw.w_k_ref, fw.w_v_ref, fw.lam]))

            model = DiffusionInpainter(GRAD_MICRO)
            pair = micro_training_pair(rng)
            ref = RasterImage(rng.random((8, 8, 3)))
            eps = Tensor(rng.standard_normal((3, 8, 8)))
            trainables = model.trainable_parameters()
            tensors = [trainables[n] for n in sorted(trainables)]

            def full_loss(*params):
                ctx = model.encoder.encode(ref)
                return diffusion_loss(model, pair, ctx, 7, eps)

            worst = max(worst, grad_check(full_loss, tensors, step=1e-5))

        elapsed = time.monotonic() - t0
        ok = worst < 1e-5 and elapsed < 60.0
        report("gradient-suite", ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")
        assert worst < 1e-5
        assert elapsed < 60.0


class TestAdainContract:
    def test_adain_contract(self):
        eps = 1e-5
        rng = np.random.default_rng(0)
        ok = True
        for _ in range(100):
            n, n2, d = rng.integers(4, 16), rng.integers(4, 16), rng.integers(2, 8)
            x = rng.standard_normal((n, d)) * rng.uniform(0.05, 3.0)
            y = rng.standard_normal((n2, d)) * rng.uniform(0.05, 3.0)
            if (x.std(axis=0) <= 10 * eps).any():
                continue
            out = adain(Tensor(x), Tensor(y), eps=eps).data
            ok &= bool(np.abs(out.mean(axis=0) - y.mean(axis=0)).max() < 1e-5)
            ok &= bool(np.abs(out.std(axis=0) - y.std(axis=0)).max() < 1e-5)
        xs = rng.standard_normal((7, 5))
        ok &= bool(np.abs(adain(Tensor(xs), Tensor(xs), eps=eps).data - xs).max() < 1e-5)
        report("adain-contract", ok)
        assert ok


class TestLambdaAffinity:
    def test_lambda_affinity(self):
        rng = np.random.default_rng(0)
        fw = FusionWeights(ctx_dim=64, attn_dim=32, seed=0)
        q = Tensor(rng.standard_normal((6, 32)))
        c_ref = ContextEmbedding(Tensor(rng.standard_normal((8, 64))), "reference")
        c_t = ContextEmbedding(Tensor(rng.standard_normal((5, 64))), "text")

        def out(lam):
            fw.lam = Tensor(np.asarray(lam))
            return fused_cross_attention(q, c_ref, c_t=c_t, weights=fw).data

        base, one = out(0.0), out(1.0)
        worst = 0.0
        for lam in (-1.0, 0.5, 3.0):
            resid = out(lam) - base - lam * (one - base)
            worst = max(worst, float(np.abs(resid).max()))
        ok = worst < 1e-6
        report("lambda-affinity", ok, f"max residual {worst:.2e}")
        assert ok


class TestFreezingContract:
    def test_freezing_contract(self):
        model = DiffusionInpainter(GRAD_MICRO)
        params = model.parameters()
        frozen_before = {k: params[k].data.copy() for k in model.frozen_names()}
        rng = np.random.default_rng(0)
        pair = micro_training_pair(rng)
        ref = RasterImage(rng.random((8, 8, 3)))
        samples = [
            (pair, model.encoder.encode(ref), 5, Tensor(rng.standard_normal((3, 8, 8)))),
            (pair, model.null_context(), 15, Tensor(rng.standard_normal((3, 8, 8)))),
        ]
        # gradient presence first
        for p in params.values():
            p.zero_grad()
        for pr, ctx, t, eps in samples:
            backward(diffusion_loss(model, pr, ctx, t, eps))
        grads_ok = all(
            (p.grad is not None) == p.requires_grad for p in params.values()
        )
        # then one optimizer step: frozen tensors bit-unchanged
        train_step(model, samples, lr=0.05)
        frozen_ok = all(
            np.array_equal(params[k].data, arr) for k, arr in frozen_before.items()
        )
        ok = grads_ok and frozen_ok
        report("freezing-contract", ok)
        assert grads_ok, "gradient did not reach exactly the trainable set"
        assert frozen_ok, "a frozen parameter changed"


class TestSbr:
    def test_sbr_criteria(self):
        t0 = time.monotonic()
        const = RasterImage(np.full((32, 32, 3), 0.42))
        canvas, _ = stylize(const, SbrConfig(strokes_per_level=20))
        const_ok = ((canvas.data - const.data) ** 2).mean() < 1e-6

        monotone_ok = True
        replay_ok = True
        rng = np.random.default_rng(0)
        from scipy import ndimage

        for k in range(20):
            base = ndimage.gaussian_filter(rng.random((64, 64, 3)), (4, 4, 0))
            base = (base - base.min()) / (base.max() - base.min())
            img = RasterImage(base)
            out, log = stylize(img, SbrConfig(seed=k, strokes_per_level=60))
            monotone_ok &= all(a >= b for a, b in zip(log.residuals, log.residuals[1:]))
            replay_ok &= bool(np.array_equal(replay_log(log, img).data, out.data))
            init = mean_fill_canvas(img)
            monotone_ok &= ((out.data - img.data) ** 2).mean() <= (
                (init.data - img.data) ** 2
            ).mean()
        elapsed = time.monotonic() - t0
        ok = const_ok and monotone_ok and replay_ok and elapsed < 120.0
        report(
            "sbr",
            ok,
            f"constant {const_ok}, monotone {monotone_ok}, replay {replay_ok}, {elapsed:.1f}s",
        )
        assert ok


class TestDatasetPipeline:
    def test_dataset_pipeline(self, dataset_dir, tmp_path):
        problems = validate_manifest(dataset_dir)
        validator_ok = problems == []

        manifest = Manifest.read(dataset_dir / "manifest.txt")
        fg, bg = manifest.counts()
        ratio_ok = abs(fg - 4 * bg) <= 4  # 4:1 within rounding of one pair

        containment_ok = True
        rng = np.random.default_rng(0)
        for k in range(1000):
            m = BinaryMask(rng.random((24, 24)) > rng.uniform(0.5, 0.95))
            out = distort_mask(m, seed=k)
            if m.is_empty():
                containment_ok &= out.is_empty()
                continue
            containment_ok &= bool(np.all(out.data >= m.data))
            containment_ok &= bool(np.all(out.data <= dilate(m, 6.0).data))

        corpus = dataset_dir.parent / "corpus"
        rerun = tmp_path / "rerun"
        prepare_dataset(corpus, rerun, ratio=(4, 1), seed=0)
        byte_ok = (dataset_dir / "manifest.txt").read_bytes() == (
            rerun / "manifest.txt"
        ).read_bytes()

        ok = validator_ok and ratio_ok and containment_ok and byte_ok
        report(
            "dataset-pipeline",
            ok,
            f"validator {validator_ok}, ratio {fg}:{bg}, containment {containment_ok}, "
            f"rerun-bytes {byte_ok}",
        )
        assert ok


class TestToyTraining:
    def test_toy_training(self, trained):
        model, result, elapsed, _ = trained
        init = result.smoothed(100, 100)
        final = result.smoothed(2000, 100)
        halved = final <= 0.5 * init
        curve_ok = True
        for (step, golden), (got_step, got) in zip(GOLDEN_TRAIN_CURVE, result.logged):
            curve_ok &= step == got_step and abs(got - golden) <= 0.05 * golden
        runtime_ok = elapsed < 1800.0
        ok = halved and curve_ok and runtime_ok
        report(
            "toy-training",
            ok,
            f"init {init:.4f} -> final {final:.4f} ({final / init:.1%}), "
            f"golden-within-5% {curve_ok}, {elapsed:.0f}s",
        )
        assert halved
        assert curve_ok
        assert runtime_ok


class TestSampling:
    def test_sampling(self, trained, dataset_dir):
        model, _, _, _ = trained
        manifest = Manifest.read(dataset_dir / "manifest.txt")
        pairs = [load_pair(dataset_dir / e.path) for e in manifest.entries[:20]]

        # (a) determinism
        p0 = pairs[0]
        cfg = SamplerConfig(steps=10, guidance_weight=3.0, seed=3)
        a = sample_edit(model, p0.masked_source, p0.mask, p0.sketch,
                        reference=reference_crop(p0), prompt=p0.prompt, cfg=cfg)
        b = sample_edit(model, p0.masked_source, p0.mask, p0.sketch,
                        reference=reference_crop(p0), prompt=p0.prompt, cfg=cfg)
        from paintflow.image import image_to_png_bytes

        determinism_ok = image_to_png_bytes(a) == image_to_png_bytes(b)

        # (b) known-region preservation on 20 cases
        preserve_ok = True
        for k, pair in enumerate(pairs):
            out = sample_edit(model, pair.masked_source, pair.mask, pair.sketch,
                              reference=reference_crop(pair),
                              cfg=SamplerConfig(steps=4, seed=k))
            outside = pair.mask.data == 0
            if outside.any():
                preserve_ok &= bool(
                    np.abs(out.data - pair.masked_source.data)[outside].max() == 0.0
                )

        # (c) w = 1 CFG degeneracy is exact
        from paintflow.diffusion import cfg_combine

        rng = np.random.default_rng(0)
        ec = Tensor(rng.standard_normal((3, 8, 8)))
        eu = Tensor(rng.standard_normal((3, 8, 8)))
        cfg_ok = np.array_equal(cfg_combine(ec, eu, 1.0).data, ec.data)

        # (d) defaults
        defaults = SamplerConfig()
        defaults_ok = defaults.steps == 50 and defaults.guidance_weight == 3.0

        ok = determinism_ok and preserve_ok and cfg_ok and defaults_ok
        report(
            "sampling",
            ok,
            f"determinism {determinism_ok}, preservation {preserve_ok}, "
            f"cfg-degeneracy {cfg_ok}, defaults {defaults_ok}",
        )
        assert ok


class TestStyleRetention:
    def test_style_retention_ablation(self, trained, dataset_dir):
        model, _, _, _ = trained
        manifest = Manifest.read(dataset_dir / "manifest.txt")
        pairs = [load_pair(dataset_dir / e.path) for e in manifest.entries]
        n = 24
        m = np.zeros((n, n), dtype=np.uint8)
        m[2:22, 2:22] = 1
        mask = BinaryMask(m)
        sketch = BinaryMask(np.zeros((n, n), dtype=np.uint8))
        favourable = 0
        for k in range(50):  # frozen seeds 0..49
            rng = np.random.default_rng(1000 + k)
            source = pairs[k % len(pairs)].target
            reference = RasterImage(rng.random((12, 12, 3)))
            base = dict(model=model, source=source, mask=mask, sketch=sketch,
                        reference=reference, prompt="")
            styled = sample_edit(**base, cfg=SamplerConfig(
                steps=10, guidance_weight=3.0, seed=k, style_align=True))
            plain = sample_edit(**base, cfg=SamplerConfig(
                steps=10, guidance_weight=3.0, seed=k, style_align=False))
            if gram_style_score(styled, source) >= gram_style_score(plain, source):
                favourable += 1
        rate = favourable / 50.0
        ok = rate >= 0.70
        report("style-retention-ablation", ok, f"favourable on {favourable}/50 edits")
        assert ok, (
            f"style alignment favourable on only {favourable}/50 edits; the toy "
            "model's conditioning channel is too weak for the directional claim "
            "(see decisions ledger)"
        )


class TestEditServiceAutomaton:
    def test_edit_service_automaton(self, tmp_path):
        from tests.test_service import run_random_sequences, simple_request

        t0 = time.monotonic()
        divergences = run_random_sequences(10_000, canvas_size=12, seed=0, max_len=8)
        automaton_ok = divergences == 0

        # replay of a confirmed edit log is bit-exact
        svc = EditService(
            StubInference(SbrConfig(pyramid_levels=1, strokes_per_level=10, width_schedule=(3.0,))),
            root=tmp_path,
        )
        rng = np.random.default_rng(1)
        sid = svc.create_session(source=RasterImage(rng.integers(0, 256, (16, 16, 3)) / 255.0))
        for k in range(4):
            svc.submit_edit(sid, simple_request(seed=k, rng_seed=k, with_ref=(k % 2 == 0)))
            svc.confirm(sid)
        replay_ok = bool(np.array_equal(svc.replay(sid).data, svc.canvas(sid).data))
        elapsed = time.monotonic() - t0
        ok = automaton_ok and replay_ok
        report(
            "edit-service-automaton",
            ok,
            f"divergences {divergences}/10000 sequences, replay {replay_ok}, {elapsed:.0f}s",
        )
        assert ok


class TestBalanceArithmetic:
    def test_balance_realizes_four_to_one(self):
        entries = [ManifestEntry(f"f{i}", FOREGROUND) for i in range(100)] + [
            ManifestEntry(f"b{i}", BACKGROUND) for i in range(100)
        ]
        m = balance_corpus(entries, (4, 1), seed=0)
        ok = m.counts() == (100, 25)
        report("balance-arithmetic", ok, f"counts {m.counts()}")
        assert ok
