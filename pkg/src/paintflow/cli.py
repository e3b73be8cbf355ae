"""Command-line entry point.

Subcommands cover the whole pipeline: stylize, synth-corpus,
prepare-dataset, train, sample, eval, serve. Every run prints its resolved
configuration (flags > config file > built-in defaults) and honors --seed;
exit codes are 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliValidationError(message)


DEFAULTS: dict[str, dict] = {
    "stylize": {
        "seed": 0, "levels": 3, "strokes": 150, "widths": "12,6,3", "stroke_log": None,
    },
    "synth-corpus": {"seed": 0, "count": 64, "size": 24},
    "prepare-dataset": {"seed": 0, "ratio": "4:1", "threads": 1},
    "train": {
        "seed": 0, "steps": 2000, "lr": 0.02, "cfg_dropout": 0.1, "log_every": 200,
    },
    "sample": {
        "seed": 0, "steps": 50, "guidance": 3.0, "prompt": "",
        "reference": None, "sketch": None, "no_style_align": False, "no_text": False,
    },
    "eval": {"seed": 0, "steps": 10, "limit": 8, "out": None},
    "serve": {"host": "127.0.0.1", "port": 8000, "checkpoint": None, "sessions": None},
}


def _data_root() -> Path | None:
    root = os.environ.get("PAINTFLOW_DATA_DIR")
    return Path(root) if root else None


def _resolve_path(value: str | Path, must_exist: bool = False) -> Path:
    p = Path(value)
    root = _data_root()
    if not p.is_absolute() and root is not None:
        p = root / p
    if must_exist and not p.exists():
        raise CliValidationError(f"path does not exist: {p}")
    return p


def _resolve_config(name: str, args: argparse.Namespace) -> dict:
    resolved = dict(DEFAULTS[name])
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        p = _resolve_path(cfg_path, must_exist=True)
        try:
            file_values = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliValidationError(f"config file {p} is not valid JSON: {exc}")
        for k, v in file_values.items():
            key = k.replace("-", "_")
            if key in resolved:
                resolved[key] = v
    for k, v in vars(args).items():
        if k in ("command", "config"):
            continue
        if v is not None:
            resolved[k] = v
    return resolved


def _echo(name: str, cfg: dict) -> None:
    printable = {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}
    print(f"resolved-config {name} " + json.dumps(printable, sort_keys=True))


def _parse_ratio(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        ratio = (int(a), int(b))
    except ValueError:
        raise CliValidationError(f"ratio must look like 4:1, got {text!r}")
    if ratio[0] <= 0 or ratio[1] <= 0:
        raise CliValidationError("ratio parts must be positive")
    return ratio


def _parse_widths(text: str) -> tuple[float, ...]:
    try:
        widths = tuple(float(w) for w in text.split(","))
    except ValueError:
        raise CliValidationError(f"widths must be comma-separated numbers, got {text!r}")
    if not widths:
        raise CliValidationError("width schedule is empty")
    return widths


# ---------------------------------------------------------------------------
# subcommand runners


def _run_stylize(cfg: dict) -> None:
    from .image import read_image_png, write_image_png
    from .sbr import SbrConfig, stylize

    src = _resolve_path(cfg["in"], must_exist=True)
    out = _resolve_path(cfg["out"])
    widths = _parse_widths(cfg["widths"])
    if len(widths) != int(cfg["levels"]):
        raise CliValidationError("widths length must match --levels")
    sbr_cfg = SbrConfig(
        pyramid_levels=int(cfg["levels"]),
        strokes_per_level=int(cfg["strokes"]),
        width_schedule=widths,
        seed=int(cfg["seed"]),
    )
    img = read_image_png(src)
    canvas, log = stylize(img, sbr_cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image_png(canvas, out)
    if cfg.get("stroke_log"):
        _resolve_path(cfg["stroke_log"]).write_text(log.to_text(), encoding="utf-8")
    print(f"stylized {src} -> {out} with {len(log)} strokes")


def _run_synth_corpus(cfg: dict) -> None:
    from .dataset import synth_corpus

    out = _resolve_path(cfg["out"])
    n = synth_corpus(out, count=int(cfg["count"]), size=int(cfg["size"]), seed=int(cfg["seed"]))
    print(f"wrote {n} synthetic records to {out}")


def _run_prepare_dataset(cfg: dict) -> None:
    from .dataset import prepare_dataset

    corpus = _resolve_path(cfg["corpus"], must_exist=True)
    out = _resolve_path(cfg["out"])
    manifest = prepare_dataset(
        corpus, out, ratio=_parse_ratio(cfg["ratio"]), seed=int(cfg["seed"]),
        workers=int(cfg["threads"]),
    )
    fg, bg = manifest.counts()
    print(f"dataset at {out}: {fg} foreground + {bg} background pairs")


def _run_train(cfg: dict) -> None:
    from .diffusion import TrainConfig, train_toy

    dataset = _resolve_path(cfg["dataset"], must_exist=True)
    out = _resolve_path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    train_cfg = TrainConfig(
        steps=int(cfg["steps"]),
        learning_rate=float(cfg["lr"]),
        cfg_dropout=float(cfg["cfg_dropout"]),
        seed=int(cfg["seed"]),
        log_every=int(cfg["log_every"]),
    )
    _, result = train_toy(dataset, train_cfg, checkpoint_path=out)
    for step, smoothed in result.logged:
        print(f"step {step}: smoothed loss {smoothed:.4f}")
    print(f"checkpoint written to {out}")


def _load_mask_or_empty(path, shape):
    from .image import BinaryMask, read_mask_png

    if path is None:
        return BinaryMask(np.zeros(shape, dtype=np.uint8))
    return read_mask_png(_resolve_path(path, must_exist=True))


def _run_sample(cfg: dict) -> None:
    from .diffusion import DiffusionInpainter, SamplerConfig, sample_edit
    from .image import read_image_png, read_mask_png, write_image_png

    ckpt = _resolve_path(cfg["checkpoint"], must_exist=True)
    source = read_image_png(_resolve_path(cfg["source"], must_exist=True))
    mask = read_mask_png(_resolve_path(cfg["mask"], must_exist=True))
    sketch = _load_mask_or_empty(cfg.get("sketch"), source.shape)
    if source.height % 4 or source.width % 4:
        raise CliValidationError("source height/width must be multiples of 4")
    if mask.shape != source.shape:
        raise CliValidationError(f"mask {mask.shape} does not match source {source.shape}")
    reference = None
    if cfg.get("reference"):
        reference = read_image_png(_resolve_path(cfg["reference"], must_exist=True))
    model = DiffusionInpainter.load(ckpt)
    sampler = SamplerConfig(
        steps=int(cfg["steps"]),
        guidance_weight=float(cfg["guidance"]),
        seed=int(cfg["seed"]),
        style_align=not cfg["no_style_align"],
        use_text=not cfg["no_text"],
    )
    out_img = sample_edit(model, source, mask, sketch, reference=reference,
                          prompt=cfg["prompt"], cfg=sampler)
    out = _resolve_path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image_png(out_img, out)
    print(f"sample written to {out}")


def _run_eval(cfg: dict) -> None:
    from .dataset import Manifest, load_pair, reference_crop
    from .diffusion import DiffusionInpainter, SamplerConfig, sample_edit
    from .metrics import gram_style_score, masked_region_similarity

    dataset = _resolve_path(cfg["dataset"], must_exist=True)
    ckpt = _resolve_path(cfg["checkpoint"], must_exist=True)
    model = DiffusionInpainter.load(ckpt)
    manifest = Manifest.read(dataset / "manifest.txt")
    lines = []
    for entry in manifest.entries[: int(cfg["limit"])]:
        pair = load_pair(dataset / entry.path)
        ref = reference_crop(pair)
        sampler = SamplerConfig(steps=int(cfg["steps"]), seed=int(cfg["seed"]))
        out = sample_edit(model, pair.masked_source, pair.mask, pair.sketch,
                          reference=ref, prompt=pair.prompt, cfg=sampler)
        gram = gram_style_score(out, pair.target)
        msim = masked_region_similarity(out, ref, pair.mask)
        lines.append(f"{entry.path}\t{gram:.6f}\t{msim:.6f}")
    report = "\n".join(lines) + "\n"
    if cfg.get("out"):
        out_path = _resolve_path(cfg["out"])
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(report, encoding="utf-8")
        print(f"report written to {out_path}")
    else:
        sys.stdout.write(report)


def _run_serve(cfg: dict) -> None:
    import uvicorn

    from .service import DiffusionBackend, EditService, StubInference, create_app

    if cfg.get("checkpoint"):
        from .diffusion import DiffusionInpainter

        model = DiffusionInpainter.load(_resolve_path(cfg["checkpoint"], must_exist=True))
        backend = DiffusionBackend(model)
    else:
        backend = StubInference()
    sessions = cfg.get("sessions")
    root = _resolve_path(sessions) if sessions else None
    service = EditService(backend, root=root)
    app = create_app(service)
    uvicorn.run(app, host=cfg["host"], port=int(cfg["port"]))


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="paintflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="deterministic seed (default 0)")
        p.add_argument("--config", default=None, help="JSON config file; flags override it")

    p = sub.add_parser("stylize", help="paint an image with brushstrokes")
    p.add_argument("--in", dest="in_", required=True, metavar="PNG")
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--strokes", type=int, default=None, help="proposals per level")
    p.add_argument("--widths", default=None, help="comma-separated stroke widths")
    p.add_argument("--stroke-log", dest="stroke_log", default=None)
    common(p)

    p = sub.add_parser("synth-corpus", help="generate the synthetic shape corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    common(p)

    p = sub.add_parser("prepare-dataset", help="build balanced training pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", default=None, help="foreground:background, e.g. 4:1")
    p.add_argument("--threads", type=int, default=None)
    common(p)

    p = sub.add_parser("train", help="train the toy diffusion model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--cfg-dropout", dest="cfg_dropout", type=float, default=None)
    p.add_argument("--log-every", dest="log_every", type=int, default=None)
    common(p)

    p = sub.add_parser("sample", help="run the sampler on an edit")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--sketch", default=None)
    p.add_argument("--reference", default=None)
    p.add_argument("--prompt", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--no-style-align", dest="no_style_align", action="store_const", const=True, default=None)
    p.add_argument("--no-text", dest="no_text", action="store_const", const=True, default=None)
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("eval", help="score sampled edits against their pairs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", default=None)
    common(p)

    p = sub.add_parser("serve", help="run the interactive editing service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--checkpoint", default=None, help="omit to use the stroke-based stub")
    p.add_argument("--sessions", default=None, help="persistence directory")
    common(p)

    return parser


_RUNNERS = {
    "stylize": _run_stylize,
    "synth-corpus": _run_synth_corpus,
    "prepare-dataset": _run_prepare_dataset,
    "train": _run_train,
    "sample": _run_sample,
    "eval": _run_eval,
    "serve": _run_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args.command, args)
        if "in_" in cfg:
            cfg["in"] = cfg.pop("in_")
        _echo(args.command, cfg)
        _RUNNERS[args.command](cfg)
        return 0
    except CliValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
