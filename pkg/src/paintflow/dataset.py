"""Self-supervised training-pair construction.

Turns a corpus of images (plus prompt/subject/mask sidecars) into balanced
multimodal pairs: the source with the edit region blanked, a sketch of the
region's structure, the distorted region mask, the prompt, and the
oil-painted target. Records with a segmentation mask become foreground
pairs; the rest become background pairs via seeded 50%-area crops.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import (
    BinaryMask,
    EdgeConfig,
    RasterImage,
    composite,
    distort_mask,
    edge_detect,
    read_image_png,
    read_mask_png,
    write_image_png,
    write_mask_png,
)
from .sbr import SbrConfig, stylize

FOREGROUND = "foreground"
BACKGROUND = "background"


class RecordError(ValueError):
    """A corpus record that cannot become a training pair."""


@dataclass(frozen=True)
class CorpusRecord:
    image_path: Path
    prompt: str
    subject: str | None = None
    mask_path: Path | None = None

    def __post_init__(self):
        if self.subject is not None and self.mask_path is None:
            raise RecordError(
                f"{self.image_path}: subject given without a mask; segmentation "
                "is not performed here, so the record is rejected"
            )

    @property
    def is_foreground(self) -> bool:
        return self.mask_path is not None


@dataclass
class TrainingPair:
    masked_source: RasterImage
    sketch: BinaryMask
    mask: BinaryMask
    prompt: str
    target: RasterImage
    kind: str

    def validate(self) -> None:
        shapes = {
            self.masked_source.shape,
            self.sketch.shape,
            self.mask.shape,
            self.target.shape,
        }
        if len(shapes) != 1:
            raise ValueError(f"pair shapes disagree: {shapes}")
        if self.kind not in (FOREGROUND, BACKGROUND):
            raise ValueError(f"unknown pair kind {self.kind!r}")
        if np.any(self.sketch.data > self.mask.data):
            raise ValueError("sketch has strokes outside the mask")
        inside = self.mask.data.astype(bool)
        if inside.any() and self.masked_source.data[inside].any():
            raise ValueError("masked_source must be zero inside the mask")


@dataclass(frozen=True)
class DatasetConfig:
    sbr: SbrConfig = SbrConfig(
        pyramid_levels=3, strokes_per_level=60, width_schedule=(8.0, 4.0, 2.0)
    )
    foreground_edges: EdgeConfig = EdgeConfig()
    background_edges: EdgeConfig = EdgeConfig.background_detail()


def _record_seed(global_seed: int, stem: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=[global_seed, zlib.crc32(stem.encode("utf-8"))])


def random_background_crop(img: RasterImage, seed: int) -> BinaryMask:
    """Seeded axis-aligned rectangle covering half the image area
    (up to the rounding of one row/column)."""
    h, w = img.shape
    if h < 2 or w < 2:
        raise ValueError(f"image too small for a background crop: {h}x{w}")
    area = h * w / 2.0
    rng = np.random.default_rng(seed)
    rh_min = int(np.ceil(area / w))
    rh = int(rng.integers(rh_min, h + 1))
    rw = int(np.clip(np.round(area / rh), 1, w))
    y0 = int(rng.integers(0, h - rh + 1))
    x0 = int(rng.integers(0, w - rw + 1))
    out = np.zeros((h, w), dtype=np.uint8)
    out[y0 : y0 + rh, x0 : x0 + rw] = 1
    return BinaryMask(out)


def build_pair(record: CorpusRecord, cfg: DatasetConfig, seed: int) -> TrainingPair:
    """One record -> one training pair; raises RecordError when the record
    must be skipped (unreadable image, mask/image shape mismatch)."""
    try:
        source = read_image_png(record.image_path)
    except Exception as exc:
        raise RecordError(f"{record.image_path}: unreadable image ({exc})") from exc
    if source.channels != 3:
        raise RecordError(f"{record.image_path}: corpus images must be RGB")

    ss = _record_seed(seed, Path(record.image_path).stem)
    stylize_seed, mask_seed = (int(s) for s in ss.generate_state(2))

    target, _ = stylize(source, dataclasses.replace(cfg.sbr, seed=stylize_seed))

    if record.is_foreground:
        try:
            raw_mask = read_mask_png(record.mask_path)
        except Exception as exc:
            raise RecordError(f"{record.mask_path}: unreadable mask ({exc})") from exc
        if raw_mask.shape != source.shape:
            raise RecordError(
                f"{record.image_path}: mask shape {raw_mask.shape} does not "
                f"match image shape {source.shape}"
            )
        if raw_mask.is_empty():
            raise RecordError(f"{record.image_path}: empty segmentation mask")
        mask = distort_mask(raw_mask, mask_seed)
        edges = edge_detect(source, cfg.foreground_edges)
        kind = FOREGROUND
    else:
        mask = random_background_crop(source, mask_seed)
        edges = edge_detect(source, cfg.background_edges)
        kind = BACKGROUND

    zeros = RasterImage(np.zeros_like(source.data))
    masked_source = composite(zeros, source, mask)
    sketch = BinaryMask(mask.data & edges.data)
    pair = TrainingPair(
        masked_source=masked_source,
        sketch=sketch,
        mask=mask,
        prompt=record.prompt,
        target=target,
        kind=kind,
    )
    pair.validate()
    return pair


def reference_crop(pair: TrainingPair) -> RasterImage:
    """Masked target region cropped to the mask's bounding box: the reference
    content the model learns to paint into the region."""
    mask = pair.mask.data.astype(bool)
    if not mask.any():
        raise ValueError("pair mask is empty")
    ys, xs = np.nonzero(mask)
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    region = pair.target.data * mask[:, :, None]
    return RasterImage(region[y0:y1, x0:x1])


# ---------------------------------------------------------------------------
# pair serialization: one directory per pair


def save_pair(pair: TrainingPair, pair_dir: Path, seed: int) -> None:
    pair_dir = Path(pair_dir)
    pair_dir.mkdir(parents=True, exist_ok=True)
    write_image_png(pair.masked_source, pair_dir / "masked_source.png")
    write_mask_png(pair.sketch, pair_dir / "sketch.png")
    write_mask_png(pair.mask, pair_dir / "mask.png")
    write_image_png(pair.target, pair_dir / "target.png")
    meta = {"prompt": pair.prompt, "kind": pair.kind, "seed": seed}
    (pair_dir / "meta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_pair(pair_dir: Path) -> TrainingPair:
    pair_dir = Path(pair_dir)
    meta = json.loads((pair_dir / "meta.json").read_text(encoding="utf-8"))
    return TrainingPair(
        masked_source=read_image_png(pair_dir / "masked_source.png"),
        sketch=read_mask_png(pair_dir / "sketch.png"),
        mask=read_mask_png(pair_dir / "mask.png"),
        prompt=meta["prompt"],
        target=read_image_png(pair_dir / "target.png"),
        kind=meta["kind"],
    )


# ---------------------------------------------------------------------------
# manifest and balancing


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # pair directory, relative to the manifest location
    kind: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    ratio: tuple[int, int]
    seed: int
    warning: str | None = None
    split: str = "train"

    def counts(self) -> tuple[int, int]:
        fg = sum(1 for e in self.entries if e.kind == FOREGROUND)
        return fg, len(self.entries) - fg

    def to_text(self) -> str:
        fg, bg = self.counts()
        header = (
            f"# split={self.split} fg={fg} bg={bg} "
            f"ratio={self.ratio[0]}:{self.ratio[1]} seed={self.seed}"
        )
        if self.warning:
            header += f" warning={self.warning}"
        lines = [header] + [f"{e.path}\t{e.kind}" for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("manifest missing header line")
        fields = dict(
            kv.split("=", 1) for kv in lines[0].lstrip("# ").split() if "=" in kv
        )
        a, b = fields["ratio"].split(":")
        entries = []
        for ln in lines[1:]:
            path, kind = ln.split("\t")
            entries.append(ManifestEntry(path, kind))
        return cls(
            entries=entries,
            ratio=(int(a), int(b)),
            seed=int(fields.get("seed", 0)),
            warning=fields.get("warning"),
            split=fields.get("split", "train"),
        )

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path: Path) -> "Manifest":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _subsample_keep_order(items: list, keep: int, rng: np.random.Generator) -> list:
    idx = sorted(rng.choice(len(items), size=keep, replace=False))
    return [items[i] for i in idx]


def balance_corpus(
    entries: list[ManifestEntry],
    ratio: tuple[int, int],
    seed: int,
) -> Manifest:
    """Subsample the over-represented kind so foreground:background matches
    the ratio (within rounding), preserving input order among survivors."""
    rf, rb = ratio
    if rf <= 0 or rb <= 0:
        raise ValueError(f"ratio parts must be positive, got {ratio}")
    fg = [e for e in entries if e.kind == FOREGROUND]
    bg = [e for e in entries if e.kind == BACKGROUND]
    warning = None
    if not fg or not bg:
        if entries:
            missing = FOREGROUND if not fg else BACKGROUND
            warning = f"no-{missing}-pairs"
        kept = set(map(id, entries))
    else:
        rng = np.random.default_rng(seed)
        target = rf / rb
        actual = len(fg) / len(bg)
        if actual > target:
            keep_fg = max(1, int(round(len(bg) * target)))
            fg = _subsample_keep_order(fg, keep_fg, rng)
        elif actual < target:
            keep_bg = max(1, int(round(len(fg) / target)))
            bg = _subsample_keep_order(bg, keep_bg, rng)
        kept = set(map(id, fg)) | set(map(id, bg))
    survivors = [e for e in entries if id(e) in kept]
    return Manifest(entries=survivors, ratio=ratio, seed=seed, warning=warning)


# ---------------------------------------------------------------------------
# corpus scanning and the full pipeline


def scan_corpus(root: Path) -> tuple[list[CorpusRecord], list[str]]:
    """Collect records from root/images plus root/meta sidecars; returns
    (records, skip log lines)."""
    root = Path(root)
    images = sorted((root / "images").glob("*.png"))
    records: list[CorpusRecord] = []
    skipped: list[str] = []
    for img_path in images:
        meta_path = root / "meta" / f"{img_path.stem}.json"
        prompt, subject, mask_rel = "", None, None
        if meta_path.exists():
            try:
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                skipped.append(f"{img_path.name}\tbad-meta: {exc}")
                continue
            prompt = meta.get("prompt", "")
            subject = meta.get("subject")
            mask_rel = meta.get("mask")
        try:
            records.append(
                CorpusRecord(
                    image_path=img_path,
                    prompt=prompt,
                    subject=subject,
                    mask_path=(root / mask_rel) if mask_rel else None,
                )
            )
        except RecordError as exc:
            skipped.append(f"{img_path.name}\t{exc}")
    return records, skipped


def prepare_dataset(
    corpus_root: Path,
    out_dir: Path,
    ratio: tuple[int, int] = (4, 1),
    seed: int = 0,
    cfg: DatasetConfig | None = None,
    workers: int = 1,
) -> Manifest:
    """Run the whole pipeline: build pairs, write them, balance, write the
    manifest and skip log. Output is byte-identical for a fixed corpus and
    seed regardless of worker count."""
    cfg = cfg or DatasetConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, skipped = scan_corpus(corpus_root)

    def job(record: CorpusRecord):
        try:
            return build_pair(record, cfg, seed), None
        except RecordError as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, records))
    else:
        results = [job(r) for r in records]

    entries: list[ManifestEntry] = []
    for record, (pair, err) in zip(records, results):
        if pair is None:
            skipped.append(f"{Path(record.image_path).name}\t{err}")
            continue
        rel = f"pairs/{Path(record.image_path).stem}"
        save_pair(pair, out_dir / rel, seed)
        entries.append(ManifestEntry(rel, pair.kind))

    manifest = balance_corpus(entries, ratio, seed)
    manifest.write(out_dir / "manifest.txt")
    (out_dir / "skipped.txt").write_text(
        "".join(line + "\n" for line in skipped), encoding="utf-8"
    )
    return manifest


def validate_manifest(out_dir: Path, manifest: Manifest | None = None) -> list[str]:
    """Re-load every pair named by the manifest and re-check the pair
    invariants; returns a list of violations (empty = all good)."""
    out_dir = Path(out_dir)
    manifest = manifest or Manifest.read(out_dir / "manifest.txt")
    problems: list[str] = []
    for entry in manifest.entries:
        try:
            pair = load_pair(out_dir / entry.path)
            pair.validate()
            if pair.kind != entry.kind:
                problems.append(f"{entry.path}: kind mismatch")
        except Exception as exc:
            problems.append(f"{entry.path}: {exc}")
    return problems


# ---------------------------------------------------------------------------
# synthetic corpus: geometric shapes on textured backgrounds, exact masks


_SHAPES = ("disk", "square", "triangle")
_COLORS = {
    "red": (0.85, 0.15, 0.12),
    "blue": (0.15, 0.25, 0.85),
    "green": (0.12, 0.7, 0.2),
    "yellow": (0.9, 0.85, 0.15),
    "violet": (0.6, 0.2, 0.75),
}


def _textured_background(rng: np.random.Generator, size: int) -> np.ndarray:
    from scipy import ndimage

    base = ndimage.gaussian_filter(rng.random((size, size, 3)), (2.5, 2.5, 0))
    lo, hi = base.min(), base.max()
    return 0.15 + 0.7 * (base - lo) / max(hi - lo, 1e-9)


def _shape_mask(rng: np.random.Generator, size: int, shape: str) -> np.ndarray:
    yy, xx = np.indices((size, size))
    r = size // 4
    cy = int(rng.integers(r + 1, size - r - 1))
    cx = int(rng.integers(r + 1, size - r - 1))
    if shape == "disk":
        return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8)
    if shape == "square":
        return ((np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)).astype(np.uint8)
    # triangle: y grows downward from the apex, width grows linearly
    rel_y = yy - (cy - r)
    return ((rel_y >= 0) & (rel_y <= 2 * r) & (np.abs(xx - cx) <= rel_y / 2)).astype(
        np.uint8
    )


def synth_corpus(root: Path, count: int = 64, size: int = 24, seed: int = 0) -> int:
    """Write a fully self-contained corpus of `count` records; roughly a
    quarter have no subject/mask and exercise the background path. Returns
    the number of records written."""
    root = Path(root)
    for sub in ("images", "meta", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    color_names = list(_COLORS)
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, i]))
        stem = f"synth_{i:04d}"
        bg = _textured_background(rng, size)
        is_fg = i % 4 != 3  # every fourth record is background-only
        if is_fg:
            shape = _SHAPES[int(rng.integers(0, len(_SHAPES)))]
            color_name = color_names[int(rng.integers(0, len(color_names)))]
            mask = _shape_mask(rng, size, shape)
            color = np.asarray(_COLORS[color_name])
            img = np.where(mask[:, :, None] == 1, color, bg)
            prompt = f"a {color_name} {shape} on a textured field"
            write_image_png(RasterImage(img), root / "images" / f"{stem}.png")
            write_mask_png(BinaryMask(mask), root / "masks" / f"{stem}.png")
            meta = {
                "prompt": prompt,
                "subject": f"{color_name} {shape}",
                "mask": f"masks/{stem}.png",
            }
        else:
            img = bg
            prompt = "a textured field"
            write_image_png(RasterImage(img), root / "images" / f"{stem}.png")
            meta = {"prompt": prompt, "subject": None, "mask": None}
        (root / "meta" / f"{stem}.json").write_text(
            json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
        )
    return count
