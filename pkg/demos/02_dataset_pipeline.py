"""Build a balanced multimodal training set from the synthetic corpus.

Walks the whole self-supervised pipeline: shape corpus with exact masks ->
painted targets, distorted masks, region sketches, blanked sources ->
balanced manifest, then re-validates every emitted pair.
"""

from pathlib import Path

from paintflow.dataset import (
    Manifest,
    load_pair,
    prepare_dataset,
    reference_crop,
    synth_corpus,
    validate_manifest,
)
from paintflow.image import write_image_png, write_mask_png

OUT = Path(__file__).parent / "out"
ROOT = OUT / "02_corpus"
DS = OUT / "02_dataset"

n = synth_corpus(ROOT, count=24, size=24, seed=0)
print(f"synthetic corpus: {n} records (3 of 4 carry subject masks)")

manifest = prepare_dataset(ROOT, DS, ratio=(4, 1), seed=0)
fg, bg = manifest.counts()
print(f"balanced manifest: {fg} foreground : {bg} background (target 4:1)")

problems = validate_manifest(DS)
print(f"validator violations: {len(problems)}")

# peek at one pair: every file of the tuple plus the derived reference crop
pair = load_pair(DS / manifest.entries[0].path)
write_image_png(pair.masked_source, OUT / "02_masked_source.png")
write_mask_png(pair.sketch, OUT / "02_sketch.png")
write_mask_png(pair.mask, OUT / "02_mask.png")
write_image_png(pair.target, OUT / "02_target.png")
write_image_png(reference_crop(pair), OUT / "02_reference.png")
print(f"first pair '{pair.prompt}' ({pair.kind}); images in {OUT}")

# reruns are byte-identical
again = OUT / "02_dataset_rerun"
prepare_dataset(ROOT, again, ratio=(4, 1), seed=0)
same = (DS / "manifest.txt").read_bytes() == (again / "manifest.txt").read_bytes()
print("rerun manifest byte-identical:", same)
