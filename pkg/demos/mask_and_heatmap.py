"""Walk one synthetic sample through the mask branch and export what the model sees.

    python demos/mask_and_heatmap.py --out /tmp/walkthrough [--checkpoint runs/full/final.ckpt]

Writes the RGB sample, its parsing map, the grayscale mask that suppresses
clothing, an augmented copy, and the stage-4 activation heatmap.
"""
import argparse
from pathlib import Path

import numpy as np

from disent_reid import cdm
from disent_reid.backbone import BackboneConfig, forward, init_params, load_checkpoint
from disent_reid.data import AugmentConfig, SynthConfig, augment, generate_synthetic
from disent_reid.evaluation import heatmap_export
from disent_reid.images import write_png_gray, write_png_rgb
from disent_reid.rng import stream


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--checkpoint", type=Path, help="trained weights; random init when omitted")
    ap.add_argument("--index", type=int, default=0, help="which training sample to show")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    ds = generate_synthetic(SynthConfig(persons=4))
    image, parsing = ds.images[args.index], ds.parsing[args.index]
    meta = ds.meta[args.index]
    print(f"sample {args.index}: person {meta.person_id} outfit {meta.clothes_id} camera {meta.camera_id}")

    table = cdm.KeepTable.default()
    mask = cdm.build_grayscale(parsing, table)
    kept = sorted({int(v) for v in np.unique(parsing)} & set(table.kept_labels))
    dropped = sorted({int(v) for v in np.unique(parsing)} - set(kept))
    print("labels kept in the mask:", [cdm.LIP_CLASSES[v] for v in kept])
    print("labels zeroed:", [cdm.LIP_CLASSES[v] for v in dropped])

    write_png_rgb(args.out / "image.png", image)
    # scale label indices up so the parsing map is visible
    write_png_gray(args.out / "parsing.png", parsing.astype(np.float64) * (12 / 255))
    write_png_gray(args.out / "mask.png", mask)

    aug_image, aug_parsing = augment(image, parsing, stream(0, "demo"), AugmentConfig(flip_p=1.0, erase_p=1.0))
    write_png_rgb(args.out / "augmented.png", aug_image)
    write_png_gray(args.out / "augmented_mask.png", cdm.build_grayscale(aug_parsing, table))

    if args.checkpoint:
        params = load_checkpoint(args.checkpoint)
        cfg = BackboneConfig(num_classes=params["fc.b"].shape[0])
    else:
        cfg = BackboneConfig(num_classes=4)
        params = init_params(cfg, stream(0, "init"))
    _, _, features = forward(image[None], mask[None], params, cfg)
    heatmap_export(features, args.out / "heatmap.pgm", *image.shape[1:])
    print(f"stage-4 features {features.shape}; wrote 6 files to {args.out}")


if __name__ == "__main__":
    main()
