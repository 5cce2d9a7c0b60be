"""Opposite-side generalization gap as a function of the learning-rate scale of
the view-dependent SH bands, for the voxel field and the from-scratch splats.

    python3 scripts/sh_rest_sweep.py --scales 1 0.05 0.0001
"""

import argparse
import dataclasses

import numpy as np

from nerfgs.field import VoxelField, render_image, train_field
from nerfgs.metrics import psnr
from nerfgs.repro import RunConfig, build_benchmark, random_splats
from nerfgs.splats import finetune, rasterize


def split_psnr(bench, render):
    out = []
    for cams, refs in ((bench.train, bench.train_images), (bench.val, bench.val_images),
                       (bench.opposite, bench.opposite_images)):
        out.append(np.mean([psnr(render(c), im) for c, im in zip(cams, refs)]))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scales", type=float, nargs="+", default=[1.0, 0.05])
    ap.add_argument("--skip-baseline", action="store_true")
    args = ap.parse_args()
    cfg = RunConfig()
    bench = build_benchmark(cfg.benchmark)
    fc = cfg.field
    print("model     scale     train    val   opposite   gap")
    for s in args.scales:
        f0 = VoxelField.empty(fc.dims, fc.bbox_min, fc.bbox_max, fc.init_raw_density)
        f, _ = train_field(f0, bench.train, bench.train_images,
                           dataclasses.replace(cfg.train, sh_rest_scale=s))
        r = split_psnr(bench, lambda c: render_image(f, c, 128).rgb)
        print(f"field     {s:<8g} {r[0]:6.2f} {r[1]:6.2f} {r[2]:8.2f} {r[0] - r[2]:7.2f}",
              flush=True)
        if args.skip_baseline:
            continue
        s0 = random_splats(fc.bbox_min, fc.bbox_max, cfg.repro.baseline_points,
                           cfg.repro.baseline_opacity, cfg.seed)
        b, _ = finetune(s0, bench.train, bench.train_images,
                        dataclasses.replace(cfg.finetune, sh_rest_scale=s))
        r = split_psnr(bench, lambda c: rasterize(b, c).rgb)
        print(f"baseline  {s:<8g} {r[0]:6.2f} {r[1]:6.2f} {r[2]:8.2f} {r[0] - r[2]:7.2f}",
              flush=True)


if __name__ == "__main__":
    main()
