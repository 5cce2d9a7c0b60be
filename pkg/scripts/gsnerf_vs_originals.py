"""Fit a field to (a) splat renders, (b) the original images, (c) both, starting
from the same empty grid, and compare validation PSNR against ground truth.

    python3 scripts/gsnerf_vs_originals.py [--finetune-iterations 1000]
"""

import argparse
import dataclasses

import numpy as np

from nerfgs.convert import gs_to_nerf, nerf_to_gs
from nerfgs.field import VoxelField, render_image, train_field
from nerfgs.metrics import psnr
from nerfgs.repro import RunConfig, build_benchmark
from nerfgs.splats import finetune


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--finetune-iterations", type=int, default=1000)
    args = ap.parse_args()
    cfg = RunConfig()
    bench = build_benchmark(cfg.benchmark)
    fc = cfg.field

    def empty():
        return VoxelField.empty(fc.dims, fc.bbox_min, fc.bbox_max, fc.init_raw_density)

    def val_psnr(f):
        return np.mean([psnr(render_image(f, c, 128).rgb, im)
                        for c, im in zip(bench.val, bench.val_images)])

    src, _ = train_field(empty(), bench.train, bench.train_images, cfg.train)
    gs = nerf_to_gs(src, bench.train, cfg.n2g)
    gs, _ = finetune(gs, bench.train, bench.train_images,
                     dataclasses.replace(cfg.finetune, iterations=args.finetune_iterations))
    g2n = dataclasses.replace(cfg.g2n, bbox=(fc.bbox_min, fc.bbox_max))
    renders_only, _, _ = gs_to_nerf(gs, bench.train, g2n)
    originals, _ = train_field(empty(), bench.train, bench.train_images, cfg.g2n.train)
    mixed, _, _ = gs_to_nerf(gs, bench.train, g2n,
                             extra_views=(bench.train, bench.train_images))
    print(f"source field          val {val_psnr(src):.2f}")
    print(f"fit to splat renders  val {val_psnr(renders_only):.2f}")
    print(f"fit to originals      val {val_psnr(originals):.2f}")
    print(f"fit to both           val {val_psnr(mixed):.2f}")


if __name__ == "__main__":
    main()
