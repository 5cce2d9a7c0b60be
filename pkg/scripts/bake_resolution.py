"""How well a baked voxel grid reproduces the analytic box scene, per grid size
and density. Prints PSNR of the field render against the exact oracle render.

    python3 scripts/bake_resolution.py
"""

from nerfgs.field import render_image
from nerfgs.geometry import Camera, look_at
from nerfgs.metrics import psnr
from nerfgs.oracle import AnalyticScene, Primitive, bake_field, oracle_render
from nerfgs.sh import rgb_to_sh_dc


def main():
    size = 48
    cam = Camera(size * 1.2, size * 1.2, size / 2, size / 2, size, size,
                 look_at((0.8, 0.6, 2.6), (0, 0, 0)))
    print("density  grid  psnr")
    for density in (30.0, 200.0):
        scene = AnalyticScene([Primitive.box((-0.5, -0.375, -0.25), (0.5, 0.375, 0.25), density,
                                             rgb_to_sh_dc((0.8, 0.2, 0.1)))],
                              rgb_to_sh_dc((0.1, 0.3, 0.9)), bbox=((-1, -1, -1), (1, 1, 1)))
        ref = oracle_render(scene, cam).rgb
        for n in (16, 32, 64):
            f = bake_field(scene, (n, n, n))
            print(f"{density:7g} {n:5d} {psnr(render_image(f, cam, 512).rgb, ref):6.2f}")


if __name__ == "__main__":
    main()
