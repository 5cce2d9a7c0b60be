"""Command-line entry point: ``nerfgs <command> ...``.

Failures exit with status 2 and print ``{"code": ..., "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .convert import gs_to_nerf, nerf_to_gs
from .errors import FileNotFound, FormatError, NerfGSError
from .field import VoxelField, load_vxf, render_image, save_vxf, train_field
from .metrics import evaluate
from .repro import RunConfig, build_benchmark, load_run_config, run_repro
from .splats import (BoxRegion, IdRegion, SphereRegion, finetune, load_ply, rasterize,
                     remove_splats, save_ply, select_splats)

log = logging.getLogger("nerfgs")


def _floats(text: str, n: int, what: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what} needs {n} comma-separated numbers")
    return vals


def _exists(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFound(f"{p} does not exist")
    return p


def _config(args) -> RunConfig:
    path = getattr(args, "config", None)
    if path is not None:
        _exists(path)
    return load_run_config(path, getattr(args, "seed", None))


def _load_views(cameras, split="train"):
    """Cameras of ``split`` and their images (paths relative to the camera file)."""
    cam_path = _exists(cameras)
    cams, paths, _ = io.load_cameras(cam_path, split)
    if not cams:
        raise FormatError(f"{cam_path}: no '{split}' frames")
    images = [io.load_png(cam_path.parent / p) for p in paths]
    return cams, images, paths


def _load_scene_or_field(path):
    p = _exists(path)
    if p.suffix == ".ply":
        return load_ply(p)
    return load_vxf(p)


def _write_renders(out_dir: Path, names, rgbs, depths=None, opacities=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(names):
        stem = Path(name).stem
        io.save_png(out_dir / f"{stem}.png", rgbs[i])
        if depths is not None:
            io.save_pfm(out_dir / f"{stem}_depth.pfm", depths[i])
        if opacities is not None:
            io.save_pfm(out_dir / f"{stem}_opacity.pfm", opacities[i])


# -- commands ----------------------------------------------------------------

def cmd_gen_scene(args):
    cfg = _config(args)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    bench = build_benchmark(cfg.benchmark)
    bench.scene.save(out / "scene.json")
    names_t = [f"images/train_{i:03d}.png" for i in range(len(bench.train))]
    names_v = [f"images/val_{i:03d}.png" for i in range(len(bench.val))]
    names_o = [f"images/opposite_{i:03d}.png" for i in range(len(bench.opposite))]
    for n, im in zip(names_t + names_v + names_o,
                     bench.train_images + bench.val_images + bench.opposite_images):
        io.save_png(out / n, im)
    io.save_cameras(out / "cameras.json", bench.train + bench.val, names_t + names_v,
                    ["train"] * len(names_t) + ["val"] * len(names_v))
    io.save_cameras(out / "cameras_opposite.json", bench.opposite, names_o,
                    ["val"] * len(names_o))
    return {"scene": str(out / "scene.json"), "views": len(names_t + names_v + names_o)}


def cmd_train_field(args):
    cfg = _config(args)
    cams, images, _ = _load_views(args.cameras)
    fc = cfg.field
    f0 = load_vxf(_exists(args.init)) if args.init else VoxelField.empty(
        fc.dims, fc.bbox_min, fc.bbox_max, fc.init_raw_density)
    f, trace = train_field(f0, cams, images, cfg.train)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_vxf(f, out)
    io.write_trace_csv(out.with_suffix(".trace.csv"), {"loss": trace.loss, "psnr": trace.psnr})
    return {"field": str(out), "final_loss": trace.loss[-1] if trace.loss else None}


def cmd_convert_n2g(args):
    cfg = _config(args)
    f = load_vxf(_exists(args.field))
    cams, _, paths = _load_views(args.cameras)
    scene, report = nerf_to_gs(f, cams, cfg.n2g, with_report=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_ply(scene, out / "splats.ply")
    io.write_json(out / "n2g_report.json", report)
    # zero-iteration renders at the conversion views
    rend = [rasterize(scene, c) for c in cams]
    _write_renders(out / "renders", paths, [r.rgb for r in rend], [r.depth for r in rend])
    return {"splats": len(scene), "kept_rays": report["kept"]}


def cmd_finetune_gs(args):
    cfg = _config(args)
    scene = load_ply(_exists(args.splats))
    cams, images, _ = _load_views(args.cameras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tuned, trace = finetune(scene, cams, images, cfg.finetune)
    save_ply(tuned, out / "splats.ply")
    io.write_trace_csv(out / "finetune_trace.csv", {"loss": trace.loss, "psnr": trace.psnr})
    return {"splats": len(tuned), "iterations": cfg.finetune.iterations}


def cmd_convert_g2n(args):
    cfg = _config(args)
    scene = load_ply(_exists(args.splats))
    cams, images, paths = _load_views(args.cameras)
    f0 = load_vxf(_exists(args.field)) if args.field else None
    extra = (cams, images) if args.mix_originals else None
    f, renders, trace = gs_to_nerf(scene, cams, cfg.g2n, f0=f0, extra_views=extra)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_vxf(f, out / "gsnerf.vxf")
    _write_renders(out / "gs_renders", paths, renders)
    io.write_trace_csv(out / "gsnerf_trace.csv", {"loss": trace.loss, "psnr": trace.psnr})
    return {"field": str(out / "gsnerf.vxf")}


def cmd_edit(args):
    cfg = _config(args)
    scene = load_ply(_exists(args.splats))
    if args.box:
        v = _floats(args.box, 6, "--box")
        region = BoxRegion(tuple(v[:3]), tuple(v[3:]))
    elif args.sphere:
        v = _floats(args.sphere, 4, "--sphere")
        region = SphereRegion(tuple(v[:3]), v[3])
    else:
        ids = json.loads(_exists(args.ids).read_text())
        region = IdRegion(tuple(ids))
    ids = select_splats(scene, region)
    edited = remove_splats(scene, ids) if not args.keep else scene.take(np.asarray(ids, int))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_ply(edited, out / "splats.ply")
    io.write_json(out / "selected_ids.json", ids)
    result = {"selected": len(ids), "remaining": len(edited)}
    if args.refit:
        if not args.cameras:
            raise FormatError("--refit needs --cameras")
        cams, _, paths = _load_views(args.cameras)
        f0 = load_vxf(_exists(args.field)) if args.field else None
        g2n = cfg.g2n
        if f0 is not None:
            g2n = type(g2n)(**{**g2n.__dict__, "reuse_field": True})
        f, renders, _ = gs_to_nerf(edited, cams, g2n, f0=f0)
        save_vxf(f, out / "gsnerf.vxf")
        _write_renders(out / "gs_renders", paths, renders)
        result["field"] = str(out / "gsnerf.vxf")
    return result


def cmd_render(args):
    cfg = _config(args)
    obj = _load_scene_or_field(args.input)
    cam_path = _exists(args.cameras)
    cams, paths, _ = io.load_cameras(cam_path, args.split)
    outs = []
    for c in cams:
        if isinstance(obj, VoxelField):
            outs.append(render_image(obj, c, args.samples or cfg.repro.eval_samples))
        else:
            outs.append(rasterize(obj, c))
    _write_renders(Path(args.out), paths, [o.rgb for o in outs], [o.depth for o in outs],
                   [o.opacity for o in outs])
    return {"rendered": len(outs)}


def cmd_eval(args):
    rdir, tdir = _exists(args.renders), _exists(args.references)
    names = sorted(p.name for p in rdir.glob("*.png"))
    if not names:
        raise FormatError(f"{rdir}: no PNG renders")
    renders = [io.load_png(rdir / n) for n in names]
    refs = [io.load_png(_exists(tdir / n)) for n in names]
    rep = evaluate(renders, refs, names)
    Path(args.out).write_text(rep.to_json())
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    return {"mean_psnr": rep.mean_psnr, "mean_ssim": rep.mean_ssim}


def cmd_repro(args):
    cfg = _config(args)
    res = run_repro(cfg, args.out)
    return {"checks": res["checks"], "out": str(args.out or cfg.out_dir)}


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    schema = io.schema(RunConfig)
    p = argparse.ArgumentParser(
        prog="nerfgs", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Voxel radiance fields <-> Gaussian splats.",
        epilog="config schema (TOML or JSON, unknown keys rejected):\n" + schema)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_,
                            formatter_class=argparse.RawDescriptionHelpFormatter,
                            epilog="config schema:\n" + schema)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", help="run config (.toml or .json)")
        sp.add_argument("--seed", type=int, help="overrides every stage seed")
        return sp

    sp = add("gen-scene", cmd_gen_scene, "write scene JSON, camera files and ground-truth PNGs")
    sp.add_argument("--out", required=True)
    sp = add("train-field", cmd_train_field, "fit a voxel field to posed images")
    sp.add_argument("--cameras", required=True)
    sp.add_argument("--out", required=True, help="output .vxf path")
    sp.add_argument("--init", help="start from this .vxf instead of an empty grid")
    sp = add("convert-n2g", cmd_convert_n2g, "voxel field -> splat PLY")
    sp.add_argument("--field", required=True)
    sp.add_argument("--cameras", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp = add("finetune-gs", cmd_finetune_gs, "fine-tune splats against posed images")
    sp.add_argument("--splats", required=True)
    sp.add_argument("--cameras", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp = add("convert-g2n", cmd_convert_g2n, "splats -> voxel field fit on splat renders")
    sp.add_argument("--splats", required=True)
    sp.add_argument("--cameras", required=True)
    sp.add_argument("--field", help="bbox source, or starting point with g2n.reuse_field")
    sp.add_argument("--mix-originals", action="store_true",
                    help="also train on the camera file's own images")
    sp.add_argument("--out", required=True, help="output directory")
    sp = add("edit", cmd_edit, "select splats in a region and remove them")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--box", help="x0,y0,z0,x1,y1,z1")
    g.add_argument("--sphere", help="cx,cy,cz,r")
    g.add_argument("--ids", help="JSON file with a list of splat ids")
    sp.add_argument("--splats", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--keep", action="store_true", help="keep the selection instead")
    sp.add_argument("--refit", action="store_true", help="fit a field to the edited splats")
    sp.add_argument("--cameras")
    sp.add_argument("--field", help="field to update when refitting")
    sp = add("render", cmd_render, "render RGB/depth/opacity from a .vxf or .ply")
    sp.add_argument("--input", required=True)
    sp.add_argument("--cameras", required=True)
    sp.add_argument("--split", choices=["train", "val"])
    sp.add_argument("--samples", type=int)
    sp.add_argument("--out", required=True, help="output directory")
    sp = add("eval", cmd_eval, "PSNR/SSIM of renders against references (matched by name)")
    sp.add_argument("--renders", required=True)
    sp.add_argument("--references", required=True)
    sp.add_argument("--out", required=True, help="report JSON path")
    sp.add_argument("--csv")
    sp = add("repro", cmd_repro, "full benchmark pipeline and metric table")
    sp.add_argument("--out")
    return p


def _fail(code: str, message: str) -> int:
    sys.stderr.write(json.dumps({"code": code, "message": message}) + "\n")
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        result = args.fn(args)
    except NerfGSError as e:
        return _fail(e.code, str(e))
    except FileNotFoundError as e:
        return _fail("FileNotFound", str(e))
    except (ValueError, argparse.ArgumentTypeError) as e:
        return _fail("InvalidArgument", str(e))
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
