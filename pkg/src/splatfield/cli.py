"""Command-line entry points: synth / fit / render / segment / eval / serve.

Every subcommand exits 0 on success and nonzero with a diagnostic on any
module error; outputs land at the paths given by flags, in the documented
formats (PNG images, SSPT tensors, CSV reports, SSPF fields).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import costvolume as cvm
from . import losses, metrics, optim, rasterizer, segment, tensorio
from .cameras import CameraView, axes_convergence_point, orbit_pose
from .field import read_field, write_field
from .scene import Scene, load_scene, synth_scene, write_scene

LABEL_COLORS = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
    [245, 130, 48], [145, 30, 180], [70, 240, 240], [128, 128, 128],
    [210, 245, 60], [250, 190, 190], [0, 128, 128], [170, 110, 40],
], dtype=np.uint8)


def label_color(i: int) -> np.ndarray:
    return LABEL_COLORS[i % len(LABEL_COLORS)]


def _cmd_synth(args):
    field, scene = synth_scene(args.seed, args.gaussians, args.views,
                               image_size=args.size, d_latent=args.d_latent,
                               d_seg=args.d_seg, d_lang=args.d_lang,
                               n_held_out=args.held_out)
    write_scene(scene, args.out)
    write_field(field, os.path.join(args.out, "gt_field.sspf"))
    print(f"wrote {scene.n_views}-view scene to {args.out} "
          f"({args.gaussians} gaussians, held out {scene.heldout_views()})")
    return 0


def _cmd_fit(args):
    import logging

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    scene = load_scene(args.scene)
    cfg = optim.FitConfig(
        iters_stage1=args.iters_stage1, iters_stage2=args.iters_stage2,
        seed=args.seed, base_lr=args.lr,
        volume_downsample=args.downsample, n_depth_candidates=args.candidates,
        softmax_temperature=args.temperature, init_stride=args.stride,
        freeze_latents_stage2=args.freeze_latents,
        w_photometric=args.w_photometric, w_sam=args.w_sam, w_clip=args.w_clip,
    )
    field = optim.init_from_costvolume(scene, cfg)
    if args.dump_costvolume:
        feats = optim._correlation_features(
            scene, scene.cams[0].height // cfg.volume_downsample,
            scene.cams[0].width // cfg.volume_downsample)
        cands = cvm.depth_candidates(scene.near, scene.far, cfg.n_depth_candidates)
        for i, vol in enumerate(cvm.build_cost_volume(feats, scene.cams, cands)):
            tensorio.write_tensor(vol.corr.astype(np.float32),
                                  f"{args.dump_costvolume}.view{i:03d}.sspt")
    fitted, history = optim.fit(scene, field, cfg)
    write_field(fitted, args.out)
    optim.write_history_csv(history, os.path.splitext(args.out)[0] + "_history.csv")
    last = history[-1] if history else {"total": float("nan")}
    print(f"fit {fitted.n_gaussians} gaussians "
          f"({cfg.iters_stage1}+{cfg.iters_stage2} iters, final loss {last['total']:.5f}) "
          f"-> {args.out}")
    return 0


def _ring_cams(scene: Scene, n: int) -> list[CameraView]:
    centers = np.stack([c.center for c in scene.cams])
    target = axes_convergence_point(scene.cams)
    radii = np.linalg.norm(centers - target, axis=1)
    radius = float(radii.mean())
    elev = float(np.rad2deg(np.arcsin(
        np.clip((centers[:, 1] - target[1]) / radii, -1, 1)).mean()))
    ref = scene.cams[0]
    cams = []
    for k in range(n):
        R, T = orbit_pose(360.0 * k / n, elev, radius, target)
        cams.append(CameraView(ref.K, R, T, ref.near, ref.far, ref.width, ref.height))
    return cams


def _cmd_render(args):
    scene = load_scene(args.scene)
    field = read_field(args.field)
    os.makedirs(args.out, exist_ok=True)
    if args.pose_ring:
        cams = _ring_cams(scene, args.pose_ring)
        names = [f"ring_{k:03d}" for k in range(args.pose_ring)]
    else:
        views = [int(v) for v in args.view.split(",")] if args.view else range(scene.n_views)
        cams = [scene.cams[v] for v in views]
        names = [f"view_{v:03d}" for v in views]
    for name, out in zip(names, rasterizer.render_pose_path(field, cams)):
        tensorio.write_image(np.clip(out.color, 0, 1), os.path.join(args.out, f"{name}.png"))
        tensorio.write_tensor(out.depth.astype(np.float32),
                              os.path.join(args.out, f"{name}_depth.sspt"))
        tensorio.write_image(metrics.pca_project(out.feat_seg),
                             os.path.join(args.out, f"{name}_pca_seg.png"))
        tensorio.write_image(metrics.pca_project(out.feat_lang),
                             os.path.join(args.out, f"{name}_pca_lang.png"))
    print(f"rendered {len(cams)} poses to {args.out}")
    return 0


def _cmd_segment(args):
    scene = load_scene(args.scene)
    field = read_field(args.field)
    os.makedirs(args.out, exist_ok=True)
    cam = scene.cams[args.view]
    out = rasterizer.render(field, cam)
    if args.point:
        x, y = (int(t) for t in args.point.split(","))
        thresholds = tuple(float(t) for t in args.thresholds.split(","))
        masks = segment.prompt_segment(out.feat_seg, (x, y), thresholds)
        for name, m in zip(("small", "medium", "large"), masks):
            img = np.repeat(m[:, :, None].astype(np.float64), 3, axis=2)
            tensorio.write_image(img, os.path.join(args.out, f"mask_{name}.png"))
        print(f"wrote 3 masks for prompt ({x},{y}) on view {args.view} to {args.out}")
    else:
        if scene.label_embeddings is None:
            print("scene has no label set; provide one via the manifest", file=sys.stderr)
            return 2
        ls = segment.LabelSet(scene.label_names, scene.label_embeddings)
        res = segment.open_vocab_segment(out.feat_lang, ls)
        img = np.zeros((cam.height, cam.width, 3), dtype=np.float64)
        for i in range(len(ls.names)):
            img[res.labels == i] = label_color(i) / 255.0
        tensorio.write_image(img, os.path.join(args.out, "labels.png"))
        with open(os.path.join(args.out, "legend.csv"), "w") as fh:
            fh.write("index,name,r,g,b\n")
            for i, n in enumerate(ls.names):
                c = label_color(i)
                fh.write(f"{i},{n},{c[0]},{c[1]},{c[2]}\n")
        print(f"wrote label map + legend for view {args.view} to {args.out}")
    return 0


def _cmd_eval(args):
    scene = load_scene(args.scene)
    field = read_field(args.field)
    views = scene.heldout_views() if args.held_out_only else list(range(scene.n_views))
    if not views:
        print("no views to evaluate", file=sys.stderr)
        return 2
    ls = None
    if scene.label_embeddings is not None:
        ls = segment.LabelSet(scene.label_names, scene.label_embeddings)
    rows = []
    for v in views:
        out = rasterizer.render(field, scene.cams[v])
        row = {"view": v, "held_out": int(scene.held_out[v]),
               "psnr": metrics.psnr(np.clip(out.color, 0, 1), scene.images[v]),
               "ssim": metrics.ssim(np.clip(out.color, 0, 1), scene.images[v]),
               "miou": "", "macc": ""}
        if ls is not None and scene.labels and scene.labels[v] is not None:
            res = segment.open_vocab_segment(out.feat_lang, ls)
            miou, macc = segment.miou_macc(res.labels, scene.labels[v], len(ls.names))
            row["miou"], row["macc"] = f"{miou:.6f}", f"{macc:.6f}"
        rows.append(row)
    with open(args.out, "w") as fh:
        fh.write("view,held_out,psnr,ssim,miou,macc\n")
        for r in rows:
            fh.write(f"{r['view']},{r['held_out']},{r['psnr']:.4f},{r['ssim']:.6f},"
                     f"{r['miou']},{r['macc']}\n")
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    print(f"evaluated {len(rows)} views (mean PSNR {mean_psnr:.2f} dB) -> {args.out}")
    return 0


def _cmd_serve(args):
    from .service import SplatService

    scene = load_scene(args.scene)
    field = read_field(args.field)
    bind = os.environ.get("SPLATFIELD_BIND", f"{args.host}:{args.port}")
    host, port = bind.rsplit(":", 1)
    svc = SplatService(field, scene, resolution_cap=args.resolution_cap,
                       frontend_dir=args.frontend)
    print(f"serving on http://{host}:{port}")
    svc.serve_forever(host, int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatfield",
                                description="semantic Gaussian field engine")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic oracle scene")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--gaussians", type=int, default=20)
    sp.add_argument("--views", type=int, default=6)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--d-latent", type=int, default=8)
    sp.add_argument("--d-seg", type=int, default=8)
    sp.add_argument("--d-lang", type=int, default=8)
    sp.add_argument("--held-out", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=_cmd_synth)

    fp = sub.add_parser("fit", help="fit a field to a scene")
    fp.add_argument("scene")
    fp.add_argument("--out", required=True)
    fp.add_argument("--iters-stage1", type=int, default=2000)
    fp.add_argument("--iters-stage2", type=int, default=500)
    fp.add_argument("--seed", type=int, default=0)
    fp.add_argument("--lr", type=float, default=1e-4)
    fp.add_argument("--downsample", type=int, default=4)
    fp.add_argument("--candidates", type=int, default=64)
    fp.add_argument("--temperature", type=float, default=1.0)
    fp.add_argument("--stride", type=int, default=2)
    fp.add_argument("--freeze-latents", action="store_true")
    fp.add_argument("--w-photometric", type=float, default=1.0)
    fp.add_argument("--w-sam", type=float, default=1.0)
    fp.add_argument("--w-clip", type=float, default=1.0)
    fp.add_argument("--dump-costvolume", default=None,
                    help="path prefix for per-view SSPT correlation dumps")
    fp.set_defaults(fn=_cmd_fit)

    rp = sub.add_parser("render", help="render poses to PNG + SSPT + PCA PNGs")
    rp.add_argument("--scene", required=True)
    rp.add_argument("--field", required=True)
    rp.add_argument("--out", required=True)
    rp.add_argument("--view", default=None, help="comma-separated view indices")
    rp.add_argument("--pose-ring", type=int, default=0)
    rp.set_defaults(fn=_cmd_render)

    gp = sub.add_parser("segment", help="prompt or open-vocabulary segmentation")
    gp.add_argument("--scene", required=True)
    gp.add_argument("--field", required=True)
    gp.add_argument("--out", required=True)
    gp.add_argument("--view", type=int, default=0)
    gp.add_argument("--point", default=None, help="x,y pixel prompt")
    gp.add_argument("--thresholds", default="0.85,0.7,0.5")
    gp.set_defaults(fn=_cmd_segment)

    ep = sub.add_parser("eval", help="PSNR/SSIM/mIoU/mAcc against ground truth")
    ep.add_argument("--scene", required=True)
    ep.add_argument("--field", required=True)
    ep.add_argument("--out", required=True)
    ep.add_argument("--held-out-only", action="store_true")
    ep.set_defaults(fn=_cmd_eval)

    vp = sub.add_parser("serve", help="HTTP service for the viewer")
    vp.add_argument("--scene", required=True)
    vp.add_argument("--field", required=True)
    vp.add_argument("--host", default="127.0.0.1")
    vp.add_argument("--port", type=int, default=8080)
    vp.add_argument("--resolution-cap", type=int, default=256)
    vp.add_argument("--frontend", default=None,
                    help="directory of static viewer files to serve at /")
    vp.set_defaults(fn=_cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
