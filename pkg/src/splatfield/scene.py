"""Scene manifests, scene loading, and the synthetic-scene oracle generator.

A scene is a set of posed views (PNG images plus optional SSPT feature /
depth / label maps) sharing one depth range, plus the latent and feature-head
dimensions and an optional label set. The manifest is a JSON file:

    {
      "near": 1.4, "far": 3.4,
      "d_latent": 8, "d_seg": 8, "d_lang": 8,
      "label_set": {"names": [...], "embeddings": "labels.sspt"},
      "views": [
        {"image": "view_000.png", "width": 64, "height": 64,
         "K": [[...],[...],[...]], "R": [[...],[...],[...]], "T": [...],
         "seg_features": "seg_000.sspt",      # optional
         "lang_features": "lang_000.sspt",    # optional
         "labels": "labels_000.sspt",         # optional GT label map
         "depth": "depth_000.sspt",           # optional GT depth
         "held_out": false},
        ...
      ]
    }

Relative paths resolve against the manifest's directory. Held-out views are
excluded from fitting and used for novel-view evaluation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import tensorio
from .cameras import CameraView, orbit_pose
from .field import GaussianField, logit


class SceneError(ValueError):
    pass


@dataclass
class Scene:
    near: float
    far: float
    d_latent: int
    d_seg: int
    d_lang: int
    cams: list[CameraView]
    images: list[np.ndarray]
    seg_feats: list = dc_field(default_factory=list)    # per view, or None
    lang_feats: list = dc_field(default_factory=list)
    labels: list = dc_field(default_factory=list)       # int32 [H,W] or None
    depths: list = dc_field(default_factory=list)
    held_out: list = dc_field(default_factory=list)
    label_names: list | None = None
    label_embeddings: np.ndarray | None = None          # [n_labels, d_lang]

    @property
    def n_views(self) -> int:
        return len(self.cams)

    def train_views(self) -> list[int]:
        return [i for i in range(self.n_views) if not self.held_out[i]]

    def heldout_views(self) -> list[int]:
        return [i for i in range(self.n_views) if self.held_out[i]]


DEFAULT_LABEL_NAMES = ["Wall", "Floor", "Ceiling", "Chair", "Table", "Bed", "Sofa", "Others"]


def ring_cameras(n_views: int, *, radius: float = 2.4, elevation: float = 18.0,
                 image_size: int = 64, focal_factor: float = 1.2,
                 near: float | None = None, far: float | None = None,
                 target=(0.0, 0.0, 0.0)) -> list[CameraView]:
    """Evenly spaced orbit ring facing ``target``."""
    near = radius - 1.0 if near is None else near
    far = radius + 1.0 if far is None else far
    f = focal_factor * image_size
    K = np.array([[f, 0.0, image_size / 2], [0.0, f, image_size / 2], [0.0, 0.0, 1.0]])
    cams = []
    for k in range(n_views):
        az = 360.0 * k / n_views
        R, T = orbit_pose(az, elevation, radius, target)
        cams.append(CameraView(K, R, T, near, far, image_size, image_size))
    return cams


def synth_scene(seed: int, n_gaussians: int, n_views: int, image_size: int = 64,
                d_latent: int = 8, d_seg: int = 8, d_lang: int = 8,
                n_classes: int = 8, n_held_out: int = 1):
    """Deterministic oracle scene: a random field inside the unit cube plus
    ring cameras, with ground truth produced by the rasterizer itself.

    Each Gaussian carries a class (cycling over the first n_classes-1 labels;
    the last label is reserved for background) and a one-hot latent, so
    rendered feature maps have known per-class structure. Returns
    (GaussianField, Scene); the scene's images / feature maps / depths are
    the field's own renders, enabling closed-loop fitting tests.
    """
    if n_gaussians < 1 or n_views < 2:
        raise ValueError("need n_gaussians >= 1 and n_views >= 2")
    if n_held_out >= n_views:
        raise ValueError("cannot hold out every view")
    from . import rasterizer  # deferred: scene is otherwise renderer-free

    rng = np.random.default_rng(seed)
    n_classes = max(2, min(n_classes, d_latent))
    classes = np.arange(n_gaussians) % (n_classes - 1)

    latents = np.zeros((n_gaussians, d_latent), dtype=np.float32)
    latents[np.arange(n_gaussians), classes] = 1.0

    def ortho_head(d_out):
        a = rng.normal(size=(d_out, d_latent))
        q, _ = np.linalg.qr(a)
        return np.ascontiguousarray(q[:, :d_latent].T if d_out >= d_latent else
                                    np.linalg.qr(a.T)[0][:, :d_out]).astype(np.float32)

    w_seg = ortho_head(d_seg)
    w_lang = ortho_head(d_lang)

    fld = GaussianField(
        means=rng.uniform(-0.5, 0.5, (n_gaussians, 3)).astype(np.float32),
        opacity_logits=logit(rng.uniform(0.5, 0.95, n_gaussians)).astype(np.float32),
        log_scales=np.log(rng.uniform(0.03, 0.09, (n_gaussians, 3))).astype(np.float32),
        rotations=rng.normal(size=(n_gaussians, 4)).astype(np.float32),
        colors_raw=logit(rng.uniform(0.2, 0.9, (n_gaussians, 3))).astype(np.float32),
        latents=latents,
        w_seg=w_seg, b_seg=np.zeros(d_seg, dtype=np.float32),
        w_lang=w_lang, b_lang=np.zeros(d_lang, dtype=np.float32),
    )

    cams = ring_cameras(n_views, image_size=image_size)
    names = (DEFAULT_LABEL_NAMES if n_classes == 8
             else [f"class_{k}" for k in range(n_classes - 1)] + ["Others"])
    # class embeddings live in the language head's row space; background is
    # the zero feature, mapped to the last label at evaluation time
    embeddings = np.concatenate(
        [w_lang[:n_classes - 1], rng.normal(size=(1, d_lang)).astype(np.float32) * 1e-3])

    scene = Scene(near=cams[0].near, far=cams[0].far, d_latent=d_latent,
                  d_seg=d_seg, d_lang=d_lang, cams=cams, images=[],
                  label_names=names, label_embeddings=embeddings)

    # identity-head twin renders the composited one-hot latents, giving the
    # exact per-class weight at each pixel for ground-truth labels
    ident = fld.copy()
    ident.w_seg = np.eye(d_latent, dtype=np.float32)
    ident.b_seg = np.zeros(d_latent, dtype=np.float32)

    for i, cam in enumerate(cams):
        out = rasterizer.render(fld, cam)
        class_w = rasterizer.render(ident, cam).feat_seg[..., :n_classes - 1]
        label = np.argmax(class_w, axis=-1).astype(np.int32)
        label[out.alpha < 0.5] = n_classes - 1
        scene.images.append(out.color)
        scene.seg_feats.append(out.feat_seg)
        scene.lang_feats.append(out.feat_lang)
        scene.depths.append(out.depth)
        scene.labels.append(label)
        scene.held_out.append(i >= n_views - n_held_out)
    return fld, scene


def write_scene(scene: Scene, outdir) -> str:
    """Write images as PNG, maps as SSPT, and the manifest JSON. Returns the
    manifest path."""
    os.makedirs(outdir, exist_ok=True)
    views = []
    for i, cam in enumerate(scene.cams):
        rec = {
            "image": f"view_{i:03d}.png",
            "width": cam.width, "height": cam.height,
            "K": cam.K.tolist(), "R": cam.R.tolist(), "T": cam.T.tolist(),
            "held_out": bool(scene.held_out[i]),
        }
        tensorio.write_image(scene.images[i], os.path.join(outdir, rec["image"]))
        for key, name, data in [
            ("seg_features", f"seg_{i:03d}.sspt", scene.seg_feats[i] if scene.seg_feats else None),
            ("lang_features", f"lang_{i:03d}.sspt", scene.lang_feats[i] if scene.lang_feats else None),
            ("depth", f"depth_{i:03d}.sspt", scene.depths[i] if scene.depths else None),
        ]:
            if data is not None:
                tensorio.write_tensor(np.asarray(data, dtype=np.float32), os.path.join(outdir, name))
                rec[key] = name
        if scene.labels and scene.labels[i] is not None:
            name = f"labels_{i:03d}.sspt"
            tensorio.write_tensor(scene.labels[i].astype(np.float32), os.path.join(outdir, name))
            rec["labels"] = name
        views.append(rec)

    manifest = {
        "near": scene.near, "far": scene.far,
        "d_latent": scene.d_latent, "d_seg": scene.d_seg, "d_lang": scene.d_lang,
        "views": views,
    }
    if scene.label_names is not None:
        tensorio.write_tensor(scene.label_embeddings.astype(np.float32),
                              os.path.join(outdir, "label_embeddings.sspt"))
        manifest["label_set"] = {"names": scene.label_names,
                                 "embeddings": "label_embeddings.sspt"}
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def load_scene(manifest_path) -> Scene:
    """Load and validate a scene: file existence, feature-map dimensions
    against the declared d_seg / d_lang, camera sanity."""
    manifest_path = str(manifest_path)
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise SceneError(f"missing manifest {manifest_path}")
    root = os.path.dirname(manifest_path)
    try:
        with open(manifest_path) as fh:
            m = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SceneError(f"malformed manifest: {exc}") from exc

    def resolve(rel):
        p = os.path.join(root, rel)
        if not os.path.exists(p):
            raise SceneError(f"missing file {rel}")
        return p

    try:
        views = m["views"]
        scene = Scene(near=float(m["near"]), far=float(m["far"]),
                      d_latent=int(m["d_latent"]), d_seg=int(m["d_seg"]),
                      d_lang=int(m["d_lang"]), cams=[], images=[])
    except KeyError as exc:
        raise SceneError(f"manifest missing key {exc}") from exc
    if not views:
        raise SceneError("manifest has no views")

    for rec in views:
        cam = CameraView(np.array(rec["K"], dtype=np.float64),
                         np.array(rec["R"], dtype=np.float64),
                         np.array(rec["T"], dtype=np.float64),
                         scene.near, scene.far,
                         int(rec["width"]), int(rec["height"]))
        img = tensorio.read_image(resolve(rec["image"]))
        if img.shape[:2] != (cam.height, cam.width):
            raise SceneError(
                f"image {rec['image']} is {img.shape[:2]}, camera says "
                f"{(cam.height, cam.width)}")
        scene.cams.append(cam)
        scene.images.append(img)

        def load_map(key, want_dim):
            if key not in rec:
                return None
            arr = tensorio.read_tensor(resolve(rec[key]))
            if want_dim is not None and (arr.ndim != 3 or arr.shape[2] != want_dim):
                raise SceneError(
                    f"dim mismatch: {rec[key]} has shape {arr.shape}, "
                    f"expected last dim {want_dim}")
            return arr

        scene.seg_feats.append(load_map("seg_features", scene.d_seg))
        scene.lang_feats.append(load_map("lang_features", scene.d_lang))
        dep = load_map("depth", None)
        scene.depths.append(dep if dep is None else np.asarray(dep))
        lab = load_map("labels", None)
        scene.labels.append(lab if lab is None else lab.astype(np.int32))
        scene.held_out.append(bool(rec.get("held_out", False)))

    if "label_set" in m:
        ls = m["label_set"]
        emb = tensorio.read_tensor(resolve(ls["embeddings"]))
        if emb.ndim != 2 or emb.shape[0] != len(ls["names"]) or emb.shape[1] != scene.d_lang:
            raise SceneError(f"label embeddings shape {emb.shape} does not match "
                             f"{len(ls['names'])} names x d_lang {scene.d_lang}")
        scene.label_names = list(ls["names"])
        scene.label_embeddings = emb
    return scene
