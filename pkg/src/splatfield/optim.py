"""Adam with cosine learning-rate decay, the two-stage fitting loop, and
field initialization from plane-sweep depth.

Stage 1 fits geometry, appearance, the shared latents and the segmentation
head against photometric + segmentation-distillation losses. Stage 2 freezes
the segmentation branch (always the head; optionally the shared latents) and
fits the language head against language distillation. Both stages report a
loss history suitable for CSV dumping.

Everything is deterministic given (scene, config, seed): training views are
visited round-robin, reductions run in fixed order, and the initializer's
random projection is seeded.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

log = logging.getLogger(__name__)

from . import costvolume as cvm
from . import losses
from . import rasterizer
from .cameras import unproject
from .field import GaussianField, logit
from .scene import Scene
from .tensorio import resample_bilinear

STAGE1_GROUPS = ("means", "opacity_logits", "log_scales", "rotations",
                 "colors_raw", "latents", "w_seg", "b_seg")
STAGE2_GROUPS = ("w_lang", "b_lang", "latents")

# per-group multipliers on the base rate (desk-scale defaults; geometry moves
# on coarser steps than the near-linear color / feature paths)
DEFAULT_LR_SCALES = {
    "means": 20.0,
    "opacity_logits": 250.0,
    "log_scales": 50.0,
    "rotations": 10.0,
    "colors_raw": 100.0,
    "latents": 100.0,
    "w_seg": 50.0,
    "b_seg": 50.0,
    "w_lang": 50.0,
    "b_lang": 50.0,
}


class NonFiniteGradientError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class FitConfig:
    iters_stage1: int = 2000
    iters_stage2: int = 500
    base_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_scales: dict = dc_field(default_factory=lambda: dict(DEFAULT_LR_SCALES))
    w_photometric: float = 1.0
    w_sam: float = 1.0
    w_clip: float = 1.0
    lam_perceptual: float = losses.DEFAULT_LAMBDA_PERCEPTUAL
    lam_mask: float = losses.DEFAULT_LAMBDA_MASK
    focal_alpha: float = losses.FOCAL_ALPHA
    focal_gamma: float = losses.FOCAL_GAMMA
    seed: int = 0
    log_every: int = 50
    freeze_latents_stage2: bool = False
    # initialization from plane sweep
    volume_downsample: int = 4
    n_depth_candidates: int = 64
    softmax_temperature: float = 1.0
    init_stride: int = 2
    d_latent: int | None = None  # default: scene.d_latent

    def __post_init__(self):
        if self.iters_stage1 < 0 or self.iters_stage2 < 0:
            raise ValueError("iteration counts must be >= 0")
        for k, v in [("w_photometric", self.w_photometric), ("w_sam", self.w_sam),
                     ("w_clip", self.w_clip), ("lam_mask", self.lam_mask)]:
            if v < 0:
                raise ValueError(f"{k} must be >= 0")


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total)): base at 0, zero at total."""
    if total_steps <= 0:
        return base_lr
    step = min(step, total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimState:
    groups: tuple
    total_steps: int
    base_lr: float
    lr_scales: dict
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    stage: int = 1
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)

    @classmethod
    def for_field(cls, field: GaussianField, groups, total_steps, cfg: FitConfig,
                  stage: int) -> "OptimState":
        st = cls(groups=tuple(groups), total_steps=total_steps, base_lr=cfg.base_lr,
                 lr_scales=dict(cfg.lr_scales), beta1=cfg.beta1, beta2=cfg.beta2,
                 eps=cfg.eps, stage=stage)
        params = field.params()
        for g in st.groups:
            st.m[g] = np.zeros_like(params[g], dtype=np.float64)
            st.v[g] = np.zeros_like(params[g], dtype=np.float64)
        return st

    @property
    def lr(self) -> float:
        return cosine_lr(self.base_lr, self.step, self.total_steps)


def adam_step(params: dict, grads: dict, state: OptimState) -> None:
    """One bias-corrected Adam update, in place, on state.groups only."""
    lr_now = state.lr
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for g in state.groups:
        gr = np.asarray(grads[g], dtype=np.float64)
        if not np.all(np.isfinite(gr)):
            raise NonFiniteGradientError(f"non-finite gradient in group {g!r}")
        state.m[g] = state.beta1 * state.m[g] + (1.0 - state.beta1) * gr
        state.v[g] = state.beta2 * state.v[g] + (1.0 - state.beta2) * gr * gr
        m_hat = state.m[g] / c1
        v_hat = state.v[g] / c2
        upd = lr_now * state.lr_scales.get(g, 1.0) * m_hat / (np.sqrt(v_hat) + state.eps)
        params[g] -= upd.astype(params[g].dtype)
    state.step = t


def luminance_patch_features(image: np.ndarray, h: int, w: int) -> np.ndarray:
    """3x3 luminance patches (9 channels) at (h, w): the matching features
    used when a scene ships no per-view feature maps."""
    gray = image.mean(axis=2)
    small = resample_bilinear(gray, h, w)
    pad = np.pad(small, 1, mode="edge")
    chans = [pad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
             for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    return np.stack(chans, axis=2).astype(np.float32)


def _correlation_features(scene: Scene, h: int, w: int) -> list[np.ndarray]:
    feats = []
    for i in range(scene.n_views):
        fm = scene.seg_feats[i] if scene.seg_feats else None
        if fm is not None:
            feats.append(resample_bilinear(np.asarray(fm, np.float32), h, w))
        else:
            feats.append(luminance_patch_features(scene.images[i], h, w))
    return feats


def init_from_costvolume(scene: Scene, cfg: FitConfig | None = None) -> GaussianField:
    """One Gaussian per (strided) cost-volume pixel per view: centers from
    unprojected regressed depth, colors from the source pixels, latents from
    the fused condition tensor through a fixed seeded random projection."""
    cfg = cfg or FitConfig()
    s = cfg.volume_downsample
    k = cfg.init_stride
    cam0 = scene.cams[0]
    h, w = cam0.height // s, cam0.width // s
    if h < 1 or w < 1:
        raise ValueError(f"downsample {s} degenerates {cam0.width}x{cam0.height}")
    if scene.far - scene.near <= 0:
        raise ValueError("degenerate depth range")

    cands = cvm.depth_candidates(scene.near, scene.far, cfg.n_depth_candidates)
    spacing = float(cands[1] - cands[0])
    feats = _correlation_features(scene, h, w)
    vols = cvm.build_cost_volume(feats, scene.cams, cands)

    d_latent = cfg.d_latent or scene.d_latent
    rng = np.random.default_rng(np.random.PCG64(cfg.seed ^ 0x5EEDFACE))
    fused_dim = cfg.n_depth_candidates + feats[0].shape[2]
    latent_proj = (rng.normal(size=(fused_dim, d_latent)) / np.sqrt(fused_dim)).astype(np.float32)

    means, colors, lats, scales = [], [], [], []
    for i in range(scene.n_views):
        cam_s = scene.cams[i].scaled(w, h)
        depth = cvm.regress_depth(vols[i], cfg.softmax_temperature)
        # pixels with no cross-view evidence (flat correlation profile) read
        # as the candidate mean, which drops mid-air occluders into the scene
        # volume; park them at the far plane instead, where they are behind
        # everything from every view
        conf = vols[i].corr.max(axis=2) - vols[i].corr.mean(axis=2)
        no_signal = conf <= 1e-3 * max(float(conf.max()), 1e-12)
        depth = np.where(no_signal, np.float32(scene.far), depth)
        pts = unproject(np.asarray(depth, np.float64), cam_s)[::k, ::k].reshape(-1, 3)
        img_s = resample_bilinear(scene.images[i].astype(np.float32), h, w)
        colors.append(img_s[::k, ::k].reshape(-1, 3))
        fused = cvm.fuse_conditions(vols[i], [feats[i]])
        lats.append(fused[::k, ::k].reshape(-1, fused_dim) @ latent_proj)
        means.append(pts)
        # isotropic footprint: the candidate spacing, floored by half the
        # local center-grid pitch so the initial render has no holes
        z = depth[::k, ::k].reshape(-1).astype(np.float64)
        scales.append(np.maximum(spacing, 0.5 * z * (s * k) / scene.cams[i].fx))

    n = sum(m.shape[0] for m in means)
    col = np.clip(np.concatenate(colors), 1e-3, 1.0 - 1e-3)
    head_rng = np.random.default_rng(np.random.PCG64(cfg.seed + 101))
    w_seg = (head_rng.normal(size=(d_latent, scene.d_seg)) / np.sqrt(d_latent)).astype(np.float32)
    w_lang = (head_rng.normal(size=(d_latent, scene.d_lang)) / np.sqrt(d_latent)).astype(np.float32)
    return GaussianField(
        means=np.concatenate(means).astype(np.float32),
        opacity_logits=np.zeros(n, dtype=np.float32),  # logit(0.5)
        log_scales=np.log(np.concatenate(scales))[:, None].repeat(3, 1).astype(np.float32),
        rotations=np.tile(np.array([1.0, 0, 0, 0], np.float32), (n, 1)),
        colors_raw=logit(col).astype(np.float32),
        latents=np.concatenate(lats).astype(np.float32),
        w_seg=w_seg, b_seg=np.zeros(scene.d_seg, np.float32),
        w_lang=w_lang, b_lang=np.zeros(scene.d_lang, np.float32),
    )


def _stage1_step(field, scene, view, cfg, prompts):
    img = scene.images[view]
    seg_t = scene.seg_feats[view] if scene.seg_feats else None

    def upstream(out):
        photo = losses.photometric_loss(out.color, img, cfg.lam_perceptual)
        ups = {"color": cfg.w_photometric * photo.grads["rendered"]}
        row = {"photometric": photo.value, "seg_distill": 0.0, "seg_mask": 0.0,
               "lang_distill": 0.0}
        total = cfg.w_photometric * photo.value
        if seg_t is not None and cfg.w_sam > 0:
            sam = losses.stage1_loss(out, seg_t, prompts=prompts,
                                     lam_mask=cfg.lam_mask, alpha=cfg.focal_alpha,
                                     gamma=cfg.focal_gamma)
            ups["feat_seg"] = cfg.w_sam * sam.grads["feat_seg"]
            row["seg_distill"] = sam.stats["distill"]
            row["seg_mask"] = sam.stats["mask"]
            total += cfg.w_sam * sam.value
        row["total"] = total
        return row, ups

    _, grads, row = rasterizer.render_and_grads(field, scene.cams[view], upstream)
    return grads, row


def _stage2_step(field, scene, view, cfg, pool_masks):
    lang_t = scene.lang_feats[view]
    masks = pool_masks.get(view) if pool_masks else None

    def upstream(out):
        clip = losses.stage2_loss(out, lang_t, pooled=masks is not None,
                                  masks_per_scale=masks)
        row = {"photometric": 0.0, "seg_distill": 0.0, "seg_mask": 0.0,
               "lang_distill": clip.value, "total": cfg.w_clip * clip.value}
        return row, {"feat_lang": cfg.w_clip * clip.grads["feat_lang"]}

    _, grads, row = rasterizer.render_and_grads(field, scene.cams[view], upstream)
    return grads, row


def fit(scene: Scene, field: GaussianField, cfg: FitConfig | None = None, *,
        prompt_supervision: dict | None = None,
        pool_masks: dict | None = None):
    """Two-stage fit. Returns (fitted field, history rows).

    Stage 1 updates {means, opacity, scales, rotations, colors, latents,
    W_S, b_S}; stage 2 updates {W_L, b_L} plus, unless frozen in the config,
    the shared latents. Training views are visited round-robin; history rows
    carry every loss term and the current learning rate.
    """
    cfg = cfg or FitConfig()
    train = scene.train_views()
    if len(scene.cams) < 2:
        raise ValueError("scene needs at least 2 views")
    if not train:
        raise ValueError("no training views")
    field = field.copy()
    params = field.params()
    history = []

    state = OptimState.for_field(field, STAGE1_GROUPS, cfg.iters_stage1, cfg, stage=1)
    for it in range(cfg.iters_stage1):
        view = train[it % len(train)]
        prompts = prompt_supervision.get(view) if prompt_supervision else None
        lr_now = state.lr
        grads, row = _stage1_step(field, scene, view, cfg, prompts)
        if not np.isfinite(row["total"]):
            raise DivergenceError(f"non-finite loss at stage 1 iteration {it}")
        adam_step(params, grads.params(), state)
        history.append({"iteration": it, "stage": 1, "lr": lr_now, **row})
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("stage 1 iter %d: total %.5f (photo %.5f, seg %.5f) lr %.2e",
                     it, row["total"], row["photometric"], row["seg_distill"], lr_now)

    has_lang = scene.lang_feats and all(
        scene.lang_feats[v] is not None for v in train)
    if cfg.iters_stage2 > 0 and not has_lang:
        raise ValueError("stage 2 requires language targets on all training views")
    groups2 = tuple(g for g in STAGE2_GROUPS
                    if not (g == "latents" and cfg.freeze_latents_stage2))
    state2 = OptimState.for_field(field, groups2, cfg.iters_stage2, cfg, stage=2)
    for it in range(cfg.iters_stage2):
        view = train[it % len(train)]
        lr_now = state2.lr
        grads, row = _stage2_step(field, scene, view, cfg, pool_masks)
        if not np.isfinite(row["total"]):
            raise DivergenceError(f"non-finite loss at stage 2 iteration {it}")
        adam_step(params, grads.params(), state2)
        history.append({"iteration": cfg.iters_stage1 + it, "stage": 2,
                        "lr": lr_now, **row})
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("stage 2 iter %d: lang %.5f lr %.2e", it, row["lang_distill"], lr_now)
    return field, history


HISTORY_FIELDS = ["iteration", "stage", "photometric", "seg_distill", "seg_mask",
                  "lang_distill", "total", "lr"]


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, "") for k in HISTORY_FIELDS})
