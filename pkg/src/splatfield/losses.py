"""Distillation, mask, and photometric losses with analytic gradients.

Every loss returns a LossValue carrying the scalar and the gradient with
respect to each differentiable input (keyed by argument name). Gradients are
exact for the mean-reduced values, so they can be chained straight into the
rasterizer's backward pass.

The perceptual term of the photometric loss is a hook: the engine ships no
pretrained feature network, so the default hook contributes 0 while the 0.05
weight is kept in the configuration for parity with the training recipe.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .rasterizer import RenderOutput

DEFAULT_LAMBDA_PERCEPTUAL = 0.05
DEFAULT_LAMBDA_MASK = 0.2
DICE_WEIGHT = 1.0 / 20.0   # focal : dice combined 20 : 1
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
DICE_EPS = 1.0
COSINE_EPS = 1e-8
PROB_CLAMP = 1e-7


@dataclass
class LossValue:
    value: float
    grads: dict = dc_field(default_factory=dict)
    stats: dict = dc_field(default_factory=dict)


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def photometric_loss(rendered: np.ndarray, target: np.ndarray,
                     lam_perceptual: float = DEFAULT_LAMBDA_PERCEPTUAL,
                     perceptual_hook=None) -> LossValue:
    """Mean absolute error plus lam * hook(rendered, target).

    The hook, when registered, must return (value, grad_wrt_rendered);
    without one the perceptual term is 0. Gradient key: "rendered".
    """
    _check_same_shape(rendered, target, "photometric_loss")
    diff = rendered.astype(np.float64) - target.astype(np.float64)
    n = diff.size
    value = float(np.abs(diff).mean())
    grad = np.sign(diff) / n
    if perceptual_hook is not None:
        pv, pg = perceptual_hook(rendered, target)
        value += lam_perceptual * float(pv)
        grad = grad + lam_perceptual * np.asarray(pg, dtype=np.float64)
    return LossValue(value, {"rendered": grad.astype(rendered.dtype)})


def cosine_distill_loss(pred: np.ndarray, target: np.ndarray) -> LossValue:
    """Mean over pixels of 1 - cos(pred, target); zero-norm target pixels are
    skipped and counted in stats["skipped"]. Gradient key: "pred"."""
    _check_same_shape(pred, target, "cosine_distill_loss")
    p = pred.astype(np.float64).reshape(-1, pred.shape[-1])
    t = target.astype(np.float64).reshape(-1, target.shape[-1])
    tn = np.linalg.norm(t, axis=1)
    use = tn > 0
    skipped = int((~use).sum())
    grad = np.zeros_like(p)
    if not use.any():
        return LossValue(0.0, {"pred": grad.reshape(pred.shape).astype(pred.dtype)},
                         {"skipped": skipped, "used": 0})
    pu, tu = p[use], t[use]
    tnu = tn[use]
    pn = np.maximum(np.linalg.norm(pu, axis=1), COSINE_EPS)
    dot = np.einsum("nc,nc->n", pu, tu)
    cos = dot / (pn * tnu)
    cnt = int(use.sum())
    value = float(np.mean(1.0 - cos))
    # d(1-cos)/dp = -t/(|p||t|) + dot * p / (|p|^3 |t|)
    g = -tu / (pn * tnu)[:, None] + (dot / (pn ** 3 * tnu))[:, None] * pu
    grad[use] = g / cnt
    return LossValue(value, {"pred": grad.reshape(pred.shape).astype(pred.dtype)},
                     {"skipped": skipped, "used": cnt})


def focal_loss(prob: np.ndarray, labels: np.ndarray,
               alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> LossValue:
    """Mean of -alpha_t (1 - p_t)^gamma log(p_t) with p_t = p for positives
    and 1-p for negatives; probabilities clamped to [1e-7, 1-1e-7].
    Gradient key: "prob"."""
    _check_same_shape(prob, labels, "focal_loss")
    y = labels.astype(np.float64)
    p = np.clip(prob.astype(np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (prob > PROB_CLAMP) & (prob < 1.0 - PROB_CLAMP)
    pt = np.where(y == 1.0, p, 1.0 - p)
    at = np.where(y == 1.0, alpha, 1.0 - alpha)
    one_m = 1.0 - pt
    logpt = np.log(pt)
    value = float(np.mean(-at * one_m ** gamma * logpt))
    # d/dpt [-a (1-pt)^g log pt] = a g (1-pt)^(g-1) log pt - a (1-pt)^g / pt
    dpt = at * gamma * one_m ** np.maximum(gamma - 1.0, 0.0) * logpt - at * one_m ** gamma / pt
    dp = np.where(y == 1.0, dpt, -dpt) * inside / p.size
    return LossValue(value, {"prob": dp.astype(prob.dtype)})


def dice_loss(soft: np.ndarray, labels: np.ndarray, eps: float = DICE_EPS) -> LossValue:
    """1 - (2 sum(x y) + eps) / (sum x + sum y + eps). Gradient key: "soft"."""
    _check_same_shape(soft, labels, "dice_loss")
    x = soft.astype(np.float64)
    y = labels.astype(np.float64)
    inter = float((x * y).sum())
    denom = float(x.sum() + y.sum() + eps)
    num = 2.0 * inter + eps
    value = 1.0 - num / denom
    grad = -(2.0 * y * denom - num) / denom ** 2
    return LossValue(value, {"soft": grad.astype(soft.dtype)})


def mask_loss(prob: np.ndarray, labels: np.ndarray,
              alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> LossValue:
    """Focal + dice at the fixed 20:1 ratio. Gradient key: "prob"."""
    fl = focal_loss(prob, labels, alpha, gamma)
    dc = dice_loss(prob, labels)
    return LossValue(fl.value + DICE_WEIGHT * dc.value,
                     {"prob": fl.grads["prob"] + DICE_WEIGHT * dc.grads["soft"]},
                     {"focal": fl.value, "dice": dc.value})


def hierarchical_pool(feat: np.ndarray, masks_per_scale: dict) -> dict:
    """Average-pool features inside each mask, per scale.

    masks_per_scale maps a scale name (conventionally "s", "m", "l") to a
    list of binary [H,W] masks. Within a scale every pixel of a mask gets the
    mask's mean feature; overlaps resolve last-writer-wins in list order;
    uncovered pixels pass through; empty masks are skipped with a warning.
    """
    out = {}
    for scale, masks in masks_per_scale.items():
        pooled = feat.copy()
        for k, m in enumerate(masks):
            mb = np.asarray(m, bool)
            if not mb.any():
                warnings.warn(f"hierarchical_pool: empty mask {k} at scale {scale!r} skipped")
                continue
            pooled[mb] = feat[mb].mean(axis=0)
        out[scale] = pooled
    return out


def _prompt_soft_mask(feat_seg: np.ndarray, point):
    """Similarity-derived soft mask for a point prompt, with its gradient
    structure: returns (soft [H,W], cos [H,W], unit feature field, unit query,
    norms)."""
    x, y = point
    q = feat_seg[y, x].astype(np.float64)
    qn = np.linalg.norm(q)
    if qn <= 0:
        raise ValueError(f"zero-norm query pixel {point}")
    f = feat_seg.astype(np.float64)
    fn = np.maximum(np.linalg.norm(f, axis=2), COSINE_EPS)
    cos = (f @ q) / (fn * qn)
    soft = 0.5 * (cos + 1.0)
    return soft, cos, f, fn, q, qn


def stage1_loss(render: RenderOutput, seg_target: np.ndarray, prompts=None,
                lam_mask: float = DEFAULT_LAMBDA_MASK,
                alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> LossValue:
    """Segmentation-branch loss: feature distillation against the target map
    plus lam_mask * mask_loss on prompt-derived soft masks when point prompts
    with ground-truth masks are supplied. Gradient key: "feat_seg"."""
    dist = cosine_distill_loss(render.feat_seg, seg_target)
    value = dist.value
    grad = dist.grads["pred"].astype(np.float64)
    stats = {"distill": dist.value, "mask": 0.0, **dist.stats}
    if prompts:
        m_total = 0.0
        for point, gt_mask in prompts:
            soft, cos, f, fn, q, qn = _prompt_soft_mask(render.feat_seg, point)
            ml = mask_loss(soft, gt_mask, alpha, gamma)
            m_total += ml.value
            dsoft = ml.grads["prob"].astype(np.float64) * 0.5  # dsoft/dcos = 1/2
            # cos = (f.q)/(|f||q|): gradient to every pixel's feature and,
            # accumulated, to the query pixel's feature
            coef = dsoft / (fn * qn)
            gf = coef[..., None] * q[None, None, :]
            gf -= (dsoft * cos / fn ** 2)[..., None] * f
            gq = np.einsum("hw,hwc->c", coef, f) \
                - np.einsum("hw->", dsoft * cos) * q / qn ** 2
            x, y = point
            gf[y, x] += gq
            grad += (lam_mask / len(prompts)) * gf
        stats["mask"] = m_total / len(prompts)
        value += lam_mask * stats["mask"]
    return LossValue(value, {"feat_seg": grad.astype(render.feat_seg.dtype)}, stats)


def stage2_loss(render: RenderOutput, lang_target: np.ndarray, *,
                pooled: bool = False, masks_per_scale: dict | None = None) -> LossValue:
    """Language-branch loss: distillation against the target, or, with
    pooling on, the mean of the distillation against each scale's pooled
    target. Gradient key: "feat_lang"."""
    if not pooled:
        dist = cosine_distill_loss(render.feat_lang, lang_target)
        return LossValue(dist.value, {"feat_lang": dist.grads["pred"]}, dist.stats)
    if not masks_per_scale:
        raise ValueError("pooled=True requires masks_per_scale")
    pooled_maps = hierarchical_pool(lang_target, masks_per_scale)
    value, grad, stats = 0.0, None, {}
    scales = sorted(pooled_maps)
    for s in scales:
        dist = cosine_distill_loss(render.feat_lang, pooled_maps[s])
        value += dist.value / len(scales)
        g = dist.grads["pred"].astype(np.float64) / len(scales)
        grad = g if grad is None else grad + g
        stats[s] = dist.value
    return LossValue(value, {"feat_lang": grad.astype(render.feat_lang.dtype)}, stats)
