"""Promptable and open-vocabulary segmentation over rendered feature maps,
plus the segmentation quality metrics.

Open-vocabulary labeling is per-pixel cosine argmax against a set of label
embeddings. Point prompts are served by feature-similarity thresholding at
three nested levels standing in for small / medium / large mask hierarchies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PROMPT_THRESHOLDS = (0.85, 0.7, 0.5)


@dataclass
class LabelSet:
    names: list
    embeddings: np.ndarray  # [n_labels, d_L]

    def __post_init__(self):
        if len(self.names) != len(set(self.names)):
            raise ValueError("label names must be unique")
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.names):
            raise ValueError("need one embedding row per name")
        if np.any(np.linalg.norm(self.embeddings, axis=1) == 0):
            raise ValueError("label embeddings must be nonzero")

    @property
    def fallback_index(self) -> int:
        """Index for pixels that cannot be matched (zero-norm features):
        the label named "Others" when present, else the last label."""
        for i, n in enumerate(self.names):
            if n.lower() == "others":
                return i
        return len(self.names) - 1


@dataclass
class SegmentationResult:
    labels: np.ndarray      # [H,W] int indices
    confidence: np.ndarray  # [H,W] in [0,1]


def open_vocab_segment(feat_lang: np.ndarray, labels: LabelSet) -> SegmentationResult:
    """label(p) = argmax_k cos(feat(p), e_k); confidence is the softmax of
    the similarities at p. Zero-norm pixels get the fallback label with zero
    confidence. Ties break to the lowest index."""
    if feat_lang.shape[-1] != labels.embeddings.shape[1]:
        raise ValueError(
            f"feature dim {feat_lang.shape[-1]} != embedding dim {labels.embeddings.shape[1]}")
    f = feat_lang.astype(np.float64)
    fn = np.linalg.norm(f, axis=-1)
    e = labels.embeddings.astype(np.float64)
    en = np.linalg.norm(e, axis=1)
    sims = (f @ e.T) / (np.maximum(fn, 1e-12)[..., None] * en[None, None, :])
    lab = np.argmax(sims, axis=-1).astype(np.int32)
    ex = np.exp(sims - sims.max(axis=-1, keepdims=True))
    conf = np.take_along_axis(ex / ex.sum(axis=-1, keepdims=True),
                              lab[..., None].astype(np.intp), axis=-1)[..., 0]
    dead = fn == 0
    lab[dead] = labels.fallback_index
    conf[dead] = 0.0
    return SegmentationResult(labels=lab, confidence=conf)


def prompt_segment(feat_seg: np.ndarray, point, thresholds=DEFAULT_PROMPT_THRESHOLDS):
    """Three nested masks from one point prompt: mask_h = cos(feat, feat at
    the point) >= threshold_h, thresholds strictly decreasing."""
    x, y = int(point[0]), int(point[1])
    h, w = feat_seg.shape[:2]
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"point {point} outside {w}x{h}")
    th = tuple(float(t) for t in thresholds)
    if len(th) != 3 or not (th[0] > th[1] > th[2]) or th[0] >= 1.0 or th[2] <= -1.0:
        raise ValueError(f"thresholds must be strictly decreasing in (-1, 1), got {th}")
    q = feat_seg[y, x].astype(np.float64)
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError(f"zero-norm feature at query pixel {point}")
    f = feat_seg.astype(np.float64)
    fn = np.linalg.norm(f, axis=-1)
    cos = (f @ q) / (np.maximum(fn, 1e-12) * qn)
    cos[fn == 0] = -1.0
    return [(cos >= t).astype(np.uint8) for t in th]


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = float(np.logical_and(a, b).sum())
    union = float(np.logical_or(a, b).sum())
    return inter / union if union > 0 else 0.0


def prompt_grid_eval(feat_seg: np.ndarray, gt_masks: list, grid: int = 32,
                     thresholds=DEFAULT_PROMPT_THRESHOLDS):
    """The uniform point-grid protocol: grid x grid prompts (1,024 at the
    default 32); each prompt is scored by the best IoU among its three masks
    against the ground-truth mask containing the point.

    Returns (mIoU, mAcc, stats). Points inside no ground-truth mask are
    skipped and counted in stats["skipped"].
    """
    h, w = feat_seg.shape[:2]
    ious, accs, skipped = [], [], 0
    ys = (np.arange(grid) + 0.5) * h / grid
    xs = (np.arange(grid) + 0.5) * w / grid
    for yy in ys.astype(int):
        for xx in xs.astype(int):
            gt = next((m for m in gt_masks if m[yy, xx]), None)
            if gt is None:
                skipped += 1
                continue
            masks = prompt_segment(feat_seg, (xx, yy), thresholds)
            best = max(masks, key=lambda m: mask_iou(m, gt))
            ious.append(mask_iou(best, gt))
            accs.append(float((best == gt).mean()))
    stats = {"skipped": skipped, "evaluated": len(ious)}
    if not ious:
        return 0.0, 0.0, stats
    return float(np.mean(ious)), float(np.mean(accs)), stats


def miou_macc(pred: np.ndarray, gt: np.ndarray, n_classes: int):
    """Class-averaged IoU and pixel accuracy over the classes present in the
    ground truth; classes absent from the ground truth are excluded."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValueError("no valid pixels")
    ious, accs = [], []
    for c in range(n_classes):
        gt_c = gt == c
        if not gt_c.any():
            continue
        pred_c = pred == c
        inter = float(np.logical_and(gt_c, pred_c).sum())
        union = float(np.logical_or(gt_c, pred_c).sum())
        ious.append(inter / union)
        accs.append(inter / float(gt_c.sum()))
    if not ious:
        raise ValueError("ground truth contains no valid class pixels")
    return float(np.mean(ious)), float(np.mean(accs))
