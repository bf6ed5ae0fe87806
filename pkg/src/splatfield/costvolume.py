"""Plane-sweep warping, correlation cost volumes, and softmax depth regression.

Feature maps live at a downsampled resolution (h, w); cameras are given at
full image resolution and are rescaled internally, so the warp geometry is
consistent with the half-pixel conventions used everywhere else.

The learned refinement that usually sits on top of a cost volume is out of
scope here: depth comes straight from a temperature-controlled softmax
expectation over the correlation scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import CameraView


@dataclass
class CostVolume:
    corr: np.ndarray        # [h, w, D] correlation scores
    candidates: np.ndarray  # [D] depths, strictly increasing
    view: int               # index of the reference view
    scale: int              # downsample factor relative to the camera

    def __post_init__(self):
        if self.candidates.ndim != 1 or self.candidates.shape[0] < 2:
            raise ValueError("need at least 2 depth candidates")
        if not np.all(np.diff(self.candidates) > 0):
            raise ValueError("candidates must be strictly increasing")
        if self.corr.shape[2] != self.candidates.shape[0]:
            raise ValueError("corr depth axis does not match candidates")


def depth_candidates(near: float, far: float, n: int) -> np.ndarray:
    """n uniform depths from near to far inclusive."""
    if not (0 < near < far):
        raise ValueError(f"need 0 < near < far, got {near}, {far}")
    if n < 2:
        raise ValueError("need at least 2 candidates")
    return near + (far - near) * np.arange(n, dtype=np.float64) / (n - 1)


def _bilinear_gather(F: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample [h,w,C] at continuous half-pixel-centered coords u, v (any
    shape). Returns (values, valid); out-of-support samples are 0/invalid."""
    h, w = F.shape[:2]
    valid = (u >= 0.5) & (u <= w - 0.5) & (v >= 0.5) & (v <= h - 0.5)
    xf = np.clip(u - 0.5, 0.0, w - 1.0)
    yf = np.clip(v - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(xf.astype(np.intp), w - 2) if w > 1 else np.zeros_like(xf, np.intp)
    y0 = np.minimum(yf.astype(np.intp), h - 2) if h > 1 else np.zeros_like(yf, np.intp)
    fx = (xf - x0)[..., None]
    fy = (yf - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    out = (F[y0, x0] * (1 - fx) * (1 - fy) + F[y0, x1] * fx * (1 - fy)
           + F[y1, x0] * (1 - fx) * fy + F[y1, x1] * fx * fy)
    out = out * valid[..., None]
    return out, valid


def _volume_cam(cam: CameraView, h: int, w: int) -> CameraView:
    return cam if (cam.height, cam.width) == (h, w) else cam.scaled(w, h)


def warp_stack(F_j: np.ndarray, cam_i: CameraView, cam_j: CameraView,
               candidates: np.ndarray):
    """Warp view j's features into view i at every candidate depth.

    Returns (warped [D,h,w,C], valid [D,h,w]). For each pixel of view i the
    ray is intersected with the fronto-parallel plane z_i = d, reprojected
    into view j, and F_j is sampled bilinearly.
    """
    h, w = F_j.shape[:2]
    ci = _volume_cam(cam_i, h, w)
    cj = _volume_cam(cam_j, h, w)
    xs = (np.arange(w) + 0.5 - ci.cx) / ci.fx
    ys = (np.arange(h) + 0.5 - ci.cy) / ci.fy
    rays = np.stack(np.broadcast_arrays(xs[None, :], ys[:, None], np.ones((h, w))), -1)
    d = np.asarray(candidates, dtype=np.float64)
    pts_i = rays[None] * d[:, None, None, None]          # [D,h,w,3] in cam i
    Rrel = cj.R @ ci.R.T
    trel = cj.T - Rrel @ ci.T
    pts_j = pts_i @ Rrel.T + trel
    z = pts_j[..., 2]
    behind = z <= 1e-9
    z_safe = np.where(behind, 1.0, z)
    u = cj.fx * pts_j[..., 0] / z_safe + cj.cx
    v = cj.fy * pts_j[..., 1] / z_safe + cj.cy
    warped, valid = _bilinear_gather(F_j, u, v)
    valid &= ~behind
    warped[behind] = 0.0
    return warped.astype(F_j.dtype), valid


def warp_features(F_j: np.ndarray, cam_i: CameraView, cam_j: CameraView, d: float):
    """Single-depth warp; see warp_stack. Returns (warped [h,w,C], valid)."""
    warped, valid = warp_stack(F_j, cam_i, cam_j, np.array([float(d)]))
    return warped[0], valid[0]


def build_cost_volume(features: list[np.ndarray], cams: list[CameraView],
                      candidates: np.ndarray) -> list[CostVolume]:
    """Correlation volume per view: corr[p,m] = <F_i(p), F_{d_m}^{j->i}(p)>/C,
    averaged over the other views j in index order; invalid warped pixels
    drop out of the average (contribute 0 with weight renormalization)."""
    if len(features) < 2:
        raise ValueError("need at least 2 views")
    C = features[0].shape[2]
    if any(f.shape[2] != C for f in features):
        raise ValueError("feature dims differ across views")
    h, w = features[0].shape[:2]
    d = np.asarray(candidates, dtype=np.float64)
    volumes = []
    for i, Fi in enumerate(features):
        acc = np.zeros((d.shape[0], h, w), dtype=np.float64)
        cnt = np.zeros((d.shape[0], h, w), dtype=np.float64)
        for j, Fj in enumerate(features):
            if j == i:
                continue
            warped, valid = warp_stack(Fj, cams[i], cams[j], d)
            acc += np.einsum("hwc,dhwc->dhw", Fi.astype(np.float64), warped) / C
            cnt += valid
        corr = np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)
        scale = max(1, round(cams[i].width / w))
        volumes.append(CostVolume(corr=np.moveaxis(corr, 0, 2).astype(np.float32),
                                  candidates=d, view=i, scale=scale))
    return volumes


def regress_depth(cv: CostVolume, temperature: float = 1.0) -> np.ndarray:
    """Softmax-expectation depth over the candidates (the learned regressor's
    stand-in): depth(p) = sum_m softmax(corr[p,:]/tau)_m * d_m."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = cv.corr.astype(np.float64) / temperature
    logits -= logits.max(axis=2, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=2, keepdims=True)
    return (p @ cv.candidates).astype(np.float32)


def fuse_conditions(cv: CostVolume, feat_maps: list[np.ndarray]) -> np.ndarray:
    """Channel-concatenate [corr, feat_1, feat_2, ...]; every map must already
    be at the volume's (h, w)."""
    h, w = cv.corr.shape[:2]
    for fm in feat_maps:
        assert fm.shape[:2] == (h, w), f"feature map {fm.shape} not at volume size {(h, w)}"
    if not feat_maps:
        return cv.corr.copy()
    return np.concatenate([cv.corr] + [fm.astype(cv.corr.dtype) for fm in feat_maps], axis=2)
