"""Image quality metrics (PSNR, SSIM) and PCA feature visualization."""

from __future__ import annotations

import numpy as np

PSNR_CAP = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """-10 log10(MSE) for images in [0,1], capped at 99 dB for MSE < 1e-10."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def weighted_feature_cosine(pred: np.ndarray, target: np.ndarray) -> float:
    """Norm-weighted mean per-pixel cosine between feature maps.

    Pixels are weighted by the target's feature norm, so agreement is
    measured where the target carries signal; zero-norm pixels drop out
    entirely (their direction is undefined).
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    p = np.asarray(pred, np.float64)
    t = np.asarray(target, np.float64)
    tn = np.linalg.norm(t, axis=-1)
    pn = np.maximum(np.linalg.norm(p, axis=-1), 1e-12)
    use = tn > 0
    if not use.any():
        return 0.0
    cos = np.sum(p * t, axis=-1)[use] / (pn[use] * tn[use])
    return float((cos * tn[use]).sum() / tn[use].sum())


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable 'valid'-mode correlation with a 1-D window along both axes."""
    k = win.shape[0]
    h, w = img.shape
    tmp = np.empty((h, w - k + 1), dtype=np.float64)
    for r in range(h):
        tmp[r] = np.convolve(img[r], win[::-1], mode="valid")
    out = np.empty((h - k + 1, w - k + 1), dtype=np.float64)
    for c in range(tmp.shape[1]):
        out[:, c] = np.convolve(tmp[:, c], win[::-1], mode="valid")
    return out


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5),
    K1=0.01, K2=0.03, dynamic range 1, averaged over channels."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}px SSIM window")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = _filter_valid(x, win)
        my = _filter_valid(y, win)
        mxx = _filter_valid(x * x, win)
        myy = _filter_valid(y * y, win)
        mxy = _filter_valid(x * y, win)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def _power_iteration_top3(cov: np.ndarray, iters: int = 100, tol: float = 1e-9):
    """Top-3 eigenpairs of a symmetric PSD matrix by power iteration with
    deflation; deterministic start vectors."""
    c = cov.copy()
    dim = c.shape[0]
    vecs, vals = [], []
    for comp in range(3):
        v = np.ones(dim) / np.sqrt(dim)
        v[comp % dim] += 0.5
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            nv = c @ v
            n = np.linalg.norm(nv)
            if n < 1e-30:
                break
            nv /= n
            if np.linalg.norm(nv - v) < tol:
                v = nv
                break
            v = nv
        lam = float(v @ c @ v)
        vecs.append(v)
        vals.append(max(lam, 0.0))
        c = c - lam * np.outer(v, v)
    return np.stack(vecs), np.array(vals)


def pca_project(feat: np.ndarray) -> np.ndarray:
    """Project [H,W,C>=3] features onto their top-3 principal directions and
    min-max normalize each channel to [0,1] for display.

    Sign convention: the largest-magnitude loading of each direction is made
    positive. Degenerate directions (zero variance) fill with 0.5.
    """
    h, w, c = feat.shape
    if c < 3:
        raise ValueError("need at least 3 channels")
    if h * w < 3:
        raise ValueError("need at least 3 pixels")
    x = feat.reshape(-1, c).astype(np.float64)
    x = x - x.mean(axis=0)
    cov = (x.T @ x) / x.shape[0]
    vecs, vals = _power_iteration_top3(cov)
    out = np.empty((h * w, 3), dtype=np.float64)
    for k in range(3):
        v = vecs[k]
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        proj = x @ v
        lo, hi = proj.min(), proj.max()
        if vals[k] <= 1e-12 or hi - lo < 1e-12:
            out[:, k] = 0.5
        else:
            out[:, k] = (proj - lo) / (hi - lo)
    return out.reshape(h, w, 3)
