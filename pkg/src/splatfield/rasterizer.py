"""Forward splatting of color / semantic features / depth / alpha, plus the
full analytic backward pass.

Per pixel X the composited value of any channel is

    sum_i  value_i * alpha_i * G_i(X) * prod_{j<i} (1 - alpha_j * G_j(X))

with Gaussians sorted front-to-back by camera depth and G the projected 2D
kernel exp(-0.5 d^T cov2d^-1 d). Color, both feature heads, depth and alpha
share the same weights; depth is the raw weighted sum (not renormalized by
alpha), so a pixel at partial coverage reads as alpha * surface depth.

Numerics (documented so tests can account for them):
  - blur floor: +0.3 px^2 on the cov2d diagonal, keeping inverses sane
  - kernel cutoff: G < 1/255 contributes exactly 0
  - early stop: once transmittance falls below 1e-4 the remaining Gaussians
    contribute exactly 0 at that pixel
  - Gaussians are culled per view when depth leaves [near, far] or the
    3.5-sigma footprint misses the screen (the cutoff radius is ~3.33 sigma,
    so culling never removes a visible contribution)

Everything runs in the dtype of the field (float32 production, float64 for
gradient checking) and is deterministic: one global depth sort with a stable
index tiebreak, pixel blocks processed in fixed order, fixed-order
reductions. The cumulative scans are explicit row loops because numpy's
axis-0 cumprod/cumsum are several times slower at this shape.
"""

from __future__ import annotations

import ctypes
from dataclasses import dataclass

import numpy as np

from .cameras import CameraView
from .field import GaussianField, quat_to_rotmat, sigmoid

# The hot loops churn through ~6 MB scratch arrays; glibc serves those via
# mmap and returns them to the OS on free, so every block pays page faults.
# Raising the mmap/trim thresholds keeps the pages warm (5-6x faster blocks).
try:
    _libc = ctypes.CDLL("libc.so.6")
    _libc.mallopt(-3, 512 * 1024 * 1024)  # M_MMAP_THRESHOLD
    _libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
except OSError:  # non-glibc platform: just run slower
    pass

BLUR_FLOOR = 0.3          # px^2 added to cov2d diagonal
KERNEL_CUTOFF = 1.0 / 255.0
EARLY_STOP_T = 1e-4
CULL_SIGMA = 3.5
_BLOCK_ELEMS = 4_000_000  # max gaussians*pixels per processed block


@dataclass
class RenderOutput:
    color: np.ndarray      # [H,W,3]
    feat_seg: np.ndarray   # [H,W,d_S]
    feat_lang: np.ndarray  # [H,W,d_L]
    depth: np.ndarray      # [H,W]
    alpha: np.ndarray      # [H,W]


@dataclass
class Projected2DGaussian:
    mean2d: np.ndarray     # [2] px
    cov2d: np.ndarray      # [2,2] px^2, blur floor included
    view_depth: float
    opacity: float
    color: np.ndarray
    feat_seg: np.ndarray
    feat_lang: np.ndarray


@dataclass
class FieldGrads:
    means: np.ndarray
    opacity_logits: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    colors_raw: np.ndarray
    latents: np.ndarray
    w_seg: np.ndarray
    b_seg: np.ndarray
    w_lang: np.ndarray
    b_lang: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in (
            "means", "opacity_logits", "log_scales", "rotations", "colors_raw",
            "latents", "w_seg", "b_seg", "w_lang", "b_lang")}

    def __iadd__(self, other: "FieldGrads") -> "FieldGrads":
        for k, v in other.params().items():
            getattr(self, k).__iadd__(v)
        return self

    def scale(self, s: float) -> "FieldGrads":
        for v in self.params().values():
            v *= s
        return self


def zero_grads(field: GaussianField) -> FieldGrads:
    return FieldGrads(**{k: np.zeros_like(v) for k, v in field.params().items()})


class _ProjCtx:
    """Per-view projected state for the kept Gaussians, depth-sorted."""

    __slots__ = (
        "keep", "u", "v", "z", "xcam", "J", "M", "Rq", "S", "B", "Sigma3",
        "cov_a", "cov_b", "cov_c", "qa", "qb", "qc", "alpha", "col",
        "phiS", "phiL", "qhat", "qnorm", "R", "V",
    )


def _project(field: GaussianField, cam: CameraView) -> _ProjCtx | None:
    """EWA-style projection of all Gaussians into the view; None when empty."""
    field.validate_finite()
    dt = field.dtype
    R = cam.R.astype(dt)
    T = cam.T.astype(dt)
    fx, fy = dt.type(cam.fx), dt.type(cam.fy)

    xcam = field.means @ R.T + T
    z = xcam[:, 2]
    in_depth = (z >= dt.type(cam.near)) & (z <= dt.type(cam.far))
    if not in_depth.any():
        return None

    idx = np.nonzero(in_depth)[0]
    xc = xcam[idx]
    zz = xc[:, 2]
    u = fx * xc[:, 0] / zz + dt.type(cam.cx)
    v = fy * xc[:, 1] / zz + dt.type(cam.cy)

    qn = np.linalg.norm(field.rotations[idx], axis=1)
    qhat = field.rotations[idx] / qn[:, None]
    Rq = quat_to_rotmat(qhat)
    S = np.exp(field.log_scales[idx])
    B = Rq * S[:, None, :]
    Sigma3 = B @ np.swapaxes(B, 1, 2)

    iz = 1.0 / zz
    iz2 = iz * iz
    K = idx.shape[0]
    J = np.zeros((K, 2, 3), dtype=dt)
    J[:, 0, 0] = fx * iz
    J[:, 0, 2] = -fx * xc[:, 0] * iz2
    J[:, 1, 1] = fy * iz
    J[:, 1, 2] = -fy * xc[:, 1] * iz2
    M = J @ R
    Sigma2 = M @ Sigma3 @ np.swapaxes(M, 1, 2)
    a = Sigma2[:, 0, 0] + dt.type(BLUR_FLOOR)
    b = Sigma2[:, 0, 1]
    c = Sigma2[:, 1, 1] + dt.type(BLUR_FLOOR)

    # screen cull against the 3.5-sigma footprint
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    r = CULL_SIGMA * np.sqrt(lam_max)
    on_screen = (u + r > 0) & (u - r < cam.width) & (v + r > 0) & (v - r < cam.height)
    if not on_screen.any():
        return None

    order = np.argsort(zz[on_screen], kind="stable")
    sel = np.nonzero(on_screen)[0][order]

    ctx = _ProjCtx()
    ctx.keep = idx[sel]
    ctx.u, ctx.v, ctx.z = u[sel], v[sel], zz[sel]
    ctx.xcam = xc[sel]
    ctx.J, ctx.M = J[sel], M[sel]
    ctx.Rq, ctx.S, ctx.B, ctx.Sigma3 = Rq[sel], S[sel], B[sel], Sigma3[sel]
    ctx.cov_a, ctx.cov_b, ctx.cov_c = a[sel], b[sel], c[sel]
    det = ctx.cov_a * ctx.cov_c - ctx.cov_b * ctx.cov_b
    ctx.qa = ctx.cov_c / det
    ctx.qb = -ctx.cov_b / det
    ctx.qc = ctx.cov_a / det
    ctx.alpha = sigmoid(field.opacity_logits[ctx.keep])
    ctx.col = sigmoid(field.colors_raw[ctx.keep])
    ctx.phiS = field.latents[ctx.keep] @ field.w_seg + field.b_seg
    ctx.phiL = field.latents[ctx.keep] @ field.w_lang + field.b_lang
    ctx.qhat, ctx.qnorm = qhat[sel], qn[sel]
    ctx.R = R
    ctx.V = np.concatenate(
        [ctx.col, ctx.phiS, ctx.phiL, ctx.z[:, None],
         np.ones((ctx.keep.shape[0], 1), dtype=dt)], axis=1)
    return ctx


def project_gaussian(field: GaussianField, index: int, cam: CameraView) -> Projected2DGaussian | None:
    """Project one Gaussian; None when culled (outside the depth range or
    footprint off-screen)."""
    sub = GaussianField(
        means=field.means[index:index + 1],
        opacity_logits=field.opacity_logits[index:index + 1],
        log_scales=field.log_scales[index:index + 1],
        rotations=field.rotations[index:index + 1],
        colors_raw=field.colors_raw[index:index + 1],
        latents=field.latents[index:index + 1],
        w_seg=field.w_seg, b_seg=field.b_seg,
        w_lang=field.w_lang, b_lang=field.b_lang,
    )
    ctx = _project(sub, cam)
    if ctx is None:
        return None
    cov2d = np.array([[ctx.cov_a[0], ctx.cov_b[0]], [ctx.cov_b[0], ctx.cov_c[0]]],
                     dtype=field.dtype)
    return Projected2DGaussian(
        mean2d=np.array([ctx.u[0], ctx.v[0]], dtype=field.dtype),
        cov2d=cov2d,
        view_depth=float(ctx.z[0]),
        opacity=float(ctx.alpha[0]),
        color=ctx.col[0],
        feat_seg=ctx.phiS[0],
        feat_lang=ctx.phiL[0],
    )


def _row_blocks(height: int, width: int, n_gauss: int):
    rows = max(1, min(height, _BLOCK_ELEMS // max(1, n_gauss * width)))
    for r0 in range(0, height, rows):
        yield r0, min(r0 + rows, height)


def _excl_cumprod(om: np.ndarray) -> np.ndarray:
    """Exclusive cumulative product along axis 0 (row loop: faster than
    np.cumprod at K~hundreds and bitwise-deterministic)."""
    T = np.empty_like(om)
    T[0] = 1.0
    if om.shape[0] > 1:
        run = om[0].copy()
        for k in range(1, om.shape[0]):
            T[k] = run
            np.multiply(run, om[k], out=run)
    return T


def _suffix_sum(wd: np.ndarray) -> np.ndarray:
    """Strict suffix sum along axis 0: S[k] = sum_{k'>k} wd[k']."""
    S = np.empty_like(wd)
    S[-1] = 0.0
    if wd.shape[0] > 1:
        run = wd[-1].copy()
        for k in range(wd.shape[0] - 2, -1, -1):
            S[k] = run
            np.add(run, wd[k], out=run)
    return S


class _Block:
    __slots__ = ("r0", "r1", "dx", "dy", "g", "a", "om", "Tg", "w")


def _forward_block(ctx: _ProjCtx, r0: int, r1: int, width: int,
                   kernel_cutoff: float, early_stop: float, dt) -> _Block:
    px = np.arange(width, dtype=dt) + dt.type(0.5)
    py = np.arange(r0, r1, dtype=dt) + dt.type(0.5)
    pxf = np.broadcast_to(px[None, :], (r1 - r0, width)).reshape(-1)
    pyf = np.broadcast_to(py[:, None], (r1 - r0, width)).reshape(-1)

    blk = _Block()
    blk.r0, blk.r1 = r0, r1
    dx = pxf[None, :] - ctx.u[:, None]
    dy = pyf[None, :] - ctx.v[:, None]
    power = dx * dx
    power *= (-0.5 * ctx.qa)[:, None]
    t = dx * dy
    t *= (-ctx.qb)[:, None]
    power += t
    np.multiply(dy, dy, out=t)
    t *= (-0.5 * ctx.qc)[:, None]
    power += t
    g = np.exp(power, out=power)
    if kernel_cutoff > 0:
        g *= g >= dt.type(kernel_cutoff)
    a = ctx.alpha[:, None] * g
    om = 1.0 - a
    Tg = _excl_cumprod(om)
    if early_stop > 0:
        Tg *= Tg >= dt.type(early_stop)  # gated transmittance
    w = a * Tg
    blk.dx, blk.dy, blk.g, blk.a, blk.om, blk.Tg, blk.w = dx, dy, g, a, om, Tg, w
    return blk


def _empty_output(cam: CameraView, dS: int, dL: int, dt) -> RenderOutput:
    H, W = cam.height, cam.width
    return RenderOutput(
        color=np.zeros((H, W, 3), dtype=dt),
        feat_seg=np.zeros((H, W, dS), dtype=dt),
        feat_lang=np.zeros((H, W, dL), dtype=dt),
        depth=np.zeros((H, W), dtype=dt),
        alpha=np.zeros((H, W), dtype=dt),
    )


def _assemble(out_flat: np.ndarray, cam: CameraView, dS: int, dL: int) -> RenderOutput:
    H, W = cam.height, cam.width
    C = 3 + dS + dL + 2
    return RenderOutput(
        color=np.ascontiguousarray(out_flat[:3].T).reshape(H, W, 3),
        feat_seg=np.ascontiguousarray(out_flat[3:3 + dS].T).reshape(H, W, dS),
        feat_lang=np.ascontiguousarray(out_flat[3 + dS:3 + dS + dL].T).reshape(H, W, dL),
        depth=out_flat[C - 2].reshape(H, W).copy(),
        alpha=out_flat[C - 1].reshape(H, W).copy(),
    )


def render(field: GaussianField, cam: CameraView, *,
           kernel_cutoff: float = KERNEL_CUTOFF,
           early_stop: float = EARLY_STOP_T) -> RenderOutput:
    """Composite the field into a view. Background is 0 in every channel."""
    dt = field.dtype
    ctx = _project(field, cam)
    if ctx is None:
        return _empty_output(cam, field.d_seg, field.d_lang, dt)
    H, W = cam.height, cam.width
    C = ctx.V.shape[1]
    out = np.zeros((C, H * W), dtype=dt)
    for r0, r1 in _row_blocks(H, W, ctx.keep.shape[0]):
        blk = _forward_block(ctx, r0, r1, W, kernel_cutoff, early_stop, dt)
        out[:, r0 * W:r1 * W] = ctx.V.T @ blk.w
    return _assemble(out, cam, field.d_seg, field.d_lang)


def render_pose_path(field: GaussianField, cams: list[CameraView]) -> list[RenderOutput]:
    """Map render over a pose list; pure, so repeated poses repeat outputs."""
    return [render(field, cam) for cam in cams]


def _assemble_upstream(cam, dS, dL, dt, d_color, d_feat_seg, d_feat_lang,
                       d_depth, d_alpha) -> np.ndarray:
    H, W = cam.height, cam.width
    C = 3 + dS + dL + 2
    dOut = np.zeros((C, H * W), dtype=dt)
    if d_color is not None:
        dOut[:3] = np.asarray(d_color, dtype=dt).reshape(H * W, 3).T
    if d_feat_seg is not None and dS:
        dOut[3:3 + dS] = np.asarray(d_feat_seg, dtype=dt).reshape(H * W, dS).T
    if d_feat_lang is not None and dL:
        dOut[3 + dS:3 + dS + dL] = np.asarray(d_feat_lang, dtype=dt).reshape(H * W, dL).T
    if d_depth is not None:
        dOut[C - 2] = np.asarray(d_depth, dtype=dt).reshape(-1)
    if d_alpha is not None:
        dOut[C - 1] = np.asarray(d_alpha, dtype=dt).reshape(-1)
    return dOut


def _backward_accumulate(field: GaussianField, cam: CameraView, ctx: _ProjCtx,
                         blocks, dOut: np.ndarray) -> FieldGrads:
    """Chain upstream (C, H*W) gradients through cached forward blocks."""
    dt = field.dtype
    W = cam.width
    K = ctx.keep.shape[0]
    dS, dL = field.d_seg, field.d_lang
    C = 3 + dS + dL + 2
    grads = zero_grads(field)

    dV = np.zeros((K, C), dtype=dt)
    d_alpha_g = np.zeros(K, dtype=dt)
    d_qa = np.zeros(K, dtype=dt)
    d_qb = np.zeros(K, dtype=dt)
    d_qc = np.zeros(K, dtype=dt)
    d_u = np.zeros(K, dtype=dt)
    d_v = np.zeros(K, dtype=dt)

    for blk in blocks:
        dO = dOut[:, blk.r0 * W:blk.r1 * W]
        dV += blk.w @ dO.T
        dw = ctx.V @ dO
        wd = blk.w * dw
        suf = _suffix_sum(wd)
        suf /= np.maximum(blk.om, dt.type(1e-12))
        da = blk.Tg * dw
        da -= suf
        d_alpha_g += np.einsum("kp,kp->k", blk.g, da)
        dpow = blk.a * da          # = g * d(loss)/dg
        sx = np.einsum("kp,kp->k", dpow, blk.dx)
        sy = np.einsum("kp,kp->k", dpow, blk.dy)
        d_u += ctx.qa * sx + ctx.qb * sy
        d_v += ctx.qb * sx + ctx.qc * sy
        t = dpow * blk.dx
        d_qa += -0.5 * np.einsum("kp,kp->k", t, blk.dx)
        d_qb -= np.einsum("kp,kp->k", t, blk.dy)
        np.multiply(dpow, blk.dy, out=t)
        d_qc += -0.5 * np.einsum("kp,kp->k", t, blk.dy)

    # --- value paths ---
    dcol = dV[:, :3]
    dphiS = dV[:, 3:3 + dS]
    dphiL = dV[:, 3 + dS:3 + dS + dL]
    dz_value = dV[:, C - 2]

    col = ctx.col
    grads.colors_raw[ctx.keep] = dcol * col * (1.0 - col)
    lat = field.latents[ctx.keep]
    grads.w_seg += lat.T @ dphiS
    grads.b_seg += dphiS.sum(axis=0)
    grads.w_lang += lat.T @ dphiL
    grads.b_lang += dphiL.sum(axis=0)
    grads.latents[ctx.keep] = dphiS @ field.w_seg.T + dphiL @ field.w_lang.T

    al = ctx.alpha
    grads.opacity_logits[ctx.keep] = d_alpha_g * al * (1.0 - al)

    # --- kernel geometry paths ---
    # G pairs <dL/dQ, dQ> with Q = cov2d^-1; the off-diagonal is halved
    # because d_qb is the sensitivity to the single parameter b in both slots.
    Q = np.empty((K, 2, 2), dtype=dt)
    Q[:, 0, 0] = ctx.qa
    Q[:, 0, 1] = Q[:, 1, 0] = ctx.qb
    Q[:, 1, 1] = ctx.qc
    G = np.empty((K, 2, 2), dtype=dt)
    G[:, 0, 0] = d_qa
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * d_qb
    G[:, 1, 1] = d_qc
    dSigma2 = -(Q @ G @ Q)

    dM = 2.0 * dSigma2 @ ctx.M @ ctx.Sigma3
    dSigma3 = np.swapaxes(ctx.M, 1, 2) @ dSigma2 @ ctx.M
    dJ = dM @ ctx.R.T

    dB = 2.0 * dSigma3 @ ctx.B
    dRq = dB * ctx.S[:, None, :]
    dS_vec = np.einsum("kij,kij->kj", dB, ctx.Rq)
    grads.log_scales[ctx.keep] = dS_vec * ctx.S

    # quaternion: R(q_hat) partials, then the normalization Jacobian
    qw, qx, qy, qz = ctx.qhat[:, 0], ctx.qhat[:, 1], ctx.qhat[:, 2], ctx.qhat[:, 3]
    zeros = np.zeros_like(qw)
    P = np.empty((K, 4, 3, 3), dtype=dt)
    P[:, 0] = 2 * np.stack([
        np.stack([zeros, -qz, qy], -1),
        np.stack([qz, zeros, -qx], -1),
        np.stack([-qy, qx, zeros], -1)], -2)
    P[:, 1] = 2 * np.stack([
        np.stack([zeros, qy, qz], -1),
        np.stack([qy, -2 * qx, -qw], -1),
        np.stack([qz, qw, -2 * qx], -1)], -2)
    P[:, 2] = 2 * np.stack([
        np.stack([-2 * qy, qx, qw], -1),
        np.stack([qx, zeros, qz], -1),
        np.stack([-qw, qz, -2 * qy], -1)], -2)
    P[:, 3] = 2 * np.stack([
        np.stack([-2 * qz, -qw, qx], -1),
        np.stack([qw, -2 * qz, qy], -1),
        np.stack([qx, qy, zeros], -1)], -2)
    dqhat = np.einsum("kij,kqij->kq", dRq, P)
    proj = dqhat - ctx.qhat * np.einsum("kq,kq->k", ctx.qhat, dqhat)[:, None]
    grads.rotations[ctx.keep] = proj / ctx.qnorm[:, None]

    # mean position: through mean2d, the projection Jacobian entries, and the
    # composited depth channel
    fx = dt.type(cam.fx)
    fy = dt.type(cam.fy)
    x, y, zc = ctx.xcam[:, 0], ctx.xcam[:, 1], ctx.xcam[:, 2]
    iz2 = 1.0 / (zc * zc)
    iz3 = iz2 / zc
    dxcam = np.empty((K, 3), dtype=dt)
    dxcam[:, 0] = d_u * ctx.J[:, 0, 0] + dJ[:, 0, 2] * (-fx * iz2)
    dxcam[:, 1] = d_v * ctx.J[:, 1, 1] + dJ[:, 1, 2] * (-fy * iz2)
    dxcam[:, 2] = (d_u * ctx.J[:, 0, 2] + d_v * ctx.J[:, 1, 2]
                   + dJ[:, 0, 0] * (-fx * iz2) + dJ[:, 1, 1] * (-fy * iz2)
                   + dJ[:, 0, 2] * (2 * fx * x * iz3) + dJ[:, 1, 2] * (2 * fy * y * iz3)
                   + dz_value)
    grads.means[ctx.keep] = dxcam @ ctx.R
    return grads


def render_backward(field: GaussianField, cam: CameraView,
                    d_color=None, d_feat_seg=None, d_feat_lang=None,
                    d_depth=None, d_alpha=None, *,
                    kernel_cutoff: float = KERNEL_CUTOFF,
                    early_stop: float = EARLY_STOP_T) -> FieldGrads:
    """Analytic d(loss)/d(every field parameter) given upstream gradients on
    the maps of RenderOutput (any subset; missing ones are zero).

    Recomputes the forward internally, block by block; matches central
    finite differences in float64 mode.
    """
    dt = field.dtype
    ctx = _project(field, cam)
    if ctx is None:
        return zero_grads(field)
    dOut = _assemble_upstream(cam, field.d_seg, field.d_lang, dt,
                              d_color, d_feat_seg, d_feat_lang, d_depth, d_alpha)

    W = cam.width

    def block_iter():
        for r0, r1 in _row_blocks(cam.height, W, ctx.keep.shape[0]):
            yield _forward_block(ctx, r0, r1, W, kernel_cutoff, early_stop, dt)

    return _backward_accumulate(field, cam, ctx, block_iter(), dOut)


def render_and_grads(field: GaussianField, cam: CameraView, upstream_fn, *,
                     kernel_cutoff: float = KERNEL_CUTOFF,
                     early_stop: float = EARLY_STOP_T):
    """Fused forward + backward sharing one set of cached per-block internals.

    ``upstream_fn(out: RenderOutput) -> (aux, upstream_dict)`` where
    upstream_dict may carry color / feat_seg / feat_lang / depth / alpha
    gradient maps. Returns (out, grads, aux). This is the fit loop's inner
    step; results are identical to render + render_backward.
    """
    dt = field.dtype
    dS, dL = field.d_seg, field.d_lang
    ctx = _project(field, cam)
    if ctx is None:
        out = _empty_output(cam, dS, dL, dt)
        aux, _ = upstream_fn(out)
        return out, zero_grads(field), aux
    H, W = cam.height, cam.width
    C = ctx.V.shape[1]
    out_flat = np.zeros((C, H * W), dtype=dt)
    blocks = []
    for r0, r1 in _row_blocks(H, W, ctx.keep.shape[0]):
        blk = _forward_block(ctx, r0, r1, W, kernel_cutoff, early_stop, dt)
        out_flat[:, r0 * W:r1 * W] = ctx.V.T @ blk.w
        blocks.append(blk)
    out = _assemble(out_flat, cam, dS, dL)
    aux, ups = upstream_fn(out)
    dOut = _assemble_upstream(cam, dS, dL, dt,
                              ups.get("color"), ups.get("feat_seg"),
                              ups.get("feat_lang"), ups.get("depth"),
                              ups.get("alpha"))
    grads = _backward_accumulate(field, cam, ctx, blocks, dOut)
    return out, grads, aux
