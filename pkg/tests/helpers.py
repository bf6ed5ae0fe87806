"""Shared builders for test scenes and fields."""

import numpy as np

from splatfield.cameras import CameraView, orbit_pose
from splatfield.field import GaussianField, logit


def random_field(rng, n, d=4, d_s=3, d_l=3, dtype=np.float64,
                 scale_range=(0.06, 0.18), opacity_range=(0.3, 0.9)):
    return GaussianField(
        means=rng.uniform(-0.4, 0.4, (n, 3)).astype(dtype),
        opacity_logits=logit(rng.uniform(*opacity_range, n)).astype(dtype),
        log_scales=np.log(rng.uniform(*scale_range, (n, 3))).astype(dtype),
        rotations=rng.normal(size=(n, 4)).astype(dtype),
        colors_raw=rng.normal(scale=0.7, size=(n, 3)).astype(dtype),
        latents=rng.normal(size=(n, d)).astype(dtype),
        w_seg=rng.normal(scale=0.5, size=(d, d_s)).astype(dtype),
        b_seg=rng.normal(scale=0.2, size=d_s).astype(dtype),
        w_lang=rng.normal(scale=0.5, size=(d, d_l)).astype(dtype),
        b_lang=rng.normal(scale=0.2, size=d_l).astype(dtype),
    )


def single_gaussian_field(mean, log_scale, opacity, color_raw, latent,
                          w_seg=None, b_seg=None, w_lang=None, b_lang=None,
                          dtype=np.float64):
    d = len(latent)
    if w_seg is None:
        w_seg = np.eye(d)
    if w_lang is None:
        w_lang = np.eye(d)
    if b_seg is None:
        b_seg = np.zeros(w_seg.shape[1])
    if b_lang is None:
        b_lang = np.zeros(w_lang.shape[1])
    return GaussianField(
        means=np.asarray([mean], dtype=dtype),
        opacity_logits=np.asarray([logit(opacity)], dtype=dtype),
        log_scales=np.asarray([[log_scale] * 3], dtype=dtype),
        rotations=np.asarray([[1.0, 0, 0, 0]], dtype=dtype),
        colors_raw=np.asarray([color_raw], dtype=dtype),
        latents=np.asarray([latent], dtype=dtype),
        w_seg=np.asarray(w_seg, dtype=dtype),
        b_seg=np.asarray(b_seg, dtype=dtype),
        w_lang=np.asarray(w_lang, dtype=dtype),
        b_lang=np.asarray(b_lang, dtype=dtype),
    )


def orbit_cam(az=30.0, el=15.0, radius=2.0, size=16, focal=20.0,
              near=0.5, far=5.0, target=(0, 0, 0)):
    R, T = orbit_pose(az, el, radius, target)
    K = np.array([[focal, 0, size / 2], [0, focal, size / 2], [0, 0, 1]])
    return CameraView(K, R, T, near, far, size, size)


def axis_cam(z_eye=2.0, size=16, focal=20.0, near=0.5, far=5.0):
    """Camera on +z looking at the origin down -z."""
    return orbit_cam(az=0.0, el=0.0, radius=z_eye, size=size, focal=focal,
                     near=near, far=far)


def baseline_cam(eye_x=0.0, size=32, focal=40.0, near=1.0, far=3.0):
    """Axis-aligned camera at (eye_x, 0, 0) looking down +z."""
    K = np.array([[focal, 0, size / 2], [0, focal, size / 2], [0, 0, 1]])
    T = np.array([-eye_x, 0.0, 0.0])
    return CameraView(K, np.eye(3), T, near, far, size, size)


def plane_texture(n_waves, rng, amplitude=3.0, freq_range=(8.0, 35.0)):
    """Random texture whose per-pixel feature dot product is a pure function
    of plane-space displacement: channels come in cos/sin pairs, so
    f(P) . f(P') = sum_k A_k^2 cos(w_k . (P - P')), maximal at P == P'."""
    freqs = rng.uniform(*freq_range, size=(n_waves, 2))
    phases = rng.uniform(0, 2 * np.pi, size=n_waves)
    amps = rng.uniform(0.5, 1.0, size=n_waves) * amplitude

    def tex(X, Y):
        out = np.zeros(X.shape + (2 * n_waves,), dtype=np.float64)
        for k in range(n_waves):
            arg = freqs[k, 0] * X + freqs[k, 1] * Y + phases[k]
            out[..., 2 * k] = amps[k] * np.cos(arg)
            out[..., 2 * k + 1] = amps[k] * np.sin(arg)
        return out

    return tex


def plane_features(cam, d_star, tex):
    """Per-view features of a textured fronto-parallel plane at depth d_star
    (world frame shared by the axis-aligned baseline cameras)."""
    h, w = cam.height, cam.width
    xs = (np.arange(w) + 0.5 - cam.cx) / cam.fx
    ys = (np.arange(h) + 0.5 - cam.cy) / cam.fy
    eye = cam.center
    X = eye[0] + xs[None, :] * d_star
    Y = eye[1] + ys[:, None] * d_star
    return tex(np.broadcast_to(X, (h, w)), np.broadcast_to(Y, (h, w))).astype(np.float32)
