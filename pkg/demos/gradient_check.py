"""Verify the analytic rasterizer gradients against central differences in
float64. Every gaussian parameter and both head matrices are probed.

Run:  python3 demos/gradient_check.py
"""

import numpy as np

from splatfield import rasterizer as ras
from splatfield.cameras import CameraView, orbit_pose
from splatfield.field import GaussianField, logit

rng = np.random.default_rng(42)
n, d = 6, 4
field = GaussianField(
    means=rng.uniform(-0.4, 0.4, (n, 3)),
    opacity_logits=logit(rng.uniform(0.3, 0.9, n)),
    log_scales=np.log(rng.uniform(0.06, 0.18, (n, 3))),
    rotations=rng.normal(size=(n, 4)),
    colors_raw=rng.normal(scale=0.7, size=(n, 3)),
    latents=rng.normal(size=(n, d)),
    w_seg=rng.normal(scale=0.5, size=(d, 3)), b_seg=np.zeros(3),
    w_lang=rng.normal(scale=0.5, size=(d, 3)), b_lang=np.zeros(3),
)
R, T = orbit_pose(35.0, 12.0, 2.0)
K = np.array([[20.0, 0, 8], [0, 20.0, 8], [0, 0, 1]])
cam = CameraView(K, R, T, 0.5, 5.0, 16, 16)

# loss = <random upstream, all five rendered maps>; gates off so finite
# differences see the smooth compositing math
ups = {k: rng.normal(size=s) for k, s in [
    ("d_color", (16, 16, 3)), ("d_feat_seg", (16, 16, 3)),
    ("d_feat_lang", (16, 16, 3)), ("d_depth", (16, 16)), ("d_alpha", (16, 16))]}
gates = dict(kernel_cutoff=0.0, early_stop=0.0)


def loss(f):
    o = ras.render(f, cam, **gates)
    return (np.sum(o.color * ups["d_color"]) + np.sum(o.feat_seg * ups["d_feat_seg"])
            + np.sum(o.feat_lang * ups["d_feat_lang"])
            + np.sum(o.depth * ups["d_depth"]) + np.sum(o.alpha * ups["d_alpha"]))


grads = ras.render_backward(field, cam, **ups, **gates).params()
params = field.params()
print(f"{'group':16s} {'probes':>6s} {'worst rel err':>14s}")
for name, arr in params.items():
    worst = 0.0
    for _ in range(25):
        ix = tuple(rng.integers(0, s) for s in arr.shape)
        h = 1e-4 * max(1.0, abs(arr[ix]))
        prev = arr[ix]
        arr[ix] = prev + h
        lp = loss(field)
        arr[ix] = prev - h
        lm = loss(field)
        arr[ix] = prev
        fd = (lp - lm) / (2 * h)
        an = grads[name][ix]
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    print(f"{name:16s} {25:6d} {worst:14.3e}")
