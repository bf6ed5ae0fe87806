"""The semantic anisotropic Gaussian field and its on-disk container.

Each Gaussian carries position, opacity logit, log-scales, a rotation
quaternion, raw color, and a latent semantic vector. Two global linear heads
map the latent to the segmentation-feature and language-feature spaces that
get alpha-composited alongside color.

Opacity and color live in logit space so the optimizer is unconstrained;
sigmoid squashes them on use. Covariance is scale+rotation:
Sigma = R_q diag(exp(log_scale))^2 R_q^T, quaternion normalized on every
reconstruction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensorio

FIELD_MAGIC = b"SSPF"
FIELD_VERSION = 1

# serialization order is part of the format
_PARAM_NAMES = (
    "means", "opacity_logits", "log_scales", "rotations", "colors_raw",
    "latents", "w_seg", "b_seg", "w_lang", "b_lang",
)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """[...,4] unit quaternions (w,x,y,z) -> [...,3,3] rotation matrices."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class GaussianField:
    """{mu, opacity, Sigma-params, color, latent} per Gaussian plus the two heads."""

    means: np.ndarray          # [N,3] world positions (m)
    opacity_logits: np.ndarray  # [N]
    log_scales: np.ndarray     # [N,3]
    rotations: np.ndarray      # [N,4] quaternion, normalized on use
    colors_raw: np.ndarray     # [N,3] sigmoid-mapped to [0,1]
    latents: np.ndarray        # [N,d]
    w_seg: np.ndarray          # [d,d_S]
    b_seg: np.ndarray          # [d_S]
    w_lang: np.ndarray         # [d,d_L]
    b_lang: np.ndarray         # [d_L]

    def __post_init__(self):
        n = self.means.shape[0]
        d = self.latents.shape[1] if self.latents.ndim == 2 else 0
        assert self.means.shape == (n, 3)
        assert self.opacity_logits.shape == (n,)
        assert self.log_scales.shape == (n, 3)
        assert self.rotations.shape == (n, 4)
        assert self.colors_raw.shape == (n, 3)
        assert self.latents.shape == (n, d)
        assert self.w_seg.shape[0] == d and self.w_lang.shape[0] == d
        assert self.b_seg.shape == (self.w_seg.shape[1],)
        assert self.b_lang.shape == (self.w_lang.shape[1],)

    @property
    def n_gaussians(self) -> int:
        return self.means.shape[0]

    @property
    def d_latent(self) -> int:
        return self.latents.shape[1]

    @property
    def d_seg(self) -> int:
        return self.w_seg.shape[1]

    @property
    def d_lang(self) -> int:
        return self.w_lang.shape[1]

    @property
    def dtype(self):
        return self.means.dtype

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def colors(self) -> np.ndarray:
        return sigmoid(self.colors_raw)

    def unit_rotations(self) -> np.ndarray:
        n = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        return self.rotations / n

    def covariances(self) -> np.ndarray:
        """[N,3,3] Sigma = R_q diag(exp(s))^2 R_q^T, SPD for finite log_scales."""
        Rq = quat_to_rotmat(self.unit_rotations())
        S = np.exp(self.log_scales)
        B = Rq * S[:, None, :]
        return B @ np.swapaxes(B, 1, 2)

    def seg_features(self) -> np.ndarray:
        """[N,d_S] per-Gaussian segmentation head output W_S f + b_S."""
        return self.latents @ self.w_seg + self.b_seg

    def lang_features(self) -> np.ndarray:
        return self.latents @ self.w_lang + self.b_lang

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def astype(self, dtype) -> "GaussianField":
        return GaussianField(**{k: v.astype(dtype) for k, v in self.params().items()})

    def copy(self) -> "GaussianField":
        return GaussianField(**{k: v.copy() for k, v in self.params().items()})

    def validate_finite(self):
        for name, arr in self.params().items():
            bad = ~np.isfinite(arr)
            if bad.any():
                if arr.ndim and arr.shape[0] == self.n_gaussians and name in _PARAM_NAMES[:6]:
                    idx = int(np.argwhere(bad.reshape(arr.shape[0], -1).any(axis=1))[0, 0])
                    raise NonFiniteParameterError(f"non-finite {name} at Gaussian {idx}")
                raise NonFiniteParameterError(f"non-finite values in {name}")


class NonFiniteParameterError(ValueError):
    pass


class FieldFormatError(ValueError):
    pass


def write_field(field: GaussianField, path) -> None:
    """Serialize a field as named SSPT sections; bit-exact and deterministic.

    Layout: magic "SSPF", version u32, count u32, then per section
    u32 name length + name bytes + u64 blob length + SSPT blob.
    """
    params = field.params()
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC + struct.pack("<II", FIELD_VERSION, len(params)))
        for name in _PARAM_NAMES:
            blob = tensorio.tensor_bytes(params[name])
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)) + nb + struct.pack("<Q", len(blob)))
            fh.write(blob)


def read_field(path) -> GaussianField:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != FIELD_MAGIC:
        raise FieldFormatError(f"not a field file (magic {buf[:4]!r})")
    version, count = struct.unpack("<II", buf[4:12])
    if version != FIELD_VERSION:
        raise FieldFormatError(f"unsupported field version {version}")
    off = 12
    sections = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", buf[off:off + 4])
        off += 4
        name = buf[off:off + nlen].decode()
        off += nlen
        (blen,) = struct.unpack("<Q", buf[off:off + 8])
        off += 8
        sections[name] = tensorio.tensor_from_bytes(buf[off:off + blen])
        off += blen
    missing = set(_PARAM_NAMES) - set(sections)
    if missing:
        raise FieldFormatError(f"missing sections: {sorted(missing)}")
    return GaussianField(**{name: sections[name] for name in _PARAM_NAMES})
