"""Dense tensor file format (SSPT), bilinear resampling, and the PNG image boundary.

Tensors are plain numpy arrays in float32 (default) or float64 (used for gradient
checking). The SSPT container is the interchange format for feature maps, depth
maps, cost volumes and label embeddings:

    magic   4 bytes  b"SSPT"
    version u32      currently 1
    dtype   u32      0 = float32, 1 = float64
    ndim    u32      number of dimensions (0 allowed: scalar)
    dims    ndim*u64
    payload row-major scalars

All header integers and payload scalars are little-endian. Layout is fixed so
files round-trip bit-exactly across languages.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image, UnidentifiedImageError

SSPT_MAGIC = b"SSPT"
SSPT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

# Guard against absurd declared sizes before trusting product(dims).
_MAX_ELEMENTS = 1 << 40


class TensorFormatError(ValueError):
    """Base class for SSPT parsing failures."""


class BadMagicError(TensorFormatError):
    pass


class VersionMismatchError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class DimOverflowError(TensorFormatError):
    pass


class ImageFormatError(ValueError):
    """Raised for non-PNG or corrupt image files."""


def write_tensor(t: np.ndarray, path) -> None:
    """Serialize ``t`` to ``path`` in SSPT layout.

    Accepts float32/float64 arrays; anything else is rejected rather than
    silently cast, since the format is the bit-exact interchange boundary.
    """
    t = np.asarray(t)
    if t.dtype not in _CODE_FOR_DTYPE:
        raise TypeError(f"SSPT stores float32/float64 only, got {t.dtype}")
    code = _CODE_FOR_DTYPE[t.dtype]
    header = SSPT_MAGIC + struct.pack("<III", SSPT_VERSION, code, t.ndim)
    header += struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = np.ascontiguousarray(t, dtype=_DTYPE_CODES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def tensor_bytes(t: np.ndarray) -> bytes:
    """SSPT encoding of ``t`` as a byte string (same layout as write_tensor)."""
    t = np.asarray(t)
    if t.dtype not in _CODE_FOR_DTYPE:
        raise TypeError(f"SSPT stores float32/float64 only, got {t.dtype}")
    code = _CODE_FOR_DTYPE[t.dtype]
    out = SSPT_MAGIC + struct.pack("<III", SSPT_VERSION, code, t.ndim)
    out += struct.pack(f"<{t.ndim}Q", *t.shape)
    out += np.ascontiguousarray(t, dtype=_DTYPE_CODES[code]).tobytes()
    return out


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    """Parse one SSPT blob. Raises the same errors as read_tensor."""
    if len(buf) < 4 or buf[:4] != SSPT_MAGIC:
        raise BadMagicError(f"not an SSPT blob (magic {buf[:4]!r})")
    if len(buf) < 16:
        raise TruncatedPayloadError("header truncated")
    version, code, ndim = struct.unpack("<III", buf[4:16])
    if version != SSPT_VERSION:
        raise VersionMismatchError(f"unsupported SSPT version {version}")
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code}")
    dims_end = 16 + 8 * ndim
    if len(buf) < dims_end:
        raise TruncatedPayloadError("dims truncated")
    dims = struct.unpack(f"<{ndim}Q", buf[16:dims_end])
    n_elem = 1
    for d in dims:
        n_elem *= d
        if n_elem > _MAX_ELEMENTS:
            raise DimOverflowError(f"declared dims {dims} overflow")
    dtype = _DTYPE_CODES[code]
    expected = n_elem * dtype.itemsize
    if len(buf) - dims_end != expected:
        raise TruncatedPayloadError(
            f"payload is {len(buf) - dims_end} bytes, expected {expected}"
        )
    data = np.frombuffer(buf[dims_end:], dtype=dtype).copy()
    return data.reshape(dims)


def read_tensor(path) -> np.ndarray:
    """Load an SSPT file written by write_tensor, bit-exactly."""
    with open(path, "rb") as fh:
        buf = fh.read()
    return tensor_from_bytes(buf)


def resample_bilinear(t: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinearly resample an [H,W] or [H,W,C] array to (new_h, new_w).

    Half-pixel-centered: output pixel (r,c) samples input coordinates
    ((r+0.5)*H/new_h - 0.5, (c+0.5)*W/new_w - 0.5), clamped to the valid
    range. Constant fields are reproduced exactly; affine fields exactly
    wherever the sample points stay interior.
    """
    t = np.asarray(t)
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target extent must be positive, got {new_h}x{new_w}")
    squeeze = t.ndim == 2
    if squeeze:
        t = t[..., None]
    h, w, _ = t.shape
    if h < 1 or w < 1:
        raise ValueError("input extents must be >= 1")
    if (new_h, new_w) == (h, w):
        return t[..., 0].copy() if squeeze else t.copy()

    ys = (np.arange(new_h, dtype=t.dtype) + t.dtype.type(0.5)) * (h / new_h) - 0.5
    xs = (np.arange(new_w, dtype=t.dtype) + t.dtype.type(0.5)) * (w / new_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.minimum(y0, h - 2) if h > 1 else np.zeros_like(y0)
    x0 = np.minimum(x0, w - 2) if w > 1 else np.zeros_like(x0)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(t.dtype)[:, None, None]
    fx = (xs - x0).astype(t.dtype)[None, :, None]

    top = t[y0[:, None], x0[None, :]] * (1 - fx) + t[y0[:, None], x1[None, :]] * fx
    bot = t[y1[:, None], x0[None, :]] * (1 - fx) + t[y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy) + bot * fy
    return out[..., 0] if squeeze else out


def write_image(img: np.ndarray, path) -> None:
    """Write an [H,W,3] array in [0,1] as an 8-bit PNG (u = round(255*x))."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected [H,W,3], got {img.shape}")
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def png_bytes(img: np.ndarray) -> bytes:
    """PNG encoding of an [H,W,3] (RGB) or [H,W] (grayscale) array in [0,1]."""
    import io

    img = np.asarray(img)
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if u8.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(u8, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG into a float32 [H,W,3] array (values u/255)."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"expected PNG, got {im.format}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(str(exc)) from exc
    return arr / np.float32(255.0)
