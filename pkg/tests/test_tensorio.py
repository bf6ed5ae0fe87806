import numpy as np
import pytest

from splatfield import tensorio as tio


def test_roundtrip_identity(tmp_path):
    t = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "t.sspt"
    tio.write_tensor(t, p)
    back = tio.read_tensor(p)
    assert back.shape == (2, 3)
    assert back.dtype == np.float32
    assert np.array_equal(back, t)


def test_roundtrip_random_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    t = rng.standard_normal(1024).astype(np.float32)
    p = tmp_path / "r.sspt"
    tio.write_tensor(t, p)
    assert tio.read_tensor(p).tobytes() == t.tobytes()


def test_roundtrip_f64_and_dtype_code(tmp_path):
    t = np.array([1.0, 2.0, np.pi], dtype=np.float64)
    p = tmp_path / "d.sspt"
    tio.write_tensor(t, p)
    raw = p.read_bytes()
    # magic(4) + version u32 + dtype u32: f64 stores code 1
    assert raw[:4] == b"SSPT"
    assert int.from_bytes(raw[8:12], "little") == 1
    back = tio.read_tensor(p)
    assert back.dtype == np.float64
    assert np.array_equal(back, t)


def test_scalar_zero_dim_roundtrip(tmp_path):
    t = np.array(7.5, dtype=np.float32)
    p = tmp_path / "s.sspt"
    tio.write_tensor(t, p)
    back = tio.read_tensor(p)
    assert back.shape == ()
    assert back == np.float32(7.5)


def test_file_size_matches_format(tmp_path):
    # header = 4 magic + 3*u32 + ndim*u64; payload = prod(dims)*4 for f32
    t = np.zeros((480, 640, 3), dtype=np.float32)
    p = tmp_path / "big.sspt"
    tio.write_tensor(t, p)
    expected = (4 + 12 + 3 * 8) + 480 * 640 * 3 * 4
    assert p.stat().st_size == expected


def test_bad_magic(tmp_path):
    p = tmp_path / "x.sspt"
    p.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(tio.BadMagicError):
        tio.read_tensor(p)


def test_version_mismatch(tmp_path):
    t = np.zeros(3, dtype=np.float32)
    p = tmp_path / "v.sspt"
    tio.write_tensor(t, p)
    raw = bytearray(p.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    p.write_bytes(bytes(raw))
    with pytest.raises(tio.VersionMismatchError):
        tio.read_tensor(p)


def test_truncated_payload(tmp_path):
    t = np.zeros(8, dtype=np.float32)
    p = tmp_path / "tr.sspt"
    tio.write_tensor(t, p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-5])
    with pytest.raises(tio.TruncatedPayloadError):
        tio.read_tensor(p)


def test_dim_overflow(tmp_path):
    import struct

    header = b"SSPT" + struct.pack("<III", 1, 0, 2)
    header += struct.pack("<2Q", 1 << 62, 1 << 62)
    p = tmp_path / "o.sspt"
    p.write_bytes(header)
    with pytest.raises(tio.DimOverflowError):
        tio.read_tensor(p)


def test_rejects_non_float(tmp_path):
    with pytest.raises(TypeError):
        tio.write_tensor(np.zeros(3, dtype=np.int32), tmp_path / "i.sspt")


def test_tensor_bytes_matches_file(tmp_path):
    t = np.linspace(0, 1, 12, dtype=np.float32).reshape(3, 4)
    p = tmp_path / "b.sspt"
    tio.write_tensor(t, p)
    assert tio.tensor_bytes(t) == p.read_bytes()
    assert np.array_equal(tio.tensor_from_bytes(tio.tensor_bytes(t)), t)


# --- resample_bilinear ---


def test_resample_constant():
    t = np.full((5, 7, 2), 5.0, dtype=np.float32)
    for hw in [(3, 3), (10, 14), (1, 1)]:
        out = tio.resample_bilinear(t, *hw)
        assert out.shape == (*hw, 2)
        assert np.allclose(out, 5.0, atol=1e-6)


def test_resample_identity():
    rng = np.random.default_rng(1)
    t = rng.random((6, 4, 3), dtype=np.float32)
    out = tio.resample_bilinear(t, 6, 4)
    assert np.array_equal(out, t)


def test_resample_2x2_to_2x4_hand_weights():
    # columns of [[0,1],[0,1]] widen to x-coords -0.25,0.25,0.75,1.25
    # -> clamped samples 0, 0.25, 0.75, 1
    t = np.array([[0.0, 1.0], [0.0, 1.0]], dtype=np.float32)
    out = tio.resample_bilinear(t, 2, 4)
    expected = np.array([[0.0, 0.25, 0.75, 1.0]] * 2, dtype=np.float32)
    assert np.allclose(out, expected, atol=1e-6)


def test_resample_affine_exact_interior():
    # a + b*x + c*y reproduced at output pixel centers when sampling stays
    # interior (downsampling case)
    h, w = 16, 14
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    field = (0.3 + 0.11 * xx + 0.07 * yy).astype(np.float32)
    nh, nw = 8, 7
    out = tio.resample_bilinear(field, nh, nw)
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    expected = 0.3 + 0.11 * xs[None, :] + 0.07 * ys[:, None]
    assert np.allclose(out, expected, atol=1e-6)


def test_resample_zero_extent_rejected():
    with pytest.raises(ValueError):
        tio.resample_bilinear(np.zeros((2, 2), dtype=np.float32), 0, 4)


# --- PNG ---


def test_image_black_roundtrip(tmp_path):
    img = np.zeros((4, 5, 3), dtype=np.float32)
    p = tmp_path / "b.png"
    tio.write_image(img, p)
    assert np.array_equal(tio.read_image(p), img)


def test_image_quantization_half(tmp_path):
    img = np.full((2, 2, 3), 0.5, dtype=np.float32)
    p = tmp_path / "h.png"
    tio.write_image(img, p)
    back = tio.read_image(p)
    # round(0.5*255) = 128 -> 128/255
    assert np.allclose(back, 128.0 / 255.0, atol=1e-7)


def test_image_roundtrip_error_bound(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.random((8, 9, 3)).astype(np.float32)
    p = tmp_path / "r.png"
    tio.write_image(img, p)
    back = tio.read_image(p)
    assert np.max(np.abs(back - img)) <= 1.0 / 510.0 + 1e-7


def test_image_format_error(tmp_path):
    p = tmp_path / "fake.png"
    p.write_bytes(b"definitely not a png")
    with pytest.raises(tio.ImageFormatError):
        tio.read_image(p)
