import json
import struct

import numpy as np
import pytest

from dualmodseg import volume_io
from dualmodseg.errors import (
    BadMagic,
    CompressedInput,
    HeaderMismatch,
    MissingSidecar,
    NonBinaryMask,
    TruncatedFile,
    UnsupportedDatatype,
)


def build_nifti(dims_xyz, datatype, values, slope=1.0, inter=0.0, endian="<", vox_offset=352):
    """Independent NIfTI-1 fixture writer: header assembled field by field."""
    nx, ny, nz = dims_xyz
    header = bytearray(348)
    struct.pack_into(endian + "i", header, 0, 348)
    struct.pack_into(endian + "8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into(endian + "h", header, 70, datatype)
    bitpix = {4: 16, 8: 32, 16: 32}[datatype]
    struct.pack_into(endian + "h", header, 72, bitpix)
    struct.pack_into(endian + "f", header, 108, float(vox_offset))
    struct.pack_into(endian + "f", header, 112, slope)
    struct.pack_into(endian + "f", header, 116, inter)
    header[344:348] = b"n+1\x00"
    np_dtype = {4: "i2", 8: "i4", 16: "f4"}[datatype]
    payload = np.asarray(values, dtype=endian + np_dtype).tobytes()
    return bytes(header) + b"\x00" * (vox_offset - 348) + payload


def test_read_nifti1_float32(tmp_path):
    path = tmp_path / "vol.nii"
    path.write_bytes(build_nifti((2, 2, 2), 16, np.arange(8, dtype=np.float32)))
    vol = volume_io.read_nifti1(path)
    assert vol.header.dims == (2, 2, 2)
    assert vol.voxels.shape == (2, 2, 2)
    np.testing.assert_array_equal(vol.voxels.ravel(), np.arange(8, dtype=np.float32))


def test_read_nifti1_slope_intercept(tmp_path):
    path = tmp_path / "vol.nii"
    path.write_bytes(build_nifti((2, 2, 2), 16, np.arange(8, dtype=np.float32), slope=2.0, inter=1.0))
    vol = volume_io.read_nifti1(path)
    np.testing.assert_allclose(vol.voxels.ravel(), 2.0 * np.arange(8) + 1.0)


def test_read_nifti1_zero_slope_means_unscaled(tmp_path):
    path = tmp_path / "vol.nii"
    path.write_bytes(build_nifti((1, 2, 2), 16, [1, 2, 3, 4], slope=0.0, inter=0.0))
    vol = volume_io.read_nifti1(path)
    np.testing.assert_array_equal(vol.voxels.ravel(), [1, 2, 3, 4])


def test_read_nifti1_int16(tmp_path):
    path = tmp_path / "vol.nii"
    path.write_bytes(build_nifti((2, 1, 2), 4, [-3, 0, 7, 32000], slope=1.0))
    vol = volume_io.read_nifti1(path)
    assert vol.voxels.dtype == np.float32
    np.testing.assert_array_equal(vol.voxels.ravel(), [-3, 0, 7, 32000])


def test_read_nifti1_dim_order(tmp_path):
    # asymmetric dims: nx=4 (fastest on disk), ny=2, nz=1 -> array (D=1, H=2, W=4)
    path = tmp_path / "vol.nii"
    path.write_bytes(build_nifti((4, 2, 1), 16, np.arange(8, dtype=np.float32)))
    vol = volume_io.read_nifti1(path)
    assert vol.voxels.shape == (1, 2, 4)
    np.testing.assert_array_equal(vol.voxels[0, 1], [4, 5, 6, 7])


def test_read_nifti1_big_endian(tmp_path):
    path = tmp_path / "vol.nii"
    path.write_bytes(build_nifti((2, 2, 1), 16, [1.5, -2.0, 3.25, 0.0], endian=">"))
    vol = volume_io.read_nifti1(path)
    np.testing.assert_array_equal(vol.voxels.ravel(), [1.5, -2.0, 3.25, 0.0])


def test_read_nifti1_gzip_magic(tmp_path):
    path = tmp_path / "vol.nii.gz"
    path.write_bytes(b"\x1f\x8b" + b"\x00" * 400)
    with pytest.raises(CompressedInput):
        volume_io.read_nifti1(path)


def test_read_nifti1_bad_magic(tmp_path):
    raw = bytearray(build_nifti((2, 2, 2), 16, np.zeros(8, dtype=np.float32)))
    raw[344:348] = b"ni1\x00"  # two-file variant is not supported
    path = tmp_path / "vol.nii"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        volume_io.read_nifti1(path)


def test_read_nifti1_unsupported_datatype(tmp_path):
    raw = bytearray(build_nifti((2, 2, 2), 16, np.zeros(8, dtype=np.float32)))
    struct.pack_into("<h", raw, 70, 2)  # uint8
    path = tmp_path / "vol.nii"
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedDatatype):
        volume_io.read_nifti1(path)


def test_read_nifti1_truncated(tmp_path):
    raw = build_nifti((2, 2, 2), 16, np.zeros(8, dtype=np.float32))
    path = tmp_path / "vol.nii"
    path.write_bytes(raw[:-8])
    with pytest.raises(TruncatedFile):
        volume_io.read_nifti1(path)


def test_read_nifti1_finite(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=24).astype(np.float32)
    path = tmp_path / "vol.nii"
    path.write_bytes(build_nifti((2, 3, 4), 16, values, slope=3.0, inter=-1.0))
    vol = volume_io.read_nifti1(path)
    assert np.isfinite(vol.voxels).all()


def test_portable_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    voxels = rng.normal(size=(3, 4, 5)).astype(np.float32)
    volume_io.write_portable(voxels, tmp_path / "vol")
    back = volume_io.read_portable(tmp_path / "vol.json")
    np.testing.assert_array_equal(back.voxels, voxels)  # bit-exact
    assert back.header.dims == (3, 4, 5)


def test_portable_small_example(tmp_path):
    (tmp_path / "v.json").write_text(json.dumps({"dims": [1, 2, 2], "dtype": "f32", "order": "DHW"}))
    (tmp_path / "v.f32").write_bytes(np.array([1, 2, 3, 4], dtype="<f4").tobytes())
    vol = volume_io.read_portable(tmp_path / "v")
    np.testing.assert_array_equal(vol.voxels, [[[1, 2], [3, 4]]])


def test_portable_size_mismatch(tmp_path):
    (tmp_path / "v.json").write_text(json.dumps({"dims": [1, 2, 2], "dtype": "f32", "order": "DHW"}))
    (tmp_path / "v.f32").write_bytes(np.array([1, 2, 3], dtype="<f4").tobytes())
    with pytest.raises(HeaderMismatch):
        volume_io.read_portable(tmp_path / "v")


def test_portable_missing_sidecar(tmp_path):
    (tmp_path / "v.f32").write_bytes(b"\x00" * 16)
    with pytest.raises(MissingSidecar):
        volume_io.read_portable(tmp_path / "v")


def test_pgm_byte_exact(tmp_path):
    path = tmp_path / "m.pgm"
    volume_io.write_mask_pgm(np.array([[1, 0], [0, 1]]), path)
    assert path.read_bytes() == b"P5\n2 2\n255\n\xff\x00\x00\xff"


def test_pgm_all_zero(tmp_path):
    path = tmp_path / "m.pgm"
    volume_io.write_mask_pgm(np.zeros((3, 5), dtype=np.uint8), path)
    raw = path.read_bytes()
    header = b"P5\n5 3\n255\n"
    assert raw == header + b"\x00" * 15
    assert len(raw) == len(header) + 15


def test_pgm_non_binary(tmp_path):
    with pytest.raises(NonBinaryMask):
        volume_io.write_mask_pgm(np.array([[0, 2]]), tmp_path / "m.pgm")
