"""Read 3D volumes (minimal NIfTI-1 + portable raw format) and export masks as PGM.

Formats handled here:

* NIfTI-1, single-file, uncompressed, magic ``n+1\\0`` at offset 344.
  Only datatypes 4 (int16), 8 (int32) and 16 (float32) are supported.
  Byte order is detected from ``sizeof_hdr``: if it does not read as 348
  natively, the header and voxels are byte-swapped.  The on-disk voxel
  stream (first dim fastest) is reshaped C-order to ``(D, H, W)`` with
  ``D = dim[3]``, ``H = dim[2]``, ``W = dim[1]``; volumes are treated as
  raw index grids (no affine/orientation handling).

* Portable raw format: a ``<name>.json`` sidecar
  ``{"dims": [D, H, W], "dtype": "f32", "order": "DHW"}`` next to a
  ``<name>.f32`` payload of little-endian float32 values in C order.
  This is the canonical on-disk format for tests and the phantom
  generator; NIfTI is an ingestion adapter only.

* Binary PGM (P5), maxval 255, foreground 255 / background 0.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CompressedInput,
    HeaderMismatch,
    MissingSidecar,
    NonBinaryMask,
    TruncatedFile,
    UnsupportedDatatype,
)

NIFTI_HEADER_SIZE = 348
NIFTI_MAGIC = b"n+1\x00"
GZIP_MAGIC = b"\x1f\x8b"

# NIfTI-1 datatype code -> numpy dtype (little-endian base)
SUPPORTED_DTYPES = {4: np.dtype("<i2"), 8: np.dtype("<i4"), 16: np.dtype("<f4")}


@dataclass
class VolumeHeader:
    dims: tuple  # (D, H, W)
    datatype_code: int
    scl_slope: float
    scl_inter: float
    vox_offset: int


@dataclass
class RawVolume:
    header: VolumeHeader
    voxels: np.ndarray  # (D, H, W) float32, slope/intercept applied


def read_nifti1(path) -> RawVolume:
    """Decode a single-file uncompressed NIfTI-1 volume."""
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        raise CompressedInput(f"{path}: gzip stream; decompress externally first")
    if len(raw) < NIFTI_HEADER_SIZE:
        raise TruncatedFile(f"{path}: only {len(raw)} bytes, header needs {NIFTI_HEADER_SIZE}")
    header = raw[:NIFTI_HEADER_SIZE]

    (sizeof_hdr,) = struct.unpack("<i", header[0:4])
    if sizeof_hdr == NIFTI_HEADER_SIZE:
        endian = "<"
    elif struct.unpack(">i", header[0:4])[0] == NIFTI_HEADER_SIZE:
        endian = ">"
    else:
        raise BadMagic(f"{path}: sizeof_hdr is not 348 in either byte order")

    magic = header[344:348]
    if magic != NIFTI_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} is not {NIFTI_MAGIC!r}")

    dim = struct.unpack(endian + "8h", header[40:56])
    if dim[0] < 3:
        raise BadMagic(f"{path}: expected a 3D volume, dim[0]={dim[0]}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise BadMagic(f"{path}: non-positive dims {(nx, ny, nz)}")

    (datatype_code,) = struct.unpack(endian + "h", header[70:72])
    if datatype_code not in SUPPORTED_DTYPES:
        raise UnsupportedDatatype(f"{path}: datatype code {datatype_code} not in {{4, 8, 16}}")

    (vox_offset_f,) = struct.unpack(endian + "f", header[108:112])
    vox_offset = int(round(vox_offset_f))
    if vox_offset < 352:
        raise BadMagic(f"{path}: vox_offset {vox_offset} < 352")
    (scl_slope,) = struct.unpack(endian + "f", header[112:116])
    (scl_inter,) = struct.unpack(endian + "f", header[116:120])

    dtype = SUPPORTED_DTYPES[datatype_code].newbyteorder(endian)
    n_voxels = nx * ny * nz
    n_bytes = n_voxels * dtype.itemsize
    if len(raw) < vox_offset + n_bytes:
        raise TruncatedFile(
            f"{path}: need {n_bytes} voxel bytes at offset {vox_offset}, file has {len(raw)}"
        )

    flat = np.frombuffer(raw, dtype=dtype, count=n_voxels, offset=vox_offset)
    slope = scl_slope if scl_slope != 0.0 else 1.0  # NIfTI-1: slope 0 means unscaled
    voxels = (flat.astype(np.float64) * slope + scl_inter).astype(np.float32)
    voxels = voxels.reshape(nz, ny, nx)

    hdr = VolumeHeader(
        dims=(nz, ny, nx),
        datatype_code=datatype_code,
        scl_slope=float(scl_slope),
        scl_inter=float(scl_inter),
        vox_offset=vox_offset,
    )
    return RawVolume(header=hdr, voxels=voxels)


def _portable_base(path) -> Path:
    p = Path(path)
    if p.suffix in (".json", ".f32"):
        return p.with_suffix("")
    return p


def read_portable(path) -> RawVolume:
    """Read a `<name>.json` + `<name>.f32` portable volume pair."""
    base = _portable_base(path)
    sidecar = base.with_suffix(".json")
    payload = base.with_suffix(".f32")
    if not sidecar.exists():
        raise MissingSidecar(f"{sidecar}: sidecar not found")
    meta = json.loads(sidecar.read_text())
    dims = tuple(int(d) for d in meta["dims"])
    if len(dims) != 3 or min(dims) < 1:
        raise HeaderMismatch(f"{sidecar}: bad dims {dims}")
    if meta.get("dtype") != "f32" or meta.get("order") != "DHW":
        raise HeaderMismatch(f"{sidecar}: expected dtype f32 / order DHW, got {meta}")
    if not payload.exists():
        raise HeaderMismatch(f"{payload}: payload file not found")
    raw = payload.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * 4
    if len(raw) != expected:
        raise HeaderMismatch(f"{payload}: {len(raw)} bytes, dims {dims} need {expected}")
    voxels = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    hdr = VolumeHeader(dims=dims, datatype_code=16, scl_slope=1.0, scl_inter=0.0, vox_offset=352)
    return RawVolume(header=hdr, voxels=voxels)


def write_portable(voxels: np.ndarray, path) -> None:
    """Write a 3D array as a portable `<name>.json` + `<name>.f32` pair."""
    arr = np.ascontiguousarray(voxels, dtype="<f4")
    if arr.ndim != 3:
        raise HeaderMismatch(f"expected a 3D array, got shape {arr.shape}")
    base = _portable_base(path)
    meta = {"dims": [int(d) for d in arr.shape], "dtype": "f32", "order": "DHW"}
    base.with_suffix(".json").write_text(json.dumps(meta) + "\n")
    base.with_suffix(".f32").write_bytes(arr.tobytes())


def write_mask_pgm(mask: np.ndarray, path) -> None:
    """Write a 2D binary mask as binary PGM (P5), foreground 255."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise NonBinaryMask(f"expected a 2D mask, got shape {arr.shape}")
    values = np.unique(arr)
    if not np.isin(values, (0, 1)).all():
        raise NonBinaryMask(f"mask values outside {{0, 1}}: {values[:8]}")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + (arr.astype(np.uint8) * 255).tobytes())
