"""Minimal NIfTI-1 reader/writer (single-file ``.nii`` / ``.nii.gz``)."""

from __future__ import annotations

import gzip
import json
import os

import numpy as np

from .errors import FormatError, ShapeError, UnsupportedError, VolumeIOError
from .volume import Volume

HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "i4"),
        ("session_error", "i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "i2", (8,)),
        ("intent_p1", "f4"),
        ("intent_p2", "f4"),
        ("intent_p3", "f4"),
        ("intent_code", "i2"),
        ("datatype", "i2"),
        ("bitpix", "i2"),
        ("slice_start", "i2"),
        ("pixdim", "f4", (8,)),
        ("vox_offset", "f4"),
        ("scl_slope", "f4"),
        ("scl_inter", "f4"),
        ("slice_end", "i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "f4"),
        ("cal_min", "f4"),
        ("slice_duration", "f4"),
        ("toffset", "f4"),
        ("glmax", "i4"),
        ("glmin", "i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "i2"),
        ("sform_code", "i2"),
        ("quatern_b", "f4"),
        ("quatern_c", "f4"),
        ("quatern_d", "f4"),
        ("qoffset_x", "f4"),
        ("qoffset_y", "f4"),
        ("qoffset_z", "f4"),
        ("srow_x", "f4", (4,)),
        ("srow_y", "f4", (4,)),
        ("srow_z", "f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
).newbyteorder("<")
assert HEADER_DTYPE.itemsize == 348

# NIfTI datatype code -> numpy dtype (byte order applied at read time)
SUPPORTED_DTYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
    256: "i1",
    512: "u2",
    768: "u4",
    1024: "i8",
    1280: "u8",
}
UNSUPPORTED_DTYPES = {
    1: "binary",
    32: "complex64",
    128: "rgb24",
    1536: "float128",
    1792: "complex128",
    2048: "complex256",
    2304: "rgba32",
}

ORIENTATION_FIELDS = (
    "qform_code",
    "sform_code",
    "quatern_b",
    "quatern_c",
    "quatern_d",
    "qoffset_x",
    "qoffset_y",
    "qoffset_z",
    "srow_x",
    "srow_y",
    "srow_z",
)

# Exact float64 spacing is carried in a comment extension, since pixdim is float32.
_EXT_CODE_COMMENT = 6
_EXT_PREFIX = b"lfiqt-spacing:"


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise VolumeIOError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream") from exc
    return raw


def _decode_float32(value):
    """Shortest decimal that maps back to the same float32 (0.9f -> 0.9)."""
    return float(np.format_float_positional(np.float32(value), unique=True, trim="-"))


def _spacing_from_extensions(raw, byteorder, vox_offset):
    pos = 352
    if len(raw) < pos or raw[348] == 0:
        return None
    while pos + 8 <= vox_offset:
        esize, ecode = np.frombuffer(raw, dtype=byteorder + "i4", count=2, offset=pos)
        if esize < 16 or pos + esize > vox_offset:
            break
        body = raw[pos + 8 : pos + esize]
        if ecode == _EXT_CODE_COMMENT and body.startswith(_EXT_PREFIX):
            try:
                return tuple(json.loads(body[len(_EXT_PREFIX) :].rstrip(b"\0").decode()))
            except ValueError:
                return None
        pos += int(esize)
    return None


def load_volume(path):
    """Read a 3D scalar NIfTI-1 file into a :class:`Volume`."""
    raw = _read_bytes(path)
    if len(raw) < 348:
        raise FormatError(f"{path}: file too short for a NIfTI-1 header")
    byteorder = "<"
    if np.frombuffer(raw, "<i4", count=1)[0] != 348:
        if np.frombuffer(raw, ">i4", count=1)[0] != 348:
            raise FormatError(f"{path}: sizeof_hdr is not 348")
        byteorder = ">"
    hdr = np.frombuffer(raw, dtype=HEADER_DTYPE.newbyteorder(byteorder), count=1)[0]
    if hdr["magic"] != b"n+1":
        raise FormatError(f"{path}: missing NIfTI-1 magic 'n+1'")

    code = int(hdr["datatype"])
    if code in UNSUPPORTED_DTYPES:
        raise UnsupportedError(f"{path}: datatype {UNSUPPORTED_DTYPES[code]} is not supported")
    if code not in SUPPORTED_DTYPES:
        raise UnsupportedError(f"{path}: unknown datatype code {code}")
    dtype = np.dtype(SUPPORTED_DTYPES[code]).newbyteorder(byteorder)
    if int(hdr["bitpix"]) != dtype.itemsize * 8:
        raise FormatError(f"{path}: bitpix {hdr['bitpix']} inconsistent with datatype {code}")

    dim = hdr["dim"]
    if dim[0] != 3:
        raise ShapeError(f"{path}: expected 3 dimensions, header has {dim[0]}")
    shape = tuple(int(d) for d in dim[1:4])
    if min(shape) < 1:
        raise ShapeError(f"{path}: invalid dims {shape}")

    offset = int(hdr["vox_offset"])
    count = shape[0] * shape[1] * shape[2]
    if offset < 348 or offset + count * dtype.itemsize > len(raw):
        raise FormatError(f"{path}: voxel data truncated")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64)

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0 and np.isfinite(slope) and np.isfinite(inter) and (slope, inter) != (1.0, 0.0):
        data = data * slope + inter

    pixdim = [float(p) for p in hdr["pixdim"][1:4]]
    exact = _spacing_from_extensions(raw, byteorder, offset)
    if exact is not None and len(exact) == 3 and all(
        np.float32(e) == np.float32(p) for e, p in zip(exact, pixdim)
    ):
        spacing = tuple(float(e) for e in exact)
    else:
        spacing = tuple(_decode_float32(p) for p in pixdim)

    orientation = {"qfac": float(hdr["pixdim"][0])}
    for name in ORIENTATION_FIELDS:
        val = hdr[name]
        orientation[name] = val.tolist() if np.ndim(val) else val.item()
    return Volume(data, spacing, orientation=orientation)


def _header_bytes(v, vox_offset):
    hdr = np.zeros(1, dtype=HEADER_DTYPE)[0]
    hdr["sizeof_hdr"] = 348
    hdr["dim"] = [3, *v.shape, 1, 1, 1, 1]
    hdr["datatype"] = 16
    hdr["bitpix"] = 32
    hdr["pixdim"] = [1.0, *v.spacing, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = vox_offset
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # mm
    hdr["magic"] = b"n+1"
    orient = v.orientation
    if orient is None:
        hdr["sform_code"] = 1
        hdr["srow_x"] = [v.spacing[0], 0, 0, 0]
        hdr["srow_y"] = [0, v.spacing[1], 0, 0]
        hdr["srow_z"] = [0, 0, v.spacing[2], 0]
    else:
        hdr["pixdim"][0] = orient.get("qfac", 1.0) or 1.0
        for name in ORIENTATION_FIELDS:
            if name in orient:
                hdr[name] = orient[name]
    return hdr.tobytes()


def save_volume(v, path):
    """Write ``v`` as little-endian float32 NIfTI-1; gzip when the name ends in ``.gz``."""
    body = _EXT_PREFIX + json.dumps(list(v.spacing)).encode()
    esize = -(-(len(body) + 8) // 16) * 16
    extension = (
        np.array([esize, _EXT_CODE_COMMENT], dtype="<i4").tobytes()
        + body.ljust(esize - 8, b"\0")
    )
    vox_offset = 352 + esize
    payload = (
        _header_bytes(v, vox_offset)
        + b"\x01\0\0\0"
        + extension
        + np.asarray(v.data, dtype="<f4").tobytes(order="F")
    )
    if str(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise VolumeIOError(f"cannot write {path}: {exc}") from exc


def strip_nifti_suffix(path):
    path = os.fspath(path)
    for suffix in (".nii.gz", ".nii"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path
