"""Checkpoint file: magic, version, JSON header, little-endian float32 parameters."""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from ..errors import FormatError, VolumeIOError
from .model import SrModel, SrModelConfig

MAGIC = b"LFIQTCK\0"
FORMAT_VERSION = 1


def save_checkpoint(model, path, provenance=None):
    params = model.get_flat().astype("<f4")
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "config": model.config.to_dict(),
            "parameter_count": int(params.size),
            "dtype": "float32-le",
            "provenance": provenance or {},
        },
        sort_keys=True,
    ).encode()
    blob = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + params.tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise VolumeIOError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path):
    """Return ``(model, header)``; the model computes in float32."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise VolumeIOError(f"cannot read {path}: {exc}") from exc
    if not blob.startswith(MAGIC) or len(blob) < len(MAGIC) + 8:
        raise FormatError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(blob[start : start + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    params = np.frombuffer(blob, dtype="<f4", offset=start + hlen)
    model = SrModel(SrModelConfig.from_dict(header["config"]), dtype=torch.float32, init="zero")
    if params.size != header["parameter_count"] or params.size != model.parameter_count:
        raise FormatError(f"{path}: parameter count mismatch")
    model.set_flat(params.astype(np.float32))
    return model, header
