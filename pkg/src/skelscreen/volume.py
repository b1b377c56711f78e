"""Voxel volumes: an on-disk header + raw format and the 3D median filter.

Arrays are indexed ``data[x, y, z]``. On disk the raw file is x-fastest,
then y, then z, little-endian. The header is UTF-8 ``key = value`` text::

    dims = 512 512 300
    spacing_mm = 0.06 0.06 0.06
    data = scan.raw
    dtype = i16le
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import HeaderError, MissingFileError, SizeMismatchError, SpacingError

DTYPES = {"i16le": np.dtype("<i2"), "u16le": np.dtype("<u2")}


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    data: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        if self.data.dtype not in (np.dtype(np.int16), np.dtype(np.uint16)):
            raise TypeError(f"volume data must be 16-bit integers, got {self.data.dtype}")
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise SizeMismatchError(f"volume must be 3D with every dim >= 1, got {self.data.shape}")
        sp = tuple(float(s) for s in self.spacing_mm)
        if len(sp) != 3 or not all(s > 0 and np.isfinite(s) for s in sp):
            raise SpacingError(f"spacing must be three positive reals, got {self.spacing_mm}")
        object.__setattr__(self, "spacing_mm", sp)
        self.data.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data: np.ndarray) -> "VoxelVolume":
        return VoxelVolume(data, self.spacing_mm)


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(header_path) -> dict:
    path = Path(header_path)
    if not path.is_file():
        raise MissingFileError(f"header not found: {path}")
    fields = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise HeaderError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value
    missing = {"dims", "spacing_mm", "data", "dtype"} - fields.keys()
    if missing:
        raise HeaderError(f"{path}: missing keys {sorted(missing)}")
    try:
        dims = tuple(int(v) for v in fields["dims"].split())
        spacing = tuple(float(v) for v in fields["spacing_mm"].split())
    except ValueError as exc:
        raise HeaderError(f"{path}: unparsable dims/spacing ({exc})") from None
    if len(dims) != 3 or min(dims) < 1:
        raise HeaderError(f"{path}: dims must be three integers >= 1")
    if len(spacing) != 3 or not all(s > 0 for s in spacing):
        raise SpacingError(f"{path}: spacing_mm must be three positive reals, got {spacing}")
    if fields["dtype"] not in DTYPES:
        raise HeaderError(f"{path}: unsupported dtype {fields['dtype']!r}")
    return {
        "dims": dims,
        "spacing_mm": spacing,
        "data": path.parent / fields["data"],
        "dtype": fields["dtype"],
    }


def _read_raw(header_path, expect_dtype: str) -> tuple[np.ndarray, tuple]:
    hdr = read_header(header_path)
    if hdr["dtype"] != expect_dtype:
        raise HeaderError(f"{header_path}: expected dtype {expect_dtype}, got {hdr['dtype']}")
    raw_path = hdr["data"]
    if not raw_path.is_file():
        raise MissingFileError(f"raw data not found: {raw_path}")
    nx, ny, nz = hdr["dims"]
    dt = DTYPES[hdr["dtype"]]
    payload = raw_path.read_bytes()
    if len(payload) != nx * ny * nz * dt.itemsize:
        raise SizeMismatchError(
            f"{raw_path}: {len(payload)} bytes, dims {hdr['dims']} need {nx * ny * nz * dt.itemsize}"
        )
    flat = np.frombuffer(payload, dtype=dt)
    arr = flat.reshape(nz, ny, nx).transpose(2, 1, 0)
    return np.ascontiguousarray(arr.astype(dt.newbyteorder("="))), hdr["spacing_mm"]


def _write_raw(header_path, data: np.ndarray, spacing, dtype: str) -> None:
    header_path = Path(header_path)
    raw_path = header_path.with_suffix(".raw")
    dt = DTYPES[dtype]
    payload = np.ascontiguousarray(data.transpose(2, 1, 0)).astype(dt).tobytes()
    nx, ny, nz = data.shape
    text = (
        f"dims = {nx} {ny} {nz}\n"
        f"spacing_mm = {' '.join(repr(float(s)) for s in spacing)}\n"
        f"data = {raw_path.name}\n"
        f"dtype = {dtype}\n"
    )
    _atomic_write_bytes(raw_path, payload)
    _atomic_write_bytes(header_path, text.encode("utf-8"))


def load_volume(header_path) -> VoxelVolume:
    data, spacing = _read_raw(header_path, "i16le")
    return VoxelVolume(data, spacing)


def save_volume(volume: VoxelVolume, header_path) -> None:
    """Write ``volume`` next to its raw file (same stem, ``.raw`` suffix)."""
    _write_raw(header_path, volume.data, volume.spacing_mm, "i16le")


def load_label_volume(header_path) -> tuple[np.ndarray, tuple]:
    return _read_raw(header_path, "u16le")


def save_label_volume(labels: np.ndarray, spacing, header_path) -> None:
    if labels.max(initial=0) > np.iinfo(np.uint16).max:
        raise ValueError("label ids exceed the uint16 range")
    _write_raw(header_path, labels, spacing, "u16le")


def median_filter3(v: VoxelVolume) -> VoxelVolume:
    """3x3x3 median with edge-replicated borders."""
    return v.with_data(kernels.median3(np.ascontiguousarray(v.data)))
