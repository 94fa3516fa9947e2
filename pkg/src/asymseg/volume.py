"""3D grid containers and the RVOL file format.

RVOL layout: one UTF-8 JSON header line, newline, raw payload.

    {"dims": [nx, ny, nz], "channels": C, "spacing": [sx, sy, sz], "dtype": "f32le"}\\n
    <C*nx*ny*nz little-endian values, channel slowest, z fastest>

Masks use ``"dtype": "u8"`` with values 0/1 and a single channel.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

_DTYPES = {"f32le": np.dtype("<f4"), "u8": np.dtype("u1")}


class RVOLError(ValueError):
    """Malformed or inconsistent RVOL file."""


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def _check_spacing(spacing):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be three positive finite values, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class Volume:
    """Multi-channel image, ``data`` shaped (C, nx, ny, nz) as float32."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or min(data.shape) < 1:
            raise ValueError(f"volume data must be (C, nx, ny, nz), got shape {data.shape}")
        data = data.astype("<f4", copy=False)
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self):
        return tuple(self.data.shape[1:])

    @property
    def channels(self):
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (self.spacing == other.spacing and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary lesion mask, ``data`` shaped (nx, ny, nz) as uint8 0/1."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {data.shape}")
        if data.dtype != np.bool_ and not np.all((data == 0) | (data == 1)):
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _frozen(data.astype(np.uint8)))

    @property
    def dims(self):
        return tuple(self.data.shape)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Per-voxel lesion probability in [0, 1], ``data`` shaped (nx, ny, nz)."""

    data: np.ndarray = field()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"probability map must be 3D, got shape {data.shape}")
        if not np.all((data >= 0.0) & (data <= 1.0)):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self):
        return tuple(self.data.shape)


def as_array(x, dtype=None):
    """Unwrap a container (or pass an array through) as an ndarray."""
    return np.asarray(getattr(x, "data", x), dtype=dtype)


def threshold(p, t=0.5):
    """Binarise a probability map: voxel is lesion iff ``p >= t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return Mask(as_array(p) >= t)


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------

def read_header(path):
    """Parse only the JSON header of an RVOL file."""
    header, _ = _read(path, payload=False)
    return header


def _read(path, payload=True):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise RVOLError(f"{path}: missing header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise RVOLError(f"{path}: malformed header ({exc})") from None
        if not isinstance(header, dict):
            raise RVOLError(f"{path}: header is not an object")
        missing = {"dims", "channels", "spacing", "dtype"} - set(header)
        if missing:
            raise RVOLError(f"{path}: header lacks {sorted(missing)}")
        dims, channels = header["dims"], header["channels"]
        if (not isinstance(dims, list) or len(dims) != 3
                or not all(isinstance(d, int) and d > 0 for d in dims)):
            raise RVOLError(f"{path}: bad dims {dims!r}")
        if not isinstance(channels, int) or channels < 1:
            raise RVOLError(f"{path}: bad channel count {channels!r}")
        if header["dtype"] not in _DTYPES:
            raise RVOLError(f"{path}: unsupported dtype {header['dtype']!r}")
        try:
            _check_spacing(header["spacing"])
        except (TypeError, ValueError) as exc:
            raise RVOLError(f"{path}: {exc}") from None
        if not payload:
            return header, None
        raw = fh.read()
    dtype = _DTYPES[header["dtype"]]
    count = channels * dims[0] * dims[1] * dims[2]
    if len(raw) != count * dtype.itemsize:
        raise RVOLError(
            f"{path}: payload holds {len(raw) // dtype.itemsize} values, header declares {count}")
    data = np.frombuffer(raw, dtype=dtype).reshape((channels, *dims))
    return header, data


def _write(path, data, spacing, dtype_name):
    header = {
        "dims": [int(d) for d in data.shape[1:]],
        "channels": int(data.shape[0]),
        "spacing": [float(s) for s in spacing],
        "dtype": dtype_name,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(data, dtype=_DTYPES[dtype_name]).tobytes())


def load_volume(path):
    header, data = _read(path)
    if header["dtype"] != "f32le":
        raise RVOLError(f"{path}: expected f32le volume, found {header['dtype']}")
    if not np.all(np.isfinite(data)):
        raise RVOLError(f"{path}: payload contains non-finite values")
    return Volume(data.copy(), tuple(header["spacing"]))


def save_volume(v, path):
    if not np.all(np.isfinite(v.data)):
        raise ValueError("refusing to write non-finite volume")
    _write(path, v.data, v.spacing, "f32le")


def load_mask(path):
    """Read a mask file; returns ``(Mask, spacing)``."""
    header, data = _read(path)
    if header["channels"] != 1:
        raise RVOLError(f"{path}: mask must have one channel")
    if header["dtype"] == "u8":
        if not np.all(data <= 1):
            raise RVOLError(f"{path}: mask values must be 0 or 1")
        return Mask(data[0]), tuple(header["spacing"])
    raise RVOLError(f"{path}: expected u8 mask, found {header['dtype']}")


def save_mask(m, path, spacing=(1.0, 1.0, 1.0)):
    _write(path, as_array(m, np.uint8)[None], _check_spacing(spacing), "u8")


def load_probability(path):
    """Read a single-channel f32 map; returns ``(ProbabilityMap, spacing)``."""
    v = load_volume(path)
    if v.channels != 1:
        raise RVOLError(f"{path}: probability map must have one channel")
    return ProbabilityMap(v.data[0]), v.spacing


def save_probability(p, path, spacing=(1.0, 1.0, 1.0)):
    data = as_array(p, np.float64)
    # float32 rounding can nudge 1 - eps upwards but never outside [0, 1]
    _write(path, np.clip(data.astype("<f4"), 0, 1)[None], _check_spacing(spacing), "f32le")
