"""Scalar and label volumes, point sampling, windowed means and raw-file IO.

Arrays are indexed ``[x, y, z]``. On disk the payload is x-fastest, which is
Fortran order for such an array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .interp import Stencil

MAX_LABEL = np.iinfo(np.uint16).max

_DTYPES = {"f32": np.dtype("<f4"), "u16": np.dtype("<u2")}


class VolumeFormatError(ValueError):
    """Raised for malformed headers, short payloads or invalid voxel values."""


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self):
        return self.data.shape


@dataclass(frozen=True)
class LabelMap:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    max_label: int = field(default=MAX_LABEL)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"label data must be a non-empty 3D array, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(data == np.round(data)):
                raise ValueError("label map must hold integers")
            data = data.astype(np.int64)
        if data.size and (data.min() < 0 or data.max() > self.max_label):
            raise ValueError(f"labels must lie in [0, {self.max_label}]")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self):
        return self.data.shape

    @property
    def labels(self):
        return np.unique(self.data)


def as_array(vol) -> np.ndarray:
    return vol.data if isinstance(vol, (Volume, LabelMap)) else np.asarray(vol)


def sample_trilinear(vol, p) -> float:
    """Trilinear value at continuous voxel position ``p``; out-of-grid positions clamp."""
    data = np.asarray(as_array(vol), dtype=np.float64)
    coords = np.asarray(p, dtype=np.float64).reshape(3, 1)
    return float(Stencil(coords, data.shape).sample(data)[0])


def nearest_index(coords: np.ndarray, shape) -> tuple:
    """Clamped nearest-voxel indices, ties rounding half-up on each axis."""
    out = []
    for k, n in enumerate(shape):
        i = np.floor(np.asarray(coords[k], dtype=np.float64) + 0.5)
        out.append(np.clip(i, 0, n - 1).astype(np.intp))
    return tuple(out)


def sample_nearest(lm, p) -> int:
    data = as_array(lm)
    idx = nearest_index(np.asarray(p, dtype=np.float64), data.shape)
    return int(data[idx])


def box_sum(a: np.ndarray, w: int) -> np.ndarray:
    """Sum over the ``w**3`` window around each voxel, truncated at the borders.

    Works along the last three axes, so stacked channels are fine.
    """
    r = w // 2
    out = np.asarray(a, dtype=np.float64)
    for axis in range(out.ndim - 3, out.ndim):
        n = out.shape[axis]
        pad = [(0, 0)] * out.ndim
        pad[axis] = (1, 0)
        cs = np.pad(np.cumsum(out, axis=axis), pad)
        hi = np.minimum(np.arange(n) + r + 1, n)
        lo = np.maximum(np.arange(n) - r, 0)
        out = np.take(cs, hi, axis=axis) - np.take(cs, lo, axis=axis)
    return out


def window_counts(shape, w: int) -> np.ndarray:
    r = w // 2
    counts = [np.minimum(np.arange(n) + r, n - 1) - np.maximum(np.arange(n) - r, 0) + 1 for n in shape]
    return counts[0][:, None, None] * counts[1][None, :, None] * counts[2][None, None, :]


def check_window(w: int):
    if int(w) != w or w < 1 or w % 2 == 0:
        raise ValueError(f"window size must be a positive odd integer, got {w}")


def local_mean(vol, w: int):
    check_window(w)
    data = np.asarray(as_array(vol), dtype=np.float64)
    out = box_sum(data, w) / window_counts(data.shape, w)
    return Volume(out, vol.spacing) if isinstance(vol, Volume) else out


# --- file IO ---------------------------------------------------------------


def _paths(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".raw") else path
    return stem.with_suffix(".json"), stem.with_suffix(".raw")


def _write(path, payload: np.ndarray, header: dict):
    header_path, raw_path = _paths(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header = {**header, "order": "x-fastest", "endianness": "little"}
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    raw_path.write_bytes(payload.tobytes())


def _read(path):
    header_path, raw_path = _paths(path)
    try:
        header = json.loads(header_path.read_text())
        dims = [int(d) for d in header["dims"]]
        spacing = [float(s) for s in header.get("spacing", (1.0, 1.0, 1.0))]
        dtype = _DTYPES[header["dtype"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{header_path}: malformed header ({exc})") from exc
    if len(dims) != 3 or min(dims) < 1 or len(spacing) != 3:
        raise VolumeFormatError(f"{header_path}: dims and spacing need 3 positive entries")
    if header.get("order", "x-fastest") != "x-fastest" or header.get("endianness", "little") != "little":
        raise VolumeFormatError(f"{header_path}: only x-fastest little-endian payloads are supported")
    channels = int(header.get("channels", 1))
    raw = raw_path.read_bytes() if raw_path.exists() else None
    if raw is None:
        raise VolumeFormatError(f"{raw_path}: payload file missing")
    expected = channels * int(np.prod(dims))
    if len(raw) != expected * dtype.itemsize:
        raise VolumeFormatError(
            f"{raw_path}: payload holds {len(raw) / dtype.itemsize:g} values, header expects {expected}"
        )
    values = np.frombuffer(raw, dtype=dtype)
    if dtype.kind == "f" and not np.all(np.isfinite(values)):
        raise VolumeFormatError(f"{raw_path}: payload contains non-finite values")
    return header, dims, tuple(spacing), channels, values


def save_volume(vol, path):
    """Write a Volume (as f32) or LabelMap (as u16) to ``<stem>.json`` + ``<stem>.raw``.

    Float data is stored at 32-bit precision, so only float32-representable
    volumes round-trip bit for bit.
    """
    if isinstance(vol, LabelMap):
        payload, dtype = vol.data.astype("<u2"), "u16"
    else:
        payload, dtype = np.asarray(vol.data).astype("<f4"), "f32"
    header = {"dims": list(vol.dims), "spacing": list(vol.spacing), "dtype": dtype}
    _write(path, payload.ravel(order="F"), header)


def load_volume(path):
    """Read a volume file; ``u16`` payloads come back as a LabelMap."""
    header, dims, spacing, channels, values = _read(path)
    if channels != 1:
        raise VolumeFormatError(f"{path}: expected a scalar volume, header declares {channels} channels")
    data = values.reshape(dims, order="F").copy()
    if header["dtype"] == "u16":
        return LabelMap(data, spacing)
    return Volume(data, spacing)


def save_field(u: np.ndarray, path, spacing=(1.0, 1.0, 1.0)):
    """Write a ``(3, nx, ny, nz)`` vector field, components stored one after another."""
    u = np.asarray(u)
    if u.ndim != 4 or u.shape[0] != 3:
        raise ValueError(f"field must have shape (3, nx, ny, nz), got {u.shape}")
    payload = np.concatenate([u[c].astype("<f4").ravel(order="F") for c in range(3)])
    header = {
        "dims": list(u.shape[1:]),
        "spacing": list(spacing),
        "dtype": "f32",
        "channels": 3,
        "layout": "planar",
    }
    _write(path, payload, header)


def load_field(path):
    """Read a vector field; returns ``(array of shape (3, nx, ny, nz), spacing)``."""
    header, dims, spacing, channels, values = _read(path)
    if channels != 3 or header.get("layout") != "planar" or header["dtype"] != "f32":
        raise VolumeFormatError(f"{path}: not a planar 3-channel f32 field")
    n = int(np.prod(dims))
    u = np.stack([values[c * n:(c + 1) * n].reshape(dims, order="F") for c in range(3)])
    return u, spacing
