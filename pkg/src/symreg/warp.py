"""Backward warping of intensity volumes and label maps."""

from __future__ import annotations

import numpy as np

from .interp import Stencil, identity_grid
from .volume import LabelMap, Volume, as_array, nearest_index


def _check(data, u):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 4 or u.shape[0] != 3 or u.shape[1:] != data.shape:
        raise ValueError(f"field dims {u.shape[1:]} do not match volume dims {data.shape}")
    return u


def warp_image(vol, u):
    """``out(x) = vol(x + u(x))`` with trilinear interpolation and border clamping."""
    data = np.asarray(as_array(vol), dtype=np.float64)
    u = _check(data, u)
    out = Stencil(identity_grid(data.shape) + u, data.shape).sample(data)
    return Volume(out, vol.spacing) if isinstance(vol, Volume) else out


def warp_labels(lm, u):
    """Nearest-neighbour pull of labels through the same backward mapping."""
    data = as_array(lm)
    u = _check(data, u)
    out = data[nearest_index(identity_grid(data.shape) + u, data.shape)]
    return LabelMap(out, lm.spacing, lm.max_label) if isinstance(lm, LabelMap) else out
