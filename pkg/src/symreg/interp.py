"""Trilinear sampling on a clamped grid, with its two adjoints.

Coordinates are absolute voxel positions. Anything outside ``[0, n-1]`` along an
axis is clamped to the border, so the sampled value is flat there and the
coordinate derivative is zero.

At sample points that sit exactly on a grid node the trilinear interpolant has a
kink. There the coordinate derivative is reported as the average of the left and
right slopes, which is what a central difference sees.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def identity_grid(shape) -> np.ndarray:
    """Voxel coordinates of every grid point, shape ``(3, nx, ny, nz)``."""
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"))


@njit(cache=True)
def _cell(c, n):
    cc = min(max(c, 0.0), n - 1.0)
    i0 = min(int(np.floor(cc)), max(n - 2, 0))
    i1 = min(i0 + 1, n - 1)
    return i0, i1, cc - i0


@njit(cache=True)
def _sample_kernel(img, coords, out):
    C, nx, ny, nz = img.shape
    for p in range(coords.shape[1]):
        x0, x1, fx = _cell(coords[0, p], nx)
        y0, y1, fy = _cell(coords[1, p], ny)
        z0, z1, fz = _cell(coords[2, p], nz)
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        for ch in range(C):
            out[ch, p] = (
                gx * (gy * (gz * img[ch, x0, y0, z0] + fz * img[ch, x0, y0, z1])
                      + fy * (gz * img[ch, x0, y1, z0] + fz * img[ch, x0, y1, z1]))
                + fx * (gy * (gz * img[ch, x1, y0, z0] + fz * img[ch, x1, y0, z1])
                        + fy * (gz * img[ch, x1, y1, z0] + fz * img[ch, x1, y1, z1]))
            )


@njit(cache=True)
def _scatter_kernel(g, coords, out):
    C, nx, ny, nz = out.shape
    for p in range(coords.shape[1]):
        x0, x1, fx = _cell(coords[0, p], nx)
        y0, y1, fy = _cell(coords[1, p], ny)
        z0, z1, fz = _cell(coords[2, p], nz)
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        for ch in range(C):
            v = g[ch, p]
            out[ch, x0, y0, z0] += gx * gy * gz * v
            out[ch, x0, y0, z1] += gx * gy * fz * v
            out[ch, x0, y1, z0] += gx * fy * gz * v
            out[ch, x0, y1, z1] += gx * fy * fz * v
            out[ch, x1, y0, z0] += fx * gy * gz * v
            out[ch, x1, y0, z1] += fx * gy * fz * v
            out[ch, x1, y1, z0] += fx * fy * gz * v
            out[ch, x1, y1, z1] += fx * fy * fz * v


@njit(cache=True)
def _slope(img, ch, axis, lo, hi, x0, x1, fx, y0, y1, fy, z0, z1, fz):
    # derivative along `axis` inside the cell [lo, hi] of that axis
    if axis == 0:
        a = (1 - fy) * ((1 - fz) * img[ch, lo, y0, z0] + fz * img[ch, lo, y0, z1]) + fy * (
            (1 - fz) * img[ch, lo, y1, z0] + fz * img[ch, lo, y1, z1])
        b = (1 - fy) * ((1 - fz) * img[ch, hi, y0, z0] + fz * img[ch, hi, y0, z1]) + fy * (
            (1 - fz) * img[ch, hi, y1, z0] + fz * img[ch, hi, y1, z1])
    elif axis == 1:
        a = (1 - fx) * ((1 - fz) * img[ch, x0, lo, z0] + fz * img[ch, x0, lo, z1]) + fx * (
            (1 - fz) * img[ch, x1, lo, z0] + fz * img[ch, x1, lo, z1])
        b = (1 - fx) * ((1 - fz) * img[ch, x0, hi, z0] + fz * img[ch, x0, hi, z1]) + fx * (
            (1 - fz) * img[ch, x1, hi, z0] + fz * img[ch, x1, hi, z1])
    else:
        a = (1 - fx) * ((1 - fy) * img[ch, x0, y0, lo] + fy * img[ch, x0, y1, lo]) + fx * (
            (1 - fy) * img[ch, x1, y0, lo] + fy * img[ch, x1, y1, lo])
        b = (1 - fx) * ((1 - fy) * img[ch, x0, y0, hi] + fy * img[ch, x0, y1, hi]) + fx * (
            (1 - fy) * img[ch, x1, y0, hi] + fy * img[ch, x1, y1, hi])
    return b - a


@njit(cache=True)
def _coord_grad_kernel(img, g, coords, out):
    C, nx, ny, nz = img.shape
    dims = (nx, ny, nz)
    for p in range(coords.shape[1]):
        x0, x1, fx = _cell(coords[0, p], nx)
        y0, y1, fy = _cell(coords[1, p], ny)
        z0, z1, fz = _cell(coords[2, p], nz)
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        ax = 0.0
        ay = 0.0
        az = 0.0
        for ch in range(C):
            c000 = img[ch, x0, y0, z0]
            c001 = img[ch, x0, y0, z1]
            c010 = img[ch, x0, y1, z0]
            c011 = img[ch, x0, y1, z1]
            c100 = img[ch, x1, y0, z0]
            c101 = img[ch, x1, y0, z1]
            c110 = img[ch, x1, y1, z0]
            c111 = img[ch, x1, y1, z1]
            w = g[ch, p]
            ax += w * (gy * (gz * (c100 - c000) + fz * (c101 - c001)) + fy * (gz * (c110 - c010) + fz * (c111 - c011)))
            ay += w * (gx * (gz * (c010 - c000) + fz * (c011 - c001)) + fx * (gz * (c110 - c100) + fz * (c111 - c101)))
            az += w * (gx * (gy * (c001 - c000) + fy * (c011 - c010)) + fx * (gy * (c101 - c100) + fy * (c111 - c110)))
        out[0, p] = ax
        out[1, p] = ay
        out[2, p] = az
        lows = (x0, y0, z0)
        fracs = (fx, fy, fz)
        for axis in range(3):
            n = dims[axis]
            c = coords[axis, p]
            if n < 2 or c < 0.0 or c > n - 1.0:
                out[axis, p] = 0.0
            elif c == np.floor(c):
                lo = lows[axis]
                if fracs[axis] == 1.0 or lo == 0:
                    # the other side is the flat clamp
                    out[axis, p] *= 0.5
                else:
                    acc = 0.0
                    for ch in range(C):
                        acc += g[ch, p] * _slope(img, ch, axis, lo - 1, lo, x0, x1, fx, y0, y1, fy, z0, z1, fz)
                    out[axis, p] = 0.5 * (out[axis, p] + acc)


class Stencil:
    """A fixed set of sample points on a grid of the given shape.

    Holding the points lets the forward sample and both adjoints share them.
    """

    def __init__(self, coords: np.ndarray, shape):
        coords = np.asarray(coords, dtype=np.float64)
        self.shape = tuple(int(n) for n in shape)
        self.out_shape = coords.shape[1:]
        self.coords = np.ascontiguousarray(coords.reshape(3, -1))

    @property
    def lo(self):
        out = []
        for k, n in enumerate(self.shape):
            c = np.clip(self.coords[k], 0.0, n - 1)
            out.append(np.minimum(np.floor(c), max(n - 2, 0)).astype(np.intp))
        return out

    def _stack(self, img):
        img = np.asarray(img, dtype=np.float64)
        if img.shape == self.shape:
            return np.ascontiguousarray(img[None]), True
        return np.ascontiguousarray(img), False

    def sample(self, img: np.ndarray) -> np.ndarray:
        """Sample ``img`` (``(nx,ny,nz)`` or ``(C,nx,ny,nz)``) at the stencil points."""
        stack, squeeze = self._stack(img)
        out = np.empty((stack.shape[0], self.coords.shape[1]))
        _sample_kernel(stack, self.coords, out)
        out = out.reshape((stack.shape[0],) + self.out_shape)
        return out[0] if squeeze else out

    def adjoint_image(self, grad_out: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`sample` with respect to the sampled image."""
        squeeze = grad_out.ndim == len(self.out_shape)
        g = np.ascontiguousarray(grad_out, dtype=np.float64).reshape(-1, self.coords.shape[1])
        out = np.zeros((g.shape[0],) + self.shape)
        _scatter_kernel(g, self.coords, out)
        return out[0] if squeeze else out

    def adjoint_coords(self, img: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Gradient with respect to the sample coordinates, shape ``(3, *out_shape)``."""
        stack, _ = self._stack(img)
        g = np.ascontiguousarray(grad_out, dtype=np.float64).reshape(stack.shape[0], -1)
        out = np.empty((3, self.coords.shape[1]))
        _coord_grad_kernel(stack, g, self.coords, out)
        return out.reshape((3,) + self.out_shape)


def sample(img: np.ndarray, coords: np.ndarray) -> np.ndarray:
    return Stencil(coords, np.shape(img)[-3:]).sample(img)
