"""Conversion between landmark coordinates and per-landmark heatmaps.

A heatmap stack is a (K, H, W) array of nonnegative reals, channel k
belonging to landmark k. Coordinates are continuous pixel positions
(x rightward, y downward) with integer values at pixel centers.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autograd as ag
from .errors import BadSize

_grid_cache: dict = {}


def _grids(h: int, w: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    key = (h, w, np.dtype(dtype).str)
    if key not in _grid_cache:
        gx = np.arange(w, dtype=dtype)[None, None, None, :]
        gy = np.arange(h, dtype=dtype)[None, None, :, None]
        _grid_cache[key] = (gx, gy)
    return _grid_cache[key]


def _coords_array(landmarks) -> np.ndarray:
    pts = getattr(landmarks, "points", landmarks)
    return np.asarray(pts, dtype=np.float64)


def encode_gaussian(landmarks, sigma: float, size: tuple[int, int]) -> np.ndarray:
    """Render one unit-peak Gaussian per landmark.

    Channel k holds exp(-((x - xk)^2 + (y - yk)^2) / (2 sigma^2)); the
    continuous peak value is 1 at the landmark position. Landmarks up to
    2*sigma outside the frame are clamped onto the border with a warning;
    farther outside is an error.

    Parameters
    ----------
    landmarks : (K, 2) array or LandmarkSet
    sigma : float, > 0
    size : (H, W)

    Returns
    -------
    (K, H, W) float32 array.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = int(size[0]), int(size[1])
    if h < 1 or w < 1:
        raise BadSize(f"invalid heatmap size {size}")
    pts = _coords_array(landmarks)
    lo = np.array([0.0, 0.0])
    hi = np.array([w - 1.0, h - 1.0])
    outside = np.maximum(lo - pts, 0) + np.maximum(pts - hi, 0)
    worst = float(outside.max()) if pts.size else 0.0
    if worst > 0:
        if worst > 2.0 * sigma:
            raise ValueError(f"landmark {worst:.2f} px outside the frame (> 2 sigma)")
        warnings.warn(f"clamping landmark up to {worst:.2f} px outside the frame")
        pts = np.clip(pts, lo, hi)
    gx = np.arange(w, dtype=np.float64)[None, None, :]
    gy = np.arange(h, dtype=np.float64)[None, :, None]
    dx2 = (gx - pts[:, 0, None, None]) ** 2
    dy2 = (gy - pts[:, 1, None, None]) ** 2
    return np.exp(-(dx2 + dy2) / (2.0 * sigma * sigma)).astype(np.float32)


def decode_soft_argmax(stack, beta: float = 10.0):
    """Spatial softmax expectation of the pixel coordinates per channel.

    For an ndarray ``stack`` of shape (K, H, W) returns a (K, 2) float64
    array of [x, y]. For an autograd Tensor of shape (B, K, H, W) returns a
    Tensor of shape (B, K, 2) differentiable w.r.t. the heatmap values.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if isinstance(stack, ag.Tensor):
        return _decode_soft_argmax_graph(stack, beta)
    hm = np.asarray(stack, dtype=np.float64)
    if hm.ndim != 3:
        raise BadSize("expected a (K, H, W) heatmap stack")
    k, h, w = hm.shape
    z = beta * hm
    z -= z.max(axis=(1, 2), keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=(1, 2), keepdims=True)
    gx = np.arange(w, dtype=np.float64)
    gy = np.arange(h, dtype=np.float64)
    cx = (p.sum(axis=1) * gx).sum(axis=1)
    cy = (p.sum(axis=2) * gy).sum(axis=1)
    return np.stack([cx, cy], axis=1)


def _decode_soft_argmax_graph(stack: ag.Tensor, beta: float) -> ag.Tensor:
    if stack.data.ndim != 4:
        raise BadSize("expected a (B, K, H, W) tensor")
    b, k, h, w = stack.data.shape
    gx, gy = _grids(h, w, stack.data.dtype)
    mx = stack.data.max(axis=(2, 3), keepdims=True)
    # Subtracting the detached max leaves softmax and its gradient unchanged.
    z = ag.exp(ag.mul(ag.sub(stack, ag.Tensor(mx)), beta))
    s = ag.tensor_sum(z, axis=(2, 3), keepdims=True)
    p = ag.div(z, s)
    cx = ag.tensor_sum(ag.mul(p, ag.Tensor(gx)), axis=(2, 3))
    cy = ag.tensor_sum(ag.mul(p, ag.Tensor(gy)), axis=(2, 3))
    return ag.concat([cx.reshape(b, k, 1), cy.reshape(b, k, 1)], axis=2)


def decode_argmax_subpixel(stack) -> np.ndarray:
    """Integer argmax per channel refined by a 1-D quadratic fit per axis.

    Ties break toward the smallest flattened index. Refinement offsets are
    clamped to [-0.5, 0.5]; border maxima and non-concave neighborhoods are
    left unrefined on that axis.

    Returns a (K, 2) float64 array of [x, y].
    """
    hm = np.asarray(stack, dtype=np.float64)
    if hm.ndim != 3:
        raise BadSize("expected a (K, H, W) heatmap stack")
    k, h, w = hm.shape
    flat_idx = hm.reshape(k, -1).argmax(axis=1)
    iy, ix = np.divmod(flat_idx, w)
    out = np.stack([ix.astype(np.float64), iy.astype(np.float64)], axis=1)
    for ch in range(k):
        y, x = int(iy[ch]), int(ix[ch])
        if 0 < x < w - 1:
            num = hm[ch, y, x - 1] - hm[ch, y, x + 1]
            den = 2.0 * (hm[ch, y, x - 1] + hm[ch, y, x + 1] - 2.0 * hm[ch, y, x])
            if den < 0:
                out[ch, 0] += float(np.clip(num / den, -0.5, 0.5))
        if 0 < y < h - 1:
            num = hm[ch, y - 1, x] - hm[ch, y + 1, x]
            den = 2.0 * (hm[ch, y - 1, x] + hm[ch, y + 1, x] - 2.0 * hm[ch, y, x])
            if den < 0:
                out[ch, 1] += float(np.clip(num / den, -0.5, 0.5))
    return out


def peak_values(stack) -> np.ndarray:
    """Maximum heatmap value per channel (detection confidence proxy)."""
    hm = np.asarray(stack)
    return hm.reshape(hm.shape[0], -1).max(axis=1)
