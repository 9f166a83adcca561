"""Pure-numpy implementations of the hot kernels.

Fallback path used when numba is unavailable or when INTNAV_BACKEND=numpy.
Same signatures and semantics as the jitted versions in _kernels_nb.
"""

from __future__ import annotations

import numpy as np


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlation of x (N,C,H,W) with w (O,C,kh,kw) plus bias (O,)."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (x.shape[2] - kh) // stride + 1
    wo = (x.shape[3] - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    y = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
    return y + b[None, :, None, None]


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad > 0 else x
    ho, wo = gy.shape[2], gy.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    gb = gy.sum(axis=(0, 2, 3))
    gw = np.einsum("nohw,nchwij->ocij", gy, win, optimize=True)
    gxp = np.zeros_like(xp)
    gwin = np.einsum("nohw,ocij->nchwij", gy, w, optimize=True)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += gwin[:, :, :, :, i, j]
    if pad > 0:
        gxp = gxp[:, :, pad : pad + h, pad : pad + wd]
    return gxp, gw, gb


def raycast_depths(
    px: float,
    py: float,
    yaw: float,
    rel_angles: np.ndarray,
    obstacles: np.ndarray,
    half_w: float,
    half_l: float,
    max_range: float,
) -> np.ndarray:
    """Distance along each ray to the nearest obstacle disc or room wall.

    rel_angles are offsets from the heading; obstacles is an (n, 3) array of
    (x, y, radius). Depths are clipped to max_range.
    """
    ang = yaw + rel_angles
    dx = -np.sin(ang)
    dy = np.cos(ang)
    t = np.full(rel_angles.shape[0], max_range, dtype=np.float64)

    # walls of the axis-aligned room box
    with np.errstate(divide="ignore"):
        for ox, d, bound in ((px, dx, half_w), (py, dy, half_l)):
            tw = np.where(d > 0, (bound - ox) / d, np.where(d < 0, (-bound - ox) / d, np.inf))
            t = np.minimum(t, np.where(tw >= 0, tw, np.inf))

    if obstacles.shape[0]:
        cx = obstacles[:, 0] - px
        cy = obstacles[:, 1] - py
        b = dx[:, None] * cx[None, :] + dy[:, None] * cy[None, :]
        cc = cx * cx + cy * cy - obstacles[:, 2] ** 2
        disc = b * b - cc[None, :]
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        tnear = b - root
        tnear = np.where(hit & (tnear >= 0), tnear, np.inf)
        inside = hit & (b - root < 0) & (b + root >= 0)
        tnear = np.where(inside, 0.0, tnear)
        t = np.minimum(t, tnear.min(axis=1))

    return np.minimum(t, max_range)
