"""Numba-jitted implementations of the hot kernels.

Loop kernels compiled in nopython mode (fastmath off so float semantics
match the numpy path up to summation order). Importing this module
requires numba; the backend module falls back to _kernels_np otherwise.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    hp = h + 2 * pad
    wp = wd + 2 * pad
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    y = np.empty((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    acc = b[oi]
                    for ci in range(c):
                        for i in range(kh):
                            hi = yi * stride + i - pad
                            if hi < 0 or hi >= h:
                                continue
                            for j in range(kw):
                                wi = xi * stride + j - pad
                                if wi < 0 or wi >= wd:
                                    continue
                                acc += x[ni, ci, hi, wi] * w[oi, ci, i, j]
                    y[ni, oi, yi, xi] = acc
    return y


@njit(cache=True)
def conv2d_backward(x, w, gy, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gx = np.zeros((n, c, h, wd), dtype=np.float64)
    gw = np.zeros((o, c, kh, kw), dtype=np.float64)
    gb = np.zeros(o, dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    g = gy[ni, oi, yi, xi]
                    gb[oi] += g
                    for ci in range(c):
                        for i in range(kh):
                            hi = yi * stride + i - pad
                            if hi < 0 or hi >= h:
                                continue
                            for j in range(kw):
                                wi = xi * stride + j - pad
                                if wi < 0 or wi >= wd:
                                    continue
                                gw[oi, ci, i, j] += g * x[ni, ci, hi, wi]
                                gx[ni, ci, hi, wi] += g * w[oi, ci, i, j]
    return gx, gw, gb


@njit(cache=True)
def raycast_depths(px, py, yaw, rel_angles, obstacles, half_w, half_l, max_range):
    nr = rel_angles.shape[0]
    nobs = obstacles.shape[0]
    out = np.empty(nr, dtype=np.float64)
    for k in range(nr):
        ang = yaw + rel_angles[k]
        dx = -math.sin(ang)
        dy = math.cos(ang)
        t = max_range

        if dx > 0.0:
            tw = (half_w - px) / dx
            if 0.0 <= tw < t:
                t = tw
        elif dx < 0.0:
            tw = (-half_w - px) / dx
            if 0.0 <= tw < t:
                t = tw
        if dy > 0.0:
            tw = (half_l - py) / dy
            if 0.0 <= tw < t:
                t = tw
        elif dy < 0.0:
            tw = (-half_l - py) / dy
            if 0.0 <= tw < t:
                t = tw

        for m in range(nobs):
            cx = obstacles[m, 0] - px
            cy = obstacles[m, 1] - py
            b = dx * cx + dy * cy
            cc = cx * cx + cy * cy - obstacles[m, 2] * obstacles[m, 2]
            disc = b * b - cc
            if disc < 0.0:
                continue
            root = math.sqrt(disc)
            tn = b - root
            if tn < 0.0:
                if b + root >= 0.0:
                    tn = 0.0
                else:
                    continue
            if tn < t:
                t = tn
        out[k] = t if t < max_range else max_range
    return out
