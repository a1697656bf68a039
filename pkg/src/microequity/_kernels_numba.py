"""Numba-jitted twins of the kernels in :mod:`microequity.kernels`.

Kept in a separate module so importing the package never pays the numba
import cost unless this backend is actually selected. The loop bodies use
the same per-element expressions as the numpy backend, so results match
bit for bit.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def kde_accumulate_numba(values, origin_x, origin_y, cell, pxs, pys, ws, radius, scale):
    nrows, ncols = values.shape
    r2 = radius * radius
    for k in range(pxs.shape[0]):
        px = pxs[k]
        py = pys[k]
        amp = scale * ws[k]
        j0 = max(int(math.floor((px - radius - origin_x) / cell - 0.5)), 0)
        j1 = min(int(math.ceil((px + radius - origin_x) / cell - 0.5)), ncols - 1)
        i0 = max(int(math.floor((py - radius - origin_y) / cell - 0.5)), 0)
        i1 = min(int(math.ceil((py + radius - origin_y) / cell - 0.5)), nrows - 1)
        for i in range(i0, i1 + 1):
            cy = origin_y + (i + 0.5) * cell
            dy = cy - py
            for j in range(j0, j1 + 1):
                cx = origin_x + (j + 0.5) * cell
                dx = cx - px
                d2 = dy * dy + dx * dx
                if d2 < r2:
                    w = 1.0 - d2 / r2
                    values[i, j] += amp * w * w


@njit(cache=True)
def points_in_rings_numba(xs, ys, ring_x, ring_y, ring_starts):
    n = xs.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    nrings = ring_starts.shape[0] - 1
    for p in range(n):
        x = xs[p]
        y = ys[p]
        inside = False
        on_edge = False
        for r in range(nrings):
            s = ring_starts[r]
            e = ring_starts[r + 1]
            for i in range(s, e - 1):
                x1 = ring_x[i]
                y1 = ring_y[i]
                x2 = ring_x[i + 1]
                y2 = ring_y[i + 1]
                cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
                if x1 <= x2:
                    lox, hix = x1, x2
                else:
                    lox, hix = x2, x1
                if y1 <= y2:
                    loy, hiy = y1, y2
                else:
                    loy, hiy = y2, y1
                if cross == 0.0 and lox <= x <= hix and loy <= y <= hiy:
                    on_edge = True
                    break
                if (y1 > y) != (y2 > y):
                    xint = (x2 - x1) * (y - y1) / (y2 - y1) + x1
                    if x < xint:
                        inside = not inside
            if on_edge:
                break
        out[p] = on_edge or inside
    return out
