"""Numeric hot paths with two interchangeable backends.

The kernel density accumulation and the batch point-in-polygon test dominate
runtime on city-scale inputs. Both exist twice: as numba ``@njit`` loops
(used by default when numba imports) and as pure numpy code. Set
``MICROEQUITY_BACKEND=numpy`` or ``=numba`` to force one; the two produce
bit-identical results because they evaluate the same per-element expressions.

Polygon rings are passed flattened: ``ring_x``/``ring_y`` hold the vertices
of all rings concatenated, each ring stored closed (first vertex repeated at
the end), and ``ring_starts`` holds the start offset of each ring plus a
final terminator offset. Containment uses the even-odd rule with boundary
points counting as inside.
"""
from __future__ import annotations

import math
import os

import numpy as np

from .errors import ValidationError

_ENV_VAR = "MICROEQUITY_BACKEND"
_backend_override: str | None = None
_impls: dict[str, dict] = {}


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if _numba_available() else ("numpy",)


def use_backend(name: str | None) -> None:
    """Force a backend programmatically (mainly for tests and benchmarks)."""
    if name is not None and name not in ("numpy", "numba"):
        raise ValidationError(f"unknown backend: {name!r}")
    global _backend_override
    _backend_override = name


def active_backend() -> str:
    """The backend the next kernel call will use."""
    name = _backend_override or os.environ.get(_ENV_VAR, "").strip().lower() or None
    if name is None:
        return "numba" if _numba_available() else "numpy"
    if name not in ("numpy", "numba"):
        raise ValidationError(f"{_ENV_VAR} must be 'numpy' or 'numba', got {name!r}")
    if name == "numba" and not _numba_available():
        raise ValidationError("backend 'numba' requested but numba is not importable")
    return name


def _impl(name: str) -> dict:
    if name not in _impls:
        if name == "numpy":
            _impls[name] = {
                "kde_accumulate": kde_accumulate_numpy,
                "points_in_rings": points_in_rings_numpy,
            }
        else:
            from . import _kernels_numba as knb

            _impls[name] = {
                "kde_accumulate": knb.kde_accumulate_numba,
                "points_in_rings": knb.points_in_rings_numba,
            }
    return _impls[name]


def kde_accumulate(values, origin_x, origin_y, cell, pxs, pys, ws, radius, scale):
    """Add one quartic kernel per weighted point into ``values`` (in place).

    ``values`` is the raster (rows south to north), ``origin_x/origin_y`` the
    lower-left corner, ``cell`` the cell edge in metres. Point ``k`` deposits
    ``scale * ws[k] * (1 - (d/r)^2)^2`` on every cell center strictly within
    ``radius``.
    """
    fn = _impl(active_backend())["kde_accumulate"]
    fn(values, float(origin_x), float(origin_y), float(cell),
       np.ascontiguousarray(pxs, dtype=np.float64),
       np.ascontiguousarray(pys, dtype=np.float64),
       np.ascontiguousarray(ws, dtype=np.float64),
       float(radius), float(scale))


def points_in_rings(xs, ys, ring_x, ring_y, ring_starts):
    """Even-odd containment of many points against one zone's rings.

    Returns a boolean array; points on any ring edge count as inside.
    """
    fn = _impl(active_backend())["points_in_rings"]
    return fn(
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(ys, dtype=np.float64),
        np.ascontiguousarray(ring_x, dtype=np.float64),
        np.ascontiguousarray(ring_y, dtype=np.float64),
        np.ascontiguousarray(ring_starts, dtype=np.int64),
    )


# --- pure numpy backend -----------------------------------------------------


def kde_accumulate_numpy(values, origin_x, origin_y, cell, pxs, pys, ws, radius, scale):
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
        if i1 < i0 or j1 < j0:
            continue
        cxs = origin_x + (np.arange(j0, j1 + 1, dtype=np.float64) + 0.5) * cell
        cys = origin_y + (np.arange(i0, i1 + 1, dtype=np.float64) + 0.5) * cell
        dx = cxs - px
        dy = cys - py
        d2 = dy[:, None] * dy[:, None] + dx[None, :] * dx[None, :]
        w = 1.0 - d2 / r2
        contrib = np.where(d2 < r2, amp * w * w, 0.0)
        values[i0 : i1 + 1, j0 : j1 + 1] += contrib


def points_in_rings_numpy(xs, ys, ring_x, ring_y, ring_starts):
    n = xs.shape[0]
    crossings = np.zeros(n, dtype=np.int64)
    boundary = np.zeros(n, dtype=np.bool_)
    for r in range(ring_starts.shape[0] - 1):
        s = ring_starts[r]
        e = ring_starts[r + 1]
        for i in range(s, e - 1):
            x1 = ring_x[i]
            y1 = ring_y[i]
            x2 = ring_x[i + 1]
            y2 = ring_y[i + 1]
            cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
            lox, hix = (x1, x2) if x1 <= x2 else (x2, x1)
            loy, hiy = (y1, y2) if y1 <= y2 else (y2, y1)
            boundary |= (cross == 0.0) & (xs >= lox) & (xs <= hix) & (ys >= loy) & (ys <= hiy)
            cond = (y1 > ys) != (y2 > ys)
            if y1 != y2:
                xint = (x2 - x1) * (ys - y1) / (y2 - y1) + x1
                crossings += (cond & (xs < xint)).astype(np.int64)
    return boundary | ((crossings % 2) == 1)
