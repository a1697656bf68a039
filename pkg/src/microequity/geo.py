"""Geometric primitives: local projection, distances, KDE rasters, zone lookup.

All planar work happens in a local equirectangular frame anchored at a
reference point: metres east and north of the reference, with the east axis
scaled by cos(reference latitude). At neighbourhood scale the distortion is
far below the 50 m cells used downstream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ValidationError
from .model import GeoPoint, MultiPolygonGeom, Zone

EARTH_RADIUS_M = 6_371_000.0
DEG = math.pi / 180.0

# Default kernel search radii: an eighth of a mile for scooters, a sixth of
# a mile for station-based bikes.
SCOOTER_RADIUS_M = 201.168
BIKE_RADIUS_M = 268.224

# Kernel densities are per square metre; tables report per square kilometre.
PER_KM2 = 1.0e6


@dataclass(frozen=True)
class ProjectedPoint:
    x: float
    y: float


@dataclass(frozen=True)
class SearchRadius:
    meters: float

    def __post_init__(self) -> None:
        if not (self.meters > 0.0 and math.isfinite(self.meters)):
            raise ValidationError(f"search radius must be positive, got {self.meters}")


@dataclass(frozen=True)
class Extent:
    """Axis-aligned box in projected metres."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValidationError("extent must have positive width and height")


def project(p: GeoPoint, ref: GeoPoint) -> ProjectedPoint:
    """Local planar coordinates of ``p`` in metres relative to ``ref``.

    The arithmetic mirrors :func:`project_arrays` exactly, so scalar- and
    batch-projected coordinates of the same lon/lat are bit-identical.
    """
    kx = math.cos(ref.lat * DEG) * EARTH_RADIUS_M * DEG
    ky = EARTH_RADIUS_M * DEG
    return ProjectedPoint((p.lon - ref.lon) * kx, (p.lat - ref.lat) * ky)


def unproject(x: float, y: float, ref: GeoPoint) -> GeoPoint:
    """Inverse of :func:`project`."""
    kx = math.cos(ref.lat * DEG) * EARTH_RADIUS_M * DEG
    ky = EARTH_RADIUS_M * DEG
    return GeoPoint(ref.lon + x / kx, ref.lat + y / ky)


def project_arrays(lons, lats, ref: GeoPoint) -> Tuple[np.ndarray, np.ndarray]:
    kx = math.cos(ref.lat * DEG) * EARTH_RADIUS_M * DEG
    ky = EARTH_RADIUS_M * DEG
    return (
        (np.asarray(lons, dtype=np.float64) - ref.lon) * kx,
        (np.asarray(lats, dtype=np.float64) - ref.lat) * ky,
    )


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres."""
    phi1 = a.lat * DEG
    phi2 = b.lat * DEG
    s = (
        math.sin((b.lat - a.lat) * DEG / 2.0) ** 2
        + math.cos(phi1) * math.cos(phi2) * math.sin((b.lon - a.lon) * DEG / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(s)))


def haversine_arrays(lon1, lat1, lon2, lat2) -> np.ndarray:
    """Vectorised :func:`haversine` over coordinate arrays."""
    lon1, lat1, lon2, lat2 = (np.asarray(v, dtype=np.float64) for v in (lon1, lat1, lon2, lat2))
    phi1 = lat1 * DEG
    phi2 = lat2 * DEG
    s = (
        np.sin((lat2 - lat1) * DEG / 2.0) ** 2
        + np.cos(phi1) * np.cos(phi2) * np.sin((lon2 - lon1) * DEG / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(s)))


# --- flattened ring geometry --------------------------------------------------


@dataclass(frozen=True)
class RingSet:
    """One zone's rings in projected metres, flattened for the kernels.

    ``xs``/``ys`` hold all rings concatenated, each ring stored closed;
    ``starts`` holds each ring's start offset plus a final terminator, and
    ``roles`` marks each ring as outer (0) or hole (1). Even-odd containment
    over the whole set handles holes without needing the roles; they only
    matter for area and centroid computations.
    """

    xs: np.ndarray
    ys: np.ndarray
    starts: np.ndarray
    roles: np.ndarray
    xmin: float
    ymin: float
    xmax: float
    ymax: float


def build_ringset(geometry: MultiPolygonGeom, ref: GeoPoint) -> RingSet:
    xs: List[float] = []
    ys: List[float] = []
    starts = [0]
    roles: List[int] = []
    for poly in geometry:
        for ring_idx, ring in enumerate(poly):
            for pt in ring:
                pp = project(pt, ref)
                xs.append(pp.x)
                ys.append(pp.y)
            starts.append(len(xs))
            roles.append(0 if ring_idx == 0 else 1)
    ax = np.asarray(xs, dtype=np.float64)
    ay = np.asarray(ys, dtype=np.float64)
    return RingSet(
        xs=ax,
        ys=ay,
        starts=np.asarray(starts, dtype=np.int64),
        roles=np.asarray(roles, dtype=np.int64),
        xmin=float(ax.min()),
        ymin=float(ay.min()),
        xmax=float(ax.max()),
        ymax=float(ay.max()),
    )


def point_in_polygon(q: ProjectedPoint, rings: RingSet) -> bool:
    """Even-odd containment; boundary points count as inside."""
    out = kernels.points_in_rings(
        np.array([q.x]), np.array([q.y]), rings.xs, rings.ys, rings.starts
    )
    return bool(out[0])


def _ring_area_centroid(xs, ys, s: int, e: int) -> Tuple[float, float, float]:
    """Unsigned area and centroid of one closed ring (vertices s..e-1)."""
    a2 = 0.0
    mx = 0.0
    my = 0.0
    for i in range(s, e - 1):
        w = xs[i] * ys[i + 1] - xs[i + 1] * ys[i]
        a2 += w
        mx += (xs[i] + xs[i + 1]) * w
        my += (ys[i] + ys[i + 1]) * w
    if a2 == 0.0:
        return 0.0, 0.0, 0.0
    return abs(a2) / 2.0, mx / (3.0 * a2), my / (3.0 * a2)


def ringset_centroid(rings: RingSet) -> ProjectedPoint:
    """Area-weighted centroid, holes subtracting; bbox centre if degenerate."""
    total = 0.0
    cx = 0.0
    cy = 0.0
    for r in range(rings.starts.shape[0] - 1):
        area, gx, gy = _ring_area_centroid(
            rings.xs, rings.ys, int(rings.starts[r]), int(rings.starts[r + 1])
        )
        if area == 0.0:
            continue
        sign = 1.0 if rings.roles[r] == 0 else -1.0
        total += sign * area
        cx += sign * area * gx
        cy += sign * area * gy
    if total <= 0.0:
        return ProjectedPoint((rings.xmin + rings.xmax) / 2.0, (rings.ymin + rings.ymax) / 2.0)
    return ProjectedPoint(cx / total, cy / total)


# --- zone lookup --------------------------------------------------------------


class ZoneIndex:
    """Point-to-zone assignment over a uniform grid of bounding boxes.

    Zones are tested in ascending id order, so a point on a shared boundary
    resolves to the lexicographically smallest zone id. The grid only prunes
    candidates; containment itself is the even-odd kernel.
    """

    def __init__(self, zones: Sequence[Zone], ref: Optional[GeoPoint] = None):
        if not zones:
            raise ValidationError("zone index needs at least one zone")
        ids = [z.id for z in zones]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate zone ids in index")
        self.zones: List[Zone] = sorted(zones, key=lambda z: z.id)
        self.ids: List[str] = [z.id for z in self.zones]
        if ref is None:
            lons = [pt.lon for z in self.zones for poly in z.geometry for ring in poly for pt in ring]
            lats = [pt.lat for z in self.zones for poly in z.geometry for ring in poly for pt in ring]
            ref = GeoPoint((min(lons) + max(lons)) / 2.0, (min(lats) + max(lats)) / 2.0)
        self.ref = ref
        self.ringsets: List[RingSet] = [build_ringset(z.geometry, ref) for z in self.zones]

        self.xmin = min(rs.xmin for rs in self.ringsets)
        self.ymin = min(rs.ymin for rs in self.ringsets)
        self.xmax = max(rs.xmax for rs in self.ringsets)
        self.ymax = max(rs.ymax for rs in self.ringsets)

        # Bucket size: aim for a handful of zones per bucket.
        n = len(self.zones)
        target = max(1, int(math.sqrt(n)))
        self._nx = min(target * 2, 256)
        self._ny = min(target * 2, 256)
        self._bw = max((self.xmax - self.xmin) / self._nx, 1e-9)
        self._bh = max((self.ymax - self.ymin) / self._ny, 1e-9)
        self._buckets: Dict[Tuple[int, int], List[int]] = {}
        for zi, rs in enumerate(self.ringsets):
            bx0 = self._bucket_coord(rs.xmin, self.xmin, self._bw, self._nx)
            bx1 = self._bucket_coord(rs.xmax, self.xmin, self._bw, self._nx)
            by0 = self._bucket_coord(rs.ymin, self.ymin, self._bh, self._ny)
            by1 = self._bucket_coord(rs.ymax, self.ymin, self._bh, self._ny)
            for bx in range(bx0, bx1 + 1):
                for by in range(by0, by1 + 1):
                    self._buckets.setdefault((bx, by), []).append(zi)

    @staticmethod
    def _bucket_coord(v: float, lo: float, width: float, count: int) -> int:
        b = int((v - lo) / width)
        return min(max(b, 0), count - 1)

    def extent(self, pad: float = 0.0) -> Extent:
        return Extent(self.xmin - pad, self.ymin - pad, self.xmax + pad, self.ymax + pad)

    def rings(self, zone_id: str) -> RingSet:
        return self.ringsets[self.ids.index(zone_id)]

    def centroid(self, zone_id: str) -> ProjectedPoint:
        return ringset_centroid(self.rings(zone_id))

    def assign(self, p: GeoPoint) -> Optional[str]:
        """Zone id containing the point, or None if outside every zone."""
        res = self.assign_many([p])
        return res[0]

    def assign_many(self, points: Sequence[GeoPoint]) -> List[Optional[str]]:
        """Batch point-to-zone assignment, bucket-grouped for the kernels."""
        if not points:
            return []
        lons = np.array([p.lon for p in points], dtype=np.float64)
        lats = np.array([p.lat for p in points], dtype=np.float64)
        xs, ys = project_arrays(lons, lats, self.ref)
        return self.assign_projected(xs, ys)

    def assign_projected(self, xs: np.ndarray, ys: np.ndarray) -> List[Optional[str]]:
        n = xs.shape[0]
        winner = np.full(n, -1, dtype=np.int64)
        in_box = (xs >= self.xmin) & (xs <= self.xmax) & (ys >= self.ymin) & (ys <= self.ymax)
        bx = np.clip(((xs - self.xmin) / self._bw).astype(np.int64), 0, self._nx - 1)
        by = np.clip(((ys - self.ymin) / self._bh).astype(np.int64), 0, self._ny - 1)
        flat = bx * self._ny + by
        order = np.argsort(flat, kind="stable")
        order = order[in_box[order]]
        i = 0
        while i < len(order):
            j = i
            key = flat[order[i]]
            while j < len(order) and flat[order[j]] == key:
                j += 1
            idxs = order[i:j]
            i = j
            cands = self._buckets.get((int(bx[idxs[0]]), int(by[idxs[0]])), [])
            unresolved = idxs
            for zi in cands:  # bucket lists are in ascending id order already
                if unresolved.size == 0:
                    break
                rs = self.ringsets[zi]
                sub = unresolved[
                    (xs[unresolved] >= rs.xmin)
                    & (xs[unresolved] <= rs.xmax)
                    & (ys[unresolved] >= rs.ymin)
                    & (ys[unresolved] <= rs.ymax)
                ]
                if sub.size == 0:
                    continue
                hit = kernels.points_in_rings(xs[sub], ys[sub], rs.xs, rs.ys, rs.starts)
                winner[sub[hit]] = zi
                unresolved = unresolved[winner[unresolved] == -1]
        return [self.ids[w] if w >= 0 else None for w in winner]


# --- kernel density raster ----------------------------------------------------


@dataclass(frozen=True)
class KdeRaster:
    """Row-major raster of kernel densities in points per square kilometre.

    Row 0 is the southernmost row; ``origin`` is the lower-left corner of the
    lower-left cell, in the projected frame anchored at ``ref``.
    """

    origin_x: float
    origin_y: float
    cell_size_m: float
    values: np.ndarray
    ref: GeoPoint

    def __post_init__(self) -> None:
        if self.cell_size_m <= 0:
            raise ValidationError("cell size must be positive")
        if self.values.ndim != 2:
            raise ValidationError("raster values must be 2-D")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValidationError("raster values must be finite and non-negative")

    @property
    def nrows(self) -> int:
        return int(self.values.shape[0])

    @property
    def ncols(self) -> int:
        return int(self.values.shape[1])

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        cx = self.origin_x + (np.arange(self.ncols, dtype=np.float64) + 0.5) * self.cell_size_m
        cy = self.origin_y + (np.arange(self.nrows, dtype=np.float64) + 0.5) * self.cell_size_m
        return cx, cy

    def value_at(self, x: float, y: float) -> float:
        """Value of the cell containing a projected point (clamped to bounds)."""
        j = int(math.floor((x - self.origin_x) / self.cell_size_m))
        i = int(math.floor((y - self.origin_y) / self.cell_size_m))
        i = min(max(i, 0), self.nrows - 1)
        j = min(max(j, 0), self.ncols - 1)
        return float(self.values[i, j])

    def total_mass(self) -> float:
        """Integral of the density over the raster, in kernel-point units."""
        cell_km2 = (self.cell_size_m ** 2) / PER_KM2
        return float(self.values.sum() * cell_km2)


def kde_raster(
    points: Sequence[GeoPoint],
    radius: SearchRadius,
    cell_size_m: float,
    extent: Extent,
    ref: GeoPoint,
    point_weight: float = 1.0,
    weights: Optional[Sequence[float]] = None,
) -> KdeRaster:
    """Rasterise a quartic-kernel density surface over the extent.

    Each point spreads a kernel ``K(d) = 3/(pi r^2) * (1 - (d/r)^2)^2`` for
    ``d < r`` and zero beyond, evaluated at cell centres and scaled to points
    per square kilometre. ``point_weight`` scales every kernel (used to
    average daily surfaces); ``weights`` optionally scales kernels per point
    on top of that (station dock counts). The kernel integrates to 1, so with
    unit weights the raster mass approaches the point count as cells shrink.
    """
    if cell_size_m <= 0 or not math.isfinite(cell_size_m):
        raise ValidationError("cell size must be positive")
    if cell_size_m > radius.meters / 2.0:
        raise ValidationError(
            f"cell size {cell_size_m} too coarse for radius {radius.meters}; "
            "need cell_size <= radius/2"
        )
    ncols = max(1, int(math.ceil((extent.xmax - extent.xmin) / cell_size_m)))
    nrows = max(1, int(math.ceil((extent.ymax - extent.ymin) / cell_size_m)))
    values = np.zeros((nrows, ncols), dtype=np.float64)
    if points:
        lons = np.array([p.lon for p in points], dtype=np.float64)
        lats = np.array([p.lat for p in points], dtype=np.float64)
        if weights is None:
            ws = np.ones(len(points), dtype=np.float64)
        else:
            ws = np.asarray(weights, dtype=np.float64)
            if ws.shape != (len(points),):
                raise ValidationError("weights must match the point count")
            if not np.all(np.isfinite(ws)) or np.any(ws < 0):
                raise ValidationError("weights must be finite and non-negative")
        xs, ys = project_arrays(lons, lats, ref)
        scale = point_weight * PER_KM2 * 3.0 / (math.pi * radius.meters * radius.meters)
        kernels.kde_accumulate(
            values, extent.xmin, extent.ymin, cell_size_m, xs, ys, ws, radius.meters, scale
        )
    return KdeRaster(
        origin_x=extent.xmin,
        origin_y=extent.ymin,
        cell_size_m=cell_size_m,
        values=values,
        ref=ref,
    )


def zonal_mean(raster: KdeRaster, rings: RingSet) -> float:
    """Mean raster value over cells whose centres fall inside the zone.

    When no cell centre lands inside (zones smaller than a cell), the value
    of the cell under the zone centroid is used instead.
    """
    cxs, cys = raster.cell_centers()
    j0 = int(np.searchsorted(cxs, rings.xmin, side="left"))
    j1 = int(np.searchsorted(cxs, rings.xmax, side="right"))
    i0 = int(np.searchsorted(cys, rings.ymin, side="left"))
    i1 = int(np.searchsorted(cys, rings.ymax, side="right"))
    if i1 > i0 and j1 > j0:
        sub_cx = cxs[j0:j1]
        sub_cy = cys[i0:i1]
        gx = np.repeat(sub_cx[None, :], sub_cy.shape[0], axis=0).ravel()
        gy = np.repeat(sub_cy[:, None], sub_cx.shape[0], axis=1).ravel()
        inside = kernels.points_in_rings(gx, gy, rings.xs, rings.ys, rings.starts)
        if np.any(inside):
            block = raster.values[i0:i1, j0:j1].ravel()
            return float(np.mean(block[inside]))
    c = ringset_centroid(rings)
    return raster.value_at(c.x, c.y)


def ascii_grid_bytes(raster: KdeRaster) -> bytes:
    """Render the raster as an ESRI ASCII grid (rows north to south)."""
    lines = [
        f"ncols {raster.ncols}",
        f"nrows {raster.nrows}",
        f"xllcorner {raster.origin_x:.6f}",
        f"yllcorner {raster.origin_y:.6f}",
        f"cellsize {raster.cell_size_m:.6f}",
        "NODATA_value -9999",
    ]
    for i in range(raster.nrows - 1, -1, -1):
        lines.append(" ".join(f"{v:.10g}" for v in raster.values[i]))
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ascii_grid(raster: KdeRaster, path) -> None:
    """Write the raster as an ESRI ASCII grid file."""
    with open(path, "wb") as fh:
        fh.write(ascii_grid_bytes(raster))
