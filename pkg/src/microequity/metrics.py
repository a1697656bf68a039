"""Per-zone indicators and their category rollups.

Indicators per zone and mode: morning availability (vehicles present near
the daily reference hour, averaged over days), kernel-density accessibility
(zonal mean of the KDE raster), usage (trip endpoints at half weight each),
and idle time between consecutive trips. Per-capita variants divide by
residents, or residents plus jobs, and are absent when the denominator is
zero or the zone is below the minimum population cutoff.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field, fields
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ValidationError
from .geo import ZoneIndex
from .ingest import Snapshot, Station, StationStatus
from .model import (
    UNKNOWN,
    CategoryScheme,
    GeoPoint,
    IncomeThresholds,
    Instant,
    Mode,
    Zone,
    local_instant,
    zone_category,
)
from .tripinfer import IdleInterval, Trip, TripEndEvent, ORIGIN

# Canonical indicator order used by tables and test matrices.
INDICATORS: Tuple[str, ...] = (
    "avail",
    "avail_per_resident",
    "avail_per_resident_job",
    "kde",
    "trips",
    "trips_per_resident",
    "trips_per_resident_job",
    "idle_mean_h",
    "idle_median_h",
)

# Indicators whose table cells are printed scaled by 1e2 (header-flagged).
PER_CAPITA_INDICATORS: FrozenSet[str] = frozenset(
    {
        "avail_per_resident",
        "avail_per_resident_job",
        "trips_per_resident",
        "trips_per_resident_job",
    }
)


@dataclass(frozen=True)
class OutlierPolicy:
    """Zones excluded from rollups: an explicit id list plus a population floor
    for the per-capita denominators."""

    excluded_zones: FrozenSet[str] = frozenset()
    min_population: int = 0

    def __post_init__(self) -> None:
        if self.min_population < 0:
            raise ValidationError("min_population must be non-negative")

    def excludes(self, zone_id: str) -> bool:
        return zone_id in self.excluded_zones


@dataclass
class ZoneMetrics:
    zone_id: str
    mode: Mode
    avail: Optional[float] = None
    avail_per_resident: Optional[float] = None
    avail_per_resident_job: Optional[float] = None
    kde: Optional[float] = None
    trips: Optional[float] = None
    trips_per_resident: Optional[float] = None
    trips_per_resident_job: Optional[float] = None
    idle_mean_h: Optional[float] = None
    idle_median_h: Optional[float] = None

    def get(self, indicator: str) -> Optional[float]:
        if indicator not in INDICATORS:
            raise ValidationError(f"unknown indicator {indicator!r}")
        return getattr(self, indicator)


def select_reference_snapshots(
    snapshots: Sequence[Snapshot],
    days: Sequence[dt.date],
    offset_hours: float,
    reference_hour: float = 6.0,
    window_min: float = 30.0,
) -> Dict[dt.date, Snapshot]:
    """Pick, per day, the snapshot nearest the local reference hour.

    Only snapshots within ``window_min`` minutes qualify; days without one
    are simply absent from the result. Ties go to the earlier snapshot.
    """
    out: Dict[dt.date, Snapshot] = {}
    for day in days:
        target = local_instant(day, reference_hour, offset_hours)
        best: Optional[Snapshot] = None
        best_gap = window_min * 60.0
        for snap in snapshots:
            gap = abs(snap.taken_at - target)
            if gap < best_gap or (gap == best_gap and (best is None or snap.taken_at < best.taken_at)):
                if gap <= window_min * 60.0:
                    best = snap
                    best_gap = gap
        if best is not None:
            out[day] = best
    return out


def daily_availability(
    day_points: Mapping[dt.date, Sequence[GeoPoint]],
    index: ZoneIndex,
) -> Tuple[Dict[str, float], int]:
    """Mean daily count of observed vehicles per zone.

    ``day_points`` holds, per usable day, the positions captured at the
    reference hour (all operators of the mode pooled). Points outside every
    zone are dropped and counted. No usable days is an error.
    """
    if not day_points:
        raise DataError("availability: no usable days (no snapshot near the reference hour)")
    totals: Dict[str, float] = {zid: 0.0 for zid in index.ids}
    dropped = 0
    n_days = len(day_points)
    for day in sorted(day_points):
        for zid in index.assign_many(list(day_points[day])):
            if zid is None:
                dropped += 1
            else:
                totals[zid] += 1.0
    return {zid: totals[zid] / n_days for zid in index.ids}, dropped


def daily_station_availability(
    day_statuses: Mapping[dt.date, Sequence[StationStatus]],
    registry: Mapping[str, Station],
    index: ZoneIndex,
) -> Tuple[Dict[str, float], int]:
    """Mean daily count of docked vehicles per zone (sum of station counts)."""
    if not day_statuses:
        raise DataError("availability: no usable days (no status near the reference hour)")
    station_ids = sorted(registry)
    zone_of = dict(
        zip(station_ids, index.assign_many([registry[sid].point for sid in station_ids]))
    )
    totals: Dict[str, float] = {zid: 0.0 for zid in index.ids}
    dropped = 0
    n_days = len(day_statuses)
    for day in sorted(day_statuses):
        for status in day_statuses[day]:
            zid = zone_of.get(status.station_id)
            if zid is None:
                dropped += status.bikes_available
            else:
                totals[zid] += status.bikes_available
    return {zid: totals[zid] / n_days for zid in index.ids}, dropped


def normalize(
    count: Optional[float],
    population: int,
    jobs: int,
    min_population: int = 0,
) -> Tuple[Optional[float], Optional[float]]:
    """Per-resident and per-resident-plus-job rates, absent when undefined.

    A rate is absent when its denominator is zero or the zone population is
    below the policy floor (tiny denominators make rates explode).
    """
    if count is None:
        return None, None
    gated = population < min_population
    per_resident = None if (gated or population == 0) else count / population
    denom = population + jobs
    per_resident_job = None if (gated or denom == 0) else count / denom
    return per_resident, per_resident_job


def usage_counts(
    trips: Sequence[Trip],
    events: Sequence[TripEndEvent],
    index: ZoneIndex,
    weighting: str = "half",
) -> Tuple[Dict[str, float], float]:
    """Trip-equivalent usage per zone.

    Default weighting credits each trip endpoint and each unlinked event
    half a trip, so the citywide sum equals the linked trip count plus half
    the unlinked event count. The ``origin-only`` variant credits a full
    trip to the origin zone (and to Origin events) as a sensitivity check.
    Weight landing outside every zone is returned as dropped mass.
    """
    if weighting not in ("half", "origin-only"):
        raise ValidationError(f"unknown usage weighting {weighting!r}")
    weighted: List[Tuple[GeoPoint, float]] = []
    if weighting == "half":
        for t in trips:
            weighted.append((t.start_point, 0.5))
            weighted.append((t.end_point, 0.5))
        for e in events:
            weighted.append((e.point, 0.5))
    else:
        for t in trips:
            weighted.append((t.start_point, 1.0))
        for e in events:
            if e.kind == ORIGIN:
                weighted.append((e.point, 1.0))
    counts: Dict[str, float] = {zid: 0.0 for zid in index.ids}
    dropped = 0.0
    assignments = index.assign_many([p for p, _ in weighted])
    for (_, w), zid in zip(weighted, assignments):
        if zid is None:
            dropped += w
        else:
            counts[zid] += w
    return counts, dropped


def idle_aggregate(
    intervals: Sequence[IdleInterval],
    index: ZoneIndex,
) -> Tuple[Dict[str, Tuple[float, float]], int]:
    """Mean and median idle hours per zone, located at the parked point."""
    assignments = index.assign_many([iv.location for iv in intervals])
    per_zone: Dict[str, List[float]] = {}
    dropped = 0
    for iv, zid in zip(intervals, assignments):
        if zid is None:
            dropped += 1
        else:
            per_zone.setdefault(zid, []).append(iv.duration_h)
    out: Dict[str, Tuple[float, float]] = {}
    for zid in sorted(per_zone):
        arr = np.asarray(per_zone[zid], dtype=np.float64)
        out[zid] = (float(arr.mean()), float(np.median(arr)))
    return out, dropped


@dataclass
class CategorySummary:
    scheme: CategoryScheme
    category: str
    member_count: int
    # indicator -> (mean, median, n_defined)
    stats: Dict[str, Tuple[Optional[float], Optional[float], int]] = field(default_factory=dict)


@dataclass
class SchemeSummary:
    scheme: CategoryScheme
    categories: List[CategorySummary]
    average: CategorySummary
    unknown: Optional[CategorySummary]
    empty_categories: List[str] = field(default_factory=list)


def _summarize(values_by_ind: Mapping[str, List[float]], member_count: int,
               scheme: CategoryScheme, label: str) -> CategorySummary:
    summary = CategorySummary(scheme=scheme, category=label, member_count=member_count)
    for ind in INDICATORS:
        vals = values_by_ind.get(ind, [])
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            summary.stats[ind] = (float(arr.mean()), float(np.median(arr)), len(vals))
        else:
            summary.stats[ind] = (None, None, 0)
    return summary


def summarize_by_category(
    zone_metrics: Sequence[ZoneMetrics],
    zones_by_id: Mapping[str, Zone],
    scheme: CategoryScheme,
    policy: OutlierPolicy = OutlierPolicy(),
    thresholds: IncomeThresholds = IncomeThresholds(),
    category_order: Optional[Sequence[str]] = None,
) -> SchemeSummary:
    """Unweighted per-category means and medians of every indicator.

    Zones excluded by the outlier policy are dropped entirely. Zones whose
    category is Unknown are kept out of the category rows and the Average
    row but reported separately. Within a category, an indicator's mean and
    median run over the zones where it is defined.
    """
    members: Dict[str, List[ZoneMetrics]] = {}
    for zm in zone_metrics:
        if policy.excludes(zm.zone_id):
            continue
        zone = zones_by_id.get(zm.zone_id)
        if zone is None:
            raise ValidationError(f"metrics reference unknown zone {zm.zone_id!r}")
        label = zone_category(zone, scheme, thresholds)
        members.setdefault(label, []).append(zm)

    def collect(metric_rows: Sequence[ZoneMetrics]) -> Dict[str, List[float]]:
        vals: Dict[str, List[float]] = {}
        for zm in metric_rows:
            for ind in INDICATORS:
                v = zm.get(ind)
                if v is not None:
                    vals.setdefault(ind, []).append(v)
        return vals

    labels = [lab for lab in members if lab != UNKNOWN]
    if category_order:
        ordered = [lab for lab in category_order if lab in members and lab != UNKNOWN]
        ordered += sorted(lab for lab in labels if lab not in set(category_order))
    else:
        ordered = sorted(labels)

    categories = [
        _summarize(collect(members[lab]), len(members[lab]), scheme, lab) for lab in ordered
    ]
    empty = [lab for lab in (category_order or []) if lab not in members]

    included = [zm for lab in ordered for zm in members[lab]]
    average = _summarize(collect(included), len(included), scheme, "Average")

    unknown = None
    if UNKNOWN in members:
        unknown = _summarize(collect(members[UNKNOWN]), len(members[UNKNOWN]), scheme, UNKNOWN)

    return SchemeSummary(
        scheme=scheme,
        categories=categories,
        average=average,
        unknown=unknown,
        empty_categories=empty,
    )


def population_weighted(
    zone_metrics: Sequence[ZoneMetrics],
    zones_by_id: Mapping[str, Zone],
    policy: OutlierPolicy = OutlierPolicy(),
    thresholds: IncomeThresholds = IncomeThresholds(),
    indicators: Sequence[str] = ("avail", "kde"),
) -> Dict[str, Dict[str, Optional[float]]]:
    """Population-weighted mean indicators for demographic groups.

    Race groups weight each zone by that group's resident count (share times
    population); income groups weight by total population of the zones in
    the band. Zones where an indicator is undefined stay out of both the
    numerator and the denominator. Groups with zero total weight come back
    as None.
    """
    race_labels: List[str] = sorted(
        {label for z in zones_by_id.values() for label in z.race_shares}
    )
    rows: List[Tuple[str, Dict[str, float]]] = []

    def weights_for(group: str, kind: str) -> Dict[str, float]:
        w: Dict[str, float] = {}
        for zid, zone in zones_by_id.items():
            if policy.excludes(zid):
                continue
            if kind == "race":
                share = zone.race_shares.get(group, 0.0)
                weight = share * zone.population
            else:
                band = zone_category(zone, CategoryScheme.INCOME_BAND, thresholds)
                weight = float(zone.population) if band == group else 0.0
            if weight > 0:
                w[zid] = weight
        return w

    for label in race_labels:
        rows.append((label.capitalize(), weights_for(label, "race")))
    for band in ("Low", "Middle", "High"):
        rows.append((band, weights_for(band, "income")))

    metrics_by_zone = {zm.zone_id: zm for zm in zone_metrics}
    out: Dict[str, Dict[str, Optional[float]]] = {}
    for group_label, weights in rows:
        agg: Dict[str, Optional[float]] = {}
        for ind in indicators:
            pairs: List[Tuple[float, float]] = []
            for zid in sorted(weights):
                zm = metrics_by_zone.get(zid)
                if zm is None:
                    continue
                v = zm.get(ind)
                if v is None:
                    continue
                pairs.append((weights[zid], v))
            if not pairs:
                agg[ind] = None
                continue
            # Anchored form: exact when every value equals the anchor, and
            # better conditioned than the raw weighted sum in general.
            anchor = pairs[0][1]
            num = 0.0
            den = 0.0
            for w, v in pairs:
                num += w * (v - anchor)
                den += w
            agg[ind] = anchor + num / den
        out[group_label] = agg
    return out
