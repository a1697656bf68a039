"""Trip inference from consecutive vehicle-feed snapshots.

Operators fall into three kinds. Linked feeds keep a stable vehicle id, so a
disappearance followed by a reappearance of the same id is a trip candidate:
start time is the last snapshot where the vehicle was seen, end time the
first where it is seen again. Unlinked feeds rotate ids every snapshot;
there trips can only be observed as loose origin (disappearance) and
destination (appearance) events, after suppressing the appearance and
disappearance pairs that are really the same parked vehicle under a new id.
Docked feeds record trips directly and only pass through the duration
filter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ValidationError
from .geo import haversine, project_arrays
from .ingest import RecordedTrip, Snapshot, Station, VehicleObservation
from .model import GeoPoint, Instant, Mode

# Filter rejection reasons.
TOO_SHORT = "TooShort"
TOO_LONG = "TooLong"
BELOW_JITTER = "BelowJitter"
RELOCATION = "Relocation"

ORIGIN = "Origin"
DESTINATION = "Destination"


@dataclass(frozen=True)
class FilterRules:
    """Plausibility rules for trip candidates.

    Duration bounds are inclusive. ``jitter_m`` (minimum straight-line
    displacement) and ``max_speed_kmh`` may be None to disable those checks,
    which is how recorded docked trips are handled: a docked round trip has
    zero displacement but is still a real trip.
    """

    min_duration_min: float = 3.0
    max_duration_min: float = 90.0
    jitter_m: Optional[float] = 100.0
    max_speed_kmh: Optional[float] = 25.0

    def __post_init__(self) -> None:
        if not 0 <= self.min_duration_min <= self.max_duration_min:
            raise ValidationError("duration bounds must satisfy 0 <= min <= max")
        if self.jitter_m is not None and self.jitter_m < 0:
            raise ValidationError("jitter threshold must be non-negative")
        if self.max_speed_kmh is not None and self.max_speed_kmh <= 0:
            raise ValidationError("max speed must be positive")


@dataclass(frozen=True)
class Trip:
    mode: Mode
    operator: str
    vehicle_id: str
    start_time: Instant
    end_time: Instant
    start_point: GeoPoint
    end_point: GeoPoint
    distance_m: float
    linked: bool

    def __post_init__(self) -> None:
        if not self.end_time > self.start_time:
            raise ValidationError(
                f"trip for {self.vehicle_id}: end_time must be after start_time"
            )

    @property
    def duration_min(self) -> float:
        return (self.end_time - self.start_time) / 60.0


@dataclass(frozen=True)
class TripEndEvent:
    """A loose origin or destination observed in an unlinked feed."""

    kind: str
    operator: str
    time: Instant
    point: GeoPoint


@dataclass(frozen=True)
class IdleInterval:
    """Gap between two consecutive trips of one vehicle, parked at the
    previous trip's end point."""

    mode: Mode
    operator: str
    vehicle_id: str
    start: Instant
    end: Instant
    location: GeoPoint

    @property
    def duration_h(self) -> float:
        return (self.end - self.start) / 3600.0


@dataclass
class InferStats:
    candidates: int = 0
    kept: int = 0
    rejected: Dict[str, int] = field(default_factory=dict)
    unmatched_end: int = 0

    def reject(self, reason: str) -> None:
        self.rejected[reason] = self.rejected.get(reason, 0) + 1

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected.values())


@dataclass(frozen=True)
class SnapshotDiff:
    disappeared: Tuple[VehicleObservation, ...]
    appeared: Tuple[VehicleObservation, ...]
    moved: Tuple[Tuple[VehicleObservation, VehicleObservation], ...]


def filter_trip(trip: Trip, rules: FilterRules) -> Tuple[bool, Optional[str]]:
    """Apply the plausibility rules; returns (keep, rejection_reason)."""
    duration = trip.duration_min
    if duration < rules.min_duration_min:
        return False, TOO_SHORT
    if duration > rules.max_duration_min:
        return False, TOO_LONG
    displacement = haversine(trip.start_point, trip.end_point)
    if rules.jitter_m is not None and displacement < rules.jitter_m:
        return False, BELOW_JITTER
    if rules.max_speed_kmh is not None:
        speed_kmh = (displacement / 1000.0) / (duration / 60.0)
        if speed_kmh > rules.max_speed_kmh:
            return False, RELOCATION
    return True, None


def _check_stream(snapshots: Sequence[Snapshot]) -> None:
    if len(snapshots) < 2:
        raise ValidationError("need at least two snapshots to infer anything")
    op = snapshots[0].operator
    for prev, cur in zip(snapshots, snapshots[1:]):
        if cur.operator != op:
            raise DataError(f"mixed operators in snapshot stream: {op!r} and {cur.operator!r}")
        if not cur.taken_at > prev.taken_at:
            raise DataError(
                f"snapshots out of order for {op!r}: "
                f"{prev.taken_at} then {cur.taken_at}"
            )


def diff_snapshots(prev: Snapshot, cur: Snapshot, jitter_m: float = 100.0) -> SnapshotDiff:
    """Ids lost, ids gained, and ids displaced at least ``jitter_m``."""
    if cur.operator != prev.operator:
        raise DataError(f"diff across operators: {prev.operator!r} vs {cur.operator!r}")
    if not cur.taken_at > prev.taken_at:
        raise DataError("diff requires strictly increasing snapshot times")
    prev_by_id = {o.vehicle_id: o for o in prev.observations}
    cur_by_id = {o.vehicle_id: o for o in cur.observations}
    disappeared = tuple(prev_by_id[k] for k in sorted(prev_by_id.keys() - cur_by_id.keys()))
    appeared = tuple(cur_by_id[k] for k in sorted(cur_by_id.keys() - prev_by_id.keys()))
    moved = tuple(
        (prev_by_id[k], cur_by_id[k])
        for k in sorted(prev_by_id.keys() & cur_by_id.keys())
        if haversine(prev_by_id[k].point, cur_by_id[k].point) >= jitter_m
    )
    return SnapshotDiff(disappeared, appeared, moved)


def infer_linked_trips(
    snapshots: Sequence[Snapshot],
    rules: FilterRules = FilterRules(),
    mode: Mode = Mode.SCOOTER,
) -> Tuple[List[Trip], InferStats]:
    """Reconstruct trips from a linked (stable-id) snapshot stream.

    For every vehicle, each pair of consecutive sightings is a candidate
    when the vehicle was absent in between, or when it moved at least the
    jitter threshold between adjacent snapshots (an in-place move whose
    duration is then the snapshot gap). Candidates pass ``filter_trip``;
    vehicles that vanish before the final snapshot and never return are
    counted as unmatched.
    """
    _check_stream(snapshots)
    operator = snapshots[0].operator
    stats = InferStats()
    presence: Dict[str, List[Tuple[int, VehicleObservation]]] = {}
    for idx, snap in enumerate(snapshots):
        for obs in snap.observations:
            presence.setdefault(obs.vehicle_id, []).append((idx, obs))

    last_idx = len(snapshots) - 1
    trips: List[Trip] = []
    for vid in sorted(presence):
        sightings = presence[vid]
        for (i, a), (j, b) in zip(sightings, sightings[1:]):
            if j == i + 1 and (
                rules.jitter_m is None or haversine(a.point, b.point) < rules.jitter_m
            ):
                continue  # parked (or GPS noise) across adjacent snapshots
            stats.candidates += 1
            candidate = Trip(
                mode=mode,
                operator=operator,
                vehicle_id=vid,
                start_time=a.observed_at,
                end_time=b.observed_at,
                start_point=a.point,
                end_point=b.point,
                distance_m=haversine(a.point, b.point),
                linked=True,
            )
            keep, reason = filter_trip(candidate, rules)
            if keep:
                trips.append(candidate)
                stats.kept += 1
            else:
                stats.reject(reason)
        if sightings[-1][0] < last_idx:
            stats.unmatched_end += 1
    trips.sort(key=lambda t: (t.start_time, t.vehicle_id, t.end_time))
    return trips, stats


def _match_rotated(
    disappeared: Sequence[VehicleObservation],
    appeared: Sequence[VehicleObservation],
    jitter_m: float,
) -> Tuple[List[VehicleObservation], List[VehicleObservation]]:
    """Greedily pair disappearances with appearances within ``jitter_m``.

    Pairs are taken closest first (ties broken on ids) and both sides of a
    pair are suppressed: that is a parked vehicle whose id rotated. Returns
    the unmatched remainder of both sides.
    """
    if not disappeared or not appeared:
        return list(disappeared), list(appeared)
    d_lon = np.array([o.point.lon for o in disappeared])
    d_lat = np.array([o.point.lat for o in disappeared])
    a_lon = np.array([o.point.lon for o in appeared])
    a_lat = np.array([o.point.lat for o in appeared])
    ref = GeoPoint(float(d_lon[0]), float(d_lat[0]))
    dx, dy = project_arrays(d_lon, d_lat, ref)
    ax, ay = project_arrays(a_lon, a_lat, ref)
    dist = np.sqrt((dx[:, None] - ax[None, :]) ** 2 + (dy[:, None] - ay[None, :]) ** 2)
    pairs = [
        (float(dist[i, j]), disappeared[i].vehicle_id, appeared[j].vehicle_id, i, j)
        for i, j in zip(*np.nonzero(dist < jitter_m))
    ]
    pairs.sort()
    used_d = set()
    used_a = set()
    for _, _, _, i, j in pairs:
        if i in used_d or j in used_a:
            continue
        used_d.add(i)
        used_a.add(j)
    rest_d = [o for k, o in enumerate(disappeared) if k not in used_d]
    rest_a = [o for k, o in enumerate(appeared) if k not in used_a]
    return rest_d, rest_a


def infer_unlinked_events(
    snapshots: Sequence[Snapshot],
    jitter_m: float = 100.0,
) -> Tuple[List[TripEndEvent], InferStats]:
    """Extract origin/destination events from a rotating-id snapshot stream.

    Between each pair of consecutive snapshots, every id present before and
    gone after is a disappearance and every new id an appearance. A
    disappearance matched by an appearance within the jitter threshold is a
    parked vehicle with a rotated id and produces nothing; the remainder are
    trip origins (timed at the earlier snapshot) and destinations (timed at
    the later one).
    """
    _check_stream(snapshots)
    operator = snapshots[0].operator
    stats = InferStats()
    events: List[TripEndEvent] = []
    for prev, cur in zip(snapshots, snapshots[1:]):
        diff = diff_snapshots(prev, cur, jitter_m=jitter_m)
        rest_d, rest_a = _match_rotated(diff.disappeared, diff.appeared, jitter_m)
        for obs in rest_d:
            events.append(TripEndEvent(ORIGIN, operator, prev.taken_at, obs.point))
            stats.candidates += 1
            stats.kept += 1
        for obs in rest_a:
            events.append(TripEndEvent(DESTINATION, operator, cur.taken_at, obs.point))
            stats.candidates += 1
            stats.kept += 1
    events.sort(key=lambda e: (e.time, e.kind, e.point.lon, e.point.lat))
    return events, stats


def recorded_to_trips(
    recorded: Sequence[RecordedTrip],
    registry: Mapping[str, Station],
    rules: FilterRules = FilterRules(),
    operator: str = "docked",
) -> Tuple[List[Trip], InferStats]:
    """Turn recorded docked trips into Trip values through the duration filter.

    Displacement and speed rules do not apply: endpoints are station
    locations and round trips at one station are legitimate.
    """
    docked_rules = replace(rules, jitter_m=None, max_speed_kmh=None)
    stats = InferStats()
    trips: List[Trip] = []
    for rec in recorded:
        start_station = registry.get(rec.start_station)
        end_station = registry.get(rec.end_station)
        if start_station is None or end_station is None:
            stats.reject("unknown station")
            continue
        stats.candidates += 1
        trip = Trip(
            mode=Mode.BIKE,
            operator=operator,
            vehicle_id=rec.vehicle_id,
            start_time=rec.start_time,
            end_time=rec.end_time,
            start_point=start_station.point,
            end_point=end_station.point,
            distance_m=haversine(start_station.point, end_station.point),
            linked=True,
        )
        keep, reason = filter_trip(trip, docked_rules)
        if keep:
            trips.append(trip)
            stats.kept += 1
        else:
            stats.reject(reason)
    trips.sort(key=lambda t: (t.start_time, t.vehicle_id, t.end_time))
    return trips, stats


def idle_intervals(trips: Sequence[Trip]) -> Tuple[List[IdleInterval], int]:
    """Parked gaps between consecutive kept trips, grouped by vehicle.

    Only linked trips qualify (unlinked events cannot be chained). An
    interval sits at the earlier trip's end point and spans until the next
    trip starts; overlapping trips are anomalies, counted and skipped.
    Overnight gaps are kept as-is.
    """
    for t in trips:
        if not t.linked:
            raise ValidationError("idle intervals need linked trips only")
    by_vehicle: Dict[Tuple[str, str, Mode], List[Trip]] = {}
    for t in trips:
        by_vehicle.setdefault((t.operator, t.vehicle_id, t.mode), []).append(t)
    out: List[IdleInterval] = []
    anomalies = 0
    for key in sorted(by_vehicle, key=lambda k: (k[0], k[1], k[2].value)):
        seq = sorted(by_vehicle[key], key=lambda t: (t.start_time, t.end_time))
        operator, vid, mode = key
        for a, b in zip(seq, seq[1:]):
            if b.start_time < a.end_time:
                anomalies += 1
                continue
            if b.start_time == a.end_time:
                continue  # back-to-back with zero gap: no parked interval
            out.append(
                IdleInterval(
                    mode=mode,
                    operator=operator,
                    vehicle_id=vid,
                    start=a.end_time,
                    end=b.start_time,
                    location=a.end_point,
                )
            )
    out.sort(key=lambda iv: (iv.mode.value, iv.operator, iv.vehicle_id, iv.start))
    return out, anomalies
