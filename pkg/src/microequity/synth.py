"""Deterministic synthetic scenarios with known ground truth.

A scenario is a rectangular lattice of zones with planted demographics and
planted fleet disparities, a simulated vehicle population whose trips are
known exactly, and a rendering of that simulation into the same file
formats the ingest stage consumes: snapshot JSON documents per operator,
a station registry and status documents, a recorded trip CSV, zone GeoJSON,
and the attribute tables. Everything derives from one seed; the same seed
produces byte-identical files.

Scooter trips avoid the daily reference hour and keep clear margins around
snapshot ticks, so inference can recover them exactly; unlinked destinations
keep a minimum separation from every other parked point of that operator so
id-rotation suppression never swallows a real event.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .geo import EARTH_RADIUS_M, DEG, unproject, project
from .ingest import (
    Snapshot,
    Station,
    StationStatus,
    VehicleObservation,
    serialize_gbfs_snapshot,
    serialize_station_information,
    serialize_station_status,
)
from .model import GeoPoint, Instant, Mode, local_instant

LINKED = "linked"
UNLINKED = "unlinked"
DOCKED = "docked"

# Separation kept between unlinked parked points, comfortably above the
# default 100 m suppression threshold.
MIN_EVENT_SEPARATION_M = 150.0


@dataclass(frozen=True)
class TrueTrip:
    operator: str
    mode: Mode
    vehicle_id: str
    start_time: Instant
    end_time: Instant
    start: GeoPoint
    end: GeoPoint


@dataclass
class VehicleHistory:
    vehicle_id: str
    initial_point: GeoPoint
    trips: List[TrueTrip] = field(default_factory=list)

    def validate(self) -> None:
        for a, b in zip(self.trips, self.trips[1:]):
            if b.start_time < a.end_time:
                raise ValidationError(
                    f"vehicle {self.vehicle_id}: overlapping trips "
                    f"({a.end_time} > {b.start_time})"
                )

    def position_at(self, t: Instant) -> Optional[GeoPoint]:
        """Parked position at time t, or None while riding. A vehicle is
        still at its origin at exactly the departure instant and already at
        its destination at exactly the arrival instant."""
        pos = self.initial_point
        for trip in self.trips:
            if t <= trip.start_time:
                return pos
            if t < trip.end_time:
                return None
            pos = trip.end
        return pos


@dataclass
class ScenarioSpec:
    """Knobs for the generated world. Defaults give a small, fast scenario
    with a 2:1 scooter fleet disparity favouring the equity half."""

    seed: int = 42
    grid_rows: int = 8
    grid_cols: int = 8
    cell_edge_m: float = 500.0
    days: int = 2
    start_date: dt.date = dt.date(2024, 6, 3)
    timezone_offset_hours: float = -4.0
    cadence_min: float = 15.0
    origin: GeoPoint = GeoPoint(-77.05, 38.85)

    population_range: Tuple[int, int] = (600, 3000)
    jobs_range: Tuple[int, int] = (0, 1500)
    income_low_range: Tuple[float, float] = (30_000.0, 48_000.0)
    income_mid_range: Tuple[float, float] = (60_000.0, 125_000.0)
    income_high_range: Tuple[float, float] = (135_000.0, 200_000.0)
    high_income_fraction: float = 0.25
    majority_share_range: Tuple[float, float] = (0.62, 0.74)
    no_majority_fraction: float = 0.25

    linked_operator: str = "looper"
    unlinked_operator: str = "rotor"
    docked_operator: str = "docker"

    scooter_per_zone_eea: int = 8
    scooter_per_zone_noneea: int = 4
    fleet_jitter: int = 1
    unlinked_per_zone_eea: int = 0
    unlinked_per_zone_noneea: int = 0

    trips_per_vehicle_day: float = 1.0
    trip_duration_min_range: Tuple[float, float] = (4.0, 60.0)
    trip_radius_m: float = 250.0
    min_displacement_m: float = 150.0
    day_window_hours: Tuple[float, float] = (8.0, 20.0)

    stations_per_zone: int = 1
    bikes_per_station_range: Tuple[int, int] = (3, 6)
    bike_trips_per_day: int = 40
    bike_trip_duration_min_range: Tuple[float, float] = (5.0, 60.0)

    reference_hour: float = 6.0

    def __post_init__(self) -> None:
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValidationError("grid must have at least one row and column")
        if self.days < 1:
            raise ValidationError("need at least one study day")
        if self.cadence_min <= 0:
            raise ValidationError("cadence must be positive")
        lo, hi = self.day_window_hours
        if not (0 <= lo < hi <= 24):
            raise ValidationError("day window must be within one day")
        if lo <= self.reference_hour < hi:
            raise ValidationError("trip window must not contain the reference hour")
        if self.min_displacement_m > self.trip_radius_m:
            raise ValidationError("min displacement cannot exceed the trip radius")


@dataclass
class GroundTruth:
    seed: int
    days: List[dt.date]
    zone_ids: List[str]
    eea_zone_ids: List[str]
    trips: Dict[str, List[TrueTrip]]
    idle: Dict[str, List[Tuple[str, float, float, float, float]]]
    availability: Dict[str, Dict[str, float]]
    expected_contrasts: Dict[str, float]

    def to_json(self) -> bytes:
        doc = {
            "seed": self.seed,
            "days": [d.isoformat() for d in self.days],
            "zone_ids": self.zone_ids,
            "eea_zone_ids": self.eea_zone_ids,
            "trips": {
                op: [
                    {
                        "vehicle_id": t.vehicle_id,
                        "mode": t.mode.value,
                        "start_time": t.start_time,
                        "end_time": t.end_time,
                        "start": [t.start.lon, t.start.lat],
                        "end": [t.end.lon, t.end.lat],
                    }
                    for t in sorted(trips, key=lambda t: (t.start_time, t.vehicle_id))
                ]
                for op, trips in sorted(self.trips.items())
            },
            "idle": {
                op: [list(iv) for iv in sorted(ivs)]
                for op, ivs in sorted(self.idle.items())
            },
            "availability": {
                mode: dict(sorted(per_zone.items()))
                for mode, per_zone in sorted(self.availability.items())
            },
            "expected_contrasts": dict(sorted(self.expected_contrasts.items())),
        }
        return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8")


def render_snapshots(
    histories: Sequence[VehicleHistory],
    times: Sequence[Instant],
    operator: str,
    rotate_ids: bool = False,
) -> List[Snapshot]:
    """Project vehicle histories onto snapshot instants.

    A vehicle appears at its parked position in every snapshot outside its
    trips. With ``rotate_ids`` each snapshot invents fresh ids (stable ids
    never repeat across consecutive snapshots), which is how unlinked feeds
    behave.
    """
    for h in histories:
        h.validate()
    ordered = sorted(histories, key=lambda h: h.vehicle_id)
    out: List[Snapshot] = []
    for s_idx, t in enumerate(times):
        obs: List[VehicleObservation] = []
        counter = 0
        for h in ordered:
            pos = h.position_at(t)
            if pos is None:
                continue
            if rotate_ids:
                vid = f"u{s_idx:06d}n{counter:05d}"
                counter += 1
            else:
                vid = h.vehicle_id
            obs.append(VehicleObservation(vid, pos, t))
        obs.sort(key=lambda o: o.vehicle_id)
        out.append(Snapshot(operator=operator, taken_at=t, observations=tuple(obs)))
    return out


# --- generation internals ---------------------------------------------------


class _Lattice:
    """Zone lattice geometry in the projected frame anchored at spec.origin."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.ref = spec.origin
        self.edge = spec.cell_edge_m

    def zone_id(self, r: int, c: int) -> str:
        return f"Z{r:02d}{c:02d}"

    def is_eea(self, c: int) -> bool:
        return c < self.spec.grid_cols // 2

    def cells(self):
        for r in range(self.spec.grid_rows):
            for c in range(self.spec.grid_cols):
                yield r, c

    def corners(self, r: int, c: int) -> Tuple[float, float, float, float]:
        x0 = c * self.edge
        y0 = r * self.edge
        return x0, y0, x0 + self.edge, y0 + self.edge

    def point_in_cell(self, r: int, c: int, rng: np.random.Generator, margin: float = 0.05) -> GeoPoint:
        x0, y0, x1, y1 = self.corners(r, c)
        pad = self.edge * margin
        x = rng.uniform(x0 + pad, x1 - pad)
        y = rng.uniform(y0 + pad, y1 - pad)
        return unproject(x, y, self.ref)

    def center(self, r: int, c: int) -> GeoPoint:
        x0, y0, x1, y1 = self.corners(r, c)
        return unproject((x0 + x1) / 2.0, (y0 + y1) / 2.0, self.ref)

    def contains_projected(self, x: float, y: float, margin: float = 10.0) -> bool:
        return (
            margin <= x <= self.spec.grid_cols * self.edge - margin
            and margin <= y <= self.spec.grid_rows * self.edge - margin
        )

    def zone_polygon_lonlat(self, r: int, c: int) -> List[List[float]]:
        x0, y0, x1, y1 = self.corners(r, c)
        ring = [
            unproject(x0, y0, self.ref),
            unproject(x1, y0, self.ref),
            unproject(x1, y1, self.ref),
            unproject(x0, y1, self.ref),
        ]
        ring.append(ring[0])
        return [[p.lon, p.lat] for p in ring]


def _fname(ts: Instant) -> str:
    t = dt.datetime.fromtimestamp(int(ts), dt.timezone.utc)
    return t.strftime("%Y%m%dT%H%M%SZ") + ".json"


def _snapshot_times(spec: ScenarioSpec) -> List[Instant]:
    t0 = local_instant(spec.start_date, 0.0, spec.timezone_offset_hours)
    end = local_instant(spec.start_date + dt.timedelta(days=spec.days), 0.0, spec.timezone_offset_hours)
    step = spec.cadence_min * 60.0
    times: List[Instant] = []
    k = 0
    while True:
        t = t0 + k * step
        if t >= end:
            break
        times.append(float(int(t)))
        k += 1
    return times


def _slot_trip_times(
    rng: np.random.Generator,
    day_start: Instant,
    spec: ScenarioSpec,
    n_trips: int,
    duration_range: Tuple[float, float],
) -> List[Tuple[int, int]]:
    """Start/end epoch seconds for n trips in one day, each in its own slot
    with margins wide enough that a snapshot tick lands between trips."""
    lo_h, hi_h = spec.day_window_hours
    window_start = day_start + lo_h * 3600.0
    window_len = (hi_h - lo_h) * 3600.0
    slot_len = window_len / n_trips
    pad = 1.5 * spec.cadence_min * 60.0
    out: List[Tuple[int, int]] = []
    for s in range(n_trips):
        slot_start = window_start + s * slot_len
        duration = rng.uniform(duration_range[0], duration_range[1]) * 60.0
        latest = slot_len - pad - duration
        if latest <= pad:
            raise ValidationError(
                "day window too tight for the trip count, duration range, and cadence"
            )
        offset = rng.uniform(pad, latest)
        start = int(slot_start + offset)
        end = int(start + duration)
        out.append((start, max(end, start + 1)))
    return out


class _SeparationRegistry:
    """Parked-point registry per unlinked operator; keeps every new
    destination at least MIN_EVENT_SEPARATION_M from any known point."""

    def __init__(self, ref: GeoPoint):
        self.ref = ref
        self.xs: List[float] = []
        self.ys: List[float] = []

    def add(self, p: GeoPoint) -> None:
        pp = project(p, self.ref)
        self.xs.append(pp.x)
        self.ys.append(pp.y)

    def far_enough(self, p: GeoPoint) -> bool:
        if not self.xs:
            return True
        pp = project(p, self.ref)
        dx = np.asarray(self.xs) - pp.x
        dy = np.asarray(self.ys) - pp.y
        return bool(np.min(dx * dx + dy * dy) >= MIN_EVENT_SEPARATION_M ** 2)


def _draw_destination(
    rng: np.random.Generator,
    lattice: _Lattice,
    origin: GeoPoint,
    spec: ScenarioSpec,
    registry: Optional[_SeparationRegistry],
) -> GeoPoint:
    o = project(origin, lattice.ref)
    max_radius = spec.trip_radius_m
    for attempt in range(1000):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        radius = rng.uniform(spec.min_displacement_m, max_radius)
        x = o.x + radius * math.cos(angle)
        y = o.y + radius * math.sin(angle)
        if attempt > 0 and attempt % 200 == 0:
            # Crowded neighbourhood: widen the search ring rather than fail.
            max_radius *= 1.5
        if not lattice.contains_projected(x, y):
            continue
        p = unproject(x, y, lattice.ref)
        if registry is not None and not registry.far_enough(p):
            continue
        return p
    raise ValidationError(
        "could not place a trip destination; the scenario is too dense for the "
        "separation constraints"
    )


def _simulate_dockless(
    rng: np.random.Generator,
    lattice: _Lattice,
    spec: ScenarioSpec,
    operator: str,
    per_zone_eea: int,
    per_zone_noneea: int,
    unlinked: bool,
) -> List[VehicleHistory]:
    histories: List[VehicleHistory] = []
    registry = _SeparationRegistry(lattice.ref) if unlinked else None
    mode = Mode.SCOOTER
    for r, c in lattice.cells():
        base = per_zone_eea if lattice.is_eea(c) else per_zone_noneea
        if base <= 0:
            continue
        count = max(0, base + int(rng.integers(-spec.fleet_jitter, spec.fleet_jitter + 1)))
        for k in range(count):
            vid = f"{operator}-{lattice.zone_id(r, c)}-{k:03d}"
            pos = lattice.point_in_cell(r, c, rng)
            if registry is not None:
                for _ in range(500):
                    if registry.far_enough(pos):
                        break
                    pos = lattice.point_in_cell(r, c, rng)
                else:
                    raise ValidationError(
                        "could not scatter the unlinked fleet with the required "
                        "point separation; reduce the per-zone count"
                    )
                registry.add(pos)
            histories.append(VehicleHistory(vid, pos))
    whole = int(math.floor(spec.trips_per_vehicle_day))
    frac = spec.trips_per_vehicle_day - whole
    for h in histories:
        for d in range(spec.days):
            day = spec.start_date + dt.timedelta(days=d)
            day_start = local_instant(day, 0.0, spec.timezone_offset_hours)
            n = whole + (1 if rng.random() < frac else 0)
            if n == 0:
                continue
            spans = _slot_trip_times(rng, day_start, spec, n, spec.trip_duration_min_range)
            for start, end in spans:
                origin = h.trips[-1].end if h.trips else h.initial_point
                dest = _draw_destination(rng, lattice, origin, spec, registry)
                if registry is not None:
                    registry.add(dest)
                h.trips.append(
                    TrueTrip(operator, mode, h.vehicle_id, float(start), float(end), origin, dest)
                )
    for h in histories:
        h.validate()
    return histories


def _simulate_docked(
    rng: np.random.Generator,
    lattice: _Lattice,
    spec: ScenarioSpec,
) -> Tuple[Dict[str, Station], List[VehicleHistory], Dict[str, str]]:
    """Stations, bike histories, and the bike -> initial station map."""
    stations: Dict[str, Station] = {}
    station_cells: Dict[str, Tuple[int, int]] = {}
    for r, c in lattice.cells():
        for s in range(spec.stations_per_zone):
            sid = f"S{lattice.zone_id(r, c)}{s:02d}"
            point = lattice.point_in_cell(r, c, rng, margin=0.2)
            stations[sid] = Station(sid, point, name=f"Station {sid}")
            station_cells[sid] = (r, c)
    bikes: List[VehicleHistory] = []
    bike_station: Dict[str, str] = {}
    for sid in sorted(stations):
        n = int(rng.integers(spec.bikes_per_station_range[0], spec.bikes_per_station_range[1] + 1))
        for k in range(n):
            bid = f"{sid}-b{k:02d}"
            bikes.append(VehicleHistory(bid, stations[sid].point))
            bike_station[bid] = sid
    current = dict(bike_station)
    sids = sorted(stations)
    operator = spec.docked_operator
    for d in range(spec.days):
        day = spec.start_date + dt.timedelta(days=d)
        day_start = local_instant(day, 0.0, spec.timezone_offset_hours)
        n_trips = min(spec.bike_trips_per_day, len(bikes))
        chosen = rng.choice(len(bikes), size=n_trips, replace=False)
        order = np.sort(chosen)
        for idx in order:
            bike = bikes[int(idx)]
            start_sid = current[bike.vehicle_id]
            end_sid = sids[int(rng.integers(0, len(sids)))]
            spans = _slot_trip_times(rng, day_start, spec, 1, spec.bike_trip_duration_min_range)
            start, end = spans[0]
            bike.trips.append(
                TrueTrip(
                    operator,
                    Mode.BIKE,
                    bike.vehicle_id,
                    float(start),
                    float(end),
                    stations[start_sid].point,
                    stations[end_sid].point,
                )
            )
            current[bike.vehicle_id] = end_sid
    for b in bikes:
        b.validate()
    return stations, bikes, bike_station


def _true_idle(histories: Sequence[VehicleHistory]) -> List[Tuple[str, float, float, float, float]]:
    out: List[Tuple[str, float, float, float, float]] = []
    for h in sorted(histories, key=lambda h: h.vehicle_id):
        for a, b in zip(h.trips, h.trips[1:]):
            if b.start_time > a.end_time:
                out.append((h.vehicle_id, a.end_time, b.start_time, a.end.lon, a.end.lat))
    return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def generate_scenario(spec: ScenarioSpec, outdir: Path) -> GroundTruth:
    """Generate a full scenario under ``outdir`` and return its ground truth.

    Emits snapshots per operator, the docked registry/status/trips when
    stations are enabled, zone GeoJSON, demographics/jobs/equity tables, a
    ready-to-run pipeline configuration (run.ini), the ground truth JSON,
    and a manifest with a checksum of every file written.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    lattice = _Lattice(spec)
    days = [spec.start_date + dt.timedelta(days=d) for d in range(spec.days)]
    written: List[Path] = []

    def emit(rel: str, data: bytes) -> Path:
        path = outdir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        written.append(path)
        return path

    # Zones and attributes.
    features = []
    demo_lines = ["zone_id,population,median_income,race_white,race_black,race_hispanic,race_asian"]
    jobs_lines = ["block_id,jobs"]
    eea_lines = ["zone_id"]
    zone_ids: List[str] = []
    eea_ids: List[str] = []
    for r, c in lattice.cells():
        zid = lattice.zone_id(r, c)
        zone_ids.append(zid)
        eea = lattice.is_eea(c)
        if eea:
            eea_ids.append(zid)
        features.append(
            {
                "type": "Feature",
                "properties": {"id": zid},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [lattice.zone_polygon_lonlat(r, c)],
                },
            }
        )
        population = int(rng.integers(spec.population_range[0], spec.population_range[1] + 1))
        jobs = int(rng.integers(spec.jobs_range[0], spec.jobs_range[1] + 1))
        if eea:
            income = rng.uniform(*spec.income_low_range)
        elif rng.random() < spec.high_income_fraction:
            income = rng.uniform(*spec.income_high_range)
        else:
            income = rng.uniform(*spec.income_mid_range)
        no_majority = rng.random() < spec.no_majority_fraction
        shares = {"white": 0.0, "black": 0.0, "hispanic": 0.0, "asian": 0.0}
        if no_majority:
            a, b = ("black", "white") if eea else ("white", "black")
            shares[a] = 0.45
            shares[b] = 0.40
            shares["hispanic"] = 0.10
            shares["asian"] = 0.05
        else:
            major = "black" if eea else "white"
            minor = "white" if eea else "black"
            share = rng.uniform(*spec.majority_share_range)
            shares[major] = share
            shares[minor] = (1.0 - share) * 0.7
            shares["hispanic"] = (1.0 - share) * 0.2
            shares["asian"] = (1.0 - share) * 0.1
        counts = {k: int(math.floor(v * population)) for k, v in shares.items()}
        demo_lines.append(
            f"{zid},{population},{income:.0f},"
            f"{counts['white']},{counts['black']},{counts['hispanic']},{counts['asian']}"
        )
        j1 = jobs // 2
        jobs_lines.append(f"{zid}B1,{j1}")
        jobs_lines.append(f"{zid}B2,{jobs - j1}")
    emit(
        "zones.geojson",
        json.dumps(
            {"type": "FeatureCollection", "features": features},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8"),
    )
    emit("demographics.csv", ("\n".join(demo_lines) + "\n").encode("utf-8"))
    emit("jobs.csv", ("\n".join(jobs_lines) + "\n").encode("utf-8"))
    emit("eea.csv", ("\n".join(eea_lines + eea_ids) + "\n").encode("utf-8"))

    # Vehicle simulation.
    trips: Dict[str, List[TrueTrip]] = {}
    idle: Dict[str, List[Tuple[str, float, float, float, float]]] = {}
    times = _snapshot_times(spec)

    linked = _simulate_dockless(
        rng, lattice, spec, spec.linked_operator,
        spec.scooter_per_zone_eea, spec.scooter_per_zone_noneea, unlinked=False,
    )
    trips[spec.linked_operator] = [t for h in linked for t in h.trips]
    idle[spec.linked_operator] = _true_idle(linked)
    for snap in render_snapshots(linked, times, spec.linked_operator):
        emit(f"snapshots/{spec.linked_operator}/{_fname(snap.taken_at)}",
             serialize_gbfs_snapshot(snap))

    unlinked: List[VehicleHistory] = []
    if spec.unlinked_per_zone_eea > 0 or spec.unlinked_per_zone_noneea > 0:
        unlinked = _simulate_dockless(
            rng, lattice, spec, spec.unlinked_operator,
            spec.unlinked_per_zone_eea, spec.unlinked_per_zone_noneea, unlinked=True,
        )
        trips[spec.unlinked_operator] = [t for h in unlinked for t in h.trips]
        idle[spec.unlinked_operator] = _true_idle(unlinked)
        for snap in render_snapshots(unlinked, times, spec.unlinked_operator, rotate_ids=True):
            emit(f"snapshots/{spec.unlinked_operator}/{_fname(snap.taken_at)}",
                 serialize_gbfs_snapshot(snap))

    stations: Dict[str, Station] = {}
    bikes: List[VehicleHistory] = []
    if spec.stations_per_zone > 0:
        stations, bikes, bike_station = _simulate_docked(rng, lattice, spec)
        trips[spec.docked_operator] = [t for b in bikes for t in b.trips]
        idle[spec.docked_operator] = _true_idle(bikes)
        emit(
            f"snapshots/{spec.docked_operator}/station_information.json",
            serialize_station_information(stations),
        )
        station_points = {sid: stations[sid].point for sid in stations}
        for day in days:
            t_ref = float(int(local_instant(day, spec.reference_hour, spec.timezone_offset_hours)))
            counts: Dict[str, int] = {sid: 0 for sid in stations}
            for b in bikes:
                pos = b.position_at(t_ref)
                if pos is None:
                    continue
                sid = next(s for s, p in station_points.items() if p == pos)
                counts[sid] += 1
            statuses = [StationStatus(sid, counts[sid], t_ref) for sid in sorted(counts)]
            emit(
                f"snapshots/{spec.docked_operator}/{_fname(t_ref)}",
                serialize_station_status(statuses, t_ref),
            )
        rows = ["Start date,End date,Start station number,End station number,Bike number,Member type"]
        all_bike_trips = sorted(
            (t for b in bikes for t in b.trips), key=lambda t: (t.start_time, t.vehicle_id)
        )
        sid_of_point = {(s.point.lon, s.point.lat): s.id for s in stations.values()}
        for t in all_bike_trips:
            start_local = dt.datetime.fromtimestamp(
                t.start_time + spec.timezone_offset_hours * 3600.0, dt.timezone.utc
            ).strftime("%Y-%m-%d %H:%M:%S")
            end_local = dt.datetime.fromtimestamp(
                t.end_time + spec.timezone_offset_hours * 3600.0, dt.timezone.utc
            ).strftime("%Y-%m-%d %H:%M:%S")
            member = "Member" if (sum(t.vehicle_id.encode()) & 1) == 0 else "Casual"
            rows.append(
                f"{start_local},{end_local},"
                f"{sid_of_point[(t.start.lon, t.start.lat)]},{sid_of_point[(t.end.lon, t.end.lat)]},"
                f"{t.vehicle_id},{member}"
            )
        emit("bike_trips.csv", ("\n".join(rows) + "\n").encode("utf-8"))

    # Exact availability ground truth from the simulated positions.
    availability: Dict[str, Dict[str, float]] = {}
    scooter_histories = linked + unlinked
    per_zone_scooter: Dict[str, float] = {zid: 0.0 for zid in zone_ids}
    cell_of_zone = {lattice.zone_id(r, c): (r, c) for r, c in lattice.cells()}
    for day in days:
        t_ref = local_instant(day, spec.reference_hour, spec.timezone_offset_hours)
        for h in scooter_histories:
            pos = h.position_at(t_ref)
            if pos is None:
                continue
            pp = project(pos, lattice.ref)
            c = min(int(pp.x // spec.cell_edge_m), spec.grid_cols - 1)
            r = min(int(pp.y // spec.cell_edge_m), spec.grid_rows - 1)
            per_zone_scooter[lattice.zone_id(r, c)] += 1.0
    availability[Mode.SCOOTER.value] = {
        zid: v / len(days) for zid, v in per_zone_scooter.items()
    }
    if stations:
        per_zone_bike: Dict[str, float] = {zid: 0.0 for zid in zone_ids}
        for day in days:
            t_ref = float(int(local_instant(day, spec.reference_hour, spec.timezone_offset_hours)))
            for b in bikes:
                pos = b.position_at(t_ref)
                if pos is None:
                    continue
                pp = project(pos, lattice.ref)
                c = min(int(pp.x // spec.cell_edge_m), spec.grid_cols - 1)
                r = min(int(pp.y // spec.cell_edge_m), spec.grid_rows - 1)
                per_zone_bike[lattice.zone_id(r, c)] += 1.0
        availability[Mode.BIKE.value] = {zid: v / len(days) for zid, v in per_zone_bike.items()}

    contrasts: Dict[str, float] = {}
    if spec.scooter_per_zone_noneea > 0:
        contrasts["scooter_fleet_eea_over_noneea"] = (
            spec.scooter_per_zone_eea / spec.scooter_per_zone_noneea
        )

    truth = GroundTruth(
        seed=spec.seed,
        days=days,
        zone_ids=zone_ids,
        eea_zone_ids=eea_ids,
        trips=trips,
        idle=idle,
        availability=availability,
        expected_contrasts=contrasts,
    )
    emit("groundtruth.json", truth.to_json())

    # Pipeline configuration pointing at the generated files.
    operators = [f"{spec.linked_operator} = linked"]
    if unlinked:
        operators.append(f"{spec.unlinked_operator} = unlinked")
    if stations:
        operators.append(f"{spec.docked_operator} = docked")
    config_lines = [
        "[inputs]",
        "snapshots_dir = snapshots",
        "zones = zones.geojson",
        "demographics = demographics.csv",
        "jobs = jobs.csv",
        "eea = eea.csv",
    ]
    if stations:
        config_lines.append("trips_csv = bike_trips.csv")
    config_lines += [
        "",
        "[operators]",
        *operators,
        "",
        "[study]",
        f"timezone_offset_hours = {spec.timezone_offset_hours}",
        f"start_date = {spec.start_date.isoformat()}",
        f"end_date = {(spec.start_date + dt.timedelta(days=spec.days - 1)).isoformat()}",
        f"reference_hour = {spec.reference_hour}",
        "reference_window_min = 30",
        "",
        "[ingest]",
        "block_prefix_len = 5",
        "",
        "[output]",
        "dir = out",
        "",
    ]
    emit("run.ini", "\n".join(config_lines).encode("utf-8"))

    manifest = {
        "files": {
            str(p.relative_to(outdir)).replace("\\", "/"): _sha256(p)
            for p in sorted(written)
        }
    }
    emit("manifest.json", (json.dumps(manifest, sort_keys=True, indent=1) + "\n").encode("utf-8"))
    return truth
