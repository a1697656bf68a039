"""Parsers and validators for every external input.

Covers vehicle-feed snapshots (free-bike JSON documents), docked station
registries and status documents, recorded trip CSVs, zone geometries
(GeoJSON), and the delimited attribute tables (demographics, jobs, equity
designations). Every row or entry that is skipped is counted; nothing is
dropped silently.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .errors import DataError, ValidationError
from .model import (
    GeoPoint,
    Instant,
    MultiPolygonGeom,
    PolygonGeom,
    Ring,
    Zone,
    parse_timestamp,
)

# Degrees within which an almost-closed ring is snapped shut.
RING_CLOSE_TOL_DEG = 1e-9

# Default fraction of recorded-trip rows that may be skipped before the file
# is considered broken.
MAX_SKIPPED_FRACTION = 0.05

# Column aliases for recorded trip files, first match wins (case-insensitive).
TRIP_COLUMN_ALIASES: Dict[str, Tuple[str, ...]] = {
    "start_time": ("start date", "started_at", "start_time"),
    "end_time": ("end date", "ended_at", "end_time"),
    "start_station": ("start station number", "start_station_id", "start_station"),
    "end_station": ("end station number", "end_station_id", "end_station"),
    "vehicle_id": ("bike number", "bike_id", "vehicle_id"),
    "member_type": ("member type", "member_casual", "member_type"),
}


@dataclass(frozen=True)
class VehicleObservation:
    vehicle_id: str
    point: GeoPoint
    observed_at: Instant


@dataclass(frozen=True)
class Snapshot:
    """All vehicles of one operator visible at one instant."""

    operator: str
    taken_at: Instant
    observations: Tuple[VehicleObservation, ...]


@dataclass(frozen=True)
class Station:
    id: str
    point: GeoPoint
    name: str = ""


@dataclass(frozen=True)
class StationStatus:
    station_id: str
    bikes_available: int
    taken_at: Instant


@dataclass(frozen=True)
class RecordedTrip:
    vehicle_id: str
    start_time: Instant
    end_time: Instant
    start_station: str
    end_station: str
    member_type: Optional[str] = None


@dataclass
class TableStats:
    """Skip accounting for a parsed table."""

    total: int = 0
    kept: int = 0
    skipped: Dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    @property
    def n_skipped(self) -> int:
        return sum(self.skipped.values())


def _load_json(raw: bytes, what: str) -> dict:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DataError(f"{what}: not valid UTF-8 at byte offset {exc.start}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{what}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{what}: top-level JSON value must be an object")
    return doc


def parse_gbfs_snapshot(raw: bytes, operator: str, taken_at: Instant) -> Tuple[Snapshot, int]:
    """Parse one free-bike-status document into a Snapshot.

    Entries without an id or without usable coordinates are dropped and
    counted (second return value). Duplicate vehicle ids are an error.
    Observations come back sorted by vehicle id, which makes snapshots
    round-trip stable.
    """
    doc = _load_json(raw, f"snapshot {operator}")
    data = doc.get("data")
    if not isinstance(data, dict) or not isinstance(data.get("bikes"), list):
        raise DataError(f"snapshot {operator}: missing data.bikes list")
    dropped = 0
    seen: Dict[str, VehicleObservation] = {}
    for entry in data["bikes"]:
        if not isinstance(entry, dict):
            dropped += 1
            continue
        vid = entry.get("bike_id")
        lat = entry.get("lat")
        lon = entry.get("lon")
        if not isinstance(vid, str) or not vid:
            dropped += 1
            continue
        if not isinstance(lat, (int, float)) or not isinstance(lon, (int, float)) \
                or isinstance(lat, bool) or isinstance(lon, bool):
            dropped += 1
            continue
        if vid in seen:
            raise DataError(f"snapshot {operator}: duplicate vehicle id {vid!r}")
        seen[vid] = VehicleObservation(vid, GeoPoint(float(lon), float(lat)), taken_at)
    obs = tuple(seen[k] for k in sorted(seen))
    return Snapshot(operator=operator, taken_at=taken_at, observations=obs), dropped


def serialize_gbfs_snapshot(snapshot: Snapshot) -> bytes:
    """Inverse of :func:`parse_gbfs_snapshot` (canonical bytes)."""
    doc = {
        "last_updated": int(snapshot.taken_at),
        "ttl": 0,
        "data": {
            "bikes": [
                {
                    "bike_id": o.vehicle_id,
                    "lat": o.point.lat,
                    "lon": o.point.lon,
                    "is_disabled": 0,
                    "is_reserved": 0,
                }
                for o in sorted(snapshot.observations, key=lambda o: o.vehicle_id)
            ]
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def parse_station_information(raw: bytes) -> Dict[str, Station]:
    """Parse a station registry document into {station_id: Station}."""
    doc = _load_json(raw, "station registry")
    data = doc.get("data")
    if not isinstance(data, dict) or not isinstance(data.get("stations"), list):
        raise DataError("station registry: missing data.stations list")
    out: Dict[str, Station] = {}
    for entry in data["stations"]:
        if not isinstance(entry, dict):
            raise DataError("station registry: station entry is not an object")
        sid = entry.get("station_id")
        lat = entry.get("lat")
        lon = entry.get("lon")
        if not isinstance(sid, str) or not sid:
            raise DataError("station registry: station without an id")
        if not isinstance(lat, (int, float)) or not isinstance(lon, (int, float)):
            raise DataError(f"station registry: station {sid!r} missing coordinates")
        if sid in out:
            raise DataError(f"station registry: duplicate station id {sid!r}")
        out[sid] = Station(sid, GeoPoint(float(lon), float(lat)), str(entry.get("name", "")))
    return out


def serialize_station_information(stations: Mapping[str, Station]) -> bytes:
    doc = {
        "data": {
            "stations": [
                {
                    "station_id": s.id,
                    "name": s.name,
                    "lat": s.point.lat,
                    "lon": s.point.lon,
                }
                for s in (stations[k] for k in sorted(stations))
            ]
        }
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def parse_station_status(
    raw: bytes,
    taken_at: Instant,
    registry: Optional[Mapping[str, Station]] = None,
) -> Tuple[List[StationStatus], int]:
    """Parse a station-status document.

    With a registry, statuses for unknown stations are dropped and counted;
    without one every status is kept.
    """
    doc = _load_json(raw, "station status")
    data = doc.get("data")
    if not isinstance(data, dict) or not isinstance(data.get("stations"), list):
        raise DataError("station status: missing data.stations list")
    out: List[StationStatus] = []
    dropped = 0
    for entry in data["stations"]:
        if not isinstance(entry, dict):
            dropped += 1
            continue
        sid = entry.get("station_id")
        n = entry.get("num_bikes_available")
        if not isinstance(sid, str) or not sid or not isinstance(n, int) or isinstance(n, bool) or n < 0:
            dropped += 1
            continue
        if registry is not None and sid not in registry:
            dropped += 1
            continue
        out.append(StationStatus(sid, n, taken_at))
    out.sort(key=lambda s: s.station_id)
    return out, dropped


def serialize_station_status(statuses: Sequence[StationStatus], taken_at: Instant) -> bytes:
    doc = {
        "last_updated": int(taken_at),
        "data": {
            "stations": [
                {"station_id": s.station_id, "num_bikes_available": s.bikes_available}
                for s in sorted(statuses, key=lambda s: s.station_id)
            ]
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def discover_snapshots(root: Path) -> Dict[str, List[Tuple[Instant, Path]]]:
    """Find snapshot files under ``root/<operator>/<timestamp>.json``.

    The filename stem is the capture timestamp (assumed UTC when it carries
    no offset). A ``station_information.json`` in an operator directory is
    the docked registry, not a snapshot.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"snapshot directory not found: {root}")
    out: Dict[str, List[Tuple[Instant, Path]]] = {}
    for op_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        entries: List[Tuple[Instant, Path]] = []
        for f in sorted(op_dir.glob("*.json")):
            if f.name == "station_information.json":
                continue
            try:
                ts = parse_timestamp(f.stem, default_offset_hours=0.0)
            except ValidationError as exc:
                raise DataError(f"snapshot filename is not a timestamp: {f}") from exc
            entries.append((ts, f))
        entries.sort(key=lambda e: e[0])
        for (t1, p1), (t2, p2) in zip(entries, entries[1:]):
            if t1 == t2:
                raise DataError(f"duplicate snapshot timestamp for {op_dir.name}: {p1.name}, {p2.name}")
        if entries:
            out[op_dir.name] = entries
    return out


# --- zone geometry --------------------------------------------------------------


def _close_ring(coords: Sequence[Sequence[float]], zone_id: str) -> Ring:
    if len(coords) < 4:
        raise DataError(f"zone {zone_id}: ring has fewer than 4 coordinates")
    pts = [GeoPoint(float(c[0]), float(c[1])) for c in coords]
    first, last = pts[0], pts[-1]
    if first != last:
        if abs(first.lon - last.lon) <= RING_CLOSE_TOL_DEG and abs(first.lat - last.lat) <= RING_CLOSE_TOL_DEG:
            pts[-1] = first
        else:
            raise DataError(
                f"zone {zone_id}: ring not closed (first {first.lon},{first.lat} "
                f"vs last {last.lon},{last.lat})"
            )
    if len(set(pts[:-1])) < 3:
        raise DataError(f"zone {zone_id}: ring has fewer than 3 distinct vertices")
    return tuple(pts)


def _ring_area_deg2(ring: Ring) -> float:
    a2 = 0.0
    for p1, p2 in zip(ring, ring[1:]):
        a2 += p1.lon * p2.lat - p2.lon * p1.lat
    return abs(a2) / 2.0


def _segments_properly_cross(ax, ay, bx, by, cx, cy, dx, dy) -> bool:
    """True when segments AB and CD cross at an interior point of both."""

    def orient(px, py, qx, qy, rx, ry) -> float:
        return (qx - px) * (ry - py) - (qy - py) * (rx - px)

    o1 = orient(ax, ay, bx, by, cx, cy)
    o2 = orient(ax, ay, bx, by, dx, dy)
    o3 = orient(cx, cy, dx, dy, ax, ay)
    o4 = orient(cx, cy, dx, dy, bx, by)
    return (o1 * o2 < 0.0) and (o3 * o4 < 0.0)


def _check_self_intersection(ring: Ring, zone_id: str) -> None:
    n = len(ring) - 1  # distinct vertices
    for i in range(n):
        a, b = ring[i], ring[i + 1]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # first and last edges are adjacent
            c, d = ring[j], ring[j + 1]
            if _segments_properly_cross(a.lon, a.lat, b.lon, b.lat, c.lon, c.lat, d.lon, d.lat):
                raise DataError(f"zone {zone_id}: self-intersecting outer ring")


def _parse_polygon(rings_coords, zone_id: str) -> PolygonGeom:
    if not rings_coords:
        raise DataError(f"zone {zone_id}: polygon with no rings")
    rings: List[Ring] = []
    for k, coords in enumerate(rings_coords):
        ring = _close_ring(coords, zone_id)
        if _ring_area_deg2(ring) == 0.0:
            raise DataError(f"zone {zone_id}: zero-area ring")
        if k == 0:
            _check_self_intersection(ring, zone_id)
        rings.append(ring)
    return tuple(rings)


def load_zones(raw: bytes) -> List[Zone]:
    """Parse a GeoJSON FeatureCollection of zone polygons.

    Each feature needs an ``id`` (feature-level or in properties) and a
    Polygon or MultiPolygon geometry. Zones come back sorted by id with
    default (empty) attributes; use :func:`attach_attributes` to fill them.
    """
    doc = _load_json(raw, "zones")
    if doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise DataError("zones: expected a GeoJSON FeatureCollection")
    zones: List[Zone] = []
    seen: Set[str] = set()
    for feat in doc["features"]:
        if not isinstance(feat, dict):
            raise DataError("zones: feature is not an object")
        props = feat.get("properties") or {}
        zid = feat.get("id") or props.get("id")
        if zid is None:
            raise DataError("zones: feature without an id")
        zid = str(zid)
        if zid in seen:
            raise DataError(f"zones: duplicate zone id {zid!r}")
        seen.add(zid)
        geom = feat.get("geometry")
        if not isinstance(geom, dict):
            raise DataError(f"zone {zid}: missing geometry")
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            polys: MultiPolygonGeom = (_parse_polygon(coords, zid),)
        elif gtype == "MultiPolygon":
            if not coords:
                raise DataError(f"zone {zid}: empty MultiPolygon")
            polys = tuple(_parse_polygon(p, zid) for p in coords)
        else:
            raise DataError(f"zone {zid}: unsupported geometry type {gtype!r}")
        zones.append(Zone(id=zid, geometry=polys))
    if not zones:
        raise DataError("zones: no features")
    zones.sort(key=lambda z: z.id)
    return zones


# --- attribute tables ------------------------------------------------------------


def read_table(text: str, delimiter: str = ",") -> List[Dict[str, str]]:
    """Read a delimited text table with a header row into dict rows."""
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    if reader.fieldnames is None:
        raise DataError("table has no header row")
    return [dict(row) for row in reader]


def _row_value(row: Mapping[str, str], *names: str) -> Optional[str]:
    lowered = {k.strip().lower(): v for k, v in row.items() if k is not None}
    for name in names:
        if name in lowered and lowered[name] is not None and lowered[name].strip() != "":
            return lowered[name].strip()
    return None


@dataclass
class AttachStats:
    zones_with_attributes: int = 0
    unknown_demographic_ids: int = 0
    unknown_job_blocks: int = 0
    unknown_eea_ids: int = 0


def attach_attributes(
    zones: Sequence[Zone],
    demographics: Sequence[Mapping[str, str]],
    jobs: Sequence[Mapping[str, str]] = (),
    eea_ids: Iterable[str] = (),
    block_prefix_len: int = 12,
) -> Tuple[List[Zone], AttachStats]:
    """Join demographic, job, and equity-area attributes onto zones.

    Demographic rows carry a zone id, population, median income, and race
    counts in ``race_<label>`` columns; shares are counts over population.
    Job rows aggregate by truncating the block id to ``block_prefix_len``
    characters. Joins are insensitive to row order; ids that match no zone
    are counted, zones that match no row keep Unknown attributes.
    """
    stats = AttachStats()
    by_id = {z.id: z for z in zones}

    demo: Dict[str, Tuple[int, Optional[float], Dict[str, float]]] = {}
    for row in demographics:
        zid = _row_value(row, "zone_id", "geoid", "id")
        if zid is None:
            raise DataError("demographics row without a zone id")
        if zid in demo:
            raise DataError(f"demographics: duplicate zone id {zid!r}")
        if zid not in by_id:
            stats.unknown_demographic_ids += 1
            continue
        pop_text = _row_value(row, "population")
        try:
            population = int(float(pop_text)) if pop_text is not None else 0
        except ValueError as exc:
            raise DataError(f"demographics {zid}: bad population {pop_text!r}") from exc
        if population < 0:
            raise DataError(f"demographics {zid}: negative population")
        income_text = _row_value(row, "median_income", "median_household_income")
        try:
            income = float(income_text) if income_text is not None else None
        except ValueError as exc:
            raise DataError(f"demographics {zid}: bad income {income_text!r}") from exc
        counts: Dict[str, float] = {}
        for key, val in row.items():
            if key is None or not key.strip().lower().startswith("race_"):
                continue
            label = key.strip().lower()[len("race_"):]
            if val is None or val.strip() == "":
                continue
            try:
                count = float(val)
            except ValueError as exc:
                raise DataError(f"demographics {zid}: bad race count {key}={val!r}") from exc
            if count < 0:
                raise DataError(f"demographics {zid}: negative race count {key}")
            counts[label] = count
        if population == 0 and any(c > 0 for c in counts.values()):
            raise ValidationError(f"demographics {zid}: race counts with zero population")
        shares = {k: v / population for k, v in sorted(counts.items())} if population > 0 else {}
        demo[zid] = (population, income, shares)

    job_totals: Dict[str, float] = {}
    for row in jobs:
        block = _row_value(row, "block_id", "block", "geoid")
        jobs_text = _row_value(row, "jobs", "total_jobs")
        if block is None or jobs_text is None:
            raise DataError("jobs row without block id or jobs count")
        try:
            count = float(jobs_text)
        except ValueError as exc:
            raise DataError(f"jobs {block}: bad count {jobs_text!r}") from exc
        if count < 0:
            raise DataError(f"jobs {block}: negative count")
        zid = block[:block_prefix_len]
        if zid not in by_id:
            stats.unknown_job_blocks += 1
            continue
        job_totals[zid] = job_totals.get(zid, 0.0) + count

    eea: Set[str] = set()
    for zid in eea_ids:
        zid = str(zid).strip()
        if not zid:
            continue
        if zid not in by_id:
            stats.unknown_eea_ids += 1
            continue
        eea.add(zid)

    out: List[Zone] = []
    for z in sorted(zones, key=lambda z: z.id):
        population, income, shares = demo.get(z.id, (0, None, {}))
        if z.id in demo:
            stats.zones_with_attributes += 1
        out.append(
            Zone(
                id=z.id,
                geometry=z.geometry,
                population=population,
                jobs=int(round(job_totals.get(z.id, 0.0))),
                median_income=income,
                race_shares=shares,
                eea=z.id in eea,
            )
        )
    return out, stats


def eea_ids_from_table(rows: Sequence[Mapping[str, str]]) -> List[str]:
    """Zone ids from an equity-area table (a ``zone_id`` column, or the first)."""
    ids: List[str] = []
    for row in rows:
        v = _row_value(row, "zone_id", "geoid", "id")
        if v is None and row:
            first_key = next(iter(row))
            v = (row[first_key] or "").strip() or None
        if v:
            ids.append(v)
    return ids


def parse_bikeshare_trips(
    text: str,
    registry: Mapping[str, Station],
    offset_hours: float,
    aliases: Optional[Mapping[str, Sequence[str]]] = None,
    delimiter: str = ",",
    max_skipped_fraction: float = MAX_SKIPPED_FRACTION,
) -> Tuple[List[RecordedTrip], TableStats]:
    """Parse a recorded docked-trip CSV.

    Column names are resolved through alias lists (configurable), timestamps
    without an offset are read in the study's local offset, and rows with
    reversed times, unknown stations, or unparsable fields are skipped and
    counted. More than ``max_skipped_fraction`` of rows skipped is an error.
    """
    alias_map = dict(TRIP_COLUMN_ALIASES)
    if aliases:
        for k, v in aliases.items():
            alias_map[k] = tuple(v)
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    if reader.fieldnames is None:
        raise DataError("trip file has no header row")
    lowered = {name.strip().lower(): name for name in reader.fieldnames if name}
    columns: Dict[str, Optional[str]] = {}
    for logical, names in alias_map.items():
        columns[logical] = next((lowered[n] for n in names if n in lowered), None)
    for required in ("start_time", "end_time", "start_station", "end_station", "vehicle_id"):
        if columns[required] is None:
            raise DataError(
                f"trip file missing a column for {required!r} "
                f"(tried aliases: {', '.join(alias_map[required])})"
            )

    stats = TableStats()
    trips: List[RecordedTrip] = []
    for row in reader:
        stats.total += 1
        try:
            start = parse_timestamp(row[columns["start_time"]].strip(), offset_hours)
            end = parse_timestamp(row[columns["end_time"]].strip(), offset_hours)
        except (ValidationError, AttributeError, KeyError):
            stats.skip("unparsable timestamp")
            continue
        if end <= start:
            stats.skip("non-positive duration")
            continue
        s_station = (row.get(columns["start_station"]) or "").strip()
        e_station = (row.get(columns["end_station"]) or "").strip()
        if s_station not in registry or e_station not in registry:
            stats.skip("unknown station")
            continue
        vid = (row.get(columns["vehicle_id"]) or "").strip()
        if not vid:
            stats.skip("missing vehicle id")
            continue
        member = None
        if columns["member_type"]:
            member = (row.get(columns["member_type"]) or "").strip() or None
        trips.append(RecordedTrip(vid, start, end, s_station, e_station, member))
        stats.kept += 1
    if stats.total > 0 and stats.n_skipped / stats.total > max_skipped_fraction:
        raise DataError(
            f"trip file: {stats.n_skipped} of {stats.total} rows skipped "
            f"({stats.n_skipped / stats.total:.1%}), above the "
            f"{max_skipped_fraction:.1%} threshold: {stats.skipped}"
        )
    trips.sort(key=lambda t: (t.start_time, t.vehicle_id, t.end_time))
    return trips, stats
