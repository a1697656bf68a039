"""Staged analysis pipeline with checksummed hand-offs between stages.

Stages run in a fixed order: ``ingest`` (validate every input), ``trips``
(infer trips, events, idle gaps), ``metrics`` (per-zone indicators and KDE
rasters), ``report`` (category tables, weighted means, difference tests).
Each stage writes a ``<stage>.manifest.json`` recording a digest of the
parameters it depended on, the checksum of every raw file it read, and the
checksum of every file it wrote. A downstream stage refuses to run when its
upstream manifest is missing, was produced under a different configuration,
or no longer matches the bytes on disk; the error says which stage to re-run.

Output bytes are deterministic for a given scenario and configuration: tables
and reports contain no timestamps or timings (those go to stderr), floats are
serialised with full round-trip precision, and every iteration is ordered.
On failure a stage removes the files it wrote during the aborted invocation,
so a half-written stage never looks complete (its manifest is written last).
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import statistics
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .config import RunConfig, params_digest
from .errors import DataError, StaleInputError, ValidationError
from .geo import SearchRadius, ZoneIndex, ascii_grid_bytes, kde_raster, zonal_mean
from .ingest import (
    RecordedTrip,
    Snapshot,
    Station,
    StationStatus,
    discover_snapshots,
    eea_ids_from_table,
    load_zones,
    attach_attributes,
    parse_bikeshare_trips,
    parse_gbfs_snapshot,
    parse_station_information,
    parse_station_status,
    read_table,
)
from .metrics import (
    INDICATORS,
    OutlierPolicy,
    ZoneMetrics,
    daily_availability,
    daily_station_availability,
    idle_aggregate,
    normalize,
    population_weighted,
    select_reference_snapshots,
    summarize_by_category,
    usage_counts,
)
from .model import (
    CategoryScheme,
    GeoPoint,
    Mode,
    Zone,
    format_utc,
    local_instant,
    parse_timestamp,
    zone_category,
)
from .stats import pairwise_tests
from .tables import (
    AVAILABILITY_INDICATORS,
    TEST_INDICATORS,
    USAGE_INDICATORS,
    category_table,
    weighted_table,
    welch_json_rows,
    welch_table,
    write_json,
    write_tsv,
)
from .tripinfer import (
    IdleInterval,
    Trip,
    TripEndEvent,
    idle_intervals,
    infer_linked_trips,
    infer_unlinked_events,
    recorded_to_trips,
)

STAGES = ("ingest", "trips", "metrics", "report")

_CATEGORY_ORDER = {
    CategoryScheme.EEA_STATUS: ("EEA", "NonEEA"),
    CategoryScheme.INCOME_BAND: ("Low", "Middle", "High"),
    CategoryScheme.RACIAL_COMPOSITION: (
        "WhiteMajority",
        "BlackMajority",
        "HispanicMajority",
        "AsianMajority",
        "NoMajority",
    ),
}

_PAIRS = {
    CategoryScheme.EEA_STATUS: (("EEA", "NonEEA"),),
    CategoryScheme.INCOME_BAND: (("Low", "Middle"), ("Low", "High"), ("Middle", "High")),
    CategoryScheme.RACIAL_COMPOSITION: (
        ("WhiteMajority", "BlackMajority"),
        ("WhiteMajority", "NoMajority"),
        ("BlackMajority", "NoMajority"),
    ),
}

_CROSS_CATEGORIES = (
    "EEA",
    "NonEEA",
    "Low",
    "Middle",
    "High",
    "WhiteMajority",
    "BlackMajority",
    "NoMajority",
)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _manifest_name(stage: str) -> str:
    return f"{stage}.manifest.json"


@dataclass
class StageResult:
    stage: str
    outputs: Dict[str, str]
    summary: dict


# --- input loading -----------------------------------------------------------


@dataclass
class LoadedInputs:
    zones: List[Zone]
    zones_by_id: Dict[str, Zone]
    index: ZoneIndex
    snapshots: Dict[str, List[Snapshot]]
    stations: Dict[str, Station]
    statuses: List[Tuple[float, List[StationStatus]]]
    recorded: List[RecordedTrip]
    file_hashes: Dict[str, str]
    summary: dict
    warnings: List[str] = field(default_factory=list)


def _relname(cfg: RunConfig, path: Path) -> str:
    try:
        return path.resolve().relative_to(cfg.root).as_posix()
    except ValueError:
        return str(path.resolve())


def _interval_stats(times: Sequence[float]) -> Dict[str, float]:
    """Distribution of gaps between consecutive snapshot instants, seconds."""
    gaps = [b - a for a, b in zip(times, times[1:])]
    return {
        "min": min(gaps),
        "median": statistics.median(gaps),
        "max": max(gaps),
    }


def load_inputs(cfg: RunConfig) -> LoadedInputs:
    """Read, checksum, and validate every configured input file."""
    hashes: Dict[str, str] = {}
    warnings: List[str] = []

    def read(path: Path, what: str) -> bytes:
        if not path.is_file():
            raise ValidationError(f"{what} not found: {path}")
        data = path.read_bytes()
        hashes[_relname(cfg, path)] = _sha256(data)
        return data

    zones = load_zones(read(cfg.zones_path, "zone geometry file"))
    demographics = read_table(read(cfg.demographics_path, "demographics table").decode("utf-8"))
    jobs = read_table(read(cfg.jobs_path, "jobs table").decode("utf-8"))
    if cfg.eea_path is not None:
        eea_ids = eea_ids_from_table(read_table(read(cfg.eea_path, "equity area table").decode("utf-8")))
    else:
        eea_ids = set()
        warnings.append("no equity area table configured; every zone treated as NonEEA")
    zones, attach_stats = attach_attributes(
        zones, demographics, jobs, eea_ids, block_prefix_len=cfg.block_prefix_len
    )

    window_start = local_instant(cfg.study.start_date, 0.0, cfg.study.timezone_offset_hours)
    window_end = local_instant(
        cfg.study.end_date + dt.timedelta(days=1), 0.0, cfg.study.timezone_offset_hours
    )

    if not cfg.snapshots_dir.is_dir():
        raise ValidationError(f"snapshot directory not found: {cfg.snapshots_dir}")
    found = discover_snapshots(cfg.snapshots_dir)
    for op in sorted(found):
        if op not in cfg.operators:
            warnings.append(f"snapshot directory for unconfigured operator {op!r} ignored")

    docked_ops = cfg.docked_operators
    if len(docked_ops) > 1:
        raise ValidationError("at most one docked operator is supported")

    snapshots: Dict[str, List[Snapshot]] = {}
    dropped_obs: Dict[str, int] = {}
    out_of_window: Dict[str, int] = {}
    for op in sorted(cfg.operators):
        kind = cfg.operators[op]
        if op not in found:
            raise ValidationError(
                f"operator {op!r} has no snapshot directory under {cfg.snapshots_dir}"
            )
        if kind in ("linked", "unlinked"):
            parsed: List[Snapshot] = []
            dropped = 0
            skipped = 0
            for taken_at, path in found[op]:
                if not window_start <= taken_at < window_end:
                    skipped += 1
                    continue
                snap, n_dropped = parse_gbfs_snapshot(read(path, f"snapshot of {op}"), op, taken_at)
                parsed.append(snap)
                dropped += n_dropped
            snapshots[op] = parsed
            dropped_obs[op] = dropped
            out_of_window[op] = skipped

    stations: Dict[str, Station] = {}
    statuses: List[Tuple[float, List[StationStatus]]] = []
    status_dropped = 0
    if docked_ops:
        op = docked_ops[0]
        info_path = cfg.snapshots_dir / op / "station_information.json"
        stations = parse_station_information(read(info_path, f"station registry of {op}"))
        skipped = 0
        for taken_at, path in found[op]:
            if not window_start <= taken_at < window_end:
                skipped += 1
                continue
            batch, n_dropped = parse_station_status(
                read(path, f"station status of {op}"), taken_at, stations
            )
            statuses.append((taken_at, batch))
            status_dropped += n_dropped
        out_of_window[op] = skipped

    recorded: List[RecordedTrip] = []
    recorded_stats = None
    recorded_out_of_window = 0
    if cfg.trips_csv_path is not None:
        if not docked_ops:
            raise ValidationError("[inputs] trips_csv is set but no operator is docked")
        text = read(cfg.trips_csv_path, "recorded trips table").decode("utf-8")
        all_recorded, recorded_stats = parse_bikeshare_trips(
            text,
            stations,
            cfg.study.timezone_offset_hours,
            max_skipped_fraction=cfg.max_skipped_fraction,
        )
        for trip in all_recorded:
            if window_start <= trip.start_time < window_end:
                recorded.append(trip)
            else:
                recorded_out_of_window += 1

    zones_by_id = {z.id: z for z in zones}
    index = ZoneIndex(zones)
    summary = {
        "zones": len(zones),
        "attach": {
            "zones_with_attributes": attach_stats.zones_with_attributes,
            "unknown_demographic_ids": attach_stats.unknown_demographic_ids,
            "unknown_job_blocks": attach_stats.unknown_job_blocks,
            "unknown_eea_ids": attach_stats.unknown_eea_ids,
        },
        "snapshots": {op: len(snaps) for op, snaps in sorted(snapshots.items())},
        "snapshot_interval_s": {
            op: _interval_stats([s.taken_at for s in snaps])
            for op, snaps in sorted(snapshots.items())
            if len(snaps) >= 2
        },
        "dropped_observations": dict(sorted(dropped_obs.items())),
        "snapshots_out_of_window": dict(sorted(out_of_window.items())),
        "stations": len(stations),
        "status_batches": len(statuses),
        "status_dropped": status_dropped,
        "recorded_trips": len(recorded),
        "recorded_out_of_window": recorded_out_of_window,
    }
    if recorded_stats is not None:
        summary["recorded_skipped"] = dict(sorted(recorded_stats.skipped.items()))
    return LoadedInputs(
        zones=zones,
        zones_by_id=zones_by_id,
        index=index,
        snapshots=snapshots,
        stations=stations,
        statuses=statuses,
        recorded=recorded,
        file_hashes=hashes,
        summary=summary,
        warnings=warnings,
    )


# --- manifests ---------------------------------------------------------------


def _write_manifest(
    out_dir: Path,
    stage: str,
    cfg: RunConfig,
    raw_inputs: Mapping[str, str],
    upstream: Mapping[str, str],
    outputs: Mapping[str, str],
    summary: dict,
) -> None:
    doc = {
        "stage": stage,
        "params": params_digest(cfg, stage),
        "inputs": {"raw": dict(sorted(raw_inputs.items())), "upstream": dict(sorted(upstream.items()))},
        "outputs": dict(sorted(outputs.items())),
        "summary": summary,
    }
    path = out_dir / _manifest_name(stage)
    path.write_bytes((json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8"))


def _require_fresh(
    cfg: RunConfig, out_dir: Path, stage: str, current_raw: Mapping[str, str]
) -> dict:
    """Load an upstream manifest and fail if anything it covers has drifted."""
    path = out_dir / _manifest_name(stage)
    if not path.is_file():
        raise StaleInputError(
            f"stage {stage!r} has not run in {out_dir}; run it before this stage"
        )
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StaleInputError(f"manifest of stage {stage!r} is unreadable: {exc}") from exc
    if doc.get("params") != params_digest(cfg, stage):
        raise StaleInputError(
            f"configuration changed since stage {stage!r} ran; re-run it"
        )
    for rel, sha in doc.get("inputs", {}).get("raw", {}).items():
        cur = current_raw.get(rel)
        if cur is None:
            p = Path(rel) if Path(rel).is_absolute() else cfg.root / rel
            if not p.is_file():
                raise StaleInputError(
                    f"input {rel} read by stage {stage!r} is missing; re-run it"
                )
            cur = _sha256(p.read_bytes())
        if cur != sha:
            raise StaleInputError(
                f"input {rel} changed since stage {stage!r} ran; re-run it"
            )
    for rel, sha in doc.get("outputs", {}).items():
        p = out_dir / rel
        if not p.is_file():
            raise StaleInputError(f"output {rel} of stage {stage!r} is missing; re-run it")
        if _sha256(p.read_bytes()) != sha:
            raise StaleInputError(
                f"output {rel} of stage {stage!r} was modified after it ran; re-run it"
            )
    return doc


class _Emitter:
    """Write stage outputs, tracking what this invocation created so a failed
    stage can clean up after itself."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.outputs: Dict[str, str] = {}
        self._created: List[Path] = []

    def emit(self, rel: str, data: bytes) -> None:
        path = self.out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self._created.append(path)
        self.outputs[rel] = _sha256(data)

    def rollback(self) -> None:
        for path in self._created:
            try:
                path.unlink()
            except OSError:
                pass


# --- canonical intermediate tables -------------------------------------------


def _csv_bytes(header: Sequence[str], rows: Sequence[Sequence[str]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _trips_csv(trips: Sequence[Trip]) -> bytes:
    rows = [
        (
            t.mode.value,
            t.operator,
            t.vehicle_id,
            format_utc(t.start_time),
            format_utc(t.end_time),
            repr(t.start_point.lon),
            repr(t.start_point.lat),
            repr(t.end_point.lon),
            repr(t.end_point.lat),
            repr(t.distance_m),
            "true" if t.linked else "false",
        )
        for t in trips
    ]
    return _csv_bytes(
        (
            "mode", "operator", "vehicle_id", "start_time", "end_time",
            "start_lon", "start_lat", "end_lon", "end_lat", "distance_m", "linked",
        ),
        rows,
    )


def _read_trips_csv(text: str) -> List[Trip]:
    out: List[Trip] = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(
            Trip(
                mode=Mode(row["mode"]),
                operator=row["operator"],
                vehicle_id=row["vehicle_id"],
                start_time=parse_timestamp(row["start_time"]),
                end_time=parse_timestamp(row["end_time"]),
                start_point=GeoPoint(float(row["start_lon"]), float(row["start_lat"])),
                end_point=GeoPoint(float(row["end_lon"]), float(row["end_lat"])),
                distance_m=float(row["distance_m"]),
                linked=row["linked"] == "true",
            )
        )
    return out


def _events_csv(events: Sequence[TripEndEvent]) -> bytes:
    rows = [
        (e.kind, e.operator, format_utc(e.time), repr(e.point.lon), repr(e.point.lat))
        for e in events
    ]
    return _csv_bytes(("kind", "operator", "time", "lon", "lat"), rows)


def _read_events_csv(text: str) -> List[TripEndEvent]:
    return [
        TripEndEvent(
            kind=row["kind"],
            operator=row["operator"],
            time=parse_timestamp(row["time"]),
            point=GeoPoint(float(row["lon"]), float(row["lat"])),
        )
        for row in csv.DictReader(io.StringIO(text))
    ]


def _idle_csv(intervals: Sequence[IdleInterval]) -> bytes:
    rows = [
        (
            iv.mode.value,
            iv.operator,
            iv.vehicle_id,
            format_utc(iv.start),
            format_utc(iv.end),
            repr(iv.location.lon),
            repr(iv.location.lat),
        )
        for iv in intervals
    ]
    return _csv_bytes(
        ("mode", "operator", "vehicle_id", "start_time", "end_time", "lon", "lat"), rows
    )


def _read_idle_csv(text: str) -> List[IdleInterval]:
    return [
        IdleInterval(
            mode=Mode(row["mode"]),
            operator=row["operator"],
            vehicle_id=row["vehicle_id"],
            start=parse_timestamp(row["start_time"]),
            end=parse_timestamp(row["end_time"]),
            location=GeoPoint(float(row["lon"]), float(row["lat"])),
        )
        for row in csv.DictReader(io.StringIO(text))
    ]


# --- stages ------------------------------------------------------------------


def stage_ingest(cfg: RunConfig, out_dir: Optional[Path] = None) -> StageResult:
    """Validate every input and record its checksum; writes no data files."""
    out_dir = Path(out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = load_inputs(cfg)
    summary = {**loaded.summary, "warnings": loaded.warnings}
    _write_manifest(out_dir, "ingest", cfg, loaded.file_hashes, {}, {}, summary)
    return StageResult("ingest", {}, summary)


def stage_trips(cfg: RunConfig, out_dir: Optional[Path] = None) -> StageResult:
    """Infer trips, loose events, and idle gaps; write the canonical tables."""
    out_dir = Path(out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = load_inputs(cfg)
    ingest_doc = _require_fresh(cfg, out_dir, "ingest", loaded.file_hashes)

    trips: List[Trip] = []
    events: List[TripEndEvent] = []
    idle: List[IdleInterval] = []
    per_op: Dict[str, dict] = {}

    for op in cfg.operators_of_kind("linked"):
        op_trips, stats = infer_linked_trips(loaded.snapshots[op], cfg.rules, Mode.SCOOTER)
        ivs, anomalies = idle_intervals(op_trips)
        trips.extend(op_trips)
        idle.extend(ivs)
        per_op[op] = {
            "kind": "linked",
            "candidates": stats.candidates,
            "kept": stats.kept,
            "rejected": dict(sorted(stats.rejected.items())),
            "unmatched_end": stats.unmatched_end,
            "idle_intervals": len(ivs),
            "idle_anomalies": anomalies,
        }
    for op in cfg.operators_of_kind("unlinked"):
        op_events, stats = infer_unlinked_events(loaded.snapshots[op], cfg.rules.jitter_m)
        events.extend(op_events)
        per_op[op] = {
            "kind": "unlinked",
            "events": len(op_events),
            "origins": sum(1 for e in op_events if e.kind == "Origin"),
            "destinations": sum(1 for e in op_events if e.kind == "Destination"),
        }
    for op in cfg.docked_operators:
        op_trips, stats = recorded_to_trips(loaded.recorded, loaded.stations, cfg.rules, operator=op)
        ivs, anomalies = idle_intervals(op_trips)
        trips.extend(op_trips)
        idle.extend(ivs)
        per_op[op] = {
            "kind": "docked",
            "candidates": stats.candidates,
            "kept": stats.kept,
            "rejected": dict(sorted(stats.rejected.items())),
            "idle_intervals": len(ivs),
            "idle_anomalies": anomalies,
        }

    trips.sort(key=lambda t: (t.mode.value, t.operator, t.start_time, t.vehicle_id, t.end_time))
    events.sort(key=lambda e: (e.operator, e.time, e.kind, e.point.lon, e.point.lat))
    idle.sort(key=lambda iv: (iv.mode.value, iv.operator, iv.vehicle_id, iv.start))

    emitter = _Emitter(out_dir)
    try:
        emitter.emit("trips.csv", _trips_csv(trips))
        emitter.emit("events.csv", _events_csv(events))
        emitter.emit("idle.csv", _idle_csv(idle))
        summary = {
            "operators": per_op,
            "trips": len(trips),
            "events": len(events),
            "idle_intervals": len(idle),
        }
        _write_manifest(
            out_dir, "trips", cfg, loaded.file_hashes,
            {"ingest": ingest_doc["params"]}, emitter.outputs, summary,
        )
    except BaseException:
        emitter.rollback()
        raise
    return StageResult("trips", emitter.outputs, summary)


def _usable_reference_days(
    cfg: RunConfig,
    per_op_ref: Mapping[str, Mapping[dt.date, Snapshot]],
    mode: str,
) -> List[dt.date]:
    usable = [
        d for d in cfg.study.days
        if all(d in per_op_ref[op] for op in per_op_ref)
    ]
    if not usable:
        raise DataError(
            f"{mode} availability: no study day has a snapshot from every operator "
            f"within {cfg.study.reference_window_min:g} minutes of the reference hour"
        )
    return usable


def _scooter_metrics(
    cfg: RunConfig,
    loaded: LoadedInputs,
    trips: Sequence[Trip],
    events: Sequence[TripEndEvent],
    idle: Sequence[IdleInterval],
    emitter: _Emitter,
) -> Tuple[List[ZoneMetrics], dict]:
    ops = cfg.scooter_operators
    per_op_ref = {
        op: select_reference_snapshots(
            loaded.snapshots[op],
            cfg.study.days,
            cfg.study.timezone_offset_hours,
            cfg.study.reference_hour,
            cfg.study.reference_window_min,
        )
        for op in ops
    }
    usable = _usable_reference_days(cfg, per_op_ref, "scooter")
    day_points: Dict[dt.date, List[GeoPoint]] = {
        d: [o.point for op in ops for o in per_op_ref[op][d].observations] for d in usable
    }
    avail, dropped_points = daily_availability(day_points, loaded.index)

    radius = SearchRadius(cfg.scooter_radius_m)
    extent = loaded.index.extent(pad=radius.meters)
    pooled = [p for d in usable for p in day_points[d]]
    raster = kde_raster(
        pooled, radius, cfg.cell_size_m, extent, loaded.index.ref,
        point_weight=1.0 / len(usable),
    )
    emitter.emit("kde_scooter.asc", _ascii_grid_bytes(raster))
    kde_by_zone = {zid: zonal_mean(raster, loaded.index.rings(zid)) for zid in loaded.index.ids}

    sc_trips = [t for t in trips if t.mode is Mode.SCOOTER]
    counts, dropped_weight = usage_counts(sc_trips, events, loaded.index, cfg.usage_weighting)
    idle_by_zone, idle_dropped = idle_aggregate(
        [iv for iv in idle if iv.mode is Mode.SCOOTER], loaded.index
    )

    rows = _assemble_rows(cfg, loaded, Mode.SCOOTER, avail, kde_by_zone, counts, idle_by_zone)
    summary = {
        "usable_days": [d.isoformat() for d in usable],
        "skipped_days": len(cfg.study.days) - len(usable),
        "reference_points": len(pooled),
        "availability_dropped_points": dropped_points,
        "usage_total": sum(counts.values()),
        "usage_dropped_weight": dropped_weight,
        "idle_intervals_outside_zones": idle_dropped,
        "kde_raster_mass": raster.total_mass(),
    }
    return rows, summary


def _bike_metrics(
    cfg: RunConfig,
    loaded: LoadedInputs,
    trips: Sequence[Trip],
    idle: Sequence[IdleInterval],
    emitter: _Emitter,
) -> Tuple[List[ZoneMetrics], dict]:
    batches = sorted(loaded.statuses, key=lambda pair: pair[0])
    day_statuses: Dict[dt.date, List[StationStatus]] = {}
    window_s = cfg.study.reference_window_min * 60.0
    for day in cfg.study.days:
        target = local_instant(day, cfg.study.reference_hour, cfg.study.timezone_offset_hours)
        best = None
        best_gap = window_s
        for taken_at, batch in batches:
            gap = abs(taken_at - target)
            if gap < best_gap or (gap == best_gap and best is not None and taken_at < best[0]):
                best = (taken_at, batch)
                best_gap = gap
        if best is not None:
            day_statuses[day] = best[1]
    if not day_statuses:
        raise DataError(
            "bike availability: no study day has a station status batch within "
            f"{cfg.study.reference_window_min:g} minutes of the reference hour"
        )
    avail, dropped_stations = daily_station_availability(day_statuses, loaded.stations, loaded.index)

    n_days = len(day_statuses)
    mean_count: Dict[str, float] = {sid: 0.0 for sid in loaded.stations}
    for day in day_statuses:
        for status in day_statuses[day]:
            if status.station_id in mean_count:
                mean_count[status.station_id] += status.bikes_available / n_days
    sids = sorted(loaded.stations)
    points = [loaded.stations[sid].point for sid in sids]
    weights = [mean_count[sid] for sid in sids]
    radius = SearchRadius(cfg.bike_radius_m)
    extent = loaded.index.extent(pad=radius.meters)
    raster = kde_raster(
        points, radius, cfg.cell_size_m, extent, loaded.index.ref, weights=weights
    )
    emitter.emit("kde_bike.asc", _ascii_grid_bytes(raster))
    kde_by_zone = {zid: zonal_mean(raster, loaded.index.rings(zid)) for zid in loaded.index.ids}

    bike_trips = [t for t in trips if t.mode is Mode.BIKE]
    counts, dropped_weight = usage_counts(bike_trips, [], loaded.index, cfg.usage_weighting)
    idle_by_zone, idle_dropped = idle_aggregate(
        [iv for iv in idle if iv.mode is Mode.BIKE], loaded.index
    )

    rows = _assemble_rows(cfg, loaded, Mode.BIKE, avail, kde_by_zone, counts, idle_by_zone)
    summary = {
        "usable_days": sorted(d.isoformat() for d in day_statuses),
        "skipped_days": len(cfg.study.days) - n_days,
        "availability_dropped_stations": dropped_stations,
        "usage_total": sum(counts.values()),
        "usage_dropped_weight": dropped_weight,
        "idle_intervals_outside_zones": idle_dropped,
        "kde_raster_mass": raster.total_mass(),
    }
    return rows, summary


def _ascii_grid_bytes(raster) -> bytes:
    return ascii_grid_bytes(raster)


def _assemble_rows(
    cfg: RunConfig,
    loaded: LoadedInputs,
    mode: Mode,
    avail: Mapping[str, float],
    kde_by_zone: Mapping[str, float],
    counts: Mapping[str, float],
    idle_by_zone: Mapping[str, Tuple[float, float]],
) -> List[ZoneMetrics]:
    rows: List[ZoneMetrics] = []
    for zid in loaded.index.ids:
        zone = loaded.zones_by_id[zid]
        a = avail.get(zid, 0.0)
        a_res, a_res_job = normalize(a, zone.population, zone.jobs, cfg.min_population)
        t = counts.get(zid, 0.0)
        t_res, t_res_job = normalize(t, zone.population, zone.jobs, cfg.min_population)
        idle_pair = idle_by_zone.get(zid)
        rows.append(
            ZoneMetrics(
                zone_id=zid,
                mode=mode,
                avail=a,
                avail_per_resident=a_res,
                avail_per_resident_job=a_res_job,
                kde=kde_by_zone.get(zid),
                trips=t,
                trips_per_resident=t_res,
                trips_per_resident_job=t_res_job,
                idle_mean_h=idle_pair[0] if idle_pair else None,
                idle_median_h=idle_pair[1] if idle_pair else None,
            )
        )
    return rows


def _zone_metrics_json(cfg: RunConfig, loaded: LoadedInputs, rows: Sequence[ZoneMetrics]) -> bytes:
    out = []
    for zm in rows:
        zone = loaded.zones_by_id[zm.zone_id]
        row = {
            "mode": zm.mode.value,
            "zone_id": zm.zone_id,
            "eea_status": zone_category(zone, CategoryScheme.EEA_STATUS, cfg.thresholds),
            "income_band": zone_category(zone, CategoryScheme.INCOME_BAND, cfg.thresholds),
            "racial_composition": zone_category(
                zone, CategoryScheme.RACIAL_COMPOSITION, cfg.thresholds
            ),
            "population": zone.population,
            "jobs": zone.jobs,
        }
        for ind in INDICATORS:
            row[ind] = zm.get(ind)
        out.append(row)
    return (json.dumps({"rows": out}, sort_keys=True, indent=1) + "\n").encode("utf-8")


def _zone_metrics_csv(cfg: RunConfig, loaded: LoadedInputs, rows: Sequence[ZoneMetrics]) -> bytes:
    header = [
        "mode", "zone_id", "eea_status", "income_band", "racial_composition",
        "population", "jobs", *INDICATORS,
    ]
    table_rows = []
    for zm in rows:
        zone = loaded.zones_by_id[zm.zone_id]
        cells = [
            zm.mode.value,
            zm.zone_id,
            zone_category(zone, CategoryScheme.EEA_STATUS, cfg.thresholds),
            zone_category(zone, CategoryScheme.INCOME_BAND, cfg.thresholds),
            zone_category(zone, CategoryScheme.RACIAL_COMPOSITION, cfg.thresholds),
            str(zone.population),
            str(zone.jobs),
        ]
        for ind in INDICATORS:
            v = zm.get(ind)
            cells.append("" if v is None else repr(v))
        table_rows.append(cells)
    return _csv_bytes(header, table_rows)


def stage_metrics(cfg: RunConfig, out_dir: Optional[Path] = None) -> StageResult:
    """Compute per-zone indicators and KDE rasters for every present mode."""
    out_dir = Path(out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = load_inputs(cfg)
    _require_fresh(cfg, out_dir, "ingest", loaded.file_hashes)
    trips_doc = _require_fresh(cfg, out_dir, "trips", loaded.file_hashes)

    trips = _read_trips_csv((out_dir / "trips.csv").read_text(encoding="utf-8"))
    events = _read_events_csv((out_dir / "events.csv").read_text(encoding="utf-8"))
    idle = _read_idle_csv((out_dir / "idle.csv").read_text(encoding="utf-8"))

    emitter = _Emitter(out_dir)
    try:
        all_rows: List[ZoneMetrics] = []
        summary: dict = {"modes": []}
        if cfg.scooter_operators:
            rows, sc_summary = _scooter_metrics(cfg, loaded, trips, events, idle, emitter)
            all_rows.extend(rows)
            summary["modes"].append(Mode.SCOOTER.value)
            summary["scooter"] = sc_summary
        if cfg.docked_operators:
            rows, bk_summary = _bike_metrics(cfg, loaded, trips, idle, emitter)
            all_rows.extend(rows)
            summary["modes"].append(Mode.BIKE.value)
            summary["bike"] = bk_summary
        if not all_rows:
            raise ValidationError("no operators produce any mode; nothing to compute")
        emitter.emit("zone_metrics.csv", _zone_metrics_csv(cfg, loaded, all_rows))
        emitter.emit("zone_metrics.json", _zone_metrics_json(cfg, loaded, all_rows))
        _write_manifest(
            out_dir, "metrics", cfg, loaded.file_hashes,
            {"ingest": params_digest(cfg, "ingest"), "trips": trips_doc["params"]},
            emitter.outputs, summary,
        )
    except BaseException:
        emitter.rollback()
        raise
    return StageResult("metrics", emitter.outputs, summary)


def _metrics_rows_from_json(doc: dict) -> Dict[str, List[ZoneMetrics]]:
    by_mode: Dict[str, List[ZoneMetrics]] = {}
    for row in doc["rows"]:
        zm = ZoneMetrics(
            zone_id=row["zone_id"],
            mode=Mode(row["mode"]),
            **{ind: row[ind] for ind in INDICATORS},
        )
        by_mode.setdefault(zm.mode.value, []).append(zm)
    return by_mode


def _welch_samples(
    cfg: RunConfig,
    loaded: LoadedInputs,
    rows: Sequence[ZoneMetrics],
    scheme: CategoryScheme,
    policy: OutlierPolicy,
) -> Dict[str, Dict[str, List[float]]]:
    samples: Dict[str, Dict[str, List[float]]] = {}
    for zm in rows:
        if policy.excludes(zm.zone_id):
            continue
        label = zone_category(loaded.zones_by_id[zm.zone_id], scheme, cfg.thresholds)
        bucket = samples.setdefault(label, {})
        for ind in TEST_INDICATORS:
            v = zm.get(ind)
            if v is not None:
                bucket.setdefault(ind, []).append(v)
    return samples


def stage_report(cfg: RunConfig, out_dir: Optional[Path] = None) -> StageResult:
    """Aggregate zone metrics into the published tables and the run report."""
    out_dir = Path(out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = load_inputs(cfg)
    ingest_doc = _require_fresh(cfg, out_dir, "ingest", loaded.file_hashes)
    trips_doc = _require_fresh(cfg, out_dir, "trips", loaded.file_hashes)
    metrics_doc = _require_fresh(cfg, out_dir, "metrics", loaded.file_hashes)

    metrics_json = json.loads((out_dir / "zone_metrics.json").read_text(encoding="utf-8"))
    by_mode = _metrics_rows_from_json(metrics_json)
    policy = OutlierPolicy(frozenset(cfg.exclude_zones), cfg.min_population)

    emitter = _Emitter(out_dir)
    try:
        table_files: List[str] = []

        def emit_table(table, base: str) -> None:
            write_tsv_to = out_dir / f"{base}.tsv"
            write_json_to = out_dir / f"{base}.json"
            write_tsv(table, write_tsv_to)
            emitter._created.append(write_tsv_to)
            emitter.outputs[f"{base}.tsv"] = _sha256(write_tsv_to.read_bytes())
            write_json(table, write_json_to)
            emitter._created.append(write_json_to)
            emitter.outputs[f"{base}.json"] = _sha256(write_json_to.read_bytes())
            table_files.extend([f"{base}.tsv", f"{base}.json"])

        welch_rows: List[dict] = []
        weighted_entries: Dict[str, Dict[str, Dict[str, Optional[float]]]] = {}
        for mode in sorted(by_mode):
            rows = by_mode[mode]
            summaries = [
                summarize_by_category(
                    rows, loaded.zones_by_id, scheme, policy, cfg.thresholds,
                    category_order=_CATEGORY_ORDER[scheme],
                )
                for scheme in CategoryScheme
            ]
            emit_table(
                category_table(mode, summaries, AVAILABILITY_INDICATORS, "availability"),
                f"table_availability_{mode}",
            )
            emit_table(
                category_table(mode, summaries, USAGE_INDICATORS, "usage"),
                f"table_usage_{mode}",
            )
            weighted_entries[mode] = population_weighted(
                rows, loaded.zones_by_id, policy, cfg.thresholds
            )
            for scheme in CategoryScheme:
                samples = _welch_samples(cfg, loaded, rows, scheme, policy)
                for row in pairwise_tests(
                    samples, _PAIRS[scheme], TEST_INDICATORS, cfg.alpha, cfg.bonferroni
                ):
                    welch_rows.append({"mode": mode, **row})

        if "scooter" in by_mode and "bike" in by_mode:
            cross_samples: Dict[str, Dict[str, List[float]]] = {}
            cross_pairs: List[Tuple[str, str]] = []
            for scheme in CategoryScheme:
                sc = _welch_samples(cfg, loaded, by_mode["scooter"], scheme, policy)
                bk = _welch_samples(cfg, loaded, by_mode["bike"], scheme, policy)
                for cat in _CROSS_CATEGORIES:
                    if cat in sc or cat in bk:
                        a = f"{cat} (scooter)"
                        b = f"{cat} (bike)"
                        if a in cross_samples:
                            continue
                        cross_samples[a] = sc.get(cat, {})
                        cross_samples[b] = bk.get(cat, {})
                        cross_pairs.append((a, b))
            for row in pairwise_tests(
                cross_samples, cross_pairs, TEST_INDICATORS, cfg.alpha, cfg.bonferroni
            ):
                welch_rows.append({"mode": "scooter-vs-bike", **row})

        emit_table(weighted_table(weighted_entries), "table_weighted")
        emit_table(welch_table(welch_rows), "table_welch")
        welch_struct = welch_json_rows(welch_rows)

        report = {
            "alpha": cfg.alpha,
            "bonferroni": cfg.bonferroni,
            "modes": sorted(by_mode),
            "operators": dict(sorted(cfg.operators.items())),
            "study": {
                "start_date": cfg.study.start_date.isoformat(),
                "end_date": cfg.study.end_date.isoformat(),
                "timezone_offset_hours": cfg.study.timezone_offset_hours,
                "reference_hour": cfg.study.reference_hour,
                "reference_window_min": cfg.study.reference_window_min,
            },
            "parameters": {
                "income_low_max": cfg.thresholds.low_max,
                "income_high_min": cfg.thresholds.high_min,
                "min_duration_min": cfg.rules.min_duration_min,
                "max_duration_min": cfg.rules.max_duration_min,
                "jitter_m": cfg.rules.jitter_m,
                "max_speed_kmh": cfg.rules.max_speed_kmh,
                "cell_size_m": cfg.cell_size_m,
                "scooter_radius_m": cfg.scooter_radius_m,
                "bike_radius_m": cfg.bike_radius_m,
                "usage_weighting": cfg.usage_weighting,
                "min_population": cfg.min_population,
                "exclude_zones": list(cfg.exclude_zones),
                "block_prefix_len": cfg.block_prefix_len,
            },
            "counts": {
                "ingest": ingest_doc["summary"],
                "trips": trips_doc["summary"],
                "metrics": metrics_doc["summary"],
            },
            "warnings": loaded.warnings,
            "tests": welch_struct,
            "tables": sorted(table_files),
        }
        emitter.emit(
            "run_report.json",
            (json.dumps(report, sort_keys=True, indent=1) + "\n").encode("utf-8"),
        )
        summary = {
            "tables": sorted(table_files),
            "tests": len(welch_struct),
            "modes": sorted(by_mode),
        }
        _write_manifest(
            out_dir, "report", cfg, loaded.file_hashes,
            {"metrics": metrics_doc["params"]}, emitter.outputs, summary,
        )
    except BaseException:
        emitter.rollback()
        raise
    return StageResult("report", emitter.outputs, summary)


STAGE_FUNCS: Dict[str, Callable[[RunConfig, Optional[Path]], StageResult]] = {
    "ingest": stage_ingest,
    "trips": stage_trips,
    "metrics": stage_metrics,
    "report": stage_report,
}


def run_pipeline(
    cfg: RunConfig,
    stages: Optional[Sequence[str]] = None,
    out_dir: Optional[Path] = None,
    echo: bool = True,
) -> List[StageResult]:
    """Run the requested stages (default: all four) in canonical order.

    Per-stage wall time goes to stderr so the output files stay byte-stable.
    """
    wanted = list(stages) if stages else list(STAGES)
    for stage in wanted:
        if stage not in STAGES:
            raise ValidationError(f"unknown pipeline stage {stage!r}")
    ordered = [s for s in STAGES if s in wanted]
    results = []
    for stage in ordered:
        t0 = time.perf_counter()
        results.append(STAGE_FUNCS[stage](cfg, out_dir))
        if echo:
            print(f"[{stage}] finished in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return results
