import json

import pytest

from microequity.errors import DataError, ValidationError
from microequity.ingest import (
    Station,
    attach_attributes,
    discover_snapshots,
    eea_ids_from_table,
    load_zones,
    parse_bikeshare_trips,
    parse_gbfs_snapshot,
    parse_station_information,
    parse_station_status,
    read_table,
    serialize_gbfs_snapshot,
    serialize_station_information,
    serialize_station_status,
)
from microequity.model import GeoPoint, parse_timestamp
from conftest import square_zone


def gbfs_bytes(bikes):
    return json.dumps({"last_updated": 0, "data": {"bikes": bikes}}).encode()


def feature(zid, coords, gtype="Polygon", id_in_properties=False):
    f = {"type": "Feature", "geometry": {"type": gtype, "coordinates": coords}, "properties": {}}
    if id_in_properties:
        f["properties"]["id"] = zid
    else:
        f["id"] = zid
    return f


def collection(*features):
    return json.dumps({"type": "FeatureCollection", "features": list(features)}).encode()


SQUARE = [[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]]


# --- GBFS snapshots ---------------------------------------------------------


def test_gbfs_parse_and_round_trip():
    raw = gbfs_bytes([
        {"bike_id": "b2", "lat": 38.9, "lon": -77.0},
        {"bike_id": "b1", "lat": 38.8, "lon": -77.1},
    ])
    snap, dropped = parse_gbfs_snapshot(raw, "op", 100.0)
    assert dropped == 0
    assert [o.vehicle_id for o in snap.observations] == ["b1", "b2"]
    assert snap.observations[0].point == GeoPoint(-77.1, 38.8)
    assert snap.observations[0].observed_at == 100.0
    again, dropped2 = parse_gbfs_snapshot(serialize_gbfs_snapshot(snap), "op", 100.0)
    assert dropped2 == 0
    assert again == snap


def test_gbfs_drops_unusable_entries():
    raw = gbfs_bytes([
        {"bike_id": "ok", "lat": 38.9, "lon": -77.0},
        {"bike_id": "", "lat": 38.9, "lon": -77.0},
        {"lat": 38.9, "lon": -77.0},
        {"bike_id": "no-lat", "lon": -77.0},
        {"bike_id": "bool-lat", "lat": True, "lon": -77.0},
        {"bike_id": "text-lat", "lat": "38.9", "lon": -77.0},
        "not-a-dict",
    ])
    snap, dropped = parse_gbfs_snapshot(raw, "op", 0.0)
    assert [o.vehicle_id for o in snap.observations] == ["ok"]
    assert dropped == 6


def test_gbfs_duplicate_id_is_error():
    raw = gbfs_bytes([
        {"bike_id": "b", "lat": 38.9, "lon": -77.0},
        {"bike_id": "b", "lat": 38.8, "lon": -77.1},
    ])
    with pytest.raises(DataError, match="duplicate vehicle id"):
        parse_gbfs_snapshot(raw, "op", 0.0)


def test_gbfs_malformed_json_reports_byte_offset():
    with pytest.raises(DataError, match="byte offset"):
        parse_gbfs_snapshot(b'{"data": {"bikes": [}}', "op", 0.0)
    with pytest.raises(DataError, match="missing data.bikes"):
        parse_gbfs_snapshot(b'{"data": {}}', "op", 0.0)
    with pytest.raises(DataError, match="top-level"):
        parse_gbfs_snapshot(b"[1, 2]", "op", 0.0)


# --- snapshot discovery -----------------------------------------------------


def test_discover_snapshots(tmp_path):
    op = tmp_path / "snaps" / "looper"
    op.mkdir(parents=True)
    (op / "2024-06-03T06-00-00Z.json").write_bytes(gbfs_bytes([]))
    (op / "2024-06-03T05-45-00Z.json").write_bytes(gbfs_bytes([]))
    (op / "station_information.json").write_bytes(b"{}")
    (op / "notes.txt").write_text("ignored")
    (tmp_path / "snaps" / "empty-op").mkdir()
    found = discover_snapshots(tmp_path / "snaps")
    assert list(found) == ["looper"]
    times = [t for t, _ in found["looper"]]
    assert times == sorted(times)
    assert times[0] == parse_timestamp("2024-06-03T05:45:00Z")


def test_discover_rejects_bad_names_and_duplicates(tmp_path):
    op = tmp_path / "s" / "op"
    op.mkdir(parents=True)
    (op / "latest.json").write_bytes(b"{}")
    with pytest.raises(DataError, match="not a timestamp"):
        discover_snapshots(tmp_path / "s")
    (op / "latest.json").unlink()
    # distinct names, same instant
    (op / "2024-06-03T06-00-00Z.json").write_bytes(b"{}")
    (op / "2024-06-03T02-00-00-0400.json").write_bytes(b"{}")
    with pytest.raises(DataError, match="duplicate snapshot timestamp"):
        discover_snapshots(tmp_path / "s")
    with pytest.raises(ValidationError, match="not found"):
        discover_snapshots(tmp_path / "missing")


# --- zone loading -----------------------------------------------------------


def test_load_zones_polygon_and_multipolygon():
    second = [[[2.0, 0.0], [3.0, 0.0], [3.0, 1.0], [2.0, 1.0], [2.0, 0.0]]]
    raw = collection(
        feature("zb", SQUARE),
        feature("za", [SQUARE, second], gtype="MultiPolygon", id_in_properties=True),
    )
    zones = load_zones(raw)
    assert [z.id for z in zones] == ["za", "zb"]
    assert len(zones[0].geometry) == 2
    assert zones[1].geometry[0][0][0] == GeoPoint(0.0, 0.0)
    assert zones[1].population == 0 and zones[1].median_income is None


def test_load_zones_autocloses_tiny_gap():
    open_ring = [[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1e-10, 0.0]]]
    zones = load_zones(collection(feature("z", open_ring)))
    ring = zones[0].geometry[0][0]
    assert ring[0] == ring[-1] == GeoPoint(0.0, 0.0)


def test_load_zones_rejects_open_ring():
    open_ring = [[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.001, 0.0]]]
    with pytest.raises(DataError, match="not closed"):
        load_zones(collection(feature("z", open_ring)))


def test_load_zones_rejects_bowtie():
    bowtie = [[[0.0, 0.0], [3.0, 1.0], [3.0, 0.0], [0.0, 2.0], [0.0, 0.0]]]
    with pytest.raises(DataError, match="self-intersecting"):
        load_zones(collection(feature("z", bowtie)))


def test_load_zones_rejects_degenerate_rings():
    zero_area = [[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 0.0], [0.0, 0.0]]]
    with pytest.raises(DataError, match="zero-area"):
        load_zones(collection(feature("z", zero_area)))
    short = [[[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]]
    with pytest.raises(DataError, match="fewer than 4"):
        load_zones(collection(feature("z", short)))


def test_load_zones_rejects_duplicates_and_bad_types():
    with pytest.raises(DataError, match="duplicate zone id"):
        load_zones(collection(feature("z", SQUARE), feature("z", SQUARE)))
    with pytest.raises(DataError, match="unsupported geometry"):
        load_zones(collection(feature("z", [[0.0, 0.0]], gtype="Point")))
    with pytest.raises(DataError, match="without an id"):
        load_zones(collection({"type": "Feature", "geometry": {"type": "Polygon",
                                                               "coordinates": SQUARE}}))
    with pytest.raises(DataError, match="no features"):
        load_zones(collection())


# --- attribute tables -------------------------------------------------------


def demo_rows(text):
    return read_table(text)


def test_attach_attributes_joins_everything():
    zones = [square_zone("z1"), square_zone("z2", west_m=600.0)]
    demographics = demo_rows(
        "zone_id,population,median_income,race_white,race_black\n"
        "z1,1000,52000,600,300\n"
        "zX,50,10000,,\n"
    )
    jobs = demo_rows(
        "block_id,jobs\n"
        "z1XXXXXXXXXXextra,40\n"   # truncates to 12 chars -> z1XXXXXXXXXX (no match)
        "z1,60\n"
        "z1,15\n"
        "zQ,5\n"
    )
    out, stats = attach_attributes(zones, demographics, jobs, eea_ids=["z2", "zY"],
                                   block_prefix_len=12)
    byid = {z.id: z for z in out}
    assert byid["z1"].population == 1000
    assert byid["z1"].median_income == 52000.0
    assert byid["z1"].race_shares == {"black": 0.3, "white": 0.6}
    assert byid["z1"].jobs == 75
    assert byid["z1"].eea is False
    assert byid["z2"].population == 0 and byid["z2"].median_income is None
    assert byid["z2"].eea is True
    assert stats.zones_with_attributes == 1
    assert stats.unknown_demographic_ids == 1
    assert stats.unknown_job_blocks == 2
    assert stats.unknown_eea_ids == 1


def test_attach_attributes_block_prefix_aggregation():
    zones = [square_zone("110010001001")]
    jobs = demo_rows(
        "block_id,jobs\n"
        "110010001001001,7\n"
        "110010001001002,5\n"
        "110010009999001,3\n"
    )
    out, stats = attach_attributes(zones, [], jobs, block_prefix_len=12)
    assert out[0].jobs == 12
    assert stats.unknown_job_blocks == 1


def test_attach_attributes_errors():
    zones = [square_zone("z1")]
    with pytest.raises(DataError, match="duplicate zone id"):
        attach_attributes(zones, demo_rows("zone_id,population\nz1,5\nz1,6\n"))
    with pytest.raises(DataError, match="bad population"):
        attach_attributes(zones, demo_rows("zone_id,population\nz1,many\n"))
    with pytest.raises(DataError, match="negative population"):
        attach_attributes(zones, demo_rows("zone_id,population\nz1,-4\n"))
    with pytest.raises(DataError, match="bad race count"):
        attach_attributes(zones, demo_rows("zone_id,population,race_white\nz1,10,x\n"))
    with pytest.raises(ValidationError, match="zero population"):
        attach_attributes(zones, demo_rows("zone_id,population,race_white\nz1,0,10\n"))
    with pytest.raises(DataError, match="without a zone id"):
        attach_attributes(zones, demo_rows("population\n10\n"))


def test_eea_ids_from_table():
    assert eea_ids_from_table(demo_rows("zone_id,name\nz1,a\nz2,b\n")) == ["z1", "z2"]
    assert eea_ids_from_table(demo_rows("tract\nz9\n\n")) == ["z9"]


# --- recorded trips ---------------------------------------------------------


REGISTRY = {
    "31000": Station("31000", GeoPoint(-77.0, 38.9)),
    "31001": Station("31001", GeoPoint(-77.01, 38.91)),
}


def test_parse_bikeshare_trips_with_capital_bikeshare_headers():
    text = (
        "Start date,End date,Start station number,End station number,Bike number,Member type\n"
        "2024-06-03 08:00:00,2024-06-03 08:20:00,31000,31001,W123,Member\n"
        "2024-06-03 09:00:00,2024-06-03 09:10:00,31001,31000,W124,Casual\n"
    )
    trips, stats = parse_bikeshare_trips(text, REGISTRY, offset_hours=-4.0)
    assert stats.total == 2 and stats.kept == 2 and stats.n_skipped == 0
    assert trips[0].vehicle_id == "W123"
    assert trips[0].start_time == parse_timestamp("2024-06-03T08:00:00-04:00")
    assert trips[0].member_type == "Member"


def test_parse_bikeshare_trips_skip_reasons():
    text = (
        "started_at,ended_at,start_station_id,end_station_id,bike_id\n"
        "2024-06-03 08:00:00,2024-06-03 08:20:00,31000,31001,ok\n"
        "yesterday,2024-06-03 08:20:00,31000,31001,b\n"
        "2024-06-03 08:00:00,2024-06-03 07:00:00,31000,31001,b\n"
        "2024-06-03 08:00:00,2024-06-03 08:20:00,99999,31001,b\n"
        "2024-06-03 08:00:00,2024-06-03 08:20:00,31000,31001,\n"
    )
    trips, stats = parse_bikeshare_trips(text, REGISTRY, offset_hours=-4.0,
                                         max_skipped_fraction=0.9)
    assert [t.vehicle_id for t in trips] == ["ok"]
    assert stats.skipped == {
        "unparsable timestamp": 1,
        "non-positive duration": 1,
        "unknown station": 1,
        "missing vehicle id": 1,
    }


def test_parse_bikeshare_trips_skip_budget():
    rows = ["started_at,ended_at,start_station_id,end_station_id,bike_id"]
    rows += ["2024-06-03 08:00:00,2024-06-03 08:20:00,31000,31001,b%d" % i for i in range(18)]
    rows += ["bad,2024-06-03 08:20:00,31000,31001,x", "bad,2024-06-03 08:20:00,31000,31001,y"]
    text = "\n".join(rows) + "\n"
    with pytest.raises(DataError, match="above the"):
        parse_bikeshare_trips(text, REGISTRY, offset_hours=-4.0, max_skipped_fraction=0.05)
    trips, stats = parse_bikeshare_trips(text, REGISTRY, offset_hours=-4.0,
                                         max_skipped_fraction=0.10)
    assert stats.kept == 18 and stats.n_skipped == 2


def test_parse_bikeshare_trips_custom_aliases_and_missing_column():
    text = "t0,t1,from,to,unit\n2024-06-03 08:00:00,2024-06-03 08:30:00,31000,31001,v1\n"
    aliases = {
        "start_time": ("t0",), "end_time": ("t1",),
        "start_station": ("from",), "end_station": ("to",), "vehicle_id": ("unit",),
    }
    trips, _ = parse_bikeshare_trips(text, REGISTRY, offset_hours=0.0, aliases=aliases)
    assert trips[0].start_station == "31000"
    with pytest.raises(DataError, match="missing a column"):
        parse_bikeshare_trips(text, REGISTRY, offset_hours=0.0)


# --- stations ---------------------------------------------------------------


def test_station_information_round_trip():
    raw = serialize_station_information(REGISTRY)
    again = parse_station_information(raw)
    assert again == REGISTRY
    with pytest.raises(DataError, match="duplicate station id"):
        parse_station_information(json.dumps(
            {"data": {"stations": [
                {"station_id": "a", "lat": 1.0, "lon": 2.0},
                {"station_id": "a", "lat": 1.0, "lon": 2.0},
            ]}}
        ).encode())
    with pytest.raises(DataError, match="missing coordinates"):
        parse_station_information(json.dumps(
            {"data": {"stations": [{"station_id": "a", "lat": 1.0}]}}
        ).encode())


def test_station_status_parse_and_drops():
    raw = json.dumps({"data": {"stations": [
        {"station_id": "31001", "num_bikes_available": 4},
        {"station_id": "31000", "num_bikes_available": 0},
        {"station_id": "nope", "num_bikes_available": 2},
        {"station_id": "31000", "num_bikes_available": -1},
        {"station_id": "31000", "num_bikes_available": 1.5},
        {"station_id": "31000", "num_bikes_available": True},
    ]}}).encode()
    statuses, dropped = parse_station_status(raw, 50.0, REGISTRY)
    assert [(s.station_id, s.bikes_available) for s in statuses] == [("31000", 0), ("31001", 4)]
    assert dropped == 4
    assert statuses[0].taken_at == 50.0
    kept_all, dropped_all = parse_station_status(raw, 50.0, registry=None)
    assert dropped_all == 3  # unknown-station row is kept without a registry
    round_trip = serialize_station_status(statuses, 50.0)
    again, _ = parse_station_status(round_trip, 50.0, REGISTRY)
    assert again == statuses
