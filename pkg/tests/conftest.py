import math

import pytest

from microequity.model import GeoPoint, Zone

# Rough metres-per-degree at the default test latitude, used to size test
# geometries; exactness never depends on these.
LAT0 = 38.9
LON0 = -77.03
M_PER_DEG_LAT = 111_195.0


def m_per_deg_lon(lat: float = LAT0) -> float:
    return M_PER_DEG_LAT * math.cos(math.radians(lat))


def square_zone(
    zone_id: str,
    west_m: float = 0.0,
    south_m: float = 0.0,
    size_m: float = 500.0,
    population: int = 1000,
    jobs: int = 0,
    median_income: float | None = None,
    race_shares: dict | None = None,
    eea: bool = False,
) -> Zone:
    """Axis-aligned square zone offset in metres from the test anchor."""
    lon0 = LON0 + west_m / m_per_deg_lon()
    lat0 = LAT0 + south_m / M_PER_DEG_LAT
    dlon = size_m / m_per_deg_lon()
    dlat = size_m / M_PER_DEG_LAT
    ring = (
        GeoPoint(lon0, lat0),
        GeoPoint(lon0 + dlon, lat0),
        GeoPoint(lon0 + dlon, lat0 + dlat),
        GeoPoint(lon0, lat0 + dlat),
        GeoPoint(lon0, lat0),
    )
    return Zone(
        id=zone_id,
        geometry=((ring,),),
        population=population,
        jobs=jobs,
        median_income=median_income,
        race_shares=race_shares or {},
        eea=eea,
    )


@pytest.fixture
def anchor() -> GeoPoint:
    return GeoPoint(LON0, LAT0)
