"""Spatial equity analysis for shared micromobility systems.

Measures where e-scooters and station bikes actually are and how they are
used, relative to who lives there: per-zone availability at a morning
reference hour, kernel density surfaces, trip counts inferred from vehicle
snapshot feeds, idle durations, per-capita rates, and Welch tests on the
differences between zone categories (equity areas, income bands, racial
composition).
"""
from .errors import (
    DataError,
    DegenerateSamplesError,
    MicroequityError,
    StaleInputError,
    ValidationError,
)
from .model import (
    GeoPoint,
    IncomeThresholds,
    Mode,
    CategoryScheme,
    Zone,
    classify_income,
    classify_race,
    zone_category,
)
from .geo import (
    BIKE_RADIUS_M,
    SCOOTER_RADIUS_M,
    SearchRadius,
    ZoneIndex,
    haversine,
    kde_raster,
    zonal_mean,
)
from .tripinfer import FilterRules, Trip, filter_trip, infer_linked_trips, infer_unlinked_events
from .stats import WelchResult, t_cdf, welch_t
from .config import RunConfig, load_config
from .pipeline import run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BIKE_RADIUS_M",
    "CategoryScheme",
    "DataError",
    "DegenerateSamplesError",
    "FilterRules",
    "GeoPoint",
    "IncomeThresholds",
    "MicroequityError",
    "Mode",
    "RunConfig",
    "SCOOTER_RADIUS_M",
    "SearchRadius",
    "StaleInputError",
    "Trip",
    "ValidationError",
    "WelchResult",
    "Zone",
    "ZoneIndex",
    "classify_income",
    "classify_race",
    "filter_trip",
    "haversine",
    "infer_linked_trips",
    "infer_unlinked_events",
    "kde_raster",
    "load_config",
    "run_pipeline",
    "t_cdf",
    "welch_t",
    "zonal_mean",
    "zone_category",
    "__version__",
]
