"""Core domain types: points, zones, modes, and zone classification rules.

Timestamps are plain floats (seconds since the Unix epoch, UTC). Local wall
time only matters at the edges (parsing naive timestamps, picking the daily
reference hour), and is derived with a fixed UTC offset carried in the run
configuration.
"""
from __future__ import annotations

import calendar
import datetime as dt
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Tuple

from .errors import ValidationError

Instant = float

# A ring is stored closed: first vertex == last vertex.
Ring = Tuple["GeoPoint", ...]
# A polygon is one outer ring followed by zero or more hole rings.
PolygonGeom = Tuple[Ring, ...]
MultiPolygonGeom = Tuple[PolygonGeom, ...]


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate pair, longitude first."""

    lon: float
    lat: float

    def __post_init__(self) -> None:
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise ValidationError(f"coordinate out of range: ({self.lon}, {self.lat})")


class Mode(str, Enum):
    SCOOTER = "scooter"
    BIKE = "bike"


class IncomeClass(str, Enum):
    LOW = "Low"
    MIDDLE = "Middle"
    HIGH = "High"
    UNKNOWN = "Unknown"


class CategoryScheme(str, Enum):
    """The three ways zones are grouped for disparity summaries."""

    EEA_STATUS = "eea_status"
    INCOME_BAND = "income_band"
    RACIAL_COMPOSITION = "racial_composition"


EEA = "EEA"
NON_EEA = "NonEEA"
NO_MAJORITY = "NoMajority"
UNKNOWN = "Unknown"

# Default income band bounds, in dollars of household median income. A zone
# at or below the low bound is classified Low, at or above the high bound
# High, and strictly between them Middle.
INCOME_LOW_MAX = 49222.0
INCOME_HIGH_MIN = 130615.0


@dataclass(frozen=True)
class IncomeThresholds:
    low_max: float = INCOME_LOW_MAX
    high_min: float = INCOME_HIGH_MIN

    def __post_init__(self) -> None:
        if not self.low_max < self.high_min:
            raise ValidationError(
                f"income thresholds must satisfy low_max < high_min, "
                f"got {self.low_max} >= {self.high_min}"
            )


@dataclass(frozen=True)
class Zone:
    """An analysis zone: geometry plus the attributes used for grouping.

    ``race_shares`` maps open-ended group labels (e.g. ``"white"``,
    ``"black"``) to population shares in [0, 1]. Attributes are attached
    after geometry load; a zone with no attribute rows keeps the defaults
    and classifies as Unknown.
    """

    id: str
    geometry: MultiPolygonGeom
    population: int = 0
    jobs: int = 0
    median_income: Optional[float] = None
    race_shares: Mapping[str, float] = field(default_factory=dict)
    eea: bool = False

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("zone id must be non-empty")
        if not self.geometry:
            raise ValidationError(f"zone {self.id}: empty geometry")
        for poly in self.geometry:
            if not poly:
                raise ValidationError(f"zone {self.id}: polygon with no rings")
            for ring in poly:
                if len(ring) < 4 or ring[0] != ring[-1]:
                    raise ValidationError(
                        f"zone {self.id}: ring must be closed with >= 3 distinct vertices"
                    )
        if self.population < 0 or self.jobs < 0:
            raise ValidationError(f"zone {self.id}: negative population or jobs")
        total = 0.0
        for label, share in self.race_shares.items():
            if not (0.0 <= share <= 1.0):
                raise ValidationError(
                    f"zone {self.id}: race share {label}={share} outside [0, 1]"
                )
            total += share
        if total > 1.0 + 1e-6:
            raise ValidationError(
                f"zone {self.id}: race shares sum to {total:.6f} > 1"
            )


def classify_income(
    median_income: Optional[float],
    thresholds: IncomeThresholds = IncomeThresholds(),
) -> IncomeClass:
    """Assign a zone's income band from its household median income.

    Missing income means Unknown; the band bounds themselves are inclusive
    on both outer bands.
    """
    if median_income is None:
        return IncomeClass.UNKNOWN
    if median_income <= thresholds.low_max:
        return IncomeClass.LOW
    if median_income >= thresholds.high_min:
        return IncomeClass.HIGH
    return IncomeClass.MIDDLE


def majority_label(race_key: str) -> str:
    """Canonical category name for a race-share key, e.g. ``white`` -> ``WhiteMajority``."""
    cleaned = "".join(part.capitalize() for part in re.split(r"[\s_]+", race_key.strip()) if part)
    return f"{cleaned}Majority"


def classify_race(race_shares: Optional[Mapping[str, float]]) -> str:
    """Label a zone by its majority racial group.

    A single group with share strictly above one half names the zone
    (``<Group>Majority``); otherwise the zone is NoMajority. Zones with no
    share data at all are Unknown. Ties at exactly 0.5 are not majorities.
    """
    if not race_shares:
        return UNKNOWN
    winners = [k for k, v in race_shares.items() if v > 0.5]
    if len(winners) == 1:
        return majority_label(winners[0])
    return NO_MAJORITY


def zone_category(
    zone: Zone,
    scheme: CategoryScheme,
    thresholds: IncomeThresholds = IncomeThresholds(),
) -> str:
    """The zone's category label under one of the grouping schemes."""
    if scheme is CategoryScheme.EEA_STATUS:
        return EEA if zone.eea else NON_EEA
    if scheme is CategoryScheme.INCOME_BAND:
        return classify_income(zone.median_income, thresholds).value
    if scheme is CategoryScheme.RACIAL_COMPOSITION:
        return classify_race(zone.race_shares)
    raise ValidationError(f"unknown category scheme: {scheme!r}")


# --- time helpers -----------------------------------------------------------

_ISO_RE = re.compile(
    r"^(\d{4})-?(\d{2})-?(\d{2})"
    r"[T ](\d{2})[:\-]?(\d{2})[:\-]?(\d{2})(\.\d+)?"
    r"(Z|[+-]\d{2}:?\d{2})?$"
)


def utc_timestamp(
    year: int, month: int, day: int, hour: int = 0, minute: int = 0, second: float = 0.0
) -> Instant:
    """Epoch seconds for a UTC calendar time."""
    whole = int(second)
    base = calendar.timegm((year, month, day, hour, minute, whole))
    return float(base) + (second - whole)


def parse_timestamp(text: str, default_offset_hours: float = 0.0) -> Instant:
    """Parse an ISO 8601 timestamp to epoch seconds.

    Accepts basic (``20240603T060000Z``) and extended forms, with ``-`` also
    tolerated in place of ``:`` in the time part (filesystem-safe snapshot
    names). Timestamps without an explicit offset are interpreted in the
    given local offset.
    """
    m = _ISO_RE.match(text.strip())
    if m is None:
        raise ValidationError(f"unparsable timestamp: {text!r}")
    year, month, day, hour, minute, second = (int(m.group(i)) for i in range(1, 7))
    frac = float(m.group(7)) if m.group(7) else 0.0
    try:
        base = calendar.timegm((year, month, day, hour, minute, second)) + frac
    except (ValueError, OverflowError) as exc:
        raise ValidationError(f"unparsable timestamp: {text!r}") from exc
    zone = m.group(8)
    if zone is None:
        return base - default_offset_hours * 3600.0
    if zone == "Z":
        return base
    sign = 1.0 if zone[0] == "+" else -1.0
    hh = int(zone[1:3])
    mm = int(zone[-2:])
    return base - sign * (hh * 3600.0 + mm * 60.0)


def format_utc(ts: Instant) -> str:
    """Canonical UTC rendering, whole seconds kept terse."""
    whole = int(ts // 1)
    frac = ts - whole
    t = dt.datetime.fromtimestamp(whole, dt.timezone.utc)
    out = t.strftime("%Y-%m-%dT%H:%M:%S")
    if frac > 0:
        out += f"{frac:.6f}".lstrip("0").rstrip("0").rstrip(".")
    return out + "Z"


def local_date(ts: Instant, offset_hours: float) -> dt.date:
    """Calendar date of an instant in the configured local offset."""
    shifted = dt.datetime.fromtimestamp(ts + offset_hours * 3600.0, dt.timezone.utc)
    return shifted.date()


def local_instant(day: dt.date, hour: float, offset_hours: float) -> Instant:
    """Epoch seconds of local wall time ``hour`` (fractional ok) on ``day``."""
    base = calendar.timegm((day.year, day.month, day.day, 0, 0, 0))
    return float(base) + hour * 3600.0 - offset_hours * 3600.0
