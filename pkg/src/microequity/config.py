"""Run configuration: one INI file describing inputs, study window, knobs.

All paths in the file resolve relative to the file's own directory, so a
scenario folder is portable. Unknown sections or keys are rejected rather
than silently ignored; a typo in a threshold should fail loudly.
"""
from __future__ import annotations

import configparser
import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import ValidationError
from .geo import BIKE_RADIUS_M, SCOOTER_RADIUS_M
from .model import IncomeThresholds
from .tripinfer import FilterRules

OPERATOR_KINDS = ("linked", "unlinked", "docked")

_KNOWN_KEYS = {
    "inputs": {"snapshots_dir", "zones", "demographics", "jobs", "eea", "trips_csv"},
    "operators": None,  # free-form operator names
    "study": {
        "timezone_offset_hours",
        "start_date",
        "end_date",
        "reference_hour",
        "reference_window_min",
    },
    "classify": {"income_low_max", "income_high_min"},
    "kde": {"cell_size_m", "scooter_radius_m", "bike_radius_m"},
    "tripfilter": {"min_duration_min", "max_duration_min", "jitter_m", "max_speed_kmh"},
    "ingest": {"block_prefix_len", "max_skipped_fraction"},
    "outliers": {"exclude_zones", "min_population"},
    "stats": {"alpha", "bonferroni"},
    "usage": {"weighting"},
    "output": {"dir"},
}


@dataclass(frozen=True)
class StudyWindow:
    timezone_offset_hours: float
    start_date: dt.date
    end_date: dt.date
    reference_hour: float = 6.0
    reference_window_min: float = 30.0

    def __post_init__(self) -> None:
        if self.end_date < self.start_date:
            raise ValidationError("study end_date precedes start_date")
        if not -14.0 <= self.timezone_offset_hours <= 14.0:
            raise ValidationError("timezone offset out of range")
        if not 0.0 <= self.reference_hour < 24.0:
            raise ValidationError("reference hour must be within the day")
        if self.reference_window_min <= 0:
            raise ValidationError("reference window must be positive")

    @property
    def days(self) -> List[dt.date]:
        n = (self.end_date - self.start_date).days + 1
        return [self.start_date + dt.timedelta(days=i) for i in range(n)]


@dataclass(frozen=True)
class RunConfig:
    root: Path
    snapshots_dir: Path
    zones_path: Path
    demographics_path: Path
    jobs_path: Path
    eea_path: Optional[Path]
    trips_csv_path: Optional[Path]
    operators: Dict[str, str]
    study: StudyWindow
    thresholds: IncomeThresholds = IncomeThresholds()
    rules: FilterRules = FilterRules()
    cell_size_m: float = 50.0
    scooter_radius_m: float = SCOOTER_RADIUS_M
    bike_radius_m: float = BIKE_RADIUS_M
    block_prefix_len: int = 12
    max_skipped_fraction: float = 0.05
    exclude_zones: Tuple[str, ...] = ()
    min_population: int = 0
    alpha: float = 0.05
    bonferroni: bool = False
    usage_weighting: str = "half"
    out_dir: Path = field(default_factory=lambda: Path("out"))

    def __post_init__(self) -> None:
        for name, kind in self.operators.items():
            if kind not in OPERATOR_KINDS:
                raise ValidationError(
                    f"operator {name!r} has unknown kind {kind!r}; "
                    f"expected one of {', '.join(OPERATOR_KINDS)}"
                )
        if not self.operators:
            raise ValidationError("at least one operator must be configured")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must be in (0, 1)")
        if self.cell_size_m <= 0:
            raise ValidationError("cell_size_m must be positive")
        if self.usage_weighting not in ("half", "origin-only"):
            raise ValidationError("usage weighting must be 'half' or 'origin-only'")
        if self.block_prefix_len < 1:
            raise ValidationError("block_prefix_len must be at least 1")
        docked = [n for n, k in self.operators.items() if k == "docked"]
        if docked and self.trips_csv_path is None:
            raise ValidationError(
                f"operator {docked[0]!r} is docked but [inputs] trips_csv is not set"
            )

    def operators_of_kind(self, *kinds: str) -> List[str]:
        return sorted(n for n, k in self.operators.items() if k in kinds)

    @property
    def scooter_operators(self) -> List[str]:
        return self.operators_of_kind("linked", "unlinked")

    @property
    def docked_operators(self) -> List[str]:
        return self.operators_of_kind("docked")


def _parse_date(raw: str, key: str) -> dt.date:
    try:
        return dt.date.fromisoformat(raw.strip())
    except ValueError as exc:
        raise ValidationError(f"[study] {key} is not a calendar date: {raw!r}") from exc


def _get_float(
    section, key: str, default: Optional[float], where: str, nullable: bool = False
) -> Optional[float]:
    if key not in section:
        return default
    raw = section[key].strip()
    if raw.lower() in ("none", ""):
        if nullable:
            return None
        raise ValidationError(f"[{where}] {key} requires a numeric value")
    try:
        return float(raw)
    except ValueError as exc:
        raise ValidationError(f"[{where}] {key} is not a number: {raw!r}") from exc


def _get_int(section, key: str, default: int, where: str) -> int:
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"[{where}] {key} is not an integer: {raw!r}") from exc


def _get_bool(section, key: str, default: bool, where: str) -> bool:
    if key not in section:
        return default
    raw = section[key].strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"[{where}] {key} is not a boolean: {section[key]!r}")


def load_config(path: Path) -> RunConfig:
    """Parse and validate a run configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from exc

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ValidationError(f"unknown config section [{section}] in {path}")
        allowed = _KNOWN_KEYS[section]
        if allowed is not None:
            for key in parser[section]:
                if key not in allowed:
                    raise ValidationError(f"unknown key {key!r} in [{section}] of {path}")

    root = path.parent.resolve()

    def need(section: str, key: str) -> str:
        if section not in parser or key not in parser[section]:
            raise ValidationError(f"config {path} is missing [{section}] {key}")
        return parser[section][key]

    def rel(raw: str) -> Path:
        return (root / raw.strip()).resolve()

    inputs = parser["inputs"] if "inputs" in parser else {}
    snapshots_dir = rel(need("inputs", "snapshots_dir"))
    zones_path = rel(need("inputs", "zones"))
    demographics_path = rel(need("inputs", "demographics"))
    jobs_path = rel(need("inputs", "jobs"))
    eea_path = rel(inputs["eea"]) if "eea" in inputs else None
    trips_csv_path = rel(inputs["trips_csv"]) if "trips_csv" in inputs else None

    if "operators" not in parser or not list(parser["operators"]):
        raise ValidationError(f"config {path} has no [operators] section")
    operators = {name: parser["operators"][name].strip().lower() for name in parser["operators"]}

    study = StudyWindow(
        timezone_offset_hours=float(need("study", "timezone_offset_hours")),
        start_date=_parse_date(need("study", "start_date"), "start_date"),
        end_date=_parse_date(need("study", "end_date"), "end_date"),
        reference_hour=_get_float(parser["study"], "reference_hour", 6.0, "study"),
        reference_window_min=_get_float(parser["study"], "reference_window_min", 30.0, "study"),
    )

    classify = parser["classify"] if "classify" in parser else {}
    thresholds = IncomeThresholds(
        low_max=_get_float(classify, "income_low_max", IncomeThresholds().low_max, "classify"),
        high_min=_get_float(classify, "income_high_min", IncomeThresholds().high_min, "classify"),
    )

    kde = parser["kde"] if "kde" in parser else {}
    cell_size_m = _get_float(kde, "cell_size_m", 50.0, "kde")
    scooter_radius_m = _get_float(kde, "scooter_radius_m", SCOOTER_RADIUS_M, "kde")
    bike_radius_m = _get_float(kde, "bike_radius_m", BIKE_RADIUS_M, "kde")

    tf = parser["tripfilter"] if "tripfilter" in parser else {}
    defaults = FilterRules()
    rules = FilterRules(
        min_duration_min=_get_float(tf, "min_duration_min", defaults.min_duration_min, "tripfilter"),
        max_duration_min=_get_float(tf, "max_duration_min", defaults.max_duration_min, "tripfilter"),
        jitter_m=_get_float(tf, "jitter_m", defaults.jitter_m, "tripfilter", nullable=True),
        max_speed_kmh=_get_float(tf, "max_speed_kmh", defaults.max_speed_kmh, "tripfilter", nullable=True),
    )

    ingest = parser["ingest"] if "ingest" in parser else {}
    block_prefix_len = _get_int(ingest, "block_prefix_len", 12, "ingest")
    max_skipped_fraction = _get_float(ingest, "max_skipped_fraction", 0.05, "ingest")

    outliers = parser["outliers"] if "outliers" in parser else {}
    raw_excluded = outliers["exclude_zones"] if "exclude_zones" in outliers else ""
    exclude_zones = tuple(sorted(z.strip() for z in raw_excluded.split(",") if z.strip()))
    min_population = _get_int(outliers, "min_population", 0, "outliers")

    stats = parser["stats"] if "stats" in parser else {}
    alpha = _get_float(stats, "alpha", 0.05, "stats")
    bonferroni = _get_bool(stats, "bonferroni", False, "stats")

    usage = parser["usage"] if "usage" in parser else {}
    usage_weighting = usage["weighting"].strip() if "weighting" in usage else "half"

    out_raw = parser["output"]["dir"] if "output" in parser and "dir" in parser["output"] else "out"
    out_dir = rel(out_raw)

    return RunConfig(
        root=root,
        snapshots_dir=snapshots_dir,
        zones_path=zones_path,
        demographics_path=demographics_path,
        jobs_path=jobs_path,
        eea_path=eea_path,
        trips_csv_path=trips_csv_path,
        operators=operators,
        study=study,
        thresholds=thresholds,
        rules=rules,
        cell_size_m=cell_size_m,
        scooter_radius_m=scooter_radius_m,
        bike_radius_m=bike_radius_m,
        block_prefix_len=block_prefix_len,
        max_skipped_fraction=max_skipped_fraction,
        exclude_zones=exclude_zones,
        min_population=min_population,
        alpha=alpha,
        bonferroni=bonferroni,
        usage_weighting=usage_weighting,
        out_dir=out_dir,
    )


# --- stage parameter digests -------------------------------------------------
#
# Each pipeline stage records a digest of the parameters that influence its
# outputs. A downstream stage recomputes the digest it expects from the
# current configuration; a mismatch means the upstream outputs are stale.


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _study_payload(cfg: RunConfig) -> dict:
    return {
        "offset": cfg.study.timezone_offset_hours,
        "start": cfg.study.start_date.isoformat(),
        "end": cfg.study.end_date.isoformat(),
        "reference_hour": cfg.study.reference_hour,
        "reference_window_min": cfg.study.reference_window_min,
    }


def params_digest(cfg: RunConfig, stage: str) -> str:
    """Digest of the configuration subset that stage's outputs depend on."""
    base = {
        "operators": dict(sorted(cfg.operators.items())),
        "study": _study_payload(cfg),
        "block_prefix_len": cfg.block_prefix_len,
        "max_skipped_fraction": cfg.max_skipped_fraction,
    }
    if stage == "ingest":
        return _digest({"stage": "ingest", **base})
    trips = {
        **base,
        "tripfilter": {
            "min": cfg.rules.min_duration_min,
            "max": cfg.rules.max_duration_min,
            "jitter": cfg.rules.jitter_m,
            "speed": cfg.rules.max_speed_kmh,
        },
    }
    if stage == "trips":
        return _digest({"stage": "trips", **trips})
    metrics = {
        **trips,
        "kde": {
            "cell": cfg.cell_size_m,
            "scooter_radius": cfg.scooter_radius_m,
            "bike_radius": cfg.bike_radius_m,
        },
        "usage_weighting": cfg.usage_weighting,
        "min_population": cfg.min_population,
        "thresholds": [cfg.thresholds.low_max, cfg.thresholds.high_min],
    }
    if stage == "metrics":
        return _digest({"stage": "metrics", **metrics})
    if stage == "report":
        report = {
            **metrics,
            "exclude_zones": list(cfg.exclude_zones),
            "alpha": cfg.alpha,
            "bonferroni": cfg.bonferroni,
        }
        return _digest({"stage": "report", **report})
    raise ValidationError(f"unknown pipeline stage {stage!r}")
