"""Daily observation ingestion and annual-curve aggregation.

Raw daily records are grouped per site, filtered by the number of complete
calendar years, and collapsed into one mean annual profile per site on a
fixed 365-day grid (Feb 29 dropped). Day ``d`` maps to time ``(d - 0.5)/365``.
"""

import datetime as _dt
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConflictError, CoverageError, ValidationError

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365
# cumulative day offsets of a non-leap year, month-indexed from 1
_MONTH_OFFSET = np.cumsum([0, 0, 31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30])


@dataclass(frozen=True)
class RawObservation:
    site_id: str
    date: _dt.date
    value: float
    missing: bool = False
    # simulated Gaussian curves may dip below zero
    allow_negative: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if self.missing:
            return
        if not math.isfinite(self.value) or (self.value < 0 and not self.allow_negative):
            raise ValidationError(
                f"observation for {self.site_id} on {self.date} has invalid value {self.value!r}"
            )


@dataclass(frozen=True)
class SiteGeometry:
    site_id: str
    latitude: float
    longitude: float
    elevation: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"{self.site_id}: latitude {self.latitude} out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValidationError(f"{self.site_id}: longitude {self.longitude} out of range")
        if not math.isfinite(self.elevation):
            raise ValidationError(f"{self.site_id}: elevation must be finite")


@dataclass
class AnnualCurve:
    site_id: str
    times: np.ndarray
    values: np.ndarray
    years_used: int = 1

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValidationError(f"{self.site_id}: times and values must be equal-length vectors")
        if self.times.size and (self.times[0] < 0 or self.times[-1] > 1):
            raise ValidationError(f"{self.site_id}: times must lie in [0, 1]")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError(f"{self.site_id}: times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"{self.site_id}: curve values must be finite")
        if self.years_used < 1:
            raise ValidationError(f"{self.site_id}: years_used must be positive")


@dataclass
class Dataset:
    """Curves plus site geometry, aligned and sorted by site id."""

    curves: List[AnnualCurve]
    geometry: List[SiteGeometry]

    def __post_init__(self):
        ids = [c.site_id for c in self.curves]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate site id among curves")
        geo = {}
        for g in self.geometry:
            if g.site_id in geo:
                raise ValidationError(f"duplicate site id {g.site_id!r} in geometry")
            geo[g.site_id] = g
        orphans = sorted(set(ids) - set(geo))
        extra = sorted(set(geo) - set(ids))
        if orphans or extra:
            raise ValidationError(
                "site ids not aligned; curves without geometry: "
                f"{orphans[:10]}, geometry without curves: {extra[:10]}"
            )
        self.geometry = [geo[i] for i in ids]

    @property
    def site_ids(self) -> List[str]:
        return [c.site_id for c in self.curves]

    @property
    def n_sites(self) -> int:
        return len(self.curves)

    def subset(self, site_ids: Iterable[str]) -> "Dataset":
        keep = set(site_ids)
        return Dataset(
            [c for c in self.curves if c.site_id in keep],
            [g for g in self.geometry if g.site_id in keep],
        )


@dataclass
class SiteRecord:
    """All daily rows of one site, sorted by date; NaN marks a missing value."""

    site_id: str
    dates: np.ndarray  # datetime64[D]
    values: np.ndarray

    @property
    def years(self) -> np.ndarray:
        return self.dates.astype("datetime64[Y]").astype(int) + 1970


def day_time(day_of_year) -> np.ndarray:
    return (np.asarray(day_of_year, dtype=float) - 0.5) / DAYS_PER_YEAR


def _day_of_year_noleap(dates: np.ndarray) -> np.ndarray:
    """Day index 1..365 on a non-leap calendar; Feb 29 maps to 0."""
    months = dates.astype("datetime64[M]").astype(int) % 12 + 1
    days = (dates - dates.astype("datetime64[M]")).astype(int) + 1
    doy = _MONTH_OFFSET[months] + days
    leap_day = (months == 2) & (days == 29)
    return np.where(leap_day, 0, doy)


def ingest_records(rows: Iterable[RawObservation]) -> Dict[str, SiteRecord]:
    """Group observations by site and sort by date.

    Raises ConflictError if a (site, date) pair appears more than once.
    """
    grouped: Dict[str, Dict[_dt.date, float]] = {}
    for row in rows:
        per_site = grouped.setdefault(row.site_id, {})
        if row.date in per_site:
            raise ConflictError(
                f"duplicate observation for site {row.site_id!r} on {row.date.isoformat()}"
            )
        per_site[row.date] = math.nan if row.missing else float(row.value)
    records = {}
    for site in sorted(grouped):
        items = sorted(grouped[site].items())
        dates = np.array([d for d, _ in items], dtype="datetime64[D]")
        values = np.array([v for _, v in items], dtype=float)
        records[site] = SiteRecord(site, dates, values)
    return records


def complete_year_count(record: SiteRecord, max_missing_days_per_year: int = 0) -> int:
    """Number of calendar years with at most the allowed missing days.

    Days absent from the record count as missing. Feb 29 is ignored,
    consistent with its removal before aggregation.
    """
    doy = _day_of_year_noleap(record.dates)
    ok = (doy > 0) & np.isfinite(record.values)
    years = record.years[ok]
    if years.size == 0:
        return 0
    uniq, present = np.unique(years, return_counts=True)
    missing = DAYS_PER_YEAR - present
    return int(np.sum(missing <= max_missing_days_per_year))


def filter_complete_sites(
    records: Mapping[str, SiteRecord],
    min_complete_years: int = 50,
    max_missing_days_per_year: int = 0,
) -> Dict[str, SiteRecord]:
    kept = {
        site: rec
        for site, rec in records.items()
        if complete_year_count(rec, max_missing_days_per_year) >= min_complete_years
    }
    logger.info(
        "completeness filter: %d sites retained, %d dropped (>= %d years with <= %d missing days)",
        len(kept),
        len(records) - len(kept),
        min_complete_years,
        max_missing_days_per_year,
    )
    return kept


def missing_fraction(records: Mapping[str, SiteRecord]) -> float:
    """Fraction of missing days over each site's first-to-last date span."""
    expected = 0
    present = 0
    for rec in records.values():
        if rec.dates.size == 0:
            continue
        span = int((rec.dates[-1] - rec.dates[0]).astype(int)) + 1
        expected += span
        present += int(np.sum(np.isfinite(rec.values)))
    if expected == 0:
        return 0.0
    return (expected - present) / expected


def aggregate_mean_daily(
    record: SiteRecord, year_range: Optional[Tuple[int, int]] = None
) -> AnnualCurve:
    """Average each non-leap day of year over the years in ``year_range``.

    ``year_range`` is inclusive; ``None`` uses every year in the record.
    """
    years = record.years
    mask = np.isfinite(record.values)
    if year_range is not None:
        y0, y1 = year_range
        mask &= (years >= y0) & (years <= y1)
    doy = _day_of_year_noleap(record.dates)
    mask &= doy > 0
    sums = np.bincount(doy[mask], weights=record.values[mask], minlength=DAYS_PER_YEAR + 1)
    counts = np.bincount(doy[mask], minlength=DAYS_PER_YEAR + 1)
    sums, counts = sums[1:], counts[1:]
    empty = np.flatnonzero(counts == 0) + 1
    if empty.size:
        shown = ", ".join(str(d) for d in empty[:20])
        raise CoverageError(
            f"site {record.site_id!r}: no usable values for day(s) of year {shown}"
            + (" ..." if empty.size > 20 else "")
        )
    days = np.arange(1, DAYS_PER_YEAR + 1)
    return AnnualCurve(
        site_id=record.site_id,
        times=day_time(days),
        values=sums / counts,
        years_used=int(np.unique(years[mask]).size),
    )


def build_dataset(
    records: Mapping[str, SiteRecord],
    geometry: Sequence[SiteGeometry],
    year_range: Optional[Tuple[int, int]] = None,
) -> Dataset:
    """Aggregate every record and attach geometry (extra geometry rows are ignored)."""
    geo = {g.site_id: g for g in geometry}
    missing = sorted(set(records) - set(geo))
    if missing:
        raise ValidationError(f"sites without geometry: {missing[:10]}")
    curves = [aggregate_mean_daily(records[s], year_range) for s in sorted(records)]
    return Dataset(curves, [geo[c.site_id] for c in curves])
