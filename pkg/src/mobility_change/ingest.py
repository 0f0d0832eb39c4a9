"""Parse raw per-subregion daily dwell-time panels and aggregate them to regions.

A panel is delimited text with one row per (date, subregion) observation.
Subregions roll up to regions by code prefix (FIPS convention: the first five
characters of a block-group code name its county).
"""

import calendar
import csv
import datetime as dt
import io
import logging
import math
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import DataError, GapError, SchemaError

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365
LEAP_DAY_INDEX = 59  # 0-based day-of-year of Feb 29
MISSING_TOKEN = "NA"


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date
    subregion_id: str
    region_id: str
    value: float


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping and parsing options for a panel file.

    ``region_column`` takes precedence over ``region_prefix`` when set.
    ``years`` restricts accepted dates; rows outside are row errors.
    """

    date_column: str = "date"
    subregion_column: str = "subregion_id"
    value_column: str = "value"
    region_column: str | None = None
    region_prefix: int = 5
    delimiter: str = ","
    date_format: str = "%Y-%m-%d"
    years: tuple[int, ...] | None = None


class RowError(NamedTuple):
    line: int
    message: str


class ParsedPanel(NamedTuple):
    records: list
    errors: list


@dataclass
class RegionSeries:
    """Daily values for one region and one calendar year.

    Absent days hold NaN and are ``False`` in ``present_mask``; zero is a
    legitimate observation and never stands in for missing data.
    """

    region_id: str
    year: int
    values: np.ndarray
    present_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.present_mask = np.asarray(self.present_mask, dtype=bool)
        if self.values.shape != self.present_mask.shape or self.values.ndim != 1:
            raise DataError("values and present_mask must be 1-D arrays of equal length")
        if not self.region_id:
            raise DataError("region_id must be non-empty")

    @property
    def n_days(self):
        return self.values.shape[0]

    @property
    def is_complete(self):
        return bool(self.present_mask.all())

    def gaps(self):
        """Runs of absent days as half-open ``(start, stop)`` index pairs."""
        absent = ~self.present_mask
        if not absent.any():
            return []
        edges = np.diff(np.concatenate(([0], absent.astype(np.int8), [0])))
        starts = np.flatnonzero(edges == 1)
        stops = np.flatnonzero(edges == -1)
        return list(zip(starts.tolist(), stops.tolist()))


@dataclass
class RegionCoverage:
    count: int
    mean: float
    max: float
    min: float
    std: float


@dataclass
class CoverageReport:
    regions: dict = field(default_factory=dict)
    dropped: dict = field(default_factory=dict)

    @property
    def total(self):
        return len(self.regions)

    @property
    def kept(self):
        return [r for r in self.regions if r not in self.dropped]

    def rows(self):
        for region_id in sorted(self.regions):
            c = self.regions[region_id]
            yield (region_id, c.count, c.mean, c.max, c.min, c.std, self.dropped.get(region_id, ""))


def _open_text(source):
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8")), False
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def _parse_iso(text):
    if len(text) != 10:
        raise ValueError(text)
    return dt.date.fromisoformat(text)


def parse_panel(source, schema=None):
    """Parse a delimited panel into :class:`DailyRecord` rows.

    ``source`` may be a path, raw bytes, or a text/binary file object.
    Malformed rows are collected as :class:`RowError` (1-based line numbers,
    header is line 1) instead of being dropped silently.
    """
    schema = schema or PanelSchema()
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("panel is empty: no header row") from None
        wanted = [schema.date_column, schema.subregion_column, schema.value_column]
        if schema.region_column:
            wanted.append(schema.region_column)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"panel is missing mapped column(s): {', '.join(missing)}")
        i_date, i_sub, i_val = (header.index(c) for c in wanted[:3])
        i_reg = header.index(schema.region_column) if schema.region_column else None
        years = set(schema.years) if schema.years else None
        if schema.date_format == "%Y-%m-%d":
            parse_date = _parse_iso
        else:
            def parse_date(text):
                return dt.datetime.strptime(text, schema.date_format).date()

        records, errors = [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                errors.append(RowError(line, f"expected {len(header)} fields, got {len(row)}"))
                continue
            try:
                date = parse_date(row[i_date].strip())
            except ValueError:
                errors.append(RowError(line, f"unparseable date {row[i_date]!r}"))
                continue
            if years is not None and date.year not in years:
                errors.append(RowError(line, f"date {date} outside study years"))
                continue
            sub = row[i_sub].strip()
            region = row[i_reg].strip() if i_reg is not None else sub[: schema.region_prefix]
            if not sub or not region:
                errors.append(RowError(line, "empty subregion or region id"))
                continue
            try:
                value = float(row[i_val])
            except ValueError:
                errors.append(RowError(line, f"unparseable value {row[i_val]!r}"))
                continue
            if not math.isfinite(value) or value < 0:
                errors.append(RowError(line, f"value must be finite and non-negative, got {value}"))
                continue
            records.append(DailyRecord(date, sub, region, value))
    finally:
        if owned:
            fh.close()
    if errors:
        logger.warning("parse_panel: %d malformed row(s) skipped", len(errors))
    return ParsedPanel(records, errors)


def _days_in_year(year):
    return 366 if calendar.isleap(year) else 365


def aggregate_to_region(records, *, normalize_leap=True):
    """Average subregion values per (region, date).

    Returns ``{region_id: {year: RegionSeries}}``. Each slot is the mean over
    the subregions reporting that day; slots nobody reports are masked.
    Sums use :func:`math.fsum`, so the result does not depend on row order.
    """
    slots = defaultdict(list)
    for rec in records:
        slots[(rec.region_id, rec.date.year, rec.date.timetuple().tm_yday - 1)].append(rec.value)

    by_region_year = defaultdict(dict)
    for (region, year, doy), vals in slots.items():
        by_region_year[(region, year)][doy] = math.fsum(vals) / len(vals)

    out = {}
    for region, year in sorted(by_region_year):
        n = _days_in_year(year)
        values = np.full(n, np.nan)
        for doy, v in by_region_year[(region, year)].items():
            values[doy] = v
        series = RegionSeries(region, year, values, ~np.isnan(values))
        if normalize_leap and n == 366:
            series = normalize_leap_year(series)
        out.setdefault(region, {})[year] = series
    return out


def normalize_leap_year(series):
    """Drop February 29 so day-of-year indices line up with a common year."""
    if series.n_days != 366 or not calendar.isleap(series.year):
        warnings.warn(
            f"region {series.region_id} year {series.year}: not a 366-day leap series; unchanged",
            stacklevel=2,
        )
        return series
    return RegionSeries(
        series.region_id,
        series.year,
        np.delete(series.values, LEAP_DAY_INDEX),
        np.delete(series.present_mask, LEAP_DAY_INDEX),
    )


def repair_gaps(series, max_gap=3):
    """Fill short runs of absent days.

    Interior runs of at most ``max_gap`` days are linearly interpolated
    between the flanking present values; runs of the same length touching
    either end of the year repeat the nearest present value. Anything longer
    raises :class:`GapError`.
    """
    gaps = series.gaps()
    if not gaps:
        return series
    n = series.n_days
    for start, stop in gaps:
        if stop - start > max_gap or (start == 0 and stop == n):
            raise GapError(series.region_id, start, stop)
    present = np.flatnonzero(series.present_mask)
    values = series.values.copy()
    absent = np.flatnonzero(~series.present_mask)
    values[absent] = np.interp(absent, present, series.values[present])
    logger.info("region %s year %s: repaired %d missing day(s)", series.region_id, series.year, absent.size)
    return RegionSeries(series.region_id, series.year, values, np.ones(n, dtype=bool))


def prepare_series(records, years, *, max_gap=3):
    """Aggregate, leap-normalize and repair; drop regions that cannot be used.

    Returns ``(series, dropped)`` where ``series`` maps region -> year ->
    complete :class:`RegionSeries` and ``dropped`` maps region -> reason.
    """
    aggregated = aggregate_to_region(records)
    series, dropped = {}, {}
    for region, per_year in aggregated.items():
        missing_years = [y for y in years if y not in per_year]
        if missing_years:
            dropped[region] = f"no records for year(s) {', '.join(map(str, missing_years))}"
            logger.warning("dropping region %s: %s", region, dropped[region])
            continue
        try:
            series[region] = {y: repair_gaps(per_year[y], max_gap) for y in years}
        except GapError as exc:
            dropped[region] = str(exc)
            logger.warning("dropping region %s: %s", region, exc)
    return series, dropped


def coverage_report(records, dropped=None):
    """Per-region descriptive statistics over all contributing observations.

    ``std`` is the population standard deviation.
    """
    grouped = defaultdict(list)
    for rec in records:
        grouped[rec.region_id].append(rec.value)
    report = CoverageReport()
    for region in sorted(grouped):
        vals = np.sort(np.asarray(grouped[region], dtype=np.float64))
        mean = math.fsum(vals) / vals.size
        var = math.fsum((vals - mean) ** 2) / vals.size
        report.regions[region] = RegionCoverage(
            int(vals.size), mean, float(vals.max()), float(vals.min()), math.sqrt(var)
        )
    for region, reason in (dropped or {}).items():
        if region in report.regions:
            report.dropped[region] = reason
    return report


def write_coverage_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "count", "mean", "max", "min", "std", "dropped_reason"])
        for row in report.rows():
            w.writerow([row[0], row[1], *(repr(float(v)) for v in row[2:6]), row[6]])


def _fmt(value, present):
    return repr(float(value)) if present else MISSING_TOKEN


def write_series_bundle(series, index_path, matrix_path):
    """Persist series as an index CSV plus a value-matrix CSV.

    The matrix has a header, then one row per series: region id, year and
    one column per day (``NA`` where masked). The index maps
    ``(region_id, year)`` to the 0-based data-row offset in the matrix.
    """
    series = sorted(series, key=lambda s: (s.region_id, s.year))
    n_days = {s.n_days for s in series}
    if len(n_days) > 1:
        raise DataError(f"series lengths differ: {sorted(n_days)}")
    width = n_days.pop() if n_days else DAYS_PER_YEAR
    with open(matrix_path, "w", newline="", encoding="utf-8") as mf, open(
        index_path, "w", newline="", encoding="utf-8"
    ) as xf:
        mw = csv.writer(mf, lineterminator="\n")
        xw = csv.writer(xf, lineterminator="\n")
        mw.writerow(["region_id", "year", *(f"day_{d:03d}" for d in range(1, width + 1))])
        xw.writerow(["region_id", "year", "row"])
        for row, s in enumerate(series):
            mw.writerow([s.region_id, s.year, *map(_fmt, s.values, s.present_mask)])
            xw.writerow([s.region_id, s.year, row])


def read_series_bundle(index_path, matrix_path):
    with open(matrix_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    with open(index_path, newline="", encoding="utf-8") as fh:
        index = list(csv.DictReader(fh))
    out = []
    for entry in index:
        offset = int(entry["row"])
        if offset >= len(rows):
            raise DataError(f"index row offset {offset} beyond matrix ({len(rows)} rows)")
        row = rows[offset]
        if row[0] != entry["region_id"] or row[1] != entry["year"]:
            raise DataError(f"index entry {entry} does not match matrix row {offset}")
        values = np.array([np.nan if v == MISSING_TOKEN else float(v) for v in row[2:]])
        out.append(RegionSeries(row[0], int(row[1]), values, ~np.isnan(values)))
    return out
