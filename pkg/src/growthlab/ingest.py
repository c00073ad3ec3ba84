"""Ingestion of external sales-forecast panels into forecast records.

The input CSV carries one row per (firm, fiscal year) with the realized
sales level and the forecast levels for next year's sales made this year and
last year.  Growth forecasts, errors and revisions are derived here, in one
place, from log transforms of those levels.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .forecaster import ForecastPanel, ForecastRecord

log = logging.getLogger(__name__)

INGEST_HEADER = ["firm_id", "fiscal_year", "sales_actual", "f1_level", "f2_level", "f2_base"]

MAX_MALFORMED_FRACTION = 0.10


@dataclass(frozen=True)
class IngestRow:
    """One validated input row: levels are strictly positive."""

    firm_id: str
    fiscal_year: int
    sales_actual: float
    f1_level: float
    f2_level: float
    f2_base: float


@dataclass
class IngestReport:
    """Row accounting for one ingestion: in = kept + dropped."""

    rows_in: int = 0
    rows_kept: int = 0
    rows_dropped_malformed: int = 0
    rows_dropped_incomplete: int = 0
    diagnostics: list[str] = None

    def __post_init__(self):
        if self.diagnostics is None:
            self.diagnostics = []

    @property
    def rows_dropped(self) -> int:
        return self.rows_dropped_malformed + self.rows_dropped_incomplete


def _parse_row(row: list[str], lineno: int) -> IngestRow:
    if len(row) != len(INGEST_HEADER):
        raise DataError(f"line {lineno}: expected {len(INGEST_HEADER)} fields, got {len(row)}")
    firm_id = row[0].strip()
    if not firm_id:
        raise DataError(f"line {lineno}: empty firm_id")
    try:
        fiscal_year = int(row[1])
    except ValueError as exc:
        raise DataError(f"line {lineno}: fiscal_year not an integer: {row[1]!r}") from exc
    levels = []
    for name, text in zip(INGEST_HEADER[2:], row[2:]):
        try:
            value = float(text)
        except ValueError as exc:
            raise DataError(f"line {lineno}: {name} not a number: {text!r}") from exc
        if not (value > 0 and math.isfinite(value)):
            raise DataError(f"line {lineno}: {name} must be strictly positive, got {text!r}")
        levels.append(value)
    return IngestRow(firm_id, fiscal_year, *levels)


def ingest_forecast_panel(csv_path) -> tuple[ForecastPanel, IngestReport]:
    """Read a levels CSV and derive forecast errors and revisions.

    Per row (firm i, year t): the one-step growth forecast is
    ``log(f1_level) - log(sales_actual)`` and the stale forecast of the same
    target is ``log(f2_level) - log(f2_base)``, so the revision is available
    immediately; the error additionally needs the year t+1 realization from
    the firm's next row.  Rows missing either quantity are dropped and
    counted.  More than 10% malformed rows aborts the ingestion.
    """
    path = Path(csv_path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    report = IngestReport()
    rows: dict[str, dict[int, IngestRow]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty input file") from None
        if [h.strip() for h in header] != INGEST_HEADER:
            raise DataError(
                f"bad header: expected {','.join(INGEST_HEADER)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            report.rows_in += 1
            try:
                parsed = _parse_row(row, lineno)
            except DataError as exc:
                report.rows_dropped_malformed += 1
                report.diagnostics.append(str(exc))
                log.warning("%s", exc)
                continue
            firm_years = rows.setdefault(parsed.firm_id, {})
            if parsed.fiscal_year in firm_years:
                report.rows_dropped_malformed += 1
                msg = (f"line {lineno}: duplicate (firm_id, fiscal_year)="
                       f"({parsed.firm_id}, {parsed.fiscal_year})")
                report.diagnostics.append(msg)
                log.warning("%s", msg)
                continue
            firm_years[parsed.fiscal_year] = parsed

    if report.rows_in == 0:
        raise DataError("no data rows in input file")
    if report.rows_dropped_malformed > MAX_MALFORMED_FRACTION * report.rows_in:
        raise DataError(
            f"{report.rows_dropped_malformed} of {report.rows_in} rows malformed "
            f"(> {MAX_MALFORMED_FRACTION:.0%}); aborting"
        )

    records = []
    for firm_id in sorted(rows):
        by_year = rows[firm_id]
        for year, row in sorted(by_year.items()):
            nxt = by_year.get(year + 1)
            if nxt is None:
                report.rows_dropped_incomplete += 1
                continue
            f1 = math.log(row.f1_level) - math.log(row.sales_actual)
            f2_prior = math.log(row.f2_level) - math.log(row.f2_base)
            g_next = math.log(nxt.sales_actual) - math.log(row.sales_actual)
            records.append(
                ForecastRecord(
                    firm=firm_id,
                    t=year,
                    f1=f1,
                    f2_prior=f2_prior,
                    error=g_next - f1,
                    revision=f1 - f2_prior,
                )
            )
            report.rows_kept += 1
    log.info(
        "ingest: %d rows in, %d kept, %d malformed, %d incomplete",
        report.rows_in, report.rows_kept,
        report.rows_dropped_malformed, report.rows_dropped_incomplete,
    )
    panel = ForecastPanel(records=records, source="ingested")
    return panel, report
