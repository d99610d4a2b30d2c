"""Loading daily climate/flow records and turning them into anomaly panels."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .core import DataError, PanelKind, PanelSpec, SeriesPanel

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365
DEFAULT_SCHEMA = {
    "date": "date",
    "precipitation": "precip_mm",
    "temperature": "temp_c",
    "flow": "flow_mm",
}
LOG_BASE = "e"


class SchemaError(DataError):
    pass


def load_csv(path, schema: dict | None = None, require_flow: bool = True) -> pd.DataFrame:
    """Read a daily record file into a frame with columns
    ``date, precipitation, temperature[, flow]`` sorted by date.

    ``schema`` maps those canonical names to the column names in the file.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)

    wanted = ["date", "precipitation", "temperature"] + (["flow"] if require_flow else [])
    missing = [schema[name] for name in wanted if schema[name] not in raw.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s): {', '.join(missing)}")

    out = pd.DataFrame()
    out["date"] = pd.to_datetime(raw[schema["date"]], format="%Y-%m-%d", errors="coerce")
    for name in wanted[1:]:
        out[name] = pd.to_numeric(raw[schema[name]], errors="coerce")

    bad_rows = np.flatnonzero(out.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        # +2: 1-based line numbers with the header on line 1
        lines = ", ".join(str(i + 2) for i in bad_rows[:20])
        more = "" if bad_rows.size <= 20 else f" (+{bad_rows.size - 20} more)"
        raise DataError(f"{path}: unparseable values on line(s) {lines}{more}")

    dup = out["date"].duplicated(keep=False)
    if dup.any():
        first = out.loc[dup, "date"].iloc[0].date()
        raise DataError(f"{path}: duplicate date {first}")
    if (out["precipitation"] < 0).any():
        raise DataError(f"{path}: negative precipitation")
    if require_flow and (out["flow"] < 0).any():
        raise DataError(f"{path}: negative flow")

    return out.sort_values("date", kind="stable").reset_index(drop=True)


def split_rain_snow(records: pd.DataFrame, threshold_celsius: float = 0.0) -> np.ndarray:
    """Precipitation counted as rain only on days strictly warmer than the threshold."""
    precip = records["precipitation"].to_numpy(dtype=float)
    temp = records["temperature"].to_numpy(dtype=float)
    return np.where(temp > threshold_celsius, precip, 0.0)


def log_transform_flow(flow) -> np.ndarray:
    """Natural ``log(Q + 1)``."""
    flow = np.asarray(flow, dtype=float)
    if np.any(flow < 0):
        raise DataError("flow must be non-negative for log(Q+1)")
    return np.log1p(flow)


def remove_leap_days(records: pd.DataFrame) -> pd.DataFrame:
    """Drop Feb 29 and reject any year left with other than 365 days."""
    dates = records["date"]
    keep = ~((dates.dt.month == 2) & (dates.dt.day == 29))
    out = records.loc[keep].reset_index(drop=True)
    counts = out["date"].dt.year.value_counts().sort_index()
    partial = counts[counts != DAYS_PER_YEAR]
    if len(partial):
        detail = ", ".join(f"{year}: {count} days" for year, count in partial.items())
        raise DataError(f"incomplete years after leap-day removal ({detail})")
    return out


def seasonal_demean(panel: SeriesPanel) -> tuple[SeriesPanel, np.ndarray]:
    """Subtract the day-of-year mean across replicates.

    Returns the anomaly panel and the ``T`` seasonal means.
    """
    grid = panel.as_grid()
    means = grid.mean(axis=0)
    anomalies = grid - means
    # second pass removes the rounding residue of the first subtraction
    anomalies -= anomalies.mean(axis=0)
    return SeriesPanel(panel.spec, anomalies.ravel(), PanelKind.ANOMALY), means


def prepare_panels(
    records: pd.DataFrame, max_lag: int, threshold_celsius: float = 0.0
) -> tuple[SeriesPanel, SeriesPanel, pd.DataFrame]:
    """Full preprocessing: rain/snow split, ``log(Q+1)``, leap-day removal, demeaning.

    Returns anomaly panels for rainfall and transformed flow, and a frame of
    seasonal means (``day_of_year, mean_x, mean_y``; day labels 1-based).
    """
    if "flow" not in records or records["flow"].isna().any():
        raise DataError("flow values are required to fit")
    records = remove_leap_days(records)
    n_years = len(records) // DAYS_PER_YEAR
    spec = PanelSpec(DAYS_PER_YEAR, max_lag, n_years)
    rain = SeriesPanel(spec, split_rain_snow(records, threshold_celsius))
    flow = SeriesPanel(spec, log_transform_flow(records["flow"].to_numpy()))
    x, mean_x = seasonal_demean(rain)
    y, mean_y = seasonal_demean(flow)
    log.info("prepared %d years x %d days, D=%d", n_years, DAYS_PER_YEAR, max_lag)
    means = pd.DataFrame(
        {"day_of_year": np.arange(1, DAYS_PER_YEAR + 1), "mean_x": mean_x, "mean_y": mean_y}
    )
    return x, y, means
