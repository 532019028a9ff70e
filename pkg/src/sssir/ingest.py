"""Loading case-count series and deriving the observed infectious proportion.

The raw input is a CSV of cumulative confirmed / recovered / deceased counts
per date. The active confirmed count z(t) = confirmed - recovered - deceased,
scaled by the population and an identification rate p (the fraction of truly
infectious people captured as confirmed cases), gives the observed infectious
proportion y(t) = z(t) / (N * p).

The Japan analysis window runs 2020-03-01 to 2020-04-22 (53 days, day 1 =
March 1 on the model time axis).
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
import requests

__all__ = [
    "IngestError",
    "RawSeries",
    "ObservationSeries",
    "load_csv",
    "derive_observations",
    "fetch_dataset",
    "bundled_data_path",
    "day_to_date",
    "date_to_day",
    "DAY_ZERO",
    "DEFAULT_WINDOW",
    "POPULATION_JAPAN",
    "IDENTIFICATION_RATES",
]

log = logging.getLogger(__name__)

DAY_ZERO = date(2020, 2, 29)  # model day 1 = 2020-03-01
DEFAULT_WINDOW = (date(2020, 3, 1), date(2020, 4, 22))
POPULATION_JAPAN = 1.265e8
IDENTIFICATION_RATES = (0.05, 0.1, 0.2)

_DEFAULT_COLUMNS = {"date": "date", "confirmed": "confirmed", "recovered": "recovered", "deaths": "deaths"}


class IngestError(ValueError):
    """Raised for malformed or inconsistent input data."""


def day_to_date(day: float) -> date:
    """Calendar date of a model day index (day 1 = 2020-03-01)."""
    return DAY_ZERO + timedelta(days=round(day))


def date_to_day(d: date) -> int:
    return (d - DAY_ZERO).days


@dataclass(frozen=True)
class RawSeries:
    """Cumulative confirmed/recovered/deceased counts on consecutive dates."""

    dates: tuple[date, ...]
    confirmed: np.ndarray
    recovered: np.ndarray
    deceased: np.ndarray

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class ObservationSeries:
    """Observed infectious proportions y(t) over an analysis window."""

    dates: tuple[date, ...]
    y: np.ndarray
    z: np.ndarray
    population_n: float
    p: float

    @property
    def t(self) -> int:
        return len(self.dates)


def load_csv(path, columns: dict[str, str] | None = None) -> RawSeries:
    """Parse and validate a cumulative case-count CSV.

    ``columns`` maps the canonical names (date, confirmed, recovered, deaths)
    to the file's header names, for datasets with a different schema.
    """
    colmap = dict(_DEFAULT_COLUMNS)
    if columns:
        colmap.update(columns)
    try:
        frame = pd.read_csv(path)
    except Exception as exc:
        raise IngestError(f"cannot parse CSV {path}: {exc}") from exc
    if frame.empty:
        raise IngestError(f"no data rows in {path}")
    missing = [name for name in colmap.values() if name not in frame.columns]
    if missing:
        raise IngestError(f"missing columns {missing} in {path} (have {list(frame.columns)})")

    try:
        dates = [date.fromisoformat(str(v)) for v in frame[colmap["date"]]]
    except ValueError as exc:
        raise IngestError(f"unparseable date in {path}: {exc}") from exc

    series = {}
    for key in ("confirmed", "recovered", "deaths"):
        col = frame[colmap[key]]
        if col.isna().any() or not np.issubdtype(col.dtype, np.number):
            raise IngestError(f"column {colmap[key]!r} has missing or non-numeric values")
        arr = col.to_numpy(dtype=np.int64)
        if np.any(arr < 0):
            raise IngestError(f"negative counts in column {colmap[key]!r}")
        series[key] = arr

    order = np.argsort(np.array([d.toordinal() for d in dates]))
    dates = [dates[k] for k in order]
    for key in series:
        series[key] = series[key][order]
    if len(set(dates)) != len(dates):
        dup = [d for k, d in enumerate(dates[1:], 1) if d == dates[k - 1]]
        raise IngestError(f"duplicate dates: {dup[:3]}")

    for key in ("confirmed", "recovered", "deaths"):
        arr = series[key]
        drops = np.flatnonzero(np.diff(arr) < 0)
        if drops.size:
            d = dates[drops[0] + 1]
            raise IngestError(f"cumulative {key} decreases on {d.isoformat()}")
    excess = series["recovered"] + series["deaths"] > series["confirmed"]
    if np.any(excess):
        d = dates[int(np.flatnonzero(excess)[0])]
        raise IngestError(f"recovered + deceased exceed confirmed on {d.isoformat()}")

    return RawSeries(tuple(dates), series["confirmed"], series["recovered"], series["deaths"])


def derive_observations(
    raw: RawSeries,
    p: float,
    window: tuple[date, date] = DEFAULT_WINDOW,
    population_n: float = POPULATION_JAPAN,
) -> ObservationSeries:
    """Derive y(t) = z(t) / (N p) over the analysis window.

    The window must be fully covered by consecutive dates in ``raw``; interior
    gaps are an error rather than silently dropped. z(t) must be strictly
    positive (the Beta observation model has support on (0, 1)).
    """
    if not 0 < p <= 1:
        raise IngestError(f"identification rate p={p} outside (0, 1]")
    start, end = window
    if end < start:
        raise IngestError("window end precedes window start")
    index = {d: k for k, d in enumerate(raw.dates)}
    n_days = (end - start).days + 1
    rows = []
    for k in range(n_days):
        d = start + timedelta(days=k)
        if d not in index:
            raise IngestError(f"date {d.isoformat()} missing from data (window must be gap-free)")
        rows.append(index[d])
    rows = np.asarray(rows)
    z = raw.confirmed[rows] - raw.recovered[rows] - raw.deceased[rows]
    nonpos = np.flatnonzero(z <= 0)
    if nonpos.size:
        d = start + timedelta(days=int(nonpos[0]))
        raise IngestError(f"active confirmed count is not positive on {d.isoformat()}")
    y = z / (population_n * p)
    if np.any(y >= 1):
        raise IngestError("observed proportion reaches 1; check population and p")
    dates = tuple(start + timedelta(days=k) for k in range(n_days))
    return ObservationSeries(dates, y.astype(float), z.astype(np.int64), float(population_n), float(p))


def bundled_data_path() -> Path:
    """Path of the packaged Japan case-count snapshot."""
    return Path(resources.files("sssir").joinpath("assets/japan_covid19.csv"))


def _cache_dir() -> Path:
    env = os.environ.get("SSSIR_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "sssir"


def fetch_dataset(url: str, cache_dir: Path | None = None, timeout: float = 30.0) -> Path:
    """Download a case-count CSV to the cache directory and return its path.

    On network failure the bundled snapshot is returned with a warning, so
    offline runs stay reproducible. A payload whose first line does not look
    like a CSV header (e.g. an HTML error page) raises IngestError.
    """
    cache = Path(cache_dir) if cache_dir else _cache_dir()
    cache.mkdir(parents=True, exist_ok=True)
    target = cache / (url.rstrip("/").rsplit("/", 1)[-1] or "dataset.csv")
    try:
        resp = requests.get(url, timeout=timeout)
        resp.raise_for_status()
        payload = resp.content
    except requests.RequestException as exc:
        bundle = bundled_data_path()
        if bundle.exists():
            log.warning("download of %s failed (%s); falling back to bundled snapshot", url, exc)
            return bundle
        raise IngestError(f"cannot download {url} and no bundled snapshot available: {exc}") from exc
    if not payload.strip():
        raise IngestError(f"empty payload from {url}")
    header = payload.splitlines()[0].decode("utf-8", errors="replace")
    if "," not in header or header.lstrip().startswith("<"):
        raise IngestError(f"payload from {url} does not look like a CSV (header {header[:60]!r})")
    target.write_bytes(payload)
    return target
