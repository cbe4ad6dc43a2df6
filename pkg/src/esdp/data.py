"""Loading and aligning mobility, epidemic and index time series.

All inputs are local UTF-8 CSV files with ISO-8601 dates:

* mobility: ``date,rr,gp,pa,ts,wp,re``
* cases:    ``date,active,recovered,deaths`` (raw counts)
* index:    ``date,close``
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .epidemic import CONSERVATION_TOL

__all__ = [
    "DataError",
    "MOBILITY_COLUMNS",
    "MobilityTimeSeries",
    "EpidemicTimeSeries",
    "IndexTimeSeries",
    "AlignedDataset",
    "load_mobility_csv",
    "load_cases_csv",
    "load_index_csv",
    "moving_average",
    "align",
    "write_aligned_csv",
    "read_aligned_csv",
]

MOBILITY_COLUMNS = ("rr", "gp", "pa", "ts", "wp", "re")
MA_WINDOW = 5
MIN_OVERLAP_DAYS = 10


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class MobilityTimeSeries:
    dates: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1, 6)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(values):
            raise DataError("mobility dates and values differ in length")
        _check_increasing(self.dates, "mobility")
        if values.size and np.abs(values).max() > 1.0:
            k = int(np.argmax(np.abs(values).max(axis=1)))
            raise DataError(f"mobility index outside [-1, 1] on {self.dates[k]}")

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class EpidemicTimeSeries:
    dates: tuple
    states: np.ndarray
    population: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float).reshape(-1, 4)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "dates", tuple(self.dates))
        if not self.population > 0:
            raise DataError("population must be positive")
        if len(self.dates) != len(states):
            raise DataError("epidemic dates and states differ in length")
        _check_increasing(self.dates, "epidemic")
        if states.size:
            if states.min() < 0 or states.max() > 1:
                raise DataError("epidemic fractions must lie in [0, 1]")
            if np.abs(states.sum(axis=1) - 1.0).max() > CONSERVATION_TOL:
                raise DataError("epidemic fractions do not sum to one")

    def __len__(self):
        return len(self.dates)

    @property
    def confirmed(self) -> np.ndarray:
        return self.states[:, 1:].sum(axis=1)


@dataclass(frozen=True)
class IndexTimeSeries:
    dates: tuple
    closes: np.ndarray

    def __post_init__(self):
        closes = np.asarray(self.closes, dtype=float).reshape(-1)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(closes):
            raise DataError("index dates and closes differ in length")
        _check_increasing(self.dates, "index")
        if closes.size and not (closes > 0).all():
            raise DataError("index closes must be positive")

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class AlignedDataset:
    """Calibration-ready daily panel.

    ``mobility_ma`` rows are NaN where fewer than five mobility
    observations are available; ``index_close`` is NaN on non-trading days.
    """

    dates: tuple
    mobility: np.ndarray
    mobility_ma: np.ndarray
    epidemic: np.ndarray
    index_close: np.ndarray
    beta_start_date: dt.date | None = None
    gamma_delta_start_date: dt.date | None = None

    def __len__(self):
        return len(self.dates)

    def date_mask(self, start=None, end=None) -> np.ndarray:
        d = np.array(self.dates, dtype="datetime64[D]")
        mask = np.ones(len(d), dtype=bool)
        if start is not None:
            mask &= d >= np.datetime64(start, "D")
        if end is not None:
            mask &= d <= np.datetime64(end, "D")
        return mask


def _check_increasing(dates, what):
    for a, b in zip(dates, dates[1:]):
        if b == a:
            raise DataError(f"duplicate {what} date {b}")
        if b < a:
            raise DataError(f"{what} dates out of order at {b}")


def _parse_date(text, path, row):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"{path}: row {row}: bad date {text!r}") from None


def _parse_float(text, path, row, col):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise DataError(f"{path}: row {row}: unparseable {col} value {text!r}") from None


def _read_rows(path, columns):
    """Yield ``(row_number, record)`` for a CSV with the required columns."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip().lower() for h in (reader.fieldnames or [])]
        missing = [c for c in ("date", *columns) if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        for row_number, rec in enumerate(reader, start=2):
            yield row_number, rec


def _check_consecutive(dates, path):
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise DataError(f"{path}: gap between {a} and {b}; missing days are not imputed")


def load_mobility_csv(path, units: str = "fraction") -> MobilityTimeSeries:
    """Load daily mobility indices.

    ``units="percent"`` divides every value by 100.  Dates must be
    consecutive days.
    """
    if units not in ("fraction", "percent"):
        raise ValueError(f"unknown mobility units {units!r}")
    scale = 0.01 if units == "percent" else 1.0
    dates, values = [], []
    for row, rec in _read_rows(path, MOBILITY_COLUMNS):
        date = _parse_date(rec["date"], path, row)
        vec = [_parse_float(rec[c], path, row, c) * scale for c in MOBILITY_COLUMNS]
        for c, v in zip(MOBILITY_COLUMNS, vec):
            if not abs(v) <= 1.0:
                raise DataError(f"{path}: row {row}: {c}={v} outside [-1, 1]")
        if dates and date == dates[-1]:
            raise DataError(f"{path}: row {row}: duplicate date {date}")
        dates.append(date)
        values.append(vec)
    if not dates:
        raise DataError(f"{path}: no data rows")
    _check_increasing(dates, f"{path}: mobility")
    _check_consecutive(dates, path)
    return MobilityTimeSeries(tuple(dates), np.array(values))


def load_cases_csv(path, population: float, cleaning_start: dt.date | None = None
                   ) -> EpidemicTimeSeries:
    """Load raw active/recovered/death counts and convert to fractions.

    Cumulative confirmed cases must not decrease on or after
    ``cleaning_start``; earlier decreases only warn.  With no
    ``cleaning_start`` every decrease is an error.
    """
    if not population > 0:
        raise DataError("population must be positive")
    dates, counts = [], []
    for row, rec in _read_rows(path, ("active", "recovered", "deaths")):
        date = _parse_date(rec["date"], path, row)
        ird = [_parse_float(rec[c], path, row, c) for c in ("active", "recovered", "deaths")]
        if min(ird) < 0:
            raise DataError(f"{path}: row {row}: negative count")
        if sum(ird) >= population:
            raise DataError(f"{path}: row {row}: confirmed cases reach the population")
        if dates and date == dates[-1]:
            raise DataError(f"{path}: row {row}: duplicate date {date}")
        dates.append(date)
        counts.append(ird)
    if not dates:
        raise DataError(f"{path}: no data rows")
    _check_increasing(dates, f"{path}: epidemic")
    _check_consecutive(dates, path)

    ird = np.array(counts) / population
    confirmed = ird.sum(axis=1)
    for k in np.flatnonzero(np.diff(confirmed) < 0) + 1:
        msg = f"{path}: cumulative confirmed decreases on {dates[k]}"
        if cleaning_start is None or dates[k] >= cleaning_start:
            raise DataError(msg)
        warnings.warn(msg + " (before cleaning start, tolerated)", RuntimeWarning, stacklevel=2)
    states = np.column_stack([1.0 - confirmed, ird])
    return EpidemicTimeSeries(tuple(dates), states, float(population))


def load_index_csv(path) -> IndexTimeSeries:
    dates, closes = [], []
    for row, rec in _read_rows(path, ("close",)):
        date = _parse_date(rec["date"], path, row)
        close = _parse_float(rec["close"], path, row, "close")
        if not close > 0:
            raise DataError(f"{path}: row {row}: non-positive close")
        if dates and date <= dates[-1]:
            raise DataError(f"{path}: row {row}: date {date} not after {dates[-1]}")
        dates.append(date)
        closes.append(close)
    return IndexTimeSeries(tuple(dates), np.array(closes))


def moving_average(values, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean over ``window`` rows; the first ``window - 1`` rows are NaN."""
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape, np.nan)
    if len(v) >= window:
        # windowed sums rather than a running cumsum: no drift on long series
        win = np.lib.stride_tricks.sliding_window_view(v, window, axis=0)
        out[window - 1:] = win.sum(axis=-1) / window
    return out


def align(mobility: MobilityTimeSeries, epidemic: EpidemicTimeSeries,
          index: IndexTimeSeries | None = None, beta_start_date=None,
          gamma_delta_start_date=None) -> AlignedDataset:
    """Join the three series on the epidemic dates."""
    mob_pos = {d: k for k, d in enumerate(mobility.dates)}
    missing = [d for d in epidemic.dates if d not in mob_pos]
    overlap = len(epidemic.dates) - len(missing)
    if overlap < MIN_OVERLAP_DAYS:
        raise DataError(f"mobility and epidemic overlap on {overlap} days, need {MIN_OVERLAP_DAYS}")
    if missing:
        raise DataError(f"no mobility observation on epidemic date {missing[0]}")

    ma_all = moving_average(mobility.values)
    rows = [mob_pos[d] for d in epidemic.dates]
    closes = np.full(len(epidemic), np.nan)
    if index is not None:
        idx_pos = {d: c for d, c in zip(index.dates, index.closes)}
        for k, d in enumerate(epidemic.dates):
            if d in idx_pos:
                closes[k] = idx_pos[d]
    return AlignedDataset(
        dates=tuple(epidemic.dates),
        mobility=mobility.values[rows].copy(),
        mobility_ma=ma_all[rows].copy(),
        epidemic=epidemic.states.copy(),
        index_close=closes,
        beta_start_date=beta_start_date,
        gamma_delta_start_date=gamma_delta_start_date,
    )


_ALIGNED_HEADER = ("date", *MOBILITY_COLUMNS, *(f"ma_{c}" for c in MOBILITY_COLUMNS),
                   "s", "i", "r", "d", "close")


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def write_aligned_csv(dataset: AlignedDataset, path=None) -> str:
    """Write the canonical aligned CSV; returns the text as well."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_ALIGNED_HEADER)
    for k, d in enumerate(dataset.dates):
        w.writerow([d.isoformat(),
                    *(_fmt(v) for v in dataset.mobility[k]),
                    *(_fmt(v) for v in dataset.mobility_ma[k]),
                    *(_fmt(v) for v in dataset.epidemic[k]),
                    _fmt(dataset.index_close[k])])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_aligned_csv(path, beta_start_date=None, gamma_delta_start_date=None) -> AlignedDataset:
    dates, cols = [], []
    for row, rec in _read_rows(path, _ALIGNED_HEADER[1:]):
        dates.append(_parse_date(rec["date"], path, row))
        cols.append([np.nan if rec[c] == "" else _parse_float(rec[c], path, row, c)
                     for c in _ALIGNED_HEADER[1:]])
    a = np.array(cols, dtype=float).reshape(-1, len(_ALIGNED_HEADER) - 1)
    return AlignedDataset(tuple(dates), a[:, :6], a[:, 6:12], a[:, 12:16], a[:, 16],
                          beta_start_date, gamma_delta_start_date)
