"""Raw sample ingestion, epoch features, subject gating and feature selection."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._nn import agreement_fraction
from .errors import (
    EmptyResultError,
    InsufficientDataError,
    ParseError,
    SelectionEmptyError,
    ValidationError,
)

log = logging.getLogger(__name__)

STATS = ("MEAN", "MED", "SD")
HOUR = 3600.0


class DegenerateSeparabilityWarning(UserWarning):
    pass


@dataclass
class MultiChannelSeries:
    subject_id: str
    channel_names: list
    timestamps: np.ndarray
    values: np.ndarray
    sample_rates: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channel_names = list(self.channel_names)
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        p = len(self.channel_names)
        if p < 1:
            raise ValidationError("a series needs at least one channel")
        if self.values.ndim != 2 or self.values.shape != (self.timestamps.size, p):
            raise ValidationError(
                f"values must have shape ({self.timestamps.size}, {p}), got {self.values.shape}"
            )
        if np.any(np.diff(self.timestamps) <= 0):
            bad = int(np.flatnonzero(np.diff(self.timestamps) <= 0)[0]) + 1
            raise ValidationError(f"timestamps not strictly increasing at row {bad}")

    @classmethod
    def from_rows(cls, subject_id, channel_names, timestamps, values, sample_rates=None):
        """Build a series from rows in any order."""
        timestamps = np.asarray(timestamps, dtype=float)
        order = np.argsort(timestamps, kind="stable")
        return cls(subject_id, channel_names, timestamps[order],
                   np.asarray(values, dtype=float)[order], dict(sample_rates or {}))

    @property
    def p(self):
        return len(self.channel_names)

    def __len__(self):
        return self.timestamps.size


@dataclass
class EpochFeatureMatrix:
    """Per-epoch features; a row of NaN means the epoch was discarded."""

    subject_id: str
    epoch_length: float
    starts: np.ndarray
    values: np.ndarray
    availability: np.ndarray
    feature_names: list

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.availability = np.asarray(self.availability, dtype=float)
        self.feature_names = list(self.feature_names)
        n = self.starts.size
        if self.values.shape != (n, len(self.feature_names)):
            raise ValidationError("feature matrix shape does not match starts/feature_names")
        if self.availability.shape != (n,):
            raise ValidationError("availability must have one entry per epoch")

    def __len__(self):
        return self.starts.size

    @property
    def present(self):
        """Epochs with every feature value present."""
        return ~np.isnan(self.values).any(axis=1)

    def column(self, name):
        try:
            return self.values[:, self.feature_names.index(name)]
        except ValueError:
            raise KeyError(f"unknown feature {name!r}; have {self.feature_names}") from None

    def columns(self, names):
        return np.column_stack([self.column(n) for n in names])

    def subset(self, mask):
        mask = np.asarray(mask)
        return EpochFeatureMatrix(self.subject_id, self.epoch_length, self.starts[mask],
                                  self.values[mask], self.availability[mask], self.feature_names)

    def to_csv(self, path):
        df = pd.DataFrame(self.values, columns=self.feature_names)
        df.insert(0, "availability", self.availability)
        df.insert(0, "epoch_start", self.starts)
        df.to_csv(path, index=False, float_format="%.17g", na_rep="")

    @classmethod
    def from_csv(cls, path, subject_id=None, epoch_length=None):
        df = pd.read_csv(path, float_precision="round_trip")
        if list(df.columns[:2]) != ["epoch_start", "availability"]:
            raise ParseError(f"{path}: expected header epoch_start,availability,...", line=1)
        starts = df["epoch_start"].to_numpy(float)
        if epoch_length is None:
            epoch_length = float(np.median(np.diff(starts))) if starts.size > 1 else 600.0
        return cls(subject_id or Path(path).stem, epoch_length, starts,
                   df.iloc[:, 2:].to_numpy(float), df["availability"].to_numpy(float),
                   list(df.columns[2:]))


@dataclass
class SubjectGate:
    subject_id: str
    missing_proportion: float
    abnormal_proportion: float
    admitted: bool


def load_series(path, schema=None, subject_id=None, sample_rates=None):
    """Read a ``timestamp,<channels...>`` CSV; empty cells become NaN.

    ``schema`` lists the channels to keep. It defaults to every non-timestamp
    column in the header.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        if not header or header[0] != "timestamp":
            raise ParseError(f"{path}: first column must be 'timestamp'", line=1)
        channels = list(schema) if schema is not None else header[1:]
        missing = [c for c in channels if c not in header]
        if missing:
            raise ParseError(f"{path}: header lacks declared channels {missing}", line=1)
        cols = [header.index(c) for c in channels]
        ts, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                ts.append(float(row[0]))
                rows.append([float(row[c]) if row[c].strip() != "" else np.nan for c in cols])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
    values = np.array(rows, dtype=float).reshape(len(ts), len(channels))
    return MultiChannelSeries(subject_id or path.stem, channels, np.array(ts), values,
                              dict(sample_rates or {}))


def _nominal_rate(times):
    if times.size < 2:
        return None
    return 1.0 / float(np.median(np.diff(times)))


def epochize(series, epoch_length=600.0, availability_threshold=0.9, stats=STATS):
    """Aggregate raw samples into fixed-length epochs.

    Epochs are anchored at the first timestamp rounded down to a multiple of
    ``epoch_length``. Availability is the smallest per-channel ratio of
    present samples to the nominal count; epochs below the threshold keep
    their availability but lose all feature values.
    """
    if epoch_length <= 0:
        raise ValidationError("epoch_length must be positive")
    if len(series) == 0:
        raise EmptyResultError("series is empty; no epochs fit")
    t = series.timestamps
    anchor = np.floor(t[0] / epoch_length) * epoch_length
    k = np.floor((t - anchor) / epoch_length).astype(int)
    n_epochs = int(k[-1]) + 1
    starts = anchor + epoch_length * np.arange(n_epochs)

    columns, avail = [], np.ones(n_epochs)
    names = []
    for j, ch in enumerate(series.channel_names):
        x = series.values[:, j]
        ok = ~np.isnan(x)
        rate = series.sample_rates.get(ch) or _nominal_rate(t[ok])
        g = pd.Series(x[ok]).groupby(k[ok])
        count = g.count().reindex(range(n_epochs), fill_value=0).to_numpy(float)
        expected = epoch_length * rate if rate else 1.0
        avail = np.minimum(avail, np.minimum(1.0, count / expected))
        agg = {
            "MEAN": g.mean(),
            "MED": g.median(),
            "SD": g.std(ddof=1),
        }
        for stat in stats:
            columns.append(agg[stat].reindex(range(n_epochs)).to_numpy(float))
            names.append(f"{ch}_{stat}")
    values = np.column_stack(columns)
    values[avail < availability_threshold] = np.nan
    return EpochFeatureMatrix(series.subject_id, float(epoch_length), starts, values, avail, names)


def gate_subject(epochs, abnormal_mask, expected_epochs=None,
                 max_missing=0.4, max_abnormal=0.4):
    abnormal_mask = np.asarray(abnormal_mask, dtype=bool)
    if abnormal_mask.shape != (len(epochs),):
        raise ValidationError("abnormal_mask length must equal the epoch count")
    present = epochs.present
    total = expected_epochs if expected_epochs is not None else len(epochs)
    n_missing = total - int(present.sum())
    missing = n_missing / total if total else 1.0
    n_present = int(present.sum())
    abnormal = float(abnormal_mask[present].sum() / n_present) if n_present else 1.0
    return SubjectGate(epochs.subject_id, missing, abnormal,
                       bool(missing <= max_missing and abnormal <= max_abnormal))


def clock_hours(times, clock_offset=0.0):
    """Hour of day for times in seconds; ``clock_offset`` is the clock time of t=0 in hours."""
    return np.mod(np.asarray(times, dtype=float) / HOUR + clock_offset, 24.0)


def in_clock_window(times, window, clock_offset=0.0):
    """Membership in a daily ``(start_hour, end_hour)`` interval, wrapping at midnight."""
    h = clock_hours(times, clock_offset)
    lo, hi = window
    if lo <= hi:
        return (h >= lo) & (h < hi)
    return (h >= lo) | (h < hi)


def swsi(values, times, sleep_window, wake_window, clock_offset=0.0):
    """Sleep/wake separability of one feature over putative clock windows."""
    values = np.asarray(values, dtype=float)
    ok = ~np.isnan(values)
    in_sleep = in_clock_window(times, sleep_window, clock_offset) & ok
    in_wake = in_clock_window(times, wake_window, clock_offset) & ok & ~in_sleep
    if not in_sleep.any() or not in_wake.any():
        raise InsufficientDataError("a putative window captures no available epochs")
    sel = in_sleep | in_wake
    v = values[sel]
    putative = in_sleep[sel].astype(int)
    if np.all(v == v[0]):
        warnings.warn("all values identical; SWSI decided by tie-break only",
                      DegenerateSeparabilityWarning, stacklevel=2)
    return agreement_fraction(v, putative)


def swsi_table(subjects, sleep_window, wake_window, clock_offset=0.0, features=None):
    """SWSI per (subject, feature); NaN where a window is empty."""
    features = features or subjects[0].feature_names
    table = np.full((len(subjects), len(features)), np.nan)
    for i, em in enumerate(subjects):
        for j, name in enumerate(features):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DegenerateSeparabilityWarning)
                    table[i, j] = swsi(em.column(name), em.starts, sleep_window,
                                       wake_window, clock_offset)
            except InsufficientDataError:
                pass
    return pd.DataFrame(table, index=[s.subject_id for s in subjects], columns=features)


def select_features(subjects, sleep_window, wake_window, swsi_threshold=0.7,
                    subject_fraction=0.75, correlation_dedup=0.95, clock_offset=0.0,
                    features=None):
    """Pick training features by SWSI, then drop near-duplicates.

    A feature is kept if its SWSI exceeds ``swsi_threshold`` for at least
    ``subject_fraction`` of the subjects. Among kept pairs whose pooled
    |Pearson r| exceeds ``correlation_dedup``, the one with the lower 25%
    SWSI quantile is dropped.
    """
    if not subjects:
        raise ValidationError("need at least one admitted subject")
    table = swsi_table(subjects, sleep_window, wake_window, clock_offset, features)
    passing = (table > swsi_threshold).mean(axis=0)
    kept = [f for f in table.columns if passing[f] >= subject_fraction]
    if not kept:
        report = {f: table[f].tolist() for f in table.columns}
        raise SelectionEmptyError("no feature passes the SWSI rule", report)
    q25 = table.quantile(0.25)

    pooled = np.vstack([s.columns(kept) for s in subjects])
    pooled = pooled[~np.isnan(pooled).any(axis=1)]
    if len(kept) > 1 and pooled.shape[0] > 2:
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.abs(np.corrcoef(pooled, rowvar=False))
        pairs = [(corr[a, b], a, b) for a in range(len(kept)) for b in range(a + 1, len(kept))
                 if corr[a, b] > correlation_dedup]
        dropped = set()
        for _, a, b in sorted(pairs, reverse=True):
            if a in dropped or b in dropped:
                continue
            weaker = a if q25[kept[a]] < q25[kept[b]] else b
            dropped.add(weaker)
            log.info("dropping %s (correlated with %s)", kept[weaker], kept[a + b - weaker])
        kept = [f for i, f in enumerate(kept) if i not in dropped]
    return kept
