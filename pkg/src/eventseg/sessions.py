"""Label smoothing, session construction, day alignment and session-level features."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ValidationError
from .labels import EXCLUDED, SLEEP, WAKE, LabelSequence

HOUR = 3600.0
STAT_SUFFIXES = ("MEAN", "MED", "SD")
SUMMARIES = ("mean", "median", "sd")
KINDS = ("sleep", "wake")
DAY_START_HOUR = 5.0
LOG_FLOOR = 1e-12


class OrphanReinsertionWarning(UserWarning):
    pass


def _runs(mask):
    """(start, stop) index pairs of the True runs of a boolean vector."""
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return np.flatnonzero(d == 1), np.flatnonzero(d == -1)


def median_filter(x, window):
    """One pass of a binary running median; windows shrink symmetrically at the edges."""
    x = np.asarray(x, dtype=np.int64)
    n = x.size
    h = window // 2
    idx = np.arange(n)
    half = np.minimum(np.minimum(idx, n - 1 - idx), h)
    c = np.concatenate([[0], np.cumsum(x)])
    ones = c[idx + half + 1] - c[idx - half]
    return (2 * ones > 2 * half + 1).astype(np.int64)


def _root_median(x, window):
    """Iterate the median filter until nothing changes."""
    for _ in range(x.size + 1):
        y = median_filter(x, window)
        if np.array_equal(y, x):
            return y
        x = y
    return x


def _drop_short_sleep(x, min_epochs):
    x = x.copy()
    starts, stops = _runs(x == SLEEP)
    for s, e in zip(starts, stops):
        if e - s < min_epochs:
            x[s:e] = WAKE
    return x


def _epoch_seconds(times):
    d = np.diff(np.asarray(times, dtype=float))
    d = d[d > 0]
    return float(d.min()) if d.size else 600.0


def smooth_labels(labels, window_epochs=9, min_sleep_minutes=60.0, epoch_seconds=None):
    """Median-smooth a label stream and remove sleep runs shorter than ``min_sleep_minutes``.

    Each contiguous stretch of labeled epochs is filtered independently;
    excluded epochs (-1) are left in place. The median filter is iterated
    to a root so that smoothing is idempotent.
    """
    if window_epochs < 1 or window_epochs % 2 == 0:
        raise ValidationError("window_epochs must be a positive odd integer")
    if epoch_seconds is None:
        epoch_seconds = _epoch_seconds(labels.times)
    min_epochs = int(np.ceil(min_sleep_minutes * 60.0 / epoch_seconds - 1e-9))
    out = labels.labels.copy()
    starts, stops = _runs(labels.labeled)
    for s, e in zip(starts, stops):
        seg = _root_median(out[s:e], window_epochs)
        out[s:e] = _drop_short_sleep(seg, min_epochs)
    return LabelSequence(labels.times.copy(), out, labels.tags.copy())


def reinsert_labels(labels, reinsertions):
    """Give each reinserted epoch the label of the nearest preceding labeled epoch."""
    out = labels.copy()
    idx = sorted(v.epoch_index for v in reinsertions if v.reinserted)
    if not idx:
        return out
    pending = set(idx)
    for i in idx:
        prev = np.flatnonzero(out.labeled[:i])
        if prev.size:
            out.labels[i] = out.labels[prev[-1]]
        else:
            nxt = [j for j in np.flatnonzero(out.labeled[i + 1:]) + i + 1 if j not in pending]
            if not nxt:
                continue
            warnings.warn(f"reinserted epoch {i} has no preceding label; using the following one",
                          OrphanReinsertionWarning, stacklevel=2)
            out.labels[i] = out.labels[nxt[0]]
        out.tags[i] = "reinserted"
        pending.discard(i)
    return out


@dataclass
class Session:
    kind: str
    start: float
    end: float
    day_index: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"session kind must be one of {KINDS}")
        if not self.end > self.start:
            raise ValidationError("session end must follow its start")

    @property
    def duration_hours(self):
        return (self.end - self.start) / HOUR


def _abs_hours(t, clock_offset):
    return np.asarray(t, dtype=float) / HOUR + clock_offset


def assign_day(start, origin, clock_offset=0.0, kind="sleep"):
    """Calendar day (1 = day of ``origin``) a session belongs to.

    Sleep sessions whose onset is before 05:00 belong to the previous day.
    """
    a = _abs_hours(start, clock_offset)
    base = np.floor(_abs_hours(origin, clock_offset) / 24.0)
    day = int(np.floor(a / 24.0) - base + 1)
    if kind == "sleep" and np.mod(a, 24.0) < DAY_START_HOUR:
        day -= 1
    return day


def build_sessions(labels, reinsertions=(), clock_offset=0.0, epoch_seconds=None):
    """Merge maximal same-label runs into sessions after reinsertion.

    Excluded epochs break sessions. ``clock_offset`` is the clock hour of t=0.
    """
    if epoch_seconds is None:
        epoch_seconds = _epoch_seconds(labels.times)
    lab = reinsert_labels(labels, reinsertions)
    y = lab.labels
    t = lab.times
    if y.size == 0:
        return []
    # a session breaks on a label change, an exclusion or a time gap
    brk = np.ones(y.size, dtype=bool)
    brk[1:] = (y[1:] != y[:-1]) | (np.diff(t) > epoch_seconds * 1.001)
    starts = np.flatnonzero(brk)
    stops = np.append(starts[1:], y.size)
    out = []
    for s, e in zip(starts, stops):
        if y[s] == EXCLUDED:
            continue
        kind = "sleep" if y[s] == SLEEP else "wake"
        start, end = t[s], t[e - 1] + epoch_seconds
        out.append(Session(kind, float(start), float(end),
                           assign_day(start, t[0], clock_offset, kind)))
    return out


def sessions_frame(sessions, subject):
    return pd.DataFrame({
        "subject": [subject] * len(sessions),
        "day": [s.day_index for s in sessions],
        "kind": [s.kind for s in sessions],
        "start": [s.start for s in sessions],
        "end": [s.end for s in sessions],
    }, columns=["subject", "day", "kind", "start", "end"])


def feature_channels(feature_names):
    """Channels that carry all three local statistics, in first-seen order."""
    chans = []
    for name in feature_names:
        ch, _, stat = name.rpartition("_")
        if stat in STAT_SUFFIXES and ch and ch not in chans:
            if all(f"{ch}_{s}" in feature_names for s in STAT_SUFFIXES):
                chans.append(ch)
    return chans


def feature_names(channels):
    names = ["total_duration", "night_duration", "onset", "offset"]
    for kind in KINDS:
        for ch in channels:
            for stat in STAT_SUFFIXES:
                f = f"{ch}_{stat}"
                names += [f"{f}.{s}.{kind}" for s in SUMMARIES]
                names += [f"{f}.linear.coef{i}.{kind}" for i in range(2)]
                names += [f"{f}.quad.coef{i}.{kind}" for i in range(3)]
    return names


def polyfit_coefs(tau, v, degree):
    """OLS coefficients (intercept first) of ``v`` on powers of ``tau``."""
    ok = ~np.isnan(v)
    tau, v = tau[ok], v[ok]
    if tau.size < degree + 1:
        return np.full(degree + 1, np.nan)
    A = np.vander(tau, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return coef


def _kind_features(values, tau, prefix, kind):
    out = {}
    ok = ~np.isnan(values)
    v = values[ok]
    if v.size:
        out[f"{prefix}.mean.{kind}"] = float(v.mean())
        out[f"{prefix}.median.{kind}"] = float(np.median(v))
        sd = float(v.std(ddof=1)) if v.size > 1 else np.nan
        out[f"{prefix}.sd.{kind}"] = float(np.log(max(sd, LOG_FLOOR))) if not np.isnan(sd) else np.nan
    lin = polyfit_coefs(tau, values, 1)
    quad = polyfit_coefs(tau, values, 2)
    for i, c in enumerate(lin):
        out[f"{prefix}.linear.coef{i}.{kind}"] = float(c)
    for i, c in enumerate(quad):
        out[f"{prefix}.quad.coef{i}.{kind}"] = float(c)
    return out


def session_features(sessions, epochs, clock_offset=0.0, subject=None):
    """One row per day with the duration, timing and per-channel session features.

    Same-kind sessions of a day are pooled epoch by epoch (so longer sessions
    weigh more), with time normalized to [0, 1] within each session.
    """
    if not sessions:
        raise ValidationError("no sessions to summarize")
    channels = feature_channels(epochs.feature_names)
    names = feature_names(channels)
    days = sorted({s.day_index for s in sessions})
    origin = epochs.starts[0] if len(epochs) else sessions[0].start
    base = np.floor(_abs_hours(origin, clock_offset) / 24.0)
    rows = []
    for day in days:
        row = dict.fromkeys(names, np.nan)
        todays = [s for s in sessions if s.day_index == day]
        sleeps = [s for s in todays if s.kind == "sleep"]
        if sleeps:
            durs = [s.duration_hours for s in sleeps]
            night = sleeps[int(np.argmax(durs))]
            midnight = (base + day - 1) * 24.0
            row["total_duration"] = float(sum(durs))
            row["night_duration"] = night.duration_hours
            row["onset"] = float(_abs_hours(night.start, clock_offset) - midnight)
            row["offset"] = float(_abs_hours(night.end, clock_offset) - midnight)
        for kind in KINDS:
            group = [s for s in todays if s.kind == kind]
            if not group:
                continue
            idx, tau = [], []
            for s in group:
                sel = np.flatnonzero((epochs.starts >= s.start) & (epochs.starts < s.end))
                if sel.size == 0:
                    continue
                span = epochs.starts[sel[-1]] - epochs.starts[sel[0]]
                idx.append(sel)
                tau.append((epochs.starts[sel] - epochs.starts[sel[0]]) / span if span > 0
                           else np.zeros(sel.size))
            if not idx:
                continue
            idx = np.concatenate(idx)
            tau = np.concatenate(tau)
            for ch in channels:
                for stat in STAT_SUFFIXES:
                    f = f"{ch}_{stat}"
                    row.update(_kind_features(epochs.column(f)[idx], tau, f, kind))
        rows.append(row)
    df = pd.DataFrame(rows, columns=names)
    df.insert(0, "day", days)
    df.insert(0, "subject", subject if subject is not None else epochs.subject_id)
    return df
