"""Fisher LDA, naive-Bayes projected classification and gradual self-training."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._nn import agreement_fraction
from .errors import ClassStarvationError, ConfigError, ValidationError
from .labels import EXCLUDED, LabelSequence

log = logging.getLogger(__name__)


class DegenerateDirectionWarning(UserWarning):
    pass


class CarryForwardWarning(UserWarning):
    pass


@dataclass
class FldaState:
    weights: np.ndarray
    class_means: tuple
    class_variances: tuple
    gamma: float = 1.0
    trained_on: tuple = (np.nan, np.nan)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(self.weights)) or not np.linalg.norm(self.weights) > 0:
            raise ValidationError("FLDA weights must be finite and nonzero")
        if min(self.class_variances) <= 0:
            raise ValidationError("class variances must be positive")
        if self.gamma <= 0:
            raise ValidationError("gamma must be positive")

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "class_means": list(map(float, self.class_means)),
            "class_variances": list(map(float, self.class_variances)),
            "gamma": float(self.gamma),
            "trained_on": list(map(float, self.trained_on)),
        }


def _check_classes(y):
    counts = np.bincount(np.asarray(y, dtype=int), minlength=2)[:2]
    if counts.min() < 2:
        raise ClassStarvationError(f"class sizes {counts.tolist()}; both classes need >= 2 points")
    return counts


def within_class_scatter(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    S = np.zeros((X.shape[1], X.shape[1]))
    for k in (0, 1):
        d = X[y == k] - X[y == k].mean(axis=0)
        S += d.T @ d
    return S


def fisher_weights(X, y, ridge=None):
    """w = (S_W + ridge I)^-1 (mean_1 - mean_0).

    ``ridge=None`` uses 1e-8 * trace(S_W) / p.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    _check_classes(y)
    S = within_class_scatter(X, y)
    p = X.shape[1]
    if ridge is None:
        ridge = 1e-8 * np.trace(S) / p
    diff = X[y == 1].mean(axis=0) - X[y == 0].mean(axis=0)
    w = np.linalg.solve(S + ridge * np.eye(p), diff)
    if np.linalg.norm(diff) <= 1e-12 * max(np.abs(X).max(), 1.0):
        warnings.warn("class means coincide; discriminant direction is degenerate",
                      DegenerateDirectionWarning, stacklevel=2)
    return w


def fisher_criterion(w, X, y):
    """Between-class over within-class variation of the projected scores."""
    z = np.asarray(X, dtype=float) @ np.asarray(w, dtype=float)
    y = np.asarray(y)
    zbar = z.mean()
    z0, z1 = z[y == 0], z[y == 1]
    num = (z1.mean() - zbar) ** 2 + (z0.mean() - zbar) ** 2
    den = ((z1 - z1.mean()) ** 2).sum() + ((z0 - z0.mean()) ** 2).sum()
    return num / den


def fit_state(X, y, gamma=1.0, ridge=None, trained_on=(np.nan, np.nan)):
    w = fisher_weights(X, y, ridge)
    z = np.asarray(X, dtype=float) @ w
    y = np.asarray(y)
    means = (z[y == 0].mean(), z[y == 1].mean())
    variances = (z[y == 0].var(ddof=1), z[y == 1].var(ddof=1))
    return FldaState(w, means, variances, gamma, trained_on)


def naive_bayes_rule(z, m0, v0, m1, v1, gamma=1.0):
    """1 where (z-m0)^2/v0 - (z-m1)^2/v1 > log(gamma v1 / v0)."""
    z = np.asarray(z, dtype=float)
    return ((z - m0) ** 2 / v0 - (z - m1) ** 2 / v1 > np.log(gamma * v1 / v0)).astype(int)


def project_classify(state, x):
    """Label(s) for one feature vector or a stack of them."""
    x = np.asarray(x, dtype=float)
    z = x @ state.weights
    out = naive_bayes_rule(z, state.class_means[0], state.class_variances[0],
                           state.class_means[1], state.class_variances[1], state.gamma)
    return int(out) if np.ndim(out) == 0 else out


def separability_index(train_X, train_y, test_X, test_y, w):
    """Share of merged points whose projection-distance neighbour has the same label."""
    X = np.vstack([np.atleast_2d(train_X), np.atleast_2d(test_X)])
    y = np.concatenate([np.asarray(train_y), np.asarray(test_y)])
    if y.size < 2:
        raise ValidationError("separability index needs at least two points")
    return agreement_fraction(X @ np.asarray(w, dtype=float), y)


@dataclass
class AdaptationSchedule:
    """Batch geometry in the same time unit as the epoch times."""

    baseline_end: float
    test_window: float
    candidate_lengths: list

    def __post_init__(self):
        self.candidate_lengths = [float(d) for d in self.candidate_lengths]
        if not self.candidate_lengths:
            raise ConfigError("at least one candidate training length is required")
        if self.candidate_lengths != sorted(self.candidate_lengths):
            raise ConfigError("candidate training lengths must be ascending")
        if self.test_window <= 0 or min(self.candidate_lengths) < self.test_window:
            raise ConfigError("candidate lengths must be >= the test window > 0")

    @classmethod
    def hourly(cls, baseline_end_h=36.0, test_window_h=3.0, d_min_h=12, d_max_h=60, unit=3600.0):
        return cls(baseline_end_h * unit, test_window_h * unit,
                   [h * unit for h in range(int(d_min_h), int(d_max_h) + 1)])


@dataclass
class BatchRecord:
    batch_start: float
    chosen_d: float
    si: float
    state: FldaState | None
    source: str


@dataclass
class SelfTrainResult:
    labels: LabelSequence
    batches: list = field(default_factory=list)


def _candidate_states(Xc, lab, starts, e_rel, center, gamma, min_class=2):
    """FLDA fits for every window [starts[l], e_rel) of the centred block ``Xc``.

    Returns a list with an FldaState or None (class-starved / degenerate).
    """
    n, p = Xc.shape
    seg = slice(0, e_rel)
    Xs = Xc[seg]
    out = []
    ind = [(lab[seg] == k).astype(float) for k in (0, 1)]
    # suffix sums so any window ending at e_rel is O(1)
    cnt = [np.cumsum(I[::-1])[::-1] for I in ind]
    s1 = [np.cumsum((I[:, None] * Xs)[::-1], axis=0)[::-1] for I in ind]
    outer = Xs[:, :, None] * Xs[:, None, :]
    s2 = [np.cumsum((I[:, None, None] * outer)[::-1], axis=0)[::-1] for I in ind]
    for j in starts:
        if j >= e_rel:
            out.append(None)
            continue
        n0, n1 = cnt[0][j], cnt[1][j]
        if n0 < min_class or n1 < min_class:
            out.append(None)
            continue
        m0, m1 = s1[0][j] / n0, s1[1][j] / n1
        sc0 = s2[0][j] - n0 * np.outer(m0, m0)
        sc1 = s2[1][j] - n1 * np.outer(m1, m1)
        S = sc0 + sc1
        ridge = 1e-8 * np.trace(S) / p
        try:
            w = np.linalg.solve(S + ridge * np.eye(p), m1 - m0)
        except np.linalg.LinAlgError:
            out.append(None)
            continue
        v0 = w @ sc0 @ w / (n0 - 1)
        v1 = w @ sc1 @ w / (n1 - 1)
        if not (np.all(np.isfinite(w)) and np.linalg.norm(w) > 0 and v0 > 0 and v1 > 0):
            out.append(None)
            continue
        out.append(FldaState(w, (w @ (m0 + center), w @ (m1 + center)), (v0, v1), gamma))
    return out


def gradual_self_train(times, X, baseline_labels, schedule, gamma=1.0, tie_break="largest",
                       min_class=2):
    """Label post-baseline epochs batch by batch with self-trained FLDA.

    ``times`` and ``X`` hold the normal (non-excluded) epochs in time order.
    ``baseline_labels`` gives the HMM labels of the epochs with
    ``time < schedule.baseline_end``; they are copied to the output unchanged.
    SI ties between window lengths go to the longest window unless
    ``tie_break="smallest"``; windows with fewer than ``min_class`` epochs in
    either class are skipped.
    """
    times = np.asarray(times, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(baseline_labels, LabelSequence):
        baseline_labels = baseline_labels.labels
    baseline_labels = np.asarray(baseline_labels, dtype=int)
    n_base = int(np.searchsorted(times, schedule.baseline_end, "left"))
    if baseline_labels.size != n_base:
        raise ValidationError(f"expected {n_base} baseline labels, got {baseline_labels.size}")
    if n_base == 0 or schedule.baseline_end - times[0] < schedule.candidate_lengths[0]:
        raise ConfigError("baseline is shorter than the smallest candidate training window")

    y = np.full(times.size, EXCLUDED, dtype=int)
    y[:n_base] = baseline_labels
    tags = np.full(times.size, "", dtype=object)
    tags[:n_base] = "hmm-baseline"
    batches = []
    last = None
    t = schedule.baseline_end
    d_arr = np.asarray(schedule.candidate_lengths)
    while times.size and t <= times[-1]:
        e = int(np.searchsorted(times, t, "left"))
        f = int(np.searchsorted(times, t + schedule.test_window, "left"))
        if f == e:
            t += schedule.test_window
            continue
        starts = np.searchsorted(times, t - d_arr, "left")
        s_min = int(starts.min())
        center = X[s_min:e].mean(axis=0)
        Xc = X[s_min:f] - center
        states = _candidate_states(Xc, y[s_min:f], starts - s_min, e - s_min, center, gamma,
                                   min_class)
        test_X = X[e:f]
        best, best_si, best_pred, best_l = None, -np.inf, None, None
        for l, st in enumerate(states):
            if st is None:
                continue
            pred = project_classify(st, test_X)
            si = agreement_fraction(X[starts[l]:f] @ st.weights,
                                    np.concatenate([y[starts[l]:e], pred]))
            if si > best_si or (tie_break == "largest" and si == best_si):
                best, best_si, best_pred, best_l = st, si, pred, l
        if best is None:
            if last is None:
                raise ClassStarvationError(f"every candidate window is class-starved at t={t}")
            warnings.warn(f"all candidate windows class-starved at t={t}; carrying forward",
                          CarryForwardWarning, stacklevel=2)
            y[e:f] = project_classify(last, test_X)
            tags[e:f] = "carried-forward"
            batches.append(BatchRecord(t, np.nan, np.nan, last, "carried-forward"))
        else:
            best.trained_on = (t - d_arr[best_l], t)
            y[e:f] = best_pred
            tags[e:f] = "flda"
            last = best
            batches.append(BatchRecord(t, float(d_arr[best_l]), float(best_si), best, "flda"))
        t += schedule.test_window
    return SelfTrainResult(LabelSequence(times, y, tags), batches)


def replay(times, X, batches, schedule):
    """Apply committed per-batch states to another stream's post-baseline epochs.

    Batch n of the new stream uses the state committed at batch n; batches past
    the end of the record reuse the last state.
    """
    times = np.asarray(times, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    by_start = {round(b.batch_start, 6): b.state for b in batches if b.state is not None}
    if not by_start:
        raise ValidationError("no committed states to replay")
    ordered = [by_start[k] for k in sorted(by_start)]
    y = np.full(times.size, EXCLUDED, dtype=int)
    state = ordered[0]
    t = schedule.baseline_end
    while times.size and t <= times[-1]:
        state = by_start.get(round(t, 6), state)
        e = int(np.searchsorted(times, t, "left"))
        f = int(np.searchsorted(times, t + schedule.test_window, "left"))
        if f > e:
            y[e:f] = project_classify(state, X[e:f])
        t += schedule.test_window
    return y
