"""Segmentation metrics, LOESS detrending, paired t-tests and the simulation benchmark."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import betainc

from . import flda, hmm, simgen
from .errors import InsufficientDataError, ValidationError
from .labels import LabelSequence
from .sessions import smooth_labels

log = logging.getLogger(__name__)

METRICS = ("accuracy", "f1", "cosine", "onset_diff", "duration_diff")
# direction in which the proposed method is expected to win
BETTER = {"accuracy": "greater", "f1": "greater", "cosine": "greater",
          "onset_diff": "less", "duration_diff": "less"}
METHODS = ("hmm", "dhmm", "proposed")


def sleep_runs(labels, times, step):
    """(onset, duration) of each maximal run of 1s."""
    lab = np.asarray(labels) == 1
    if not lab.any():
        return np.empty(0), np.empty(0)
    d = np.diff(np.concatenate([[0], lab.astype(int), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return np.asarray(times, dtype=float)[starts], (ends - starts) * step


def score(pred, truth, times=None, step=1.0):
    """Single-trial metrics; sleep (1) is the positive class.

    Undefined values (e.g. F1 when neither sequence has sleep) are NaN and
    listed in ``reasons``.
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValidationError("pred and truth must be aligned on the same epoch grid")
    if times is None:
        times = np.arange(pred.size) * step
    times = np.asarray(times, dtype=float)
    keep = (pred >= 0) & (truth >= 0)
    p, t, tm = pred[keep], truth[keep], times[keep]
    reasons = {}
    out = {"accuracy": float(np.mean(p == t)) if p.size else np.nan}
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    if tp + fp + fn == 0:
        out["f1"] = np.nan
        reasons["f1"] = "no sleep epochs in prediction or truth"
    else:
        out["f1"] = 2 * tp / (2 * tp + fp + fn)
    norm = math.sqrt(p.sum()) * math.sqrt(t.sum())
    if norm == 0:
        out["cosine"] = np.nan
        reasons["cosine"] = "a sequence has no sleep epochs"
    else:
        out["cosine"] = float(p @ t) / norm

    po, pdur = sleep_runs(p, tm, step)
    to, tdur = sleep_runs(t, tm, step)
    if po.size == 0:
        out["onset_diff"] = out["duration_diff"] = np.nan
        reasons["onset_diff"] = reasons["duration_diff"] = "no predicted sleep session"
    else:
        if to.size == 0:
            out["onset_diff"] = np.nan
            reasons["onset_diff"] = "no true sleep session"
        else:
            out["onset_diff"] = float(np.mean(np.min(np.abs(po[:, None] - to[None, :]), axis=1)))
        diffs = []
        for o, dur in zip(po, pdur):
            overlap = np.minimum(o + dur, to + tdur) - np.maximum(o, to)
            if to.size and overlap.max() > 0:
                j = int(np.argmax(overlap))
                diffs.append(abs(dur - tdur[j]))
            else:
                diffs.append(dur)
        out["duration_diff"] = float(np.mean(diffs))
    out["reasons"] = reasons
    return out


@dataclass
class MetricReport:
    per_trial: dict
    n_failed: int = 0
    failures: list = field(default_factory=list)

    @property
    def n_trials(self):
        return len(self.per_trial["accuracy"])

    def mean(self, metric):
        v = np.asarray(self.per_trial[metric], dtype=float)
        return float(np.nanmean(v)) if np.any(~np.isnan(v)) else float("nan")

    def sd(self, metric):
        v = np.asarray(self.per_trial[metric], dtype=float)
        v = v[~np.isnan(v)]
        return float(v.std(ddof=1)) if v.size > 1 else float("nan")

    @property
    def accuracy(self):
        return self.mean("accuracy")

    @property
    def f1(self):
        return self.mean("f1")

    @property
    def cosine(self):
        return self.mean("cosine")

    @property
    def onset_diff(self):
        return self.mean("onset_diff")

    @property
    def duration_diff(self):
        return self.mean("duration_diff")

    def summary(self):
        return {m: {"mean": self.mean(m), "sd": self.sd(m)} for m in METRICS}


def loess_fit(y, span=0.75, x=None):
    """Tricube-weighted local linear fit evaluated at every point."""
    y = np.asarray(y, dtype=float)
    n = y.size
    x = np.arange(n, dtype=float) if x is None else np.asarray(x, dtype=float)
    if not 0 < span <= 1:
        raise ValidationError("span must lie in (0, 1]")
    q = int(math.floor(span * n + 1e-10))
    if n < 5 or q < 3:
        raise InsufficientDataError(f"span {span} on {n} points leaves fewer than 3 per local fit")
    fitted = np.empty(n)
    for i in range(n):
        dist = np.abs(x - x[i])
        h = np.partition(dist, q - 1)[q - 1]
        if h <= 0:
            fitted[i] = y[dist == 0].mean()
            continue
        u = np.clip(dist / h, 0.0, 1.0)
        w = (1 - u**3) ** 3
        sw = w.sum()
        xm = (w @ x) / sw
        ym = (w @ y) / sw
        dx = x - xm
        sxx = w @ (dx * dx)
        slope = (w @ (dx * (y - ym))) / sxx if sxx > 0 else 0.0
        fitted[i] = ym + slope * (x[i] - xm)
    return fitted


def loess_detrend(series, span=0.75, x=None):
    """Remove a LOESS trend per column, keeping each column's global mean."""
    arr = np.asarray(series, dtype=float)
    flat = arr.ndim == 1
    A = arr[:, None] if flat else arr
    out = np.empty_like(A)
    for j in range(A.shape[1]):
        out[:, j] = A[:, j] - loess_fit(A[:, j], span, x) + A[:, j].mean()
    return out[:, 0] if flat else out


@dataclass
class TTestResult:
    statistic: float
    pvalue: float
    df: int
    degenerate: bool = False


def t_sf(t, df):
    """Upper tail P(T > t) of Student's t."""
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return float(tail if t >= 0 else 1.0 - tail)


def paired_ttest(a, b, alternative="two-sided"):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValidationError("paired samples must be equal-length vectors with n >= 2")
    if alternative not in ("greater", "less", "two-sided"):
        raise ValidationError(f"unknown alternative {alternative!r}")
    d = a - b
    n = d.size
    df = n - 1
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return TTestResult(0.0, 1.0, df, True)
        t = math.copysign(math.inf, mean)
        p = {"greater": 0.0 if mean > 0 else 1.0, "less": 0.0 if mean < 0 else 1.0,
             "two-sided": 0.0}[alternative]
        return TTestResult(t, p, df, True)
    t = mean / (sd / math.sqrt(n))
    if alternative == "greater":
        p = t_sf(t, df)
    elif alternative == "less":
        p = t_sf(-t, df)
    else:
        p = min(1.0, 2 * t_sf(abs(t), df))
    return TTestResult(float(t), float(p), df, False)


# --- benchmark ------------------------------------------------------------

@dataclass
class BenchmarkSettings:
    baseline_end: float = 36.0
    test_window: float = 3.0
    d_min: float = 12.0
    d_max: float = 60.0
    gamma: float = 1.0
    loess_span: float = 0.75
    hmm_restarts: int = 3
    tie_break: str = "largest"
    min_class: int = 2
    # odd median window (epochs) applied to every method's labels; 0 disables
    smooth_window: int = 9
    min_sleep_hours: float = 1.0

    def schedule(self):
        return flda.AdaptationSchedule.hourly(self.baseline_end, self.test_window,
                                              self.d_min, self.d_max, unit=1.0)


def _fit_baseline_hmm(X, times, settings, seed):
    base = times < settings.baseline_end
    model = hmm.fit_em(X[base], K=2, seed=seed, n_restarts=settings.hmm_restarts)
    return model, hmm.sleep_state(model, channel=0, lower_is_sleep=True)


def _decode_labels(model, sleep, X):
    return (hmm.decode(model, X).states == sleep).astype(int)


def _train_methods(train, methods, settings, seed):
    """Fit each method on a training realization; returns fitted objects and in-sample labels."""
    X, times = train.observations, train.times
    fitted, insample = {}, {}
    if "hmm" in methods or "proposed" in methods:
        model, sleep = _fit_baseline_hmm(X, times, settings, seed)
        fitted["hmm"] = (model, sleep)
        if "hmm" in methods:
            insample["hmm"] = _decode_labels(model, sleep, X)
    if "dhmm" in methods:
        Xd = loess_detrend(X, settings.loess_span)
        model_d, sleep_d = _fit_baseline_hmm(Xd, times, settings, seed)
        fitted["dhmm"] = (model_d, sleep_d)
        insample["dhmm"] = _decode_labels(model_d, sleep_d, Xd)
    if "proposed" in methods:
        model, sleep = fitted["hmm"]
        base = times < settings.baseline_end
        base_labels = _decode_labels(model, sleep, X[base])
        sched = settings.schedule()
        res = flda.gradual_self_train(times, X, base_labels, sched, settings.gamma,
                                      settings.tie_break, settings.min_class)
        fitted["proposed"] = (model, sleep, res.batches, sched)
        insample["proposed"] = res.labels.labels
    return fitted, insample


def _apply_methods(fitted, methods, test, settings):
    X, times = test.observations, test.times
    out = {}
    for m in methods:
        if m == "hmm":
            model, sleep = fitted["hmm"]
            out[m] = _decode_labels(model, sleep, X)
        elif m == "dhmm":
            model, sleep = fitted["dhmm"]
            out[m] = _decode_labels(model, sleep, loess_detrend(X, settings.loess_span))
        elif m == "proposed":
            model, sleep, batches, sched = fitted["proposed"]
            base = times < settings.baseline_end
            y = flda.replay(times, X, batches, sched)
            y[base] = _decode_labels(model, sleep, X[base])
            out[m] = y
    return out


def _postprocess(labels, times, settings, step):
    if not settings.smooth_window:
        return labels
    seq = LabelSequence(np.asarray(times) * 3600.0, labels)
    return smooth_labels(seq, settings.smooth_window, settings.min_sleep_hours * 60.0,
                         epoch_seconds=step * 3600.0).labels


def _run_realization(args):
    config, methods, protocol, n_repeats, seq, settings = args
    children = seq.spawn(1 + n_repeats)
    train = simgen.generate(config, seed=children[0])
    step = config.sample_step
    rows = []
    try:
        fitted, insample = _train_methods(train, methods, settings,
                                          int(children[0].generate_state(1)[0]))
    except Exception as exc:  # noqa: BLE001 - a failed trial is recorded, not fatal
        return [{"method": m, "failed": repr(exc)} for m in methods]
    if protocol == "in-sample":
        for m in methods:
            y = _postprocess(insample[m], train.times, settings, step)
            rows.append({"method": m, **score(y, train.truth, train.times, step)})
        return rows
    for child in children[1:]:
        test = simgen.generate(config, seed=child)
        try:
            preds = _apply_methods(fitted, methods, test, settings)
        except Exception as exc:  # noqa: BLE001
            rows.extend({"method": m, "failed": repr(exc)} for m in methods)
            continue
        for m in methods:
            y = _postprocess(preds[m], test.times, settings, step)
            rows.append({"method": m, **score(y, test.truth, test.times, step)})
    return rows


@dataclass
class BenchmarkReport:
    scenario: str
    protocol: str
    reports: dict
    pvalues: dict

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "protocol": self.protocol,
            "methods": {
                m: {"n_trials": r.n_trials, "n_failed": r.n_failed, "summary": r.summary(),
                    "per_trial": {k: [None if np.isnan(x) else x for x in v]
                                  for k, v in r.per_trial.items()}}
                for m, r in self.reports.items()
            },
            "pvalues": self.pvalues,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def trial_frame(self):
        frames = []
        for m, r in self.reports.items():
            df = pd.DataFrame(r.per_trial)
            df.insert(0, "trial", np.arange(len(df)))
            df.insert(0, "method", m)
            frames.append(df)
        return pd.concat(frames, ignore_index=True)


def run_benchmark(config, methods=("hmm", "proposed"), n_realizations=100, n_repeats=10,
                  protocol="out-of-sample", seed=0, jobs=1, settings=None):
    """Score methods over simulated trials.

    Out-of-sample: each of ``n_realizations`` training realizations is
    followed by ``n_repeats`` independent held-out realizations. In-sample:
    each realization is scored on itself (``n_repeats`` is ignored).
    """
    methods = list(methods)
    if not methods:
        raise ValidationError("at least one method is required")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValidationError(f"unknown methods {unknown}; valid: {list(METHODS)}")
    if protocol not in ("in-sample", "out-of-sample"):
        raise ValidationError(f"unknown protocol {protocol!r}")
    if n_realizations < 1 or n_repeats < 1:
        raise ValidationError("need at least one trial")
    settings = settings or BenchmarkSettings()
    seqs = np.random.SeedSequence(seed).spawn(n_realizations)
    tasks = [(config, methods, protocol, n_repeats, s, settings) for s in seqs]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_realization, tasks))
    else:
        results = [_run_realization(t) for t in tasks]

    # keep only trials where every method succeeded so comparisons stay paired
    per_trial = {m: {k: [] for k in METRICS} for m in methods}
    failures = {m: [] for m in methods}
    for rows in results:
        for i in range(0, len(rows), len(methods)):
            group = rows[i:i + len(methods)]
            bad = [r for r in group if "failed" in r]
            if bad:
                for r in bad:
                    failures[r["method"]].append(r["failed"])
                continue
            for r in group:
                for k in METRICS:
                    per_trial[r["method"]][k].append(r[k])
    reports = {m: MetricReport(per_trial[m], len(failures[m]), failures[m]) for m in methods}

    pvalues = {}
    if "proposed" in methods:
        prop = reports["proposed"]
        for other in (m for m in methods if m != "proposed"):
            pvalues[f"proposed_vs_{other}"] = {}
            for k in METRICS:
                a = np.asarray(prop.per_trial[k], dtype=float)
                b = np.asarray(reports[other].per_trial[k], dtype=float)
                ok = ~(np.isnan(a) | np.isnan(b))
                if ok.sum() < 2:
                    continue
                res = paired_ttest(a[ok], b[ok], BETTER[k])
                pvalues[f"proposed_vs_{other}"][k] = res.pvalue
    return BenchmarkReport(config.scenario, protocol, reports, pvalues)
