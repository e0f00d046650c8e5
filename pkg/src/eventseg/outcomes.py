"""Outcome prediction from session features: logistic and continuation-ratio GLMs, AUC, LOOCV, SMOTE."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import rankdata

from .errors import InsufficientDataError, SingleClassError, ValidationError

log = logging.getLogger(__name__)

ORDINAL_LEVELS = ("early", "late", "none")
BINARY_LEVELS = ("not", "infected")


@dataclass
class OutcomeDataset:
    """Modeled rows: one per subject, features plus an integer-coded outcome.

    Binary outcomes are coded 0/1; ordinal outcomes 0..J-1 in ``levels`` order.
    """

    subject_ids: np.ndarray
    features: pd.DataFrame
    outcome: np.ndarray
    levels: tuple = BINARY_LEVELS
    n_dropped: int = 0

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids)
        self.outcome = np.asarray(self.outcome, dtype=int)
        self.features = self.features.reset_index(drop=True)
        if not (len(self.subject_ids) == len(self.features) == len(self.outcome)):
            raise ValidationError("subject ids, features and outcomes must align")

    @property
    def ordinal(self):
        return len(self.levels) > 2

    def matrix(self, names):
        return self.features[list(names)].to_numpy(dtype=float)

    @classmethod
    def from_frames(cls, features, outcomes, names=None, levels=None, subject_col="subject",
                    outcome_col="outcome", day=None):
        """Join a feature table with an outcome table on the subject column.

        ``day`` picks one day's rows when the feature table has a ``day`` column.
        Rows missing any modeled feature are dropped and counted.
        """
        if day is not None and "day" in features.columns:
            features = features[features["day"] == day]
        if features[subject_col].duplicated().any():
            raise ValidationError("one feature row per subject is required; pass day=")
        f_ids = set(features[subject_col])
        o_ids = set(outcomes[subject_col])
        joined = features.merge(outcomes[[subject_col, outcome_col]], on=subject_col, how="inner")
        unmatched = sorted(map(str, f_ids ^ o_ids))
        if len(joined) < 3:
            raise ValidationError(f"only {len(joined)} subjects joined; unmatched: {unmatched}")
        if unmatched:
            log.warning("unmatched subjects dropped: %s", unmatched)
        if names is None:
            names = [c for c in features.columns if c not in (subject_col, "day")]
        raw = joined[outcome_col]
        if levels is None:
            vals = set(raw.astype(str))
            if vals <= set(ORDINAL_LEVELS) and len(vals) > 2:
                levels = ORDINAL_LEVELS
            elif vals <= set(BINARY_LEVELS):
                levels = BINARY_LEVELS
            elif vals <= {"0", "1", "0.0", "1.0", "True", "False"}:
                levels = ("0", "1")
                raw = raw.astype(float).astype(int).astype(str)
            else:
                raise ValidationError(f"cannot infer outcome levels from {sorted(vals)}")
        code = {str(v): i for i, v in enumerate(levels)}
        bad = set(raw.astype(str)) - set(code)
        if bad:
            raise ValidationError(f"unknown outcome values {sorted(bad)}; levels are {list(levels)}")
        y = raw.astype(str).map(code).to_numpy()
        X = joined[list(names)]
        keep = ~X.isna().any(axis=1).to_numpy()
        return cls(joined[subject_col].to_numpy()[keep], X[keep], y[keep], tuple(levels),
                   int((~keep).sum()))


@dataclass
class FittedGlm:
    coefficients: np.ndarray
    std_coefficients: np.ndarray
    std_errors: np.ndarray
    converged: bool
    separated: bool
    model_kind: str
    n_iter: int
    center: np.ndarray
    scale: np.ndarray
    n_intercepts: int = 1
    unidentified_levels: list = field(default_factory=list)

    @property
    def intercepts(self):
        return self.coefficients[:self.n_intercepts]

    @property
    def slopes(self):
        return self.coefficients[self.n_intercepts:]

    def linear_predictor(self, X):
        """Slope part of the linear predictor on the raw feature scale."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.slopes

    def predict_proba(self, X):
        """P(y=1) for logistic fits; level probabilities (n, J) for continuation-ratio fits."""
        eta = self.linear_predictor(X)
        if self.model_kind == "logistic":
            return expit(self.intercepts[0] + eta)
        h = expit(self.intercepts[None, :] + eta[:, None])
        surv = np.cumprod(np.column_stack([np.ones(eta.size), 1 - h]), axis=1)
        probs = np.column_stack([surv[:, :-1] * h, surv[:, -1]])
        return probs


def _standardize(X):
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    if np.any(scale == 0):
        raise ValidationError("a modeled feature is constant")
    return (X - center) / scale, center, scale


def _irls(A, y, max_iter, tol, bound):
    """Newton-Raphson for a logistic likelihood; returns (beta, cov, converged, separated, n_iter)."""
    beta = np.zeros(A.shape[1])
    separated = converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(A @ beta)
        w = mu * (1 - mu)
        H = A.T @ (A * w[:, None])
        g = A.T @ (y - mu)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(beta)) > bound or not np.all(np.isfinite(beta)):
            separated = True
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    mu = expit(A @ beta)
    H = A.T @ (A * (mu * (1 - mu))[:, None])
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.full(H.shape, np.nan)
    return beta, cov, converged, separated, it


def _check_binary(y):
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("binary outcome must be coded 0/1")
    if np.unique(y).size < 2:
        raise SingleClassError("outcome has a single class")
    return y.astype(float)


def fit_logistic(X, y, max_iter=100, tol=1e-8, bound=30.0):
    """Logistic regression by IRLS on standardized features.

    Coefficients are reported on the raw scale (intercept first).
    ``separated`` is set when a standardized coefficient exceeds ``bound``.
    """
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    y = _check_binary(y)
    Z, center, scale = _standardize(X)
    A = np.column_stack([np.ones(len(y)), Z])
    beta, cov, conv, sep, it = _irls(A, y, max_iter, tol, bound)
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    slopes = beta[1:] / scale
    raw = np.concatenate([[beta[0] - np.sum(beta[1:] * center / scale)], slopes])
    se_raw = np.concatenate([[np.nan], se[1:] / scale])
    if sep:
        log.info("logistic fit hit the separation bound")
    return FittedGlm(raw, beta, se_raw, conv and not sep, sep, "logistic", it, center, scale)


def fit_continuation_ratio(X, y, n_levels=None, max_iter=100, tol=1e-8, bound=30.0):
    """Continuation-ratio model logit P(Y=j | Y>=j) = a_j + b'x, j = 0..J-2.

    Each subject contributes one Bernoulli trial per level it reaches; the
    expanded data are fitted by logistic IRLS with per-level intercepts and a
    shared slope.
    """
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    y = np.asarray(y, dtype=int)
    J = int(n_levels if n_levels is not None else y.max() + 1)
    if np.unique(y).size < 2:
        raise SingleClassError("need at least two populated ordinal levels")
    Z, center, scale = _standardize(X)
    rows, events, level = [], [], []
    unidentified = []
    for j in range(J - 1):
        at_risk = np.flatnonzero(y >= j)
        if at_risk.size == 0:
            unidentified.append(j)
            continue
        rows.append(at_risk)
        events.append((y[at_risk] == j).astype(float))
        level.append(np.full(at_risk.size, j))
    if unidentified:
        log.warning("continuation-ratio levels %s have empty risk sets", unidentified)
    rows = np.concatenate(rows)
    events = np.concatenate(events)
    level = np.concatenate(level)
    fitted_levels = [j for j in range(J - 1) if j not in unidentified]
    D = (level[:, None] == np.asarray(fitted_levels)[None, :]).astype(float)
    A = np.column_stack([D, Z[rows]])
    beta, cov, conv, sep, it = _irls(A, events, max_iter, tol, bound)
    k = len(fitted_levels)
    slopes = beta[k:] / scale
    shift = np.sum(beta[k:] * center / scale)
    intercepts = np.full(J - 1, np.nan)
    intercepts[fitted_levels] = beta[:k] - shift
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    se_raw = np.concatenate([np.full(J - 1, np.nan), se[k:] / scale])
    std = np.full(J - 1 + Z.shape[1], np.nan)
    std[fitted_levels] = beta[:k]
    std[J - 1:] = beta[k:]
    return FittedGlm(np.concatenate([intercepts, slopes]), std, se_raw, conv and not sep, sep,
                     "continuation-ratio", it, center, scale, J - 1, unidentified)


def auc(scores, labels):
    """Normalized Mann-Whitney U; tied scores earn half credit."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise SingleClassError("AUC needs both classes")
    r = rankdata(scores)
    return float((r[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


@dataclass
class LoocvResult:
    auc: float | np.ndarray
    scores: np.ndarray
    n_skipped: int
    accuracy: float = float("nan")


def _fit(kind, X, y, n_levels):
    if kind == "logistic":
        return fit_logistic(X, y)
    return fit_continuation_ratio(X, y, n_levels)


def _fold_train(X, y, kind, n_levels, resample):
    if resample is not None:
        X, y = resample(X, y)
    return _fit(kind, X, y, n_levels)


def loocv_auc(X, y, model_kind="logistic", n_levels=None, resample=None):
    """Leave-one-out AUC.

    Logistic: one AUC over held-out P(y=1). Continuation-ratio: one-vs-rest
    AUC per level from the held-out level probabilities. ``resample`` is an
    optional ``(X, y) -> (X, y)`` applied to each training fold.
    """
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    y = np.asarray(y, dtype=int)
    n = y.size
    if n < 3:
        raise InsufficientDataError("LOOCV needs at least 3 subjects")
    if model_kind not in ("logistic", "continuation-ratio"):
        raise ValidationError(f"unknown model kind {model_kind!r}")
    J = int(n_levels if n_levels is not None else max(y.max() + 1, 2))
    scores = np.full((n, J) if model_kind != "logistic" else n, np.nan)
    skipped = 0
    for i in range(n):
        tr = np.arange(n) != i
        if np.unique(y[tr]).size < 2:
            skipped += 1
            continue
        try:
            fit = _fold_train(X[tr], y[tr], model_kind, J, resample)
        except (SingleClassError, ValidationError):
            skipped += 1
            continue
        scores[i] = fit.predict_proba(X[i:i + 1])[0]
    ok = ~np.isnan(scores if scores.ndim == 1 else scores[:, 0])
    if model_kind == "logistic":
        value = auc(scores[ok], y[ok])
        acc = float(np.mean((scores[ok] > 0.5) == (y[ok] == 1)))
        return LoocvResult(value, scores, skipped, acc)
    aucs = np.full(J, np.nan)
    for j in range(J):
        lab = (y[ok] == j).astype(int)
        if 0 < lab.sum() < lab.size:
            aucs[j] = auc(scores[ok, j], lab)
    return LoocvResult(aucs, scores, skipped)


def smote(minority, target_n, k=None, seed=0, return_pairs=False):
    """Synthetic minority rows s = x + U (x_R - x) with x_R among x's k nearest neighbours."""
    M = np.asarray(minority, dtype=float)
    M = M[:, None] if M.ndim == 1 else M
    n = M.shape[0]
    if n < 2:
        raise ValidationError("SMOTE needs at least two minority rows")
    if k is None:
        k = 1 if n <= 3 else 3
    if not 1 <= k < n:
        raise ValidationError(f"k must lie in [1, {n - 1}]")
    rng = np.random.default_rng(seed)
    D = np.linalg.norm(M[:, None, :] - M[None, :, :], axis=2)
    np.fill_diagonal(D, np.inf)
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    i = rng.integers(0, n, size=target_n)
    j = nbrs[i, rng.integers(0, k, size=target_n)]
    u = rng.uniform(0.0, 1.0, size=target_n)
    S = M[i] + u[:, None] * (M[j] - M[i])
    if return_pairs:
        return S, i, j, u
    return S


def smote_balance(X, y, seed=0, k=None):
    """Oversample every non-majority class up to the majority count."""
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    y = np.asarray(y, dtype=int)
    labels, counts = np.unique(y, return_counts=True)
    top = counts.max()
    rng = np.random.default_rng(seed)
    parts_X, parts_y = [X], [y]
    for lab, c in zip(labels, counts):
        if c < top and c >= 2:
            S = smote(X[y == lab], top - c, k=k, seed=rng.integers(2**32))
            parts_X.append(S)
            parts_y.append(np.full(len(S), lab))
    return np.vstack(parts_X), np.concatenate(parts_y)


@dataclass
class SmoteRuns:
    mean: float | np.ndarray
    runs: np.ndarray


def smote_loocv(X, y, model_kind="logistic", n_levels=None, n_runs=100, seed=0):
    """LOOCV AUC averaged over ``n_runs`` SMOTE rebalancings of the training folds."""
    ss = np.random.SeedSequence(seed).spawn(n_runs)
    runs = []
    for s in ss:
        r = int(s.generate_state(1)[0])
        res = loocv_auc(X, y, model_kind, n_levels,
                        resample=lambda a, b, r=r: smote_balance(a, b, seed=r))
        runs.append(res.auc)
    runs = np.asarray(runs, dtype=float)
    return SmoteRuns(np.nanmean(runs, axis=0), runs)


def rank_features(data, names=None, model_kind=None, use_smote=False, n_runs=100, seed=0):
    """Per-feature LOOCV table, best first.

    Logistic rows are ranked by AUC; continuation-ratio rows by the smallest
    of the one-vs-rest AUCs.
    """
    names = list(data.features.columns) if names is None else list(names)
    if model_kind is None:
        model_kind = "continuation-ratio" if data.ordinal else "logistic"
    J = len(data.levels)
    rows = []
    for name in names:
        x = data.matrix([name])
        if np.std(x) == 0:
            continue
        try:
            coef = float(_fit(model_kind, x, data.outcome, J).slopes[0])
            if use_smote:
                sr = smote_loocv(x, data.outcome, model_kind, J, n_runs, seed)
                value, acc = sr.mean, float("nan")
            else:
                res = loocv_auc(x, data.outcome, model_kind, J)
                value, acc = res.auc, res.accuracy
        except (SingleClassError, ValidationError, InsufficientDataError) as exc:
            log.info("feature %s skipped: %s", name, exc)
            continue
        model = "LR" if model_kind == "logistic" else "CR"
        if model_kind == "logistic":
            rows.append({"feature": name, "model": model, "coef": coef, "accuracy": acc,
                         "auc": float(value)})
        else:
            v = np.asarray(value, dtype=float)
            row = {"feature": name, "model": model, "coef": coef}
            row.update({f"auc_{lvl}": float(v[j]) for j, lvl in enumerate(data.levels)})
            rows.append(row)
    if model_kind == "logistic":
        df = pd.DataFrame(rows, columns=["feature", "model", "coef", "accuracy", "auc"])
        return df.sort_values("auc", ascending=False, kind="stable").reset_index(drop=True)
    cols = ["feature", "model", "coef"] + [f"auc_{lvl}" for lvl in data.levels]
    df = pd.DataFrame(rows, columns=cols)
    key = df[cols[3:]].min(axis=1)
    return df.loc[key.sort_values(ascending=False, kind="stable").index].reset_index(drop=True)
