"""Abnormal-epoch filtering (k-means + quantile cutoffs) and abnormality classification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DegenerateClusteringError, InsufficientDataError, ValidationError

LOWER_TAIL = "lower-tail"
UPPER_TAIL = "upper-tail"

CATEGORIES = ("NW", "LOC", "Wake", "Active", "Other")
REINSERTED = ("Wake", "Active")


def kmeans(x, k, init=None, max_iter=100):
    """Lloyd's algorithm. ``x`` is (n,) or (n, d); returns (centroids, assignment).

    Without ``init`` the centroids start at the (2i+1)/(2k) quantiles of each
    column, which for k=3 is the 1/6, 3/6, 5/6 spread.
    """
    x = np.asarray(x, dtype=float)
    flat = x.ndim == 1
    X = x[:, None] if flat else x
    if np.unique(X, axis=0).shape[0] < k:
        raise DegenerateClusteringError(f"fewer than {k} distinct values")
    if init is None:
        qs = (2 * np.arange(k) + 1) / (2 * k)
        C = np.quantile(X, qs, axis=0)
    else:
        C = np.array(init, dtype=float).reshape(k, X.shape[1])
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        a = np.argmin(d2, axis=1)
        newC = C.copy()
        for j in range(k):
            members = a == j
            if members.any():
                newC[j] = X[members].mean(axis=0)
        if np.allclose(newC, C, rtol=0, atol=0):
            break
        C = newC
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    a = np.argmin(d2, axis=1)
    return (C[:, 0] if flat else C), a


def _normal_clusters(centroids, sizes):
    """Indices of the clusters forming the normal set.

    Clusters are ranked by size (largest first). The two largest form the
    normal set when the runner-up sits closer to the largest than the third
    sits to the runner-up; otherwise only the largest is normal.
    """
    rank = np.argsort(-np.asarray(sizes), kind="stable")
    if len(rank) < 3:
        return rank[:1]
    c = np.atleast_2d(np.asarray(centroids, dtype=float).T).T
    d12 = np.linalg.norm(c[rank[1]] - c[rank[0]])
    d23 = np.linalg.norm(c[rank[2]] - c[rank[1]])
    return rank[:2] if d12 < d23 else rank[:1]


@dataclass
class NormalRegion:
    features_used: list
    cutoffs: np.ndarray
    directions: list

    def __post_init__(self):
        self.cutoffs = np.asarray(self.cutoffs, dtype=float)
        if not (len(self.features_used) == len(self.cutoffs) == len(self.directions)):
            raise ValidationError("one cutoff and direction per filtering feature")


def _cutoff(values, normal_mask, quantile):
    nor = values[normal_mask]
    if (~normal_mask).any() and nor.mean() > values[~normal_mask].mean():
        return float(np.quantile(nor, quantile)), LOWER_TAIL
    return float(np.quantile(nor, 1.0 - quantile)), UPPER_TAIL


def fit_normal_region(epochs, filtering_features, k=3, quantile=0.025, joint=False):
    """Per-feature cutoffs bounding the normal region.

    The default runs 1-D k-means per feature. ``joint=True`` clusters the
    standardized features together and takes the cutoffs from the marginals
    of the joint normal set.
    """
    X = epochs.columns(filtering_features)
    X = X[~np.isnan(X).any(axis=1)]
    if X.shape[0] < 3 * k:
        raise InsufficientDataError(f"need at least {3 * k} present epochs, have {X.shape[0]}")
    cutoffs, directions = [], []
    if joint:
        sd = X.std(axis=0)
        if np.any(sd == 0):
            raise DegenerateClusteringError("a filtering feature is constant")
        Z = (X - X.mean(axis=0)) / sd
        C, a = kmeans(Z, k)
        normal = np.isin(a, _normal_clusters(C, np.bincount(a, minlength=k)))
        for j in range(X.shape[1]):
            c, d = _cutoff(X[:, j], normal, quantile)
            cutoffs.append(c)
            directions.append(d)
    else:
        for j in range(X.shape[1]):
            C, a = kmeans(X[:, j], k)
            normal = np.isin(a, _normal_clusters(C, np.bincount(a, minlength=k)))
            c, d = _cutoff(X[:, j], normal, quantile)
            cutoffs.append(c)
            directions.append(d)
    return NormalRegion(list(filtering_features), cutoffs, directions)


def filter_abnormal(epochs, region):
    """True where an epoch falls outside the normal region.

    An epoch is judged only when every filtering feature is present; other
    epochs are reported as not abnormal (they are missing, not outliers).
    """
    X = epochs.columns(region.features_used)
    judged = ~np.isnan(X).any(axis=1)
    flags = np.zeros(len(epochs), dtype=bool)
    for j, (c, d) in enumerate(zip(region.cutoffs, region.directions)):
        col = X[:, j]
        with np.errstate(invalid="ignore"):
            out = col < c if d == LOWER_TAIL else col > c
        flags |= out & judged
    return flags


@dataclass
class AbnormalityVerdict:
    epoch_index: int
    category: str
    reinserted: bool

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown category {self.category!r}")
        if self.reinserted != (self.category in REINSERTED):
            raise ValidationError("reinserted must be true exactly for Wake/Active")


def iqr_fences(reference):
    """(LOWER, UPPER) of the 1.5-IQR test for each column of ``reference``."""
    reference = np.asarray(reference, dtype=float)
    q25, q75 = np.quantile(reference, [0.25, 0.75], axis=0)
    iqr = q75 - q25
    return q25 - 1.5 * iqr, q75 + 1.5 * iqr


def classify_abnormal(abnormal_epochs, session_reference, tree_features=("HR_MED", "TEMP_MED", "ACC_SD"),
                      indices=None, active_predicate="and"):
    """Walk the abnormality decision tree for each flagged epoch.

    ``tree_features`` names the heart-rate, temperature and activity analogs,
    in that order. ``active_predicate`` is ``"and"`` (both HR and activity
    above their upper fence) or ``"or"``.
    """
    hr_f, temp_f, acc_f = tree_features
    ref = session_reference.columns([hr_f, temp_f, acc_f])
    ref = ref[~np.isnan(ref).any(axis=1)]
    if ref.shape[0] < 4:
        raise InsufficientDataError("reference needs at least 4 complete epochs for quartiles")
    lower, upper = iqr_fences(ref)
    X = abnormal_epochs.columns([hr_f, temp_f, acc_f])
    if indices is None:
        indices = np.arange(len(abnormal_epochs))
    verdicts = []
    for idx, (hr, temp, acc) in zip(indices, X):
        if np.isnan([hr, temp, acc]).any():
            cat = "Other"
        else:
            low = np.array([hr, temp, acc]) < lower
            high = np.array([hr, temp, acc]) > upper
            hr_low, temp_low, acc_low = low
            hr_high, _, acc_high = high
            active = (hr_high and acc_high) if active_predicate == "and" else (hr_high or acc_high)
            if temp_low and acc_low:
                cat = "NW"
            elif temp_low and hr_low:
                cat = "LOC"
            elif active:
                cat = "Active"
            elif not (low.any() or high.any()):
                cat = "Wake"
            else:
                cat = "Other"
        verdicts.append(AbnormalityVerdict(int(idx), cat, cat in REINSERTED))
    return verdicts


def abnormality_report(epochs, flags, verdicts):
    """Rows of ``epoch_start,flagged,category,reinserted`` for every epoch."""
    category = np.full(len(epochs), "", dtype=object)
    reinserted = np.zeros(len(epochs), dtype=bool)
    for v in verdicts:
        category[v.epoch_index] = v.category
        reinserted[v.epoch_index] = v.reinserted
    return pd.DataFrame({
        "epoch_start": epochs.starts,
        "flagged": np.asarray(flags, dtype=bool),
        "category": category,
        "reinserted": reinserted,
    })
