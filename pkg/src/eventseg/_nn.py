"""Exact one-dimensional nearest neighbours, self excluded.

Ties (equal distance) go to the lowest original index.
"""
import numpy as np


def nearest_neighbor_index(values):
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ValueError("need at least two points for a nearest neighbour")
    idx = np.arange(n)
    order = np.lexsort((idx, v))
    sv = v[order]

    # start of each run of equal values; within a run order[] is index-ascending
    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    new_group[1:] = sv[1:] != sv[:-1]
    gstart = np.maximum.accumulate(np.where(new_group, np.arange(n), 0))
    gend = np.empty(n, dtype=int)
    starts = np.flatnonzero(new_group)
    sizes = np.diff(np.append(starts, n))
    gend[:] = np.repeat(starts + sizes, sizes)
    gsize = gend - gstart

    nn_sorted = np.empty(n, dtype=int)

    dup = gsize > 1
    if dup.any():
        pos = np.flatnonzero(dup)
        first = order[gstart[pos]]
        second = order[np.minimum(gstart[pos] + 1, n - 1)]
        nn_sorted[pos] = np.where(first == order[pos], second, first)

    single = ~dup
    if single.any():
        pos = np.flatnonzero(single)
        has_left = pos > 0
        has_right = pos < n - 1
        left = np.where(has_left, pos - 1, 0)
        right = np.where(has_right, pos + 1, n - 1)
        lgap = np.where(has_left, sv[pos] - sv[left], np.inf)
        rgap = np.where(has_right, sv[right] - sv[pos], np.inf)
        # lowest index within the neighbouring value group
        lcand = order[gstart[left]]
        rcand = order[gstart[right]]
        pick = np.where(
            lgap < rgap, lcand, np.where(rgap < lgap, rcand, np.minimum(lcand, rcand))
        )
        nn_sorted[pos] = pick

    nn = np.empty(n, dtype=int)
    nn[order] = nn_sorted
    return nn


def agreement_fraction(values, labels):
    """Share of points whose nearest neighbour carries the same label."""
    labels = np.asarray(labels)
    nn = nearest_neighbor_index(values)
    return float(np.mean(labels == labels[nn]))
