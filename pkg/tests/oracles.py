"""Independent brute-force references shared by several test modules."""
import numpy as np


def nn_agreement(values, labels):
    # O(n^2) nearest neighbour, self excluded, ties to the lowest index
    v = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    same = 0
    for i in range(v.size):
        best, best_j = np.inf, -1
        for j in range(v.size):
            if j == i:
                continue
            d = abs(v[i] - v[j])
            if d < best:
                best, best_j = d, j
        same += labels[i] == labels[best_j]
    return same / v.size


def run_lengths(x):
    runs = []
    for v in x:
        if runs and runs[-1][0] == v:
            runs[-1][1] += 1
        else:
            runs.append([v, 1])
    return runs
