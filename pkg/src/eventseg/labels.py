"""Per-epoch label stream shared by the segmentation stages."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WAKE = 0
SLEEP = 1
EXCLUDED = -1

# exclusion tags and label sources
TAGS = ("NW", "LOC", "Active", "Other", "Missing")
SOURCES = ("hmm-baseline", "flda", "carried-forward", "reinserted")


@dataclass
class LabelSequence:
    """Labels on an epoch grid.

    ``labels`` holds 0 (wake), 1 (sleep) or -1 (excluded). ``tags`` carries
    either the label source for labeled epochs or the exclusion reason.
    """

    times: np.ndarray
    labels: np.ndarray
    tags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.times.shape != self.labels.shape:
            raise ValueError("times and labels must have the same length")
        if self.tags is None:
            self.tags = np.where(self.labels == EXCLUDED, "Missing", "")
        self.tags = np.asarray(self.tags, dtype=object)

    def __len__(self):
        return len(self.labels)

    @property
    def labeled(self):
        return self.labels != EXCLUDED

    def copy(self):
        return LabelSequence(self.times.copy(), self.labels.copy(), self.tags.copy())
