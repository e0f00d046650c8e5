"""Pipeline configuration with the documented defaults."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .flda import AdaptationSchedule


@dataclass
class PipelineConfig:
    # ingest
    epoch_length: float = 600.0
    availability_threshold: float = 0.9
    max_missing: float = 0.4
    max_abnormal: float = 0.4
    clock_offset_hours: float = 0.0
    # feature selection
    sleep_window: tuple = (2.0, 5.0)
    wake_window: tuple = (19.0, 22.0)
    swsi_threshold: float = 0.7
    subject_fraction: float = 0.75
    correlation_dedup: float = 0.95
    features: list | None = None
    # abnormality filtering
    anomaly_k: int = 3
    anomaly_quantile: float = 0.025
    joint_clustering: bool = False
    # an empty list disables abnormality filtering
    filtering_features: list = field(default_factory=lambda: ["HR_MED", "TEMP_MED"])
    tree_features: list = field(default_factory=lambda: ["HR_MED", "TEMP_MED", "ACC_SD"])
    active_predicate: str = "and"
    # baseline HMM
    baseline_start_hours: float = 0.0
    baseline_end_hours: float = 36.0
    hmm_restarts: int = 3
    hmm_tol: float = 1e-6
    hmm_max_iter: int = 500
    use_viterbi: bool = False
    rule_feature: str = "HR_MED"
    lower_is_sleep: bool = True
    # adaptive discriminant
    test_window_hours: float = 3.0
    train_lengths_hours: list = field(default_factory=lambda: list(range(12, 61)))
    gamma: float = 1.0
    tie_break: str = "largest"
    min_class: int = 2
    # postprocessing
    smoothing_window: int = 9
    min_sleep_minutes: float = 60.0
    seed: int = 0

    def __post_init__(self):
        self.sleep_window = tuple(float(x) for x in self.sleep_window)
        self.wake_window = tuple(float(x) for x in self.wake_window)
        if self.epoch_length <= 0:
            raise ConfigError("epoch_length must be positive")
        for name in ("availability_threshold", "max_missing", "max_abnormal", "subject_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.baseline_end_hours <= self.baseline_start_hours:
            raise ConfigError("baseline must have positive length")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ConfigError("smoothing_window must be a positive odd integer")
        if self.tie_break not in ("smallest", "largest"):
            raise ConfigError("tie_break must be 'smallest' or 'largest'")
        if self.active_predicate not in ("and", "or"):
            raise ConfigError("active_predicate must be 'and' or 'or'")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if len(self.tree_features) != 3:
            raise ConfigError("tree_features names the heart-rate, temperature and activity features")
        self.schedule()

    def schedule(self):
        return AdaptationSchedule(self.baseline_end_hours * 3600.0, self.test_window_hours * 3600.0,
                                  [h * 3600.0 for h in self.train_lengths_hours])

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["sleep_window"] = list(self.sleep_window)
        d["wake_window"] = list(self.wake_window)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")
