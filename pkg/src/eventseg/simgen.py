"""Ground-truth wake/sleep simulator with drifting channel means.

A *session* is one (wake, sleep) pair. Channel 1 is a truncated normal
(heart-rate analog), channel 2 a log-normal (activity analog). After the
baseline, the per-session mean of each channel follows a quadratic in the
session index that peaks at a random apex session.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import truncnorm

from .errors import ConfigError

SCENARIOS = {
    "stable": (0.0, 0.0, 0.0, 0.0),
    "unstable++": (15.0, 10.0, 0.5, -0.5),
    "unstable+-": (-15.0, 15.0, 0.5, -0.5),
}


@dataclass
class SimConfig:
    scenario: str = "stable"
    n_sessions: int = 11
    sample_step: float = 1.0 / 6.0
    wake_duration: tuple = (16.0, 1.0)
    # per-session (wake_mu, wake_sd, sleep_mu, sleep_sd); None derives them
    session_durations: list | None = None
    sleep_shrink: float = 2.0
    ch1_loc: tuple = (80.0, 58.0)
    ch1_scale: tuple = (10.0, 3.0)
    ch2_logmean: tuple = (-1.0, -3.0)
    ch2_logsd: tuple = (0.3, 0.3)
    # (b_wake^(1), b_sleep^(1), b_wake^(2), b_sleep^(2))
    trend: tuple = (0.0, 0.0, 0.0, 0.0)
    apex_sessions: tuple = (5, 6, 7)
    baseline_end: float = 36.0
    seed: int = 0

    def __post_init__(self):
        for name in ("wake_duration", "ch1_loc", "ch1_scale", "ch2_logmean", "ch2_logsd",
                     "trend", "apex_sessions"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; valid: {sorted(SCENARIOS)}")
        if self.n_sessions < 2:
            raise ConfigError("need at least two sessions")
        if self.sample_step <= 0:
            raise ConfigError("sample_step must be positive")
        mu0, sd0 = self.wake_duration
        if not 0 < mu0 < 24:
            raise ConfigError("wake duration mean must lie in (0, 24) hours")
        if min(sd0, *self.ch1_scale, *self.ch2_logsd) <= 0:
            raise ConfigError("scale parameters must be positive")
        if self.scenario == "stable" and any(self.trend):
            raise ConfigError("stable scenario requires all trend coefficients to be zero")
        if min(self.apex_sessions) < 2:
            raise ConfigError("apex session index must be >= 2")

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_configs():
    return {name: SimConfig(scenario=name, trend=b) for name, b in SCENARIOS.items()}


@dataclass
class SimRealization:
    times: np.ndarray
    truth: np.ndarray
    observations: np.ndarray
    transition_times: np.ndarray
    session_means: np.ndarray
    session_index: np.ndarray
    apex: int
    config: SimConfig = field(repr=False, default=None)

    def to_frame(self):
        return pd.DataFrame({
            "time_hours": self.times,
            "y_true": self.truth,
            "x1": self.observations[:, 0],
            "x2": self.observations[:, 1],
        })

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def trend_mean(u1, b, m, apex):
    """Quadratic session trend: u1 at m=1, u1 + b at the apex session."""
    return u1 - b * (m - apex) ** 2 / (1 - apex) ** 2 + b


def _tn(rng, loc, scale, size=None):
    loc = np.asarray(loc, dtype=float)
    scale = np.asarray(scale, dtype=float)
    return truncnorm.rvs((0.0 - loc) / scale, np.inf, loc=loc, scale=scale, size=size,
                         random_state=rng)


def session_duration_params(config, apex):
    if config.session_durations is not None:
        params = np.asarray(config.session_durations, dtype=float)
        if params.shape != (config.n_sessions, 4):
            raise ConfigError("session_durations needs one (wake_mu, wake_sd, sleep_mu, sleep_sd) per session")
        return params
    mu0, sd0 = config.wake_duration
    mu1 = 24.0 - mu0
    m = np.arange(1, config.n_sessions + 1)
    shrink = np.zeros(config.n_sessions)
    if config.scenario != "stable":
        shrink = config.sleep_shrink * np.clip(1 - np.abs(m - apex) / (apex - 1), 0, 1)
        shrink[0] = 0.0
    return np.column_stack([np.full(m.size, mu0), np.full(m.size, sd0), mu1 - shrink,
                            np.full(m.size, sd0)])


def generate(config, seed=None):
    rng = np.random.default_rng(config.seed if seed is None else seed)
    apex = int(rng.choice(config.apex_sessions))
    params = session_duration_params(config, apex)
    durations = np.empty(2 * config.n_sessions)
    durations[0::2] = _tn(rng, params[:, 0], params[:, 1])
    durations[1::2] = _tn(rng, params[:, 2], params[:, 3])
    tau = np.cumsum(durations)
    step = config.sample_step
    tau_grid = np.round(tau / step).astype(int)
    n = int(tau_grid[-1])
    idx = np.arange(n)
    n_trans = np.searchsorted(tau_grid, idx, side="right")
    truth = n_trans % 2
    session = n_trans // 2 + 1
    times = idx * step

    m = np.arange(1, config.n_sessions + 1)
    b = np.asarray(config.trend, dtype=float).reshape(2, 2)  # [channel, state]
    base = np.array([config.ch1_loc, config.ch2_logmean], dtype=float)
    means = np.empty((config.n_sessions, 2, 2))
    for ch in range(2):
        for k in range(2):
            means[:, ch, k] = trend_mean(base[ch, k], b[ch, k], m, apex)
    post = times >= config.baseline_end
    mu1 = np.where(post, means[session - 1, 0, truth], base[0, truth])
    mu2 = np.where(post, means[session - 1, 1, truth], base[1, truth])
    sd1 = np.asarray(config.ch1_scale)[truth]
    sd2 = np.asarray(config.ch2_logsd)[truth]
    x1 = _tn(rng, mu1, sd1)
    x2 = np.exp(rng.normal(mu2, sd2))
    return SimRealization(times, truth, np.column_stack([x1, x2]), tau_grid * step, means,
                          session, apex, config)
