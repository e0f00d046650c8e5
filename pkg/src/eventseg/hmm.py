"""Multivariate Gaussian HMM: EM fitting, decoding and state-to-event mapping."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .anomaly import kmeans
from .errors import AmbiguousStatesError, DegenerateClusteringError, ValidationError
from .labels import LabelSequence

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class CovarianceCollapseWarning(UserWarning):
    pass


@dataclass
class GaussianHmm:
    initial_probs: np.ndarray
    transition: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    converged: bool = True
    n_iter: int = 0
    log_likelihood: float = float("nan")
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.initial_probs = np.asarray(self.initial_probs, dtype=float)
        self.transition = np.asarray(self.transition, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float)
        K, p = self.means.shape
        if self.transition.shape != (K, K) or self.covariances.shape != (K, p, p):
            raise ValidationError("inconsistent HMM parameter shapes")
        if not np.allclose(self.transition.sum(axis=1), 1.0, rtol=0, atol=1e-10):
            raise ValidationError("transition rows must sum to 1")

    @property
    def K(self):
        return self.means.shape[0]

    @property
    def p(self):
        return self.means.shape[1]

    def log_emission(self, X):
        """log N(x_t; mu_k, Sigma_k) as an (N, K) array."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise ValidationError(f"observations have dimension {X.shape[1]}, model expects {self.p}")
        out = np.empty((X.shape[0], self.K))
        for k in range(self.K):
            L = np.linalg.cholesky(self.covariances[k])
            diff = np.linalg.solve(L, (X - self.means[k]).T)
            out[:, k] = -0.5 * (np.sum(diff**2, axis=0) + self.p * LOG_2PI) - np.log(np.diag(L)).sum()
        return out

    def to_dict(self):
        return {
            "K": self.K,
            "initial_probs": self.initial_probs.tolist(),
            "transition": self.transition.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "log_likelihood": self.log_likelihood,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(d["initial_probs"], d["transition"], d["means"], d["covariances"],
                   d.get("converged", True), d.get("n_iter", 0), d.get("log_likelihood", float("nan")))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class DecodedStates:
    states: np.ndarray
    posteriors: np.ndarray
    log_likelihood: float


def forward_backward(log_b, initial, transition):
    """Scaled forward-backward on one sequence.

    Returns (posteriors, xi_sum, log_likelihood) where ``xi_sum`` is the
    expected transition count matrix.
    """
    N, K = log_b.shape
    shift = log_b.max(axis=1)
    B = np.exp(log_b - shift[:, None])
    alpha = np.empty((N, K))
    c = np.empty(N)
    a = initial * B[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    AT = transition
    for t in range(1, N):
        a = (alpha[t - 1] @ AT) * B[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    beta = np.empty((N, K))
    beta[-1] = 1.0
    for t in range(N - 2, -1, -1):
        beta[t] = (AT @ (B[t + 1] * beta[t + 1])) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    if N > 1:
        xi = alpha[:-1, :, None] * AT[None] * (B[1:] * beta[1:])[:, None, :] / c[1:, None, None]
        xi_sum = xi.sum(axis=0)
    else:
        xi_sum = np.zeros((K, K))
    ll = float(np.log(c).sum() + shift.sum())
    return gamma, xi_sum, ll


def viterbi(log_b, initial, transition):
    N, K = log_b.shape
    with np.errstate(divide="ignore"):
        logA = np.log(transition)
        delta = np.log(initial) + log_b[0]
    back = np.zeros((N, K), dtype=int)
    for t in range(1, N):
        scores = delta[:, None] + logA
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(K)] + log_b[t]
    path = np.empty(N, dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(N - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def _segments(N, lengths):
    if lengths is None:
        return [(0, N)]
    lengths = [int(n) for n in lengths]
    if sum(lengths) != N or min(lengths) < 1:
        raise ValidationError("segment lengths must be positive and sum to the observation count")
    edges = np.cumsum([0] + lengths)
    return list(zip(edges[:-1], edges[1:]))


def split_at_gaps(times, step, tol=1e-6):
    """Segment lengths for a time grid with dropped epochs."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(times) > step * (1 + tol)) + 1
    edges = np.concatenate([[0], breaks, [times.size]])
    return np.diff(edges).tolist()


def _cov_floor(X):
    v = float(np.mean(np.var(X, axis=0)))
    return 1e-6 * v if v > 0 else 1e-6


def _floor_eigen(S, eps):
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w.min() >= eps:
        return S
    return (V * np.maximum(w, eps)) @ V.T


def _initial_model(X, K, rng, eps, diagonal):
    N, p = X.shape
    try:
        if rng is None:
            C, a = kmeans(X, K)
        else:
            pick = rng.choice(N, size=K, replace=False)
            C, a = kmeans(X, K, init=X[pick])
    except DegenerateClusteringError:
        C = np.repeat(X.mean(axis=0, keepdims=True), K, axis=0)
        a = np.arange(N) % K
    # pooled within-cluster covariance shared by every state
    resid = X - C[a]
    pooled = resid.T @ resid / max(N - K, 1)
    if diagonal:
        pooled = np.diag(np.diag(pooled))
    pooled = _floor_eigen(pooled, eps)
    A = np.full((K, K), 0.1 / (K - 1)) if K > 1 else np.ones((1, 1))
    np.fill_diagonal(A, 0.9 if K > 1 else 1.0)
    order = np.lexsort(C.T[::-1])
    return GaussianHmm(np.full(K, 1.0 / K), A, C[order], np.repeat(pooled[None], K, axis=0))


def _em(X, segs, model, tol, max_iter, eps, diagonal):
    K, p = model.K, model.p
    history = []
    converged = False
    for it in range(1, max_iter + 1):
        log_b = model.log_emission(X)
        gamma = np.empty((X.shape[0], K))
        xi = np.zeros((K, K))
        pi = np.zeros(K)
        ll = 0.0
        for s, e in segs:
            g, x_, l_ = forward_backward(log_b[s:e], model.initial_probs, model.transition)
            gamma[s:e] = g
            xi += x_
            pi += g[0]
            ll += l_
        history.append(ll)
        if len(history) > 1:
            prev = history[-2]
            if abs(ll - prev) <= tol * max(abs(prev), 1e-300):
                converged = True
                break
        if it == max_iter:
            break

        # M-step
        pi /= pi.sum()
        if K > 1:
            rows = xi.sum(axis=1, keepdims=True)
            A = np.where(rows > 0, xi / np.where(rows > 0, rows, 1), model.transition)
        else:
            A = np.ones((1, 1))
        w = gamma.sum(axis=0)
        means = model.means.copy()
        covs = model.covariances.copy()
        for k in range(K):
            if w[k] <= 0:
                continue
            means[k] = gamma[:, k] @ X / w[k]
            d = X - means[k]
            S = (gamma[:, k, None] * d).T @ d / w[k]
            if diagonal:
                S = np.diag(np.diag(S))
            if w[k] < p + 1:
                warnings.warn(f"state {k} owns {w[k]:.2f} < p+1 points; covariance regularized",
                              CovarianceCollapseWarning, stacklevel=3)
            covs[k] = _floor_eigen(S, eps)
        model = GaussianHmm(pi, A, means, covs)
    model.converged = converged
    model.n_iter = len(history)
    model.log_likelihood = history[-1]
    model.history = history
    return model


def fit_em(X, K=2, tol=1e-6, max_iter=500, seed=0, n_restarts=3, lengths=None, diagonal=False):
    """Fit a K-state Gaussian HMM by EM.

    The first restart initializes from deterministic quantile-spread k-means;
    later restarts seed k-means with random observations. The restart with
    the highest final log-likelihood is returned.

    ``lengths`` splits ``X`` into independent segments that share parameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2:
        raise ValidationError("observations must be an (N, p) matrix")
    N, p = X.shape
    if np.isnan(X).any():
        raise ValidationError("drop missing epochs before fitting")
    if N <= K * (p + 2):
        raise ValidationError(f"need more than {K * (p + 2)} observations, have {N}")
    segs = _segments(N, lengths)
    eps = _cov_floor(X)
    rng = np.random.default_rng(seed)
    best = None
    for r in range(max(1, n_restarts)):
        init = _initial_model(X, K, None if r == 0 else rng, eps, diagonal)
        m = _em(X, segs, init, tol, max_iter, eps, diagonal)
        if best is None or m.log_likelihood > best.log_likelihood:
            best = m
    if not best.converged:
        log.warning("EM stopped at max_iter=%d without converging", max_iter)
    return best


def decode(model, X, lengths=None, use_viterbi=False):
    """Posterior (or Viterbi) state sequence and smoothed posteriors."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    log_b = model.log_emission(X)
    segs = _segments(X.shape[0], lengths)
    post = np.empty_like(log_b)
    ll = 0.0
    states = np.empty(X.shape[0], dtype=int)
    for s, e in segs:
        g, _, l_ = forward_backward(log_b[s:e], model.initial_probs, model.transition)
        post[s:e] = g
        ll += l_
        states[s:e] = (viterbi(log_b[s:e], model.initial_probs, model.transition)
                       if use_viterbi else np.argmax(g, axis=1))
    return DecodedStates(states, post, ll)


def sleep_state(model, channel=0, lower_is_sleep=True):
    """Index of the state identified as sleep on the rule channel (K=2)."""
    if model.K != 2:
        raise ValidationError("sleep/wake mapping needs exactly two states")
    m = model.means[:, channel]
    if m[0] == m[1]:
        raise AmbiguousStatesError("states have equal means on the rule channel; pass an override")
    lo = int(np.argmin(m))
    return lo if lower_is_sleep else 1 - lo


def map_states_to_events(model, decoded, channel=0, lower_is_sleep=True, times=None,
                         sleep_state_override=None):
    """Translate decoded states into sleep (1) / wake (0) labels."""
    s = sleep_state_override if sleep_state_override is not None else sleep_state(
        model, channel, lower_is_sleep)
    labels = (decoded.states == s).astype(int)
    if times is None:
        times = np.arange(labels.size, dtype=float)
    return LabelSequence(times, labels, np.full(labels.size, "hmm-baseline", dtype=object))
