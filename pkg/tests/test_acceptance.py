"""Acceptance criteria: one PASS/FAIL line per criterion, printed in the terminal summary."""
import itertools
import time
import warnings

import numpy as np
import pytest

from eventseg import evaluation, flda, hmm, ingest, outcomes, sessions, simgen

from conftest import ACCEPTANCE_LINES
from oracles import nn_agreement
from test_hmm import brute_force_loglik, random_model, two_state_data
from test_outcomes import pair_count_auc
from test_sessions import CHANNELS, day_stream, epochs_for, oracle_smooth, seq


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def benchmark(scenario, n_realizations, n_repeats, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", flda.CarryForwardWarning)
        return evaluation.run_benchmark(simgen.default_configs()[scenario], ["hmm", "proposed"],
                                        n_realizations, n_repeats, "out-of-sample", seed=seed)


@pytest.mark.acceptance
def test_criterion_1_stable_benchmark():
    t0 = time.perf_counter()
    rep = benchmark("stable", 100, 10, seed=101)
    elapsed = time.perf_counter() - t0
    h, p = rep.reports["hmm"], rep.reports["proposed"]
    n = h.n_trials
    ok = h.accuracy >= 0.98 and p.accuracy >= 0.98 and elapsed <= 600 and n == 1000
    report(1, ok, f"stable 100x10 accuracy hmm={h.accuracy:.4f} proposed={p.accuracy:.4f} "
                  f"trials={n} runtime={elapsed:.0f}s")


@pytest.mark.acceptance
def test_criterion_2_unstable_plus_minus():
    rep = benchmark("unstable+-", 50, 2, seed=102)
    h, p = rep.reports["hmm"], rep.reports["proposed"]
    pv = rep.pvalues["proposed_vs_hmm"]["accuracy"]
    ok = (p.n_trials >= 100 and p.accuracy > h.accuracy and pv < 0.01
          and p.duration_diff < h.duration_diff)
    report(2, ok, f"unstable+- trials={p.n_trials} accuracy hmm={h.accuracy:.4f} "
                  f"proposed={p.accuracy:.4f} p={pv:.2e}; duration_diff hmm={h.duration_diff:.3f} "
                  f"proposed={p.duration_diff:.3f}")


@pytest.mark.acceptance
def test_criterion_3_unstable_plus_plus():
    rep = benchmark("unstable++", 50, 2, seed=103)
    h, p = rep.reports["hmm"], rep.reports["proposed"]
    pf = rep.pvalues["proposed_vs_hmm"]["f1"]
    po = rep.pvalues["proposed_vs_hmm"]["onset_diff"]
    ok = (p.n_trials >= 100 and p.f1 > h.f1 and pf < 0.01 and p.onset_diff < h.onset_diff)
    report(3, ok, f"unstable++ trials={p.n_trials} f1 hmm={h.f1:.4f} proposed={p.f1:.4f} "
                  f"p={pf:.2e}; onset_diff hmm={h.onset_diff:.3f} proposed={p.onset_diff:.3f} "
                  f"p={po:.2e}")


@pytest.mark.acceptance
def test_criterion_4_hmm_correctness():
    rng = np.random.default_rng(4)
    worst = 0.0
    for K, N in itertools.product([2, 3], range(1, 9)):
        model = random_model(rng, K, 2)
        X = rng.normal(0, 2, size=(N, 2))
        _, _, ll = hmm.forward_backward(model.log_emission(X), model.initial_probs,
                                        model.transition)
        ref = brute_force_loglik(model, X)
        worst = max(worst, abs(ll - ref) / abs(ref))
    drops = 0
    for seed in range(50):
        X, _ = two_state_data(np.random.default_rng(seed), 200)
        h = np.array(hmm.fit_em(X, K=2, seed=seed, n_restarts=1, max_iter=60).history)
        drops += int(np.any(np.diff(h) < -1e-8 * np.abs(h[:-1])))
    report(4, worst <= 1e-10 and drops == 0,
           f"forward vs enumeration max rel err={worst:.1e} (K=2,3 N=1..8); "
           f"EM non-monotone datasets={drops}/50")


@pytest.mark.acceptance
def test_criterion_5_flda_correctness():
    beaten = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, 200)
        y[:2], y[2:4] = 0, 1
        X = rng.multivariate_normal([0, 0], [[1.0, 0.6], [0.6, 2.0]], 200) + np.outer(y, [2.0, 1.0])
        J = flda.fisher_criterion(flda.fisher_weights(X, y, ridge=0.0), X, y)
        angles = rng.uniform(0, 2 * np.pi, 10_000)
        best = max(flda.fisher_criterion(np.array([np.cos(a), np.sin(a)]), X, y) for a in angles)
        beaten += int(J >= best * (1 - 1e-12))
    rng = np.random.default_rng(5)
    agree = checked = 0
    while checked < 1000:
        m0, m1 = rng.normal(0, 3, 2)
        v0, v1 = rng.uniform(0.1, 5, 2)
        gamma = rng.uniform(0.2, 5)
        z = rng.normal(0, 5)
        lhs = (z - m0) ** 2 / v0 - (z - m1) ** 2 / v1
        rhs = np.log(gamma) + np.log(v1) - np.log(v0)
        if abs(lhs - rhs) < 1e-9:
            continue
        checked += 1
        state = flda.FldaState(np.array([1.0]), (m0, m1), (v0, v1), gamma)
        agree += int(flda.project_classify(state, np.array([z])) == int(lhs > rhs))
    report(5, beaten == 20 and agree == 1000,
           f"Fisher weights beat 1e4 random directions on {beaten}/20 datasets; "
           f"decision rule agrees on {agree}/1000 draws")


@pytest.mark.acceptance
def test_criterion_6_separability_indices():
    rng = np.random.default_rng(6)
    si_ok = 0
    for _ in range(100):
        n = int(rng.integers(2, 40))
        X = np.round(rng.normal(size=(n, 2)), 1)
        y = rng.integers(0, 2, n)
        w = rng.normal(size=2)
        k = int(rng.integers(1, n))
        si_ok += int(flda.separability_index(X[:k], y[:k], X[k:], y[k:], w) == nn_agreement(X @ w, y))
    swsi_ok = swsi_n = 0
    while swsi_n < 100:
        n = int(rng.integers(24, 120))
        t = np.sort(rng.uniform(0, 72, n)) * 3600.0
        v = np.round(rng.normal(size=n), 1)
        off = float(rng.uniform(0, 24))
        h = ingest.clock_hours(t, off)
        sl, wk = (h >= 2) & (h < 5), (h >= 19) & (h < 22)
        if not sl.any() or not wk.any():
            continue
        swsi_n += 1
        sel = sl | wk
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            got = ingest.swsi(v, t, (2, 5), (19, 22), off)
        swsi_ok += int(got == nn_agreement(v[sel], sl[sel].astype(int)))
    g = np.random.default_rng(3)
    Xs = np.vstack([g.normal(0, 0.5, (100, 2)), g.normal(10, 0.5, (100, 2))])
    ys = np.repeat([0, 1], 100)
    sep = flda.separability_index(Xs[::2], ys[::2], Xs[1::2], ys[1::2], flda.fisher_weights(Xs, ys))
    Xn = g.normal(size=(200, 2))
    yn = g.permutation(np.repeat([0, 1], 100))
    non = flda.separability_index(Xn[:100], yn[:100], Xn[100:], yn[100:], np.array([1.0, 0.5]))
    ok = si_ok == 100 and swsi_ok == 100 and sep == 1.0 and 0.37 <= non <= 0.57
    report(6, ok, f"SI recount {si_ok}/100, SWSI recount {swsi_ok}/100, separable SI={sep:.3f}, "
                  f"non-separable SI={non:.3f} (n=200)")


@pytest.mark.acceptance
def test_criterion_7_postprocessing():
    rng = np.random.default_rng(7)
    match = 0
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        if rng.random() < 0.5:
            x = (rng.random(n) < rng.uniform(0.05, 0.95)).astype(int)
        else:
            x = np.repeat(rng.integers(0, 2, n // 5 + 1), 5)[:n] ^ (rng.random(n) < 0.1)
        match += int(np.array_equal(sessions.smooth_labels(seq(x)).labels, oracle_smooth(x)))
    prev_day = 0
    cases = [(8.0, 48), (0.0, 72), (12.0, 96), (20.0, 48)]
    for clock, total in cases:
        lab = day_stream(1.5, 6.0, total, clock)
        s = sessions.build_sessions(lab, clock_offset=clock)
        sleeps = [x for x in s if x.kind == "sleep" and x.start > 0]
        # onset 01:30 on calendar day d counts towards day d - 1
        prev_day += int(bool(sleeps) and all(
            x.day_index == int(np.floor((x.start / 3600 + clock) / 24)) for x in sleeps))
    lab = day_stream(23.0, 8.0, 72)
    em = epochs_for(lab.times, lambda t, j: rng.normal(size=t.size) + j)
    df = sessions.session_features(sessions.build_sessions(lab, clock_offset=8.0), em,
                                   clock_offset=8.0)
    n_cols = len([c for c in df.columns if c not in ("subject", "day")])
    ok = match == 1000 and prev_day == len(cases) and n_cols == 196 and len(CHANNELS) == 4
    report(7, ok, f"smoothing matches oracle on {match}/1000 streams; 01:30 onsets on previous "
                  f"day in {prev_day}/{len(cases)} constructions; feature columns={n_cols}")


@pytest.mark.acceptance
def test_criterion_8_outcomes():
    rng = np.random.default_rng(8)
    auc_ok = 0
    for _ in range(100):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = np.round(rng.normal(size=n), 1)
        auc_ok += int(abs(outcomes.auc(scores, labels) - pair_count_auc(scores, labels)) <= 1e-12)
    cr_err = 0.0
    for _ in range(20):
        x = rng.normal(size=(50, 2))
        y = (rng.random(50) < 1 / (1 + np.exp(-x[:, 0]))).astype(int)
        cr = outcomes.fit_continuation_ratio(x, y, 2)
        lr = outcomes.fit_logistic(x, 1 - y)
        cr_err = max(cr_err, np.max(np.abs(cr.coefficients - lr.coefficients)
                                    / np.maximum(np.abs(lr.coefficients), 1.0)))
    M = rng.normal(size=(12, 3))
    S, i, j, _ = outcomes.smote(M, 1000, seed=8, return_pairs=True)
    resid = np.abs(np.linalg.norm(S - M[i], axis=1) + np.linalg.norm(S - M[j], axis=1)
                   - np.linalg.norm(M[i] - M[j], axis=1))
    smote_ok = int(np.sum(resid < 1e-10))
    y = np.repeat([0, 1], 15)
    x = y + rng.normal(0, 0.05, 30)
    loo = outcomes.loocv_auc(x, y).auc
    ok = auc_ok == 100 and cr_err <= 1e-6 and smote_ok == 1000 and loo >= 0.95
    report(8, ok, f"AUC vs pair counting {auc_ok}/100; 2-level CR vs LR max rel diff={cr_err:.1e}; "
                  f"SMOTE collinear {smote_ok}/1000; near-oracle LOOCV AUC={loo:.3f}")


@pytest.mark.acceptance
def test_criterion_9_hvc_reproduction():
    ACCEPTANCE_LINES.append("criterion 9: WAIVED  viral-challenge wearable dataset not available "
                            "offline; criteria 1-8 govern")
    pytest.skip("viral-challenge dataset not available")
