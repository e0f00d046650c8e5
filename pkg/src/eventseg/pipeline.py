"""End-to-end segmentation: epochs -> gate -> abnormality filter -> HMM baseline -> adaptive FLDA -> sessions."""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, anomaly, flda, hmm, ingest, sessions
from .errors import (
    ConfigError,
    DegenerateClusteringError,
    InsufficientDataError,
    ParseError,
    SelectionEmptyError,
    ValidationError,
)
from .labels import EXCLUDED, LabelSequence

log = logging.getLogger(__name__)

HOUR = 3600.0


@dataclass
class SubjectInput:
    epochs: ingest.EpochFeatureMatrix
    truth: np.ndarray | None = None
    source: str = ""


def read_input(path, config):
    """Load one subject from a raw-sample, epoch-feature or simulated-realization CSV."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if header[:1] == ["timestamp"]:
        series = ingest.load_series(path)
        em = ingest.epochize(series, config.epoch_length, config.availability_threshold)
        return SubjectInput(em, None, str(path))
    if header[:2] == ["epoch_start", "availability"]:
        return SubjectInput(ingest.EpochFeatureMatrix.from_csv(path, epoch_length=config.epoch_length),
                            None, str(path))
    if header[:2] == ["time_hours", "y_true"]:
        df = pd.read_csv(path)
        names = list(df.columns[2:])
        em = ingest.EpochFeatureMatrix(path.stem, config.epoch_length,
                                       df["time_hours"].to_numpy(float) * HOUR,
                                       df[names].to_numpy(float), np.ones(len(df)), names)
        return SubjectInput(em, df["y_true"].to_numpy(int), str(path))
    raise ParseError(f"{path}: unrecognized header {header[:3]}", line=1)


@dataclass
class SegmentResult:
    subject_id: str
    gate: ingest.SubjectGate
    features_used: list = field(default_factory=list)
    labels: LabelSequence | None = None
    sessions: list = field(default_factory=list)
    session_features: pd.DataFrame | None = None
    batches: list = field(default_factory=list)
    model: hmm.GaussianHmm | None = None
    abnormality: pd.DataFrame | None = None
    agreement: float | None = None
    notes: list = field(default_factory=list)

    @property
    def admitted(self):
        return self.gate.admitted

    def labels_frame(self):
        return pd.DataFrame({"epoch_start": self.labels.times, "label": self.labels.labels,
                             "source": self.labels.tags})

    def diagnostics_frame(self):
        return pd.DataFrame({"batch_start": [b.batch_start for b in self.batches],
                             "chosen_d": [b.chosen_d for b in self.batches],
                             "si": [b.si for b in self.batches]},
                            columns=["batch_start", "chosen_d", "si"])


def _has(em, names):
    return all(n in em.feature_names for n in names)


def abnormal_epochs(em, config):
    """(flags, verdicts, region) for one subject; no filtering when features are absent or unset."""
    if not config.filtering_features or not _has(em, config.filtering_features):
        return np.zeros(len(em), dtype=bool), [], None
    try:
        region = anomaly.fit_normal_region(em, config.filtering_features, config.anomaly_k,
                                           config.anomaly_quantile, config.joint_clustering)
    except (InsufficientDataError, DegenerateClusteringError) as exc:
        log.warning("%s: abnormality filter skipped (%s)", em.subject_id, exc)
        return np.zeros(len(em), dtype=bool), [], None
    flags = anomaly.filter_abnormal(em, region)
    idx = np.flatnonzero(flags)
    verdicts = []
    if idx.size:
        if _has(em, config.tree_features):
            try:
                verdicts = anomaly.classify_abnormal(em.subset(idx), em.subset(~flags & em.present),
                                                     tuple(config.tree_features), idx,
                                                     config.active_predicate)
            except InsufficientDataError:
                verdicts = []
        if not verdicts:
            verdicts = [anomaly.AbnormalityVerdict(int(i), "Other", False) for i in idx]
    return flags, verdicts, region


def choose_features(inputs, config):
    """Configured features, else SWSI selection across subjects, else all features."""
    if config.features:
        return list(config.features)
    ems = [s.epochs for s in inputs]
    try:
        return ingest.select_features(ems, config.sleep_window, config.wake_window,
                                      config.swsi_threshold, config.subject_fraction,
                                      config.correlation_dedup, config.clock_offset_hours)
    except SelectionEmptyError as exc:
        log.warning("feature selection found nothing (%s); using every feature", exc)
        return list(ems[0].feature_names)


def segment_subject(inp, config, features):
    em = inp.epochs
    flags, verdicts, _ = abnormal_epochs(em, config)
    t0 = config.baseline_start_hours * HOUR
    expected = int(round((em.starts[-1] - t0) / em.epoch_length)) + 1 if len(em) else 0
    gate = ingest.gate_subject(em, flags, max(expected, len(em)), config.max_missing,
                               config.max_abnormal)
    res = SegmentResult(em.subject_id, gate, features)
    res.abnormality = anomaly.abnormality_report(em, flags, verdicts)
    if not gate.admitted:
        res.notes.append("rejected by availability/abnormality gate")
        return res
    missing = [f for f in features if f not in em.feature_names]
    if missing:
        raise ValidationError(f"{em.subject_id}: features {missing} not in input")

    X_all = em.columns(features)
    normal = ~flags & ~np.isnan(X_all).any(axis=1)
    times = em.starts[normal]
    X = X_all[normal]
    base_end = config.baseline_end_hours * HOUR
    if times.size == 0 or times[-1] < base_end:
        raise ConfigError(f"{em.subject_id}: record ends before baseline_end "
                          f"({config.baseline_end_hours} h)")
    base = times < base_end
    lengths = hmm.split_at_gaps(times[base], em.epoch_length)
    model = hmm.fit_em(X[base], K=2, tol=config.hmm_tol, max_iter=config.hmm_max_iter,
                       seed=config.seed, n_restarts=config.hmm_restarts, lengths=lengths)
    decoded = hmm.decode(model, X[base], lengths, config.use_viterbi)
    override = None
    if config.rule_feature in features:
        channel = features.index(config.rule_feature)
    elif config.rule_feature in em.feature_names:
        # rule feature not modelled: compare its mean across the decoded states
        channel = 0
        r = em.columns([config.rule_feature])[normal][base, 0]
        means = [np.nanmean(r[decoded.states == k]) if np.any(decoded.states == k) else np.nan
                 for k in range(2)]
        if not np.isnan(means).any():
            override = int(np.argmin(means) if config.lower_is_sleep else np.argmax(means))
    else:
        channel = 0
        res.notes.append(f"rule feature {config.rule_feature} absent; using {features[0]}")
    base_labels = hmm.map_states_to_events(model, decoded, channel, config.lower_is_sleep,
                                           sleep_state_override=override)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", flda.CarryForwardWarning)
        st = flda.gradual_self_train(times, X, base_labels, config.schedule(), config.gamma,
                                     config.tie_break, config.min_class)
    res.notes += [str(w.message) for w in caught]

    y = np.full(len(em), EXCLUDED, dtype=int)
    tags = np.where(em.present, "Other", "Missing").astype(object)
    for v in verdicts:
        tags[v.epoch_index] = v.category
    y[normal] = st.labels.labels
    tags[normal] = st.labels.tags
    raw = LabelSequence(em.starts, y, tags)
    smoothed = sessions.smooth_labels(raw, config.smoothing_window, config.min_sleep_minutes,
                                      em.epoch_length)
    res.labels = sessions.reinsert_labels(smoothed, verdicts)
    res.sessions = sessions.build_sessions(smoothed, verdicts, config.clock_offset_hours,
                                           em.epoch_length)
    if res.sessions and sessions.feature_channels(em.feature_names):
        res.session_features = sessions.session_features(res.sessions, em,
                                                         config.clock_offset_hours)
    res.batches = st.batches
    res.model = model
    if inp.truth is not None:
        lab = res.labels.labels
        ok = lab != EXCLUDED
        res.agreement = float(np.mean(lab[ok] == inp.truth[ok]))
    return res


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import scipy
    return {"eventseg": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__}


def segment_paths(paths, config, output=None, jobs=1):
    """Segment every input file; writes per-subject CSVs and a manifest when ``output`` is set."""
    inputs = [read_input(p, config) for p in paths]
    features = choose_features(inputs, config)
    if jobs and jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(lambda i: segment_subject(i, config, features), inputs))
    else:
        results = [segment_subject(i, config, features) for i in inputs]
    manifest = {
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "versions": _versions(),
        "inputs": [{"path": i.source, "sha256": _file_digest(i.source)} for i in inputs],
        "features": features,
        "subjects": [{
            "subject": r.subject_id,
            "admitted": r.gate.admitted,
            "missing_proportion": r.gate.missing_proportion,
            "abnormal_proportion": r.gate.abnormal_proportion,
            "n_sessions": len(r.sessions),
            "agreement_with_truth": r.agreement,
            "notes": r.notes,
        } for r in results],
    }
    if output is not None:
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        feats = []
        for r in results:
            if not r.admitted:
                continue
            r.labels_frame().to_csv(out / f"{r.subject_id}_labels.csv", index=False)
            sessions.sessions_frame(r.sessions, r.subject_id).to_csv(
                out / f"{r.subject_id}_sessions.csv", index=False)
            r.diagnostics_frame().to_csv(out / f"{r.subject_id}_batches.csv", index=False)
            r.abnormality.to_csv(out / f"{r.subject_id}_abnormality.csv", index=False)
            if r.session_features is not None:
                feats.append(r.session_features)
        if feats:
            pd.concat(feats, ignore_index=True).to_csv(out / "session_features.csv", index=False)
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
    return results, manifest
