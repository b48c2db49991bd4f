"""Ceiling analyses per stage and the combined detection run."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from .classifier import EnsembleModel, TrainConfig
from .clustering import NOISE, ClusterConfig, FilterConfig, cluster_stream
from .core import NO_INSTANCE, ClassLabel, Sequence
from .features import CATALOG, ClusterSample, extract_all, sample_clusters
from .featsel import FeatureSubset, guided_backward_eliminate, rank_features
from .metrics import (
    InstanceCounts,
    MetricsReport,
    confusion_matrix,
    instance_scores,
    macro_f1,
    point_f1,
    v_measure,
)

log = logging.getLogger(__name__)

# shipped clustering preset matching each sensor profile's resolution class
PROFILE_PRESET = {"A": "S1", "B": "S2"}


@dataclass
class ExampleSet:
    """Padded frame histories (N, T, F), one per cluster sample."""

    X: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray
    seq_index: np.ndarray  # which input sequence each example came from
    samples: list[ClusterSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, mask: np.ndarray) -> "ExampleSet":
        idx = np.flatnonzero(mask)
        return ExampleSet(
            self.X[idx], self.lengths[idx], self.labels[idx], self.seq_index[idx],
            [self.samples[i] for i in idx] if self.samples else [],
        )


def oracle_labels(seq: Sequence, fcfg: FilterConfig | None, ccfg: ClusterConfig) -> np.ndarray:
    """Ground-truth objects as clusters, plus background clusters found by
    clustering what remains once every labelled object is removed."""
    labels = np.full(len(seq), NOISE, dtype=int)
    vru = seq.gt_instance != NO_INSTANCE
    inst, codes = np.unique(seq.gt_instance[vru], return_inverse=True)
    labels[vru] = codes + 1
    if (~vru).any():
        rest = cluster_stream(seq.subset(~vru), fcfg, ccfg).labels
        labels[~vru] = np.where(rest != NOISE, rest + len(inst), NOISE)
    return labels


def histories(samples: list[ClusterSample], max_frames: int = clf.MAX_FRAMES) -> list[np.ndarray]:
    """For each sample, the indices of itself and up to ``max_frames - 1`` preceding
    samples of the same cluster, oldest first."""
    out = []
    start = 0
    for k, s in enumerate(samples):
        if k == 0 or samples[k - 1].source_cluster != s.source_cluster or samples[k - 1].seq_id != s.seq_id:
            start = k
        out.append(np.arange(max(start, k - max_frames + 1), k + 1))
    return out


def build_examples(
    seqs: list[Sequence], label_sets: list[np.ndarray], max_frames: int = clf.MAX_FRAMES
) -> ExampleSet:
    """Sample every cluster, extract features and stack per-sample histories."""
    blocks, lens, labels, where, all_samples = [], [], [], [], []
    for si, (seq, lab) in enumerate(zip(seqs, label_sets)):
        samples = sample_clusters(lab, seq)
        if not samples:
            continue
        F = extract_all(samples, CATALOG)
        hist = histories(samples, max_frames)
        X = np.zeros((len(samples), max_frames, F.shape[1]))
        for n, h in enumerate(hist):
            X[n, : len(h)] = F[h]
        blocks.append(X)
        lens.append(np.array([len(h) for h in hist]))
        labels.append(np.array([int(s.gt_class) for s in samples]))
        where.append(np.full(len(samples), si))
        all_samples += samples
    if not blocks:
        return ExampleSet(
            np.zeros((0, max_frames, len(CATALOG))), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
        )
    return ExampleSet(
        np.concatenate(blocks), np.concatenate(lens), np.concatenate(labels), np.concatenate(where), all_samples
    )


def sample_ids(samples: list[ClusterSample]) -> list[str]:
    ids, k, prev = [], 0, None
    for s in samples:
        key = (s.seq_id, s.source_cluster)
        k = k + 1 if key == prev else 0
        prev = key
        ids.append(f"{s.seq_id}|{s.source_cluster}|{k}")
    return ids


def examples_from_matrix(
    F: np.ndarray, ids: list[str], labels, max_frames: int = clf.MAX_FRAMES
) -> ExampleSet:
    """Rebuild frame histories from a per-sample feature matrix (rows grouped by cluster)."""
    n = len(ids)
    keys = [i.rsplit("|", 1)[0] for i in ids]
    seq_names = [i.split("|", 1)[0] for i in ids]
    seq_order = {name: k for k, name in enumerate(dict.fromkeys(seq_names))}
    X = np.zeros((n, max_frames, F.shape[1] if F.ndim == 2 else 0))
    lengths = np.zeros(n, dtype=int)
    start = 0
    for k in range(n):
        if k == 0 or keys[k] != keys[k - 1]:
            start = k
        h = np.arange(max(start, k - max_frames + 1), k + 1)
        X[k, : len(h)] = F[h]
        lengths[k] = len(h)
    return ExampleSet(
        X, lengths, np.array([int(c) for c in labels], dtype=int), np.array([seq_order[s] for s in seq_names], dtype=int)
    )


def gt_examples(seqs: list[Sequence], fcfg: FilterConfig | None, ccfg: ClusterConfig) -> ExampleSet:
    return build_examples(seqs, [oracle_labels(s, fcfg, ccfg) for s in seqs])


# ------------------------------------------------------------ clustering


def mean_v1(seqs: list[Sequence], fcfg: FilterConfig | None, ccfg: ClusterConfig) -> float:
    return float(np.mean([v_measure(cluster_stream(s, fcfg, ccfg).labels, s.gt_instance)[2] for s in seqs]))


def clutter_removed(seq: Sequence, assignment) -> float:
    """Share of background detections discarded by the prefilter."""
    bg = seq.gt_instance == NO_INSTANCE
    return float(assignment.filtered[bg].mean()) if bg.any() else 1.0


def tuning_objective(seqs: list[Sequence], clutter_weight: float = 0.05):
    """Mean v1 over ``seqs`` plus a small reward for background removed by the filter.

    v1 alone is indifferent to whether isolated clutter is filtered or
    left as noise; the reward breaks that tie in favour of filtering.
    """

    def objective(cfgs: tuple[FilterConfig, ClusterConfig]) -> float:
        fcfg, ccfg = cfgs
        total = 0.0
        for s in seqs:
            a = cluster_stream(s, fcfg, ccfg)
            total += v_measure(a.labels, s.gt_instance)[2] + clutter_weight * clutter_removed(s, a)
        return total / len(seqs)

    return objective


def run_ceiling_clustering(
    seqs: list[Sequence], fcfg: FilterConfig | None, ccfg: ClusterConfig
) -> MetricsReport:
    """V-measure of predicted clusters against ground-truth instances, averaged over sequences."""
    scores = {}
    for s in seqs:
        scores[s.id] = v_measure(cluster_stream(s, fcfg, ccfg).labels, s.gt_instance)
    arr = np.array(list(scores.values())).reshape(-1, 3)
    rep = MetricsReport(
        homogeneity=float(arr[:, 0].mean()),
        completeness=float(arr[:, 1].mean()),
        v1=float(arr[:, 2].mean()),
    )
    rep.extra["per_sequence_v1"] = {k: v[2] for k, v in scores.items()}
    return rep


# ------------------------------------------------------------ training


@dataclass
class SelectionConfig:
    enabled: bool = True
    surrogate_hidden: int = 16
    surrogate_epochs: int = 4
    max_examples: int = 1500
    ranking_examples: int = 1500
    tol: float = 0.002
    validation_every: int = 4  # every n-th training sequence scores the surrogate


def _binary_f1(y: np.ndarray, pred: np.ndarray) -> float:
    return macro_f1(confusion_matrix(y, pred, k=2))[1]


def _cap(idx: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    return idx if len(idx) <= n else np.sort(rng.choice(idx, n, replace=False))


def select_features(
    ex: ExampleSet, cfg: SelectionConfig, seed: int = 0
) -> tuple[dict[str, FeatureSubset], dict[str, list[int]]]:
    """Rank features and run guided elimination for every ensemble member.

    Returns the subsets and the per-member rankings. The surrogate is a
    narrow, briefly trained LSTM scored on held-out training sequences.
    """
    n_feat = ex.X.shape[2]
    if not cfg.enabled:
        full = list(range(n_feat))
        return {t: FeatureSubset(full, t) for t in clf.ALL_TAGS}, {t: full for t in clf.ALL_TAGS}
    rng = np.random.default_rng(seed)
    val_seq = ex.seq_index % cfg.validation_every == cfg.validation_every - 1
    last = ex.X[np.arange(len(ex)), ex.lengths - 1]
    subsets, rankings = {}, {}
    for k, tag in enumerate(clf.ALL_TAGS):
        mask, y_all = clf.binary_task(tag, ex.labels)
        idx = np.flatnonzero(mask)
        y_of = dict(zip(idx, y_all))
        fit = _cap(idx[~val_seq[idx]], cfg.max_examples, rng)
        val = idx[val_seq[idx]]
        rank_idx = _cap(idx, cfg.ranking_examples, rng)
        y_rank = np.array([y_of[i] for i in rank_idx])
        if len(np.unique(y_rank)) < 2:
            log.warning("%s sees a single class; keeping the full catalog", tag)
            rankings[tag] = list(range(n_feat))
            subsets[tag] = FeatureSubset(list(range(n_feat)), tag)
            continue
        ranking = rank_features(last[rank_idx], y_rank)
        rankings[tag] = ranking.order
        y_fit = np.array([y_of[i] for i in fit])
        y_val = np.array([y_of[i] for i in val])
        scfg = TrainConfig(epochs=cfg.surrogate_epochs, seed=seed + 17 * k)

        def train_fn(cols, fit=fit, y_fit=y_fit, scfg=scfg):
            return clf.train_arrays(ex.X[fit][:, :, cols], ex.lengths[fit], y_fit, scfg, cfg.surrogate_hidden)[0]

        def score_fn(net, cols, val=val, y_val=y_val):
            p = clf.predict_proba(net, ex.X[val][:, :, cols], ex.lengths[val])
            return _binary_f1(y_val, (p >= 0.5).astype(int))

        subsets[tag] = guided_backward_eliminate(ranking, train_fn, score_fn, tol=cfg.tol, classifier_tag=tag)
        log.info("%s keeps %d features", tag, len(subsets[tag].kept))
    return subsets, rankings


def cap_per_class(ex: ExampleSet, n: int | None, seed: int = 0) -> ExampleSet:
    """Keep at most ``n`` examples of each class, drawn without replacement."""
    if n is None:
        return ex
    rng = np.random.default_rng(seed)
    keep = np.zeros(len(ex), dtype=bool)
    for c in np.unique(ex.labels):
        keep[_cap(np.flatnonzero(ex.labels == c), n, rng)] = True
    return ex.take(keep)


def train_profile(
    ex: ExampleSet, subsets: dict[str, FeatureSubset], cfg: TrainConfig, hidden: int = clf.HIDDEN,
    manifest: dict | None = None,
) -> EnsembleModel:
    return clf.train_ensemble(
        ex.X, ex.lengths, ex.labels, {t: s.kept for t, s in subsets.items()}, cfg,
        CATALOG.version, hidden=hidden, manifest=manifest,
    )


# ------------------------------------------------------------ evaluation


def run_ceiling_classification(
    seqs: list[Sequence], ens: EnsembleModel, fcfg: FilterConfig | None, ccfg: ClusterConfig
) -> MetricsReport:
    """Ensemble decisions on samples cut from ground-truth objects and residue clusters."""
    ex = gt_examples(seqs, fcfg, ccfg)
    pred, _ = ens.predict(ex.X, ex.lengths)
    rep = MetricsReport()
    rep.set_confusion(confusion_matrix(ex.labels, pred))
    per_seq = {}
    for si, s in enumerate(seqs):
        m = ex.seq_index == si
        per_seq[s.id] = macro_f1(confusion_matrix(ex.labels[m], pred[m]))[1]
    rep.extra["per_sequence_macro_f1"] = per_seq
    rep.extra["n_samples"] = int(len(ex))
    return rep


def classify_points(seq: Sequence, labels: np.ndarray, ens: EnsembleModel) -> np.ndarray:
    """Per-detection class from per-sample decisions; unclustered points are background."""
    out = np.full(len(seq), int(ClassLabel.STATIC), dtype=int)
    ex = build_examples([seq], [labels])
    if len(ex):
        pred, _ = ens.predict(ex.X, ex.lengths)
        for s, c in zip(ex.samples, pred):
            out[s.index] = c
    return out


def run_combined(
    seqs: list[Sequence], fcfg: FilterConfig | None, ccfg: ClusterConfig, ens: EnsembleModel
) -> MetricsReport:
    """Filter, cluster, sample, extract and decide; score points and instances.

    Also records, per sequence, the point F1 reached when the same
    classifier runs on oracle (ground-truth) clusters.
    """
    total = InstanceCounts()
    preds, gts = [], []
    per_seq, per_seq_oracle = {}, {}
    for s in seqs:
        labels = cluster_stream(s, fcfg, ccfg).labels
        cls = classify_points(s, labels, ens)
        total.add(instance_scores(labels, s.gt_instance, s.gt_class, cls, t=s.t))
        preds.append(cls)
        gts.append(s.gt_class)
        per_seq[s.id] = point_f1(cls, s.gt_class)
        oracle = classify_points(s, oracle_labels(s, fcfg, ccfg), ens)
        per_seq_oracle[s.id] = point_f1(oracle, s.gt_class)
    rep = MetricsReport(point_f1=point_f1(np.concatenate(preds), np.concatenate(gts)) if seqs else None)
    rep.set_instance(total)
    rep.extra["per_sequence_point_f1"] = per_seq
    rep.extra["per_sequence_oracle_point_f1"] = per_seq_oracle
    return rep


__all__ = [
    "PROFILE_PRESET",
    "ExampleSet",
    "SelectionConfig",
    "build_examples",
    "cap_per_class",
    "classify_points",
    "gt_examples",
    "histories",
    "clutter_removed",
    "examples_from_matrix",
    "mean_v1",
    "oracle_labels",
    "run_ceiling_classification",
    "run_ceiling_clustering",
    "run_combined",
    "sample_ids",
    "select_features",
    "train_profile",
    "tuning_objective",
]
