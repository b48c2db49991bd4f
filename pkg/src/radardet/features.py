"""150 ms cluster sampling and a 52-feature catalog in six groups."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .clustering import NOISE
from .core import ClassLabel, K, Sequence

SAMPLE_LEN = 0.15
CATALOG_VERSION = "radardet-52/1"
N_HIST_BINS = 8

GROUPS = (
    "range-stats",
    "angle-stats",
    "amplitude-stats",
    "doppler-stats",
    "geometric",
    "micro-doppler",
)
_STATS = ("min", "max", "spread", "std", "mean", "median", "skew", "mad")


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    group: str
    formula: str


@dataclass(frozen=True)
class FeatureCatalog:
    features: tuple[FeatureDescriptor, ...]
    version: str = CATALOG_VERSION

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def group_of(self, idx: int) -> str:
        return self.features[idx].group

    def indices(self, group: str) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.group == group]


def default_catalog() -> FeatureCatalog:
    feats = []
    for unit, group in (("r", GROUPS[0]), ("phi", GROUPS[1]), ("amp", GROUPS[2]), ("vr", GROUPS[3])):
        feats += [FeatureDescriptor(f"{unit}_{s}", group, f"stat:{s}") for s in _STATS]
    for name in (
        "n_points",
        "hull_area",
        "hull_perimeter",
        "circularity",
        "box_length",
        "box_width",
        "box_aspect",
        "mean_pair_dist",
        "x_spread",
        "y_spread",
    ):
        feats.append(FeatureDescriptor(name, GROUPS[4], f"geom:{name}"))
    feats += [
        FeatureDescriptor(f"vr_hist_{k}", GROUPS[5], f"hist:{k}") for k in range(N_HIST_BINS)
    ]
    feats.append(FeatureDescriptor("vr_iqr", GROUPS[5], "iqr"))
    feats.append(FeatureDescriptor("vr_frac_above_median", GROUPS[5], "frac_above_median"))
    return FeatureCatalog(tuple(feats))


CATALOG = default_catalog()


@dataclass
class ClusterSample:
    """Detections of one cluster inside one 150 ms bin (column arrays).

    ``index`` holds the detections' positions in the source sequence.
    """

    index: np.ndarray
    x: np.ndarray
    y: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    vr: np.ndarray
    amp: np.ndarray
    t: np.ndarray
    t_start: float
    t_end: float
    source_cluster: int
    gt_class: ClassLabel | None = None
    seq_id: str = ""

    def __len__(self) -> int:
        return len(self.index)


def majority_class(gt_class: np.ndarray) -> ClassLabel:
    """Majority vote; ties go to background, then to class order."""
    votes = np.bincount(np.asarray(gt_class, dtype=int), minlength=K)
    top = votes.max()
    if votes[ClassLabel.STATIC] == top:
        return ClassLabel.STATIC
    return ClassLabel(int(np.argmax(votes)))


def sample_clusters(
    labels: np.ndarray, seq: Sequence, gt_labels: np.ndarray | None = None
) -> list[ClusterSample]:
    """Cut every cluster into consecutive 150 ms bins from its first detection.

    ``labels`` is a per-detection cluster id array (``NOISE`` ignored).
    Samples are returned grouped by cluster id, oldest first; empty
    bins are dropped. ``gt_labels`` overrides the per-detection ground
    truth used for the majority vote.
    """
    labels = np.asarray(getattr(labels, "labels", labels))
    gt = seq.gt_class if gt_labels is None else np.asarray(gt_labels)
    x, y = seq.x, seq.y
    out = []
    for c in np.unique(labels[labels != NOISE]):
        idx = np.flatnonzero(labels == c)
        t0 = seq.t[idx[0]]
        bins = np.floor((seq.t[idx] - t0) / SAMPLE_LEN + 1e-9).astype(int)
        for b in np.unique(bins):
            sel = idx[bins == b]
            start = t0 + b * SAMPLE_LEN
            out.append(
                ClusterSample(
                    index=sel,
                    x=x[sel],
                    y=y[sel],
                    r=seq.r[sel],
                    phi=seq.phi[sel],
                    vr=seq.vr[sel],
                    amp=seq.amp[sel],
                    t=seq.t[sel],
                    t_start=float(start),
                    t_end=float(start + SAMPLE_LEN),
                    source_cluster=int(c),
                    gt_class=majority_class(gt[sel]),
                    seq_id=seq.id,
                )
            )
    return out


def _stats(v: np.ndarray) -> list[float]:
    mean = v.mean()
    dev = v - mean
    m2 = (dev * dev).mean()
    std = math.sqrt(m2)
    if std <= 1e-12 * (1.0 + abs(mean)):
        std, skew = 0.0, 0.0
    else:
        skew = float((dev**3).mean() / std**3)
    vmin, vmax = float(v.min()), float(v.max())
    return [
        vmin,
        vmax,
        vmax - vmin,
        std,
        float(mean),
        float(np.median(v)),
        skew,
        float(np.abs(dev).mean()),
    ]


def _geometry(x: np.ndarray, y: np.ndarray) -> list[float]:
    n = len(x)
    pts = np.column_stack([x, y])
    uniq = np.unique(pts, axis=0)
    if n > 1:
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.sqrt((diff**2).sum(-1))
        iu = np.triu_indices(n, 1)
        mean_pair = float(d[iu].mean())
        max_pair = float(d.max())
    else:
        mean_pair = max_pair = 0.0

    centered = uniq - uniq.mean(axis=0)
    area = 0.0
    if len(uniq) <= 1:
        perim, circ = 0.0, 1.0
    else:
        sv = np.linalg.svd(centered, compute_uv=False)
        collinear = len(uniq) < 3 or sv[-1] <= 1e-9 * max(sv[0], 1e-12)
        if collinear:
            perim, circ = 2.0 * max_pair, 0.0
        else:
            hull = ConvexHull(uniq)
            area, perim = float(hull.volume), float(hull.area)
            circ = 4.0 * math.pi * area / perim**2

    # principal-axis bounding box
    if len(uniq) > 1:
        _, _, vt = np.linalg.svd(centered, full_matrices=True)
        proj = centered @ vt.T
        ext = proj.max(axis=0) - proj.min(axis=0)
        length, width = float(ext.max()), float(ext.min())
    else:
        length = width = 0.0
    aspect = 1.0 if length == 0 else width / length
    return [
        float(n),
        area,
        perim,
        circ,
        length,
        width,
        aspect,
        mean_pair,
        float(x.max() - x.min()),
        float(y.max() - y.min()),
    ]


def _micro_doppler(vr: np.ndarray) -> list[float]:
    lo, hi = vr.min(), vr.max()
    hist = np.zeros(N_HIST_BINS)
    if hi - lo <= 1e-12:
        hist[0] = 1.0
    else:
        k = np.minimum(((vr - lo) / (hi - lo) * N_HIST_BINS).astype(int), N_HIST_BINS - 1)
        hist = np.bincount(k, minlength=N_HIST_BINS) / len(vr)
    q75, q25 = np.percentile(vr, [75, 25])
    speed = np.abs(vr)
    frac = float((speed > np.median(speed)).mean())
    return list(hist) + [float(q75 - q25), frac]


def extract(sample: ClusterSample, catalog: FeatureCatalog = CATALOG) -> np.ndarray:
    """Feature vector of one sample, ordered as ``catalog``."""
    if len(sample) == 0:
        raise ValueError("empty sample")
    if catalog.version != CATALOG_VERSION:
        raise ValueError(f"unsupported catalog {catalog.version}")
    # order-independence: sort by a total key
    order = np.lexsort((sample.amp, sample.vr, sample.y, sample.x))
    vals = []
    for v in (sample.r, sample.phi, sample.amp, sample.vr):
        vals += _stats(np.asarray(v, dtype=float)[order])
    vals += _geometry(sample.x[order], sample.y[order])
    vals += _micro_doppler(sample.vr[order])
    out = np.asarray(vals, dtype=float)
    if out.shape[0] != len(catalog) or not np.all(np.isfinite(out)):
        raise AssertionError("feature vector malformed")
    return out


def extract_all(samples: list[ClusterSample], catalog: FeatureCatalog = CATALOG) -> np.ndarray:
    if not samples:
        return np.zeros((0, len(catalog)))
    return np.vstack([extract(s, catalog) for s in samples])


def save_feature_matrix(
    path: str | Path,
    X: np.ndarray,
    sample_ids: list[str],
    gt_class: list[ClassLabel | None],
    catalog: FeatureCatalog = CATALOG,
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "gt_class", *catalog.names])
        for sid, g, row in zip(sample_ids, gt_class, X):
            w.writerow([sid, "" if g is None else ClassLabel(g).code, *(f"{v:.17g}" for v in row)])


def load_feature_matrix(path: str | Path) -> tuple[np.ndarray, list[str], list[ClassLabel | None]]:
    ids, labels, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ids.append(row[0])
            labels.append(ClassLabel.from_code(row[1]) if row[1] else None)
            rows.append([float(v) for v in row[2:]])
    return np.array(rows, dtype=float).reshape(len(rows), -1), ids, labels


__all__ = [
    "CATALOG",
    "CATALOG_VERSION",
    "ClusterSample",
    "FeatureCatalog",
    "FeatureDescriptor",
    "GROUPS",
    "SAMPLE_LEN",
    "default_catalog",
    "extract",
    "extract_all",
    "load_feature_matrix",
    "majority_class",
    "sample_clusters",
    "save_feature_matrix",
]
