"""Evaluation scores: modified V-measure, macro F1, point F1, instance scores.

Zero-denominator conventions: precision, recall, F1 and TPR are 0 when
their denominator is empty; TNR is 1 when there are no negatives.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .core import NO_INSTANCE, ClassLabel, K, VRU_CLASSES

NOISE = -1
IOU_THRESHOLD = 0.5
EVAL_WINDOW = 0.15


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(float)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(-(p * np.log(p)).sum())


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _cond_entropy(table: np.ndarray) -> float:
    """H(row | column) from a contingency table."""
    n = table.sum()
    col = table.sum(axis=0)
    nz = table > 0
    rows, cols = np.nonzero(nz)
    c = table[nz].astype(float)
    return float(-(c / n * np.log(c / col[cols])).sum())


def _singletons(pred: np.ndarray) -> np.ndarray:
    """Replace noise labels by unique negative ids (each noise point is its own cluster)."""
    pred = np.asarray(pred, dtype=np.int64).copy()
    noise = pred == NOISE
    pred[noise] = -1 - np.arange(noise.sum())
    return pred


def v_measure(pred, gt_instance) -> tuple[float, float, float]:
    """Homogeneity, completeness and V1 with background-tolerant completeness.

    Noise points count as singleton clusters. Homogeneity uses every
    detection, with all background detections forming one ground-truth
    group. Completeness only considers detections of labeled objects,
    so splitting background into many clusters is not penalised. With
    no labeled object, completeness is 1 by convention.
    """
    pred = _singletons(pred)
    gt = np.asarray(gt_instance, dtype=np.int64)
    if len(pred) != len(gt):
        raise ValueError("pred and gt cover different detections")
    if len(gt) == 0:
        return 1.0, 1.0, 1.0

    table = _contingency(gt, pred)
    h_c = _entropy(table.sum(axis=1))
    hom = 1.0 if h_c == 0 else 1.0 - _cond_entropy(table) / h_c

    obj = gt != NO_INSTANCE
    if obj.any():
        t_obj = _contingency(gt[obj], pred[obj])
        h_k = _entropy(t_obj.sum(axis=0))
        com = 1.0 if h_k == 0 else 1.0 - _cond_entropy(t_obj.T) / h_k
    else:
        com = 1.0
    hom = min(max(hom, 0.0), 1.0)
    com = min(max(com, 0.0), 1.0)
    v1 = 0.0 if hom + com == 0 else 2 * hom * com / (hom + com)
    return hom, com, v1


def f1_from_counts(tp: float, fp: float, fn: float) -> float:
    den = 2 * tp + fp + fn
    return 0.0 if den == 0 else 2 * tp / den


def macro_f1(confusion) -> tuple[np.ndarray, float]:
    """Per-class one-vs-rest F1 (rows = truth, columns = prediction) and their mean."""
    cm = np.asarray(confusion, dtype=float)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 2:
        raise ValueError("confusion must be a square matrix with K >= 2")
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    per = np.array([f1_from_counts(a, b, c) for a, b, c in zip(tp, fp, fn)])
    return per, float(per.mean())


def confusion_matrix(true, pred, k: int = K) -> np.ndarray:
    true = np.asarray(true, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if true.shape != pred.shape:
        raise ValueError("length mismatch")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def point_f1(pred_class, gt_class) -> float:
    """Macro F1 over detections; ``-1``/None predictions count as background."""
    pred = np.array(
        [ClassLabel.STATIC if p is None or p < 0 else p for p in pred_class], dtype=int
    )
    gt = np.asarray(gt_class, dtype=int)
    if len(pred) != len(gt):
        raise ValueError("length mismatch")
    return macro_f1(confusion_matrix(gt, pred))[1]


@dataclass
class InstanceCounts:
    tp: dict = field(default_factory=lambda: {c.tag: 0 for c in VRU_CLASSES})
    fp: dict = field(default_factory=lambda: {c.tag: 0 for c in VRU_CLASSES})
    fn: dict = field(default_factory=lambda: {c.tag: 0 for c in VRU_CLASSES})
    vru_tp: int = 0
    vru_fp: int = 0
    vru_fn: int = 0
    vru_tn: int = 0

    def add(self, other: "InstanceCounts") -> None:
        for d, o in ((self.tp, other.tp), (self.fp, other.fp), (self.fn, other.fn)):
            for k in d:
                d[k] += o[k]
        self.vru_tp += other.vru_tp
        self.vru_fp += other.vru_fp
        self.vru_fn += other.vru_fn
        self.vru_tn += other.vru_tn

    @property
    def instance_f1_per_class(self) -> dict:
        return {k: f1_from_counts(self.tp[k], self.fp[k], self.fn[k]) for k in self.tp}

    @property
    def instance_f1(self) -> float:
        return float(np.mean(list(self.instance_f1_per_class.values())))

    @property
    def tpr(self) -> float:
        d = self.vru_tp + self.vru_fn
        return 0.0 if d == 0 else self.vru_tp / d

    @property
    def tnr(self) -> float:
        d = self.vru_tn + self.vru_fp
        return 1.0 if d == 0 else self.vru_tn / d

    @property
    def baac(self) -> float:
        return (self.tpr + self.tnr) / 2


def _match(pred_sets: list[set], gt_sets: list[set]) -> list[tuple[int, int]]:
    """One-to-one matches with IoU >= 0.5, greedy by descending IoU."""
    cand = []
    for a, p in enumerate(pred_sets):
        for b, g in enumerate(gt_sets):
            inter = len(p & g)
            if inter == 0:
                continue
            iou = inter / len(p | g)
            if iou >= IOU_THRESHOLD:
                cand.append((-iou, a, b))
    cand.sort()
    used_a, used_b, out = set(), set(), []
    for _, a, b in cand:
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        out.append((a, b))
    return out


def match_window(
    pred: np.ndarray,
    cluster_class: Mapping[int, int],
    gt_instance: np.ndarray,
    gt_class: np.ndarray,
) -> InstanceCounts:
    """Instance counts for one evaluation window.

    Per VRU class, a ground-truth instance is a TP when a predicted
    cluster of the same label covers it with detection-point IoU >= 0.5;
    remaining predicted clusters of that label (duplicates on the same
    object or spurious ones) are FPs and unmatched instances FNs. The
    binary VRU variant ignores which VRU label was predicted. Predicted
    background clusters that do not cover a VRU instance are TNs.
    """
    counts = InstanceCounts()
    clusters: dict[int, set] = {}
    for idx, c in enumerate(pred):
        if c != NOISE:
            clusters.setdefault(int(c), set()).add(idx)
    instances: dict[int, set] = {}
    inst_cls: dict[int, int] = {}
    for idx, g in enumerate(gt_instance):
        if g != NO_INSTANCE and gt_class[idx] != ClassLabel.STATIC:
            instances.setdefault(int(g), set()).add(idx)
            inst_cls[int(g)] = int(gt_class[idx])

    for cls in VRU_CLASSES:
        p = [s for c, s in sorted(clusters.items()) if cluster_class[c] == cls]
        g = [s for i, s in sorted(instances.items()) if inst_cls[i] == cls]
        tp = len(_match(p, g))
        counts.tp[cls.tag] += tp
        counts.fp[cls.tag] += len(p) - tp
        counts.fn[cls.tag] += len(g) - tp

    vru = [s for c, s in sorted(clusters.items()) if cluster_class[c] != ClassLabel.STATIC]
    bg = [s for c, s in sorted(clusters.items()) if cluster_class[c] == ClassLabel.STATIC]
    g_all = [s for _, s in sorted(instances.items())]
    tp = len(_match(vru, g_all))
    counts.vru_tp = tp
    counts.vru_fp = len(vru) - tp
    counts.vru_fn = len(g_all) - tp
    covering = {a for a, _ in _match(bg, g_all)}
    counts.vru_tn = len(bg) - len(covering)
    return counts


def _cluster_classes(pred: np.ndarray, classes) -> dict[int, int]:
    """Cluster -> label; per-detection labels are reduced by majority vote
    (ties resolved in class order)."""
    if isinstance(classes, Mapping):
        return {int(k): int(v) for k, v in classes.items()}
    classes = np.asarray(classes, dtype=int)
    out = {}
    for c in np.unique(pred[pred != NOISE]):
        votes = np.bincount(classes[pred == c], minlength=K)
        out[int(c)] = int(np.argmax(votes))
    return out


def instance_scores(
    pred,
    gt_instance,
    gt_class,
    classes,
    t=None,
    window: float = EVAL_WINDOW,
) -> InstanceCounts:
    """Instance-level counts summed over consecutive evaluation windows.

    ``classes`` is either a mapping cluster id -> label or a
    per-detection array of predicted labels. Without ``t`` the whole
    input is scored as one window.
    """
    pred = np.asarray(pred, dtype=int)
    gt_instance = np.asarray(gt_instance, dtype=int)
    gt_class = np.asarray(gt_class, dtype=int)
    total = InstanceCounts()
    if len(pred) == 0:
        return total
    if t is None:
        bins = np.zeros(len(pred), dtype=int)
    else:
        t = np.asarray(t, dtype=float)
        bins = np.floor((t - t.min()) / window + 1e-9).astype(int)
    per_point = not isinstance(classes, Mapping)
    for b in np.unique(bins):
        m = bins == b
        cc = _cluster_classes(pred[m], np.asarray(classes)[m] if per_point else classes)
        total.add(match_window(pred[m], cc, gt_instance[m], gt_class[m]))
    return total


@dataclass
class MetricsReport:
    homogeneity: float | None = None
    completeness: float | None = None
    v1: float | None = None
    macro_f1: float | None = None
    per_class_f1: dict | None = None
    confusion: list | None = None
    point_f1: float | None = None
    instance_f1: float | None = None
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    tn: int | None = None
    tpr_vru: float | None = None
    tnr_vru: float | None = None
    baac_vru: float | None = None
    extra: dict = field(default_factory=dict)

    def set_instance(self, counts: InstanceCounts) -> None:
        self.instance_f1 = counts.instance_f1
        self.tp, self.fp, self.fn, self.tn = (
            counts.vru_tp,
            counts.vru_fp,
            counts.vru_fn,
            counts.vru_tn,
        )
        self.tpr_vru = counts.tpr
        self.tnr_vru = counts.tnr
        self.baac_vru = counts.baac
        self.extra["instance_counts"] = {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn}

    def set_confusion(self, cm: np.ndarray) -> None:
        per, macro = macro_f1(cm)
        self.confusion = np.asarray(cm).astype(int).tolist()
        self.macro_f1 = macro
        self.per_class_f1 = {c.tag: float(per[c]) for c in ClassLabel}

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v != {}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _pct(v) -> str:
    return "    -   " if v is None else f"{100 * v:7.2f}%"


def render_table(reports: Mapping[str, Mapping[str, dict]]) -> str:
    """Summary table with clustering / classification / combined sections.

    ``reports`` maps section ("clustering", "classification",
    "combined") to experiment key (e.g. "A,B" = tuned/trained on A,
    evaluated on B) to a report dict.
    """
    lines = []
    clu = reports.get("clustering", {})
    cls = reports.get("classification", {})
    keys = sorted(set(clu) | set(cls), key=_exp_order)
    lines.append("Clustering results          | Classification results")
    lines.append("A_opt,eval   V1             | C_train,eval   F1")
    for k in keys:
        lines.append(
            f"A_{k:<9s} {_pct(clu.get(k, {}).get('v1'))}       | "
            f"C_{k:<11s} {_pct(cls.get(k, {}).get('macro_f1'))}"
        )
    comb = reports.get("combined", {})
    if comb:
        lines.append("")
        lines.append("Combined detection results")
        lines.append("M_train,eval  Point F1  Instance F1  TPR_VRU   BAAC_VRU")
        for k in sorted(comb, key=_exp_order):
            r = comb[k]
            lines.append(
                f"M_{k:<11s} {_pct(r.get('point_f1'))} {_pct(r.get('instance_f1'))}   "
                f"{_pct(r.get('tpr_vru'))}  {_pct(r.get('baac_vru'))}"
            )
    return "\n".join(lines) + "\n"


def _exp_order(key: str) -> tuple:
    a, _, b = key.partition(",")
    return (a != b, a, b)


__all__ = [
    "EVAL_WINDOW",
    "InstanceCounts",
    "MetricsReport",
    "confusion_matrix",
    "f1_from_counts",
    "instance_scores",
    "macro_f1",
    "match_window",
    "point_f1",
    "render_table",
    "v_measure",
]
