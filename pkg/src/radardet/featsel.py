"""JMI and MultiSURF feature ranking and single-pass guided backward elimination."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence as Seq

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)

DEFAULT_BINS = 10
DEFAULT_TOL = 0.002


class FeatureSelectionError(RuntimeError):
    def __init__(self, feature: int, cause: BaseException):
        super().__init__(f"training failed while testing removal of feature {feature}: {cause}")
        self.feature = feature


@dataclass
class FeatureRanking:
    order: list[int]
    jmi_scores: list[float] = field(default_factory=list)
    multisurf_weights: list[float] = field(default_factory=list)


@dataclass
class FeatureSubset:
    kept: list[int]
    classifier_tag: str
    scores: list[float] = field(default_factory=list)
    n_trainings: int = 0

    def to_dict(self, catalog_version: str) -> dict:
        return {
            "classifier_tag": self.classifier_tag,
            "kept_indices": list(self.kept),
            "catalog_version": catalog_version,
            "scores": list(self.scores),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSubset":
        return cls(kept=list(d["kept_indices"]), classifier_tag=d["classifier_tag"], scores=list(d.get("scores", [])))


def discretize(X: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-frequency binning per column (rank based, ties share a bin)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    out = np.empty(X.shape, dtype=np.int64)
    for k in range(X.shape[1]):
        rk = rankdata(X[:, k], method="min") - 1
        out[:, k] = np.floor(rk * bins / n).astype(np.int64)
    return out


def _mi(codes: np.ndarray, y: np.ndarray) -> float:
    """I(codes; y) in nats for integer-coded variables."""
    n = len(y)
    _, ci = np.unique(codes, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((ci.max() + 1, yi.max() + 1))
    np.add.at(joint, (ci, yi), 1)
    p = joint / n
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float((p[nz] * np.log(p[nz] / (px @ py)[nz])).sum())


def jmi_rank(X: np.ndarray, y: np.ndarray, bins: int = DEFAULT_BINS) -> tuple[list[int], list[float]]:
    """Greedy Joint Mutual Information ordering.

    Returns the selection order and the greedy objective at selection
    time. Constant features carry no information and go last.
    """
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ValueError("need at least two classes")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    D = discretize(X, bins)
    F = D.shape[1]
    constant = [k for k in range(F) if np.all(D[:, k] == D[0, k])]
    pool = [k for k in range(F) if k not in constant]
    order: list[int] = []
    scores: list[float] = []
    if pool:
        rel = [_mi(D[:, k], y) for k in pool]
        first = pool[int(np.argmax(rel))]
        order.append(first)
        scores.append(max(rel))
        pool.remove(first)
        acc = {k: 0.0 for k in pool}
        last = first
        stride = bins + 1
        while pool:
            for k in pool:
                acc[k] += _mi(D[:, k] * stride + D[:, last], y)
            best = max(pool, key=lambda k: (acc[k], -k))
            order.append(best)
            scores.append(acc[best])
            pool.remove(best)
            last = best
    order += constant
    scores += [0.0] * len(constant)
    return order, scores


def multisurf_rank(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """MultiSURF feature weights.

    Features are min-max scaled to [0, 1]. For each instance, neighbours
    are the instances closer than mean distance minus half a standard
    deviation (Manhattan distance). Differences to other-class
    neighbours raise a weight (miss terms weighted by class prior),
    differences to same-class neighbours lower it; contributions are
    averaged per neighbour set and over instances.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n, F = X.shape
    if n < 3:
        raise ValueError("MultiSURF needs at least 3 samples")
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    Z = np.where(hi > lo, (X - lo) / span, 0.0)

    classes, yi = np.unique(y, return_inverse=True)
    prior = np.bincount(yi) / n
    w = np.zeros(F)
    for i in range(n):
        diff = np.abs(Z - Z[i])
        dist = diff.sum(axis=1)
        others = np.ones(n, dtype=bool)
        others[i] = False
        d_o = dist[others]
        thresh = d_o.mean() - d_o.std() / 2
        near = others & (dist < thresh)
        hit = near & (yi == yi[i])
        miss = near & (yi != yi[i])
        if hit.any():
            w -= diff[hit].mean(axis=0)
        if miss.any():
            mp = prior[yi[miss]] / (1.0 - prior[yi[i]])
            w += (diff[miss] * mp[:, None]).sum(axis=0) / mp.sum()
    return w / n


def combine_rankings(jmi_order: Seq[int], ms_order: Seq[int]) -> list[int]:
    """Best-first order by mean rank position; ties go to the better JMI position."""
    if len(jmi_order) != len(ms_order):
        raise ValueError("orders differ in length")
    pj = {f: k for k, f in enumerate(jmi_order)}
    pm = {f: k for k, f in enumerate(ms_order)}
    if set(pj) != set(pm):
        raise ValueError("orders cover different features")
    return sorted(jmi_order, key=lambda f: ((pj[f] + pm[f]) / 2, pj[f]))


def rank_features(X: np.ndarray, y: np.ndarray, bins: int = DEFAULT_BINS) -> FeatureRanking:
    jorder, jscores = jmi_rank(X, y, bins)
    ms = multisurf_rank(X, y)
    morder = sorted(range(len(ms)), key=lambda f: (-ms[f], f))
    return FeatureRanking(
        order=combine_rankings(jorder, morder),
        jmi_scores=[jscores[jorder.index(f)] for f in range(len(ms))],
        multisurf_weights=ms.tolist(),
    )


def guided_backward_eliminate(
    ranking: FeatureRanking | Seq[int],
    train_fn: Callable[[list[int]], Any],
    score_fn: Callable[[Any, list[int]], float],
    tol: float = DEFAULT_TOL,
    classifier_tag: str = "",
) -> FeatureSubset:
    """Single pass over features, worst-ranked first.

    Each feature is tentatively dropped and the classifier retrained; the
    drop is kept when the validation score stays within ``tol`` of the
    best score so far. The best-ranked feature is never tried, so at
    least one feature always survives and at most F training runs
    (the baseline plus F - 1 trials) are made.
    """
    order = list(ranking.order if isinstance(ranking, FeatureRanking) else ranking)
    kept = sorted(order)
    n_train = 0

    def evaluate(subset: list[int], feature: int) -> float:
        nonlocal n_train
        n_train += 1
        try:
            model = train_fn(subset)
            score = float(score_fn(model, subset))
        except Exception as exc:  # noqa: BLE001 - reported with feature index
            raise FeatureSelectionError(feature, exc) from exc
        if not np.isfinite(score):
            raise FeatureSelectionError(feature, ValueError("non-finite score"))
        return score

    best = evaluate(kept, -1)
    history = [best]
    for f in reversed(order[1:]):
        trial = [k for k in kept if k != f]
        score = evaluate(trial, f)
        history.append(score)
        if score >= best - tol:
            kept = trial
            best = max(best, score)
            log.debug("dropped feature %d (score %.4f)", f, score)
    return FeatureSubset(kept=kept, classifier_tag=classifier_tag, scores=history, n_trainings=n_train)


def save_subsets(path: str | Path, subsets: dict[str, FeatureSubset], catalog_version: str) -> None:
    data = [subsets[k].to_dict(catalog_version) for k in sorted(subsets)]
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def load_subsets(path: str | Path) -> dict[str, FeatureSubset]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {d["classifier_tag"]: FeatureSubset.from_dict(d) for d in data}


__all__ = [
    "FeatureRanking",
    "FeatureSelectionError",
    "FeatureSubset",
    "combine_rankings",
    "discretize",
    "guided_backward_eliminate",
    "jmi_rank",
    "load_subsets",
    "multisurf_rank",
    "rank_features",
    "save_subsets",
]
