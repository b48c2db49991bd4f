"""Filtered, range-adaptive, Doppler-aware DBSCAN over a sliding time window."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence as Seq

import numpy as np
from scipy.spatial import cKDTree

from .core import CartesianDetection, Sequence

NOISE = -1
N_STAGES = 5

# slack against float round-off when comparing a real-valued min-points
# threshold to an integer count
_CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class FilterConfig:
    eta_vr: tuple[float, ...]
    n_thresh: tuple[int, ...]
    d_xy: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "eta_vr", tuple(float(v) for v in self.eta_vr))
        object.__setattr__(self, "n_thresh", tuple(int(v) for v in self.n_thresh))
        if len(self.eta_vr) != N_STAGES or len(self.n_thresh) != N_STAGES:
            raise ValueError("filter needs exactly 5 stages")
        if any(a <= b for a, b in zip(self.eta_vr, self.eta_vr[1:])):
            raise ValueError("eta_vr must be strictly decreasing")
        if any(a >= b for a, b in zip(self.n_thresh, self.n_thresh[1:])):
            raise ValueError("n_thresh must be strictly increasing")
        if self.n_thresh[0] < 1:
            raise ValueError("n_thresh entries must be positive")
        if not self.d_xy > 0:
            raise ValueError("d_xy must be positive")

    def to_dict(self) -> dict:
        return {"eta_vr": list(self.eta_vr), "n_thresh": list(self.n_thresh), "d_xy": self.d_xy}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterConfig":
        return cls(tuple(d["eta_vr"]), tuple(d["n_thresh"]), d["d_xy"])


@dataclass(frozen=True)
class ClusterConfig:
    nmin_50m: float
    alpha_r: float
    eps_xyvr: float
    eps_vr: float
    vr_min: float
    eps_t: float = 0.25
    window_len: float = 0.25
    window_step: float = 0.05

    def __post_init__(self) -> None:
        if not self.nmin_50m > 0:
            raise ValueError("nmin_50m must be positive")
        if self.alpha_r < 0:
            raise ValueError("alpha_r must be >= 0")
        if not (self.eps_xyvr > 0 and self.eps_vr > 0):
            raise ValueError("eps_xyvr and eps_vr must be positive")
        if self.window_step > self.window_len:
            raise ValueError("window_step must not exceed window_len")
        if self.eps_t > self.window_len:
            raise ValueError("eps_t must not exceed window_len")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        return cls(**d)


PRESETS = {
    "S1": ClusterConfig(nmin_50m=3, alpha_r=0.91, eps_xyvr=1.4, eps_vr=8.2, vr_min=0.11),
    "S2": ClusterConfig(nmin_50m=3, alpha_r=0.5, eps_xyvr=0.4, eps_vr=2.4, vr_min=0.63),
}

# not published; a moderate cascade used when nothing was tuned
DEFAULT_FILTER = FilterConfig(
    eta_vr=(1.0, 0.6, 0.4, 0.25, 0.1), n_thresh=(1, 2, 4, 6, 8), d_xy=1.5
)


@dataclass
class ClusterAssignment:
    """Per-detection cluster labels (``NOISE`` for noise or filtered points).

    ``window`` is the index of the window the final label was taken
    from (-1 if no window covered the point). ``raw_labels`` carries the
    window-offset ids before labels were linked across windows.
    """

    labels: np.ndarray
    window: np.ndarray
    raw_labels: np.ndarray | None = None
    filtered: np.ndarray | None = None
    n_windows: int = 1

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.labels[self.labels != NOISE]).size)


def nmin_at_range(r, cfg: ClusterConfig):
    """Range-adaptive minimum number of points (real valued)."""
    rc = np.clip(r, 25.0, 125.0)
    out = cfg.nmin_50m * (1.0 + cfg.alpha_r * (50.0 / rc - 1.0))
    return float(out) if np.ndim(out) == 0 else out


def min_points(r, cfg: ClusterConfig):
    return np.ceil(np.asarray(nmin_at_range(r, cfg)) - _CEIL_SLACK).astype(int)


def _is_neighbor(dx, dy, dvr, dt, cfg: ClusterConfig):
    # shared by the scalar predicate and the vectorised path so both
    # agree bit for bit at the boundary
    dist = np.sqrt(dx * dx + dy * dy + dvr * dvr / (cfg.eps_vr * cfg.eps_vr))
    return (dist < cfg.eps_xyvr) & (np.abs(dt) < cfg.eps_t)


def neighborhood(a: CartesianDetection, b: CartesianDetection, cfg: ClusterConfig) -> bool:
    return bool(_is_neighbor(a.x - b.x, a.y - b.y, a.vr - b.vr, a.t - b.t, cfg))


def _columns(points: Seq[CartesianDetection]) -> dict[str, np.ndarray]:
    return {
        k: np.array([getattr(p, k) for p in points], dtype=float)
        for k in ("x", "y", "t", "r", "phi", "vr")
    }


def prefilter_mask(x: np.ndarray, y: np.ndarray, vr: np.ndarray, cfg: FilterConfig) -> np.ndarray:
    """Boolean keep-mask; neighbour counts use the full (unfiltered) set."""
    n = len(x)
    if n == 0:
        return np.zeros(0, dtype=bool)
    xy = np.column_stack([x, y])
    counts = cKDTree(xy).query_ball_point(xy, cfg.d_xy, return_length=True) - 1
    speed = np.abs(vr)
    eta = np.asarray(cfg.eta_vr)
    nt = np.asarray(cfg.n_thresh)
    remove = ((speed[:, None] < eta[None, :]) & (counts[:, None] < nt[None, :])).any(axis=1)
    return ~remove


def prefilter(points: Seq[CartesianDetection], cfg: FilterConfig) -> list[CartesianDetection]:
    if not points:
        return []
    c = _columns(points)
    keep = prefilter_mask(c["x"], c["y"], c["vr"], cfg)
    return [p for p, k in zip(points, keep) if k]


def _neighbor_pairs(x, y, vr, t, cfg: ClusterConfig) -> tuple[np.ndarray, np.ndarray]:
    pts = np.column_stack([x, y, vr / cfg.eps_vr])
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite point coordinates")
    pairs = cKDTree(pts).query_pairs(cfg.eps_xyvr * (1 + 1e-9) + 1e-12, output_type="ndarray")
    if len(pairs) == 0:
        return pairs[:, 0], pairs[:, 1]
    i, j = pairs[:, 0], pairs[:, 1]
    ok = _is_neighbor(x[i] - x[j], y[i] - y[j], vr[i] - vr[j], t[i] - t[j], cfg)
    return i[ok], j[ok]


def _components(n: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Connected-component representative (smallest member index) per node.

    Min-label propagation over the edge list with pointer jumping; much
    cheaper than a sparse-matrix round trip on the small graphs of one
    window.
    """
    lab = np.arange(n)
    if len(a) == 0:
        return lab
    while True:
        m = np.minimum(lab[a], lab[b])
        new = lab.copy()
        np.minimum.at(new, a, m)
        np.minimum.at(new, b, m)
        # hook roots onto the smaller labels found, then compress paths
        np.minimum.at(new, lab, new)
        while True:
            nxt = new[new]
            if np.array_equal(nxt, new):
                break
            new = nxt
        if np.array_equal(new, lab):
            return lab
        lab = new


def dbscan_arrays(
    x: np.ndarray,
    y: np.ndarray,
    vr: np.ndarray,
    t: np.ndarray,
    r: np.ndarray,
    phi: np.ndarray,
    cfg: ClusterConfig,
) -> np.ndarray:
    """Cluster labels (1..k, ``NOISE``) in input order.

    Equivalent to classic sequential DBSCAN visiting points in
    lexicographic (t, r, phi) order: clusters are numbered by their
    first core point in that order, and a border point joins the
    lowest-numbered cluster among its core neighbours (the first
    cluster to reach it during expansion).
    """
    n = len(x)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    i, j = _neighbor_pairs(x, y, vr, t, cfg)
    counts = 1 + np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    core = (np.abs(vr) > cfg.vr_min) & (counts >= min_points(r, cfg))
    if not core.any():
        return labels

    cc = core[i] & core[j]
    comp = _components(n, i[cc], j[cc])

    order = np.lexsort((phi, r, t))
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    core_idx = np.flatnonzero(core)
    # number components by their earliest core point in visiting order
    n_comp = int(comp.max()) + 1
    first = np.full(n_comp, n, dtype=int)
    np.minimum.at(first, comp[core_idx], rank[core_idx])
    with_core = np.flatnonzero(first < n)
    ids = np.zeros(n_comp, dtype=int)
    ids[with_core[np.argsort(first[with_core])]] = np.arange(1, len(with_core) + 1)
    labels[core_idx] = ids[comp[core_idx]]

    # border points: core neighbour with the lowest cluster id
    border = np.full(n, np.iinfo(np.int64).max)
    for a, b in ((i, j), (j, i)):
        m = core[b] & ~core[a]
        if m.any():
            np.minimum.at(border, a[m], labels[b[m]])
    has = border != np.iinfo(np.int64).max
    labels[has] = border[has]
    return labels


def cluster_window(points: Seq[CartesianDetection], cfg: ClusterConfig) -> ClusterAssignment:
    n = len(points)
    if n == 0:
        return ClusterAssignment(np.zeros(0, int), np.zeros(0, int), n_windows=0)
    c = _columns(points)
    labels = dbscan_arrays(c["x"], c["y"], c["vr"], c["t"], c["r"], c["phi"], cfg)
    return ClusterAssignment(labels, np.zeros(n, dtype=int), raw_labels=labels.copy())


def window_starts(t: np.ndarray, cfg: ClusterConfig) -> np.ndarray:
    """Window start times; stops at the first window reaching past the last point."""
    if len(t) == 0:
        return np.zeros(0)
    t0, t1 = float(t[0]), float(t[-1])
    k = max(0, math.floor((t1 - t0 - cfg.window_len) / cfg.window_step))
    # the last window must cover t1 (windows are half-open)
    while t0 + k * cfg.window_step + cfg.window_len <= t1:
        k += 1
    return t0 + cfg.window_step * np.arange(k + 1)


def _link(prev: np.ndarray, cur: np.ndarray, prev_track: dict[int, int]) -> dict[int, int]:
    """Greedy one-to-one linking of the current window's clusters to the previous ones.

    ``prev``/``cur`` are local labels of the detections shared by both
    windows; returns local id -> inherited track id.
    """
    m = (prev != NOISE) & (cur != NOISE)
    links: dict[int, int] = {}
    if m.any():
        pairs, counts = np.unique(np.stack([cur[m], prev[m]], axis=1), axis=0, return_counts=True)
        order = np.lexsort((pairs[:, 1], pairs[:, 0], -counts))
        used_prev = set()
        for (c, p) in pairs[order]:
            c, p = int(c), int(p)
            if c in links or p in used_prev:
                continue
            links[c] = prev_track[p]
            used_prev.add(p)
    return links


def cluster_stream(
    seq: Sequence, fcfg: FilterConfig | None, ccfg: ClusterConfig
) -> ClusterAssignment:
    """Prefilter and cluster each window; keep each detection's label from
    the latest window containing it.

    Window-local ids are offset to be globally unique (``raw_labels``).
    For ``labels``, each window cluster is linked to the cluster of the
    previous window with which it shares most detections (one-to-one,
    greedy), so an object keeps its id while it is continuously
    clustered. Ids are renumbered densely in order of creation.
    """
    n = len(seq)
    labels = np.full(n, NOISE, dtype=int)
    raw = np.full(n, NOISE, dtype=int)
    window = np.full(n, -1, dtype=int)
    filtered = np.zeros(n, dtype=bool)
    if n == 0:
        return ClusterAssignment(labels, window, raw, filtered, n_windows=0)

    x, y = seq.x, seq.y
    starts = window_starts(seq.t, ccfg)
    lo_idx = np.searchsorted(seq.t, starts, side="left")
    hi_idx = np.searchsorted(seq.t, starts + ccfg.window_len, side="left")

    offset = 0
    next_track = 1
    prev_lo = prev_hi = 0
    prev_local = np.zeros(0, dtype=int)
    prev_track: dict[int, int] = {}
    for w, (lo, hi) in enumerate(zip(lo_idx, hi_idx)):
        local = np.full(hi - lo, NOISE, dtype=int)
        sl = slice(lo, hi)
        if fcfg is not None:
            keep = prefilter_mask(x[sl], y[sl], seq.vr[sl], fcfg)
        else:
            keep = np.ones(hi - lo, dtype=bool)
        if keep.any():
            kidx = np.flatnonzero(keep) + lo
            local[keep] = dbscan_arrays(
                x[kidx], y[kidx], seq.vr[kidx], seq.t[kidx], seq.r[kidx], seq.phi[kidx], ccfg
            )

        # overlap with the previous window
        ov_lo, ov_hi = max(lo, prev_lo), min(hi, prev_hi)
        if ov_hi > ov_lo:
            links = _link(
                prev_local[ov_lo - prev_lo : ov_hi - prev_lo],
                local[ov_lo - lo : ov_hi - lo],
                prev_track,
            )
        else:
            links = {}
        track: dict[int, int] = {}
        n_local = int(local.max()) if len(local) and local.max() > 0 else 0
        lut = np.full(n_local + 1, NOISE, dtype=int)
        for c in range(1, n_local + 1):
            if c in links:
                track[c] = links[c]
            else:
                track[c] = next_track
                next_track += 1
            lut[c] = track[c]

        # later windows overwrite earlier labels
        labels[sl] = np.where(local != NOISE, lut[np.maximum(local, 0)], NOISE)
        raw[sl] = np.where(local != NOISE, local + offset, NOISE)
        window[sl] = w
        filtered[sl] = ~keep
        offset += n_local
        prev_lo, prev_hi, prev_local, prev_track = lo, hi, local, track

    # dense renumbering, preserving creation order
    used = np.unique(labels[labels != NOISE])
    remap = np.full(next_track + 1, NOISE, dtype=int)
    remap[used] = np.arange(1, len(used) + 1)
    labels = np.where(labels != NOISE, remap[np.maximum(labels, 0)], NOISE)
    return ClusterAssignment(labels, window, raw, filtered, n_windows=len(starts))


def save_assignment(
    seqs: Seq[Sequence], assignments: Seq[ClusterAssignment], path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seq_id", "t_s", "point_idx", "cluster_id"])
        for seq, a in zip(seqs, assignments):
            for i in range(len(seq)):
                w.writerow([seq.id, f"{seq.t[i]:.9g}", i, int(a.labels[i])])


def load_assignment(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, list[tuple[int, int]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.setdefault(row["seq_id"], []).append((int(row["point_idx"]), int(row["cluster_id"])))
    result = {}
    for k, rows in out.items():
        rows.sort()
        result[k] = np.array([c for _, c in rows], dtype=int)
    return result


__all__ = [
    "ClusterAssignment",
    "ClusterConfig",
    "DEFAULT_FILTER",
    "FilterConfig",
    "NOISE",
    "PRESETS",
    "cluster_stream",
    "cluster_window",
    "dbscan_arrays",
    "load_assignment",
    "min_points",
    "neighborhood",
    "nmin_at_range",
    "prefilter",
    "prefilter_mask",
    "save_assignment",
    "window_starts",
]
