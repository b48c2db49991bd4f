"""From-scratch LSTM binary classifiers and the OVO + OVA ensemble decision."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .core import ClassLabel, K

log = logging.getLogger(__name__)

MAX_FRAMES = 8
HIDDEN = 80
MODEL_FORMAT = "radardet-ensemble/1"

OVA_TAGS = tuple(c.tag for c in ClassLabel)
OVO_PAIRS = tuple(combinations(range(K), 2))
OVO_TAGS = tuple(f"{ClassLabel(i).tag}v{ClassLabel(j).tag}" for i, j in OVO_PAIRS)
ALL_TAGS = OVA_TAGS + OVO_TAGS


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    class_weighting: bool = True
    optimizer: str = "adam"  # or "sgd"
    clip_norm: float = 5.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class SequenceExample:
    frames: np.ndarray  # (T, F), oldest first
    label: ClassLabel

    def __post_init__(self) -> None:
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=float))
        if not 1 <= len(self.frames) <= MAX_FRAMES:
            raise ValueError("a sequence example holds 1 to 8 frames")


@dataclass
class RecurrentNet:
    """Single-layer LSTM followed by a 2-way softmax.

    Gate blocks in ``W`` / ``b`` are ordered input, forget, output,
    candidate. ``W`` stacks the input rows on top of the recurrent rows.
    With ``linear=True`` the recurrence is bypassed and ``V`` maps the
    last frame directly to the logits (convex surrogate).
    """

    W: np.ndarray
    b: np.ndarray
    V: np.ndarray
    c: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    linear: bool = False

    @property
    def n_inputs(self) -> int:
        return len(self.mean)

    @property
    def hidden(self) -> int:
        return 0 if self.linear else self.W.shape[1] // 4

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "V": self.V, "c": self.c}

    @classmethod
    def init(
        cls, n_inputs: int, hidden: int = HIDDEN, seed: int = 0, linear: bool = False
    ) -> "RecurrentNet":
        rng = np.random.default_rng(seed)
        if linear:
            W = np.zeros((0, 0))
            b = np.zeros(0)
            lim = np.sqrt(6.0 / (n_inputs + 2))
            V = rng.uniform(-lim, lim, (n_inputs, 2))
        else:
            lim = np.sqrt(6.0 / (n_inputs + hidden + 4 * hidden))
            W = rng.uniform(-lim, lim, (n_inputs + hidden, 4 * hidden))
            b = np.zeros(4 * hidden)
            b[hidden : 2 * hidden] = 1.0
            lim = np.sqrt(6.0 / (hidden + 2))
            V = rng.uniform(-lim, lim, (hidden, 2))
        return cls(W, b, V, np.zeros(2), np.zeros(n_inputs), np.ones(n_inputs), linear)

    def copy(self) -> "RecurrentNet":
        return RecurrentNet(
            self.W.copy(), self.b.copy(), self.V.copy(), self.c.copy(),
            self.mean.copy(), self.std.copy(), self.linear,
        )

    def to_dict(self) -> dict:
        def enc(a):
            return {"shape": list(a.shape), "data": a.ravel().tolist()}

        return {
            "linear": self.linear,
            "n_inputs": self.n_inputs,
            "hidden": self.hidden,
            "params": {k: enc(v) for k, v in self.params().items()},
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecurrentNet":
        def dec(e):
            return np.asarray(e["data"], dtype=float).reshape(e["shape"])

        p = d["params"]
        return cls(
            dec(p["W"]), dec(p["b"]), dec(p["V"]), dec(p["c"]),
            np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float),
            bool(d["linear"]),
        )


_P_LO = np.finfo(float).tiny
_P_HI = np.nextafter(1.0, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def pack(examples: list[SequenceExample], columns=None) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded (N, T, F) batch plus lengths; frames stay oldest first."""
    if not examples:
        width = 0 if columns is None else len(columns)
        return np.zeros((0, 1, width)), np.zeros(0, dtype=int)
    T = max(len(e.frames) for e in examples)
    F = examples[0].frames.shape[1] if columns is None else len(columns)
    X = np.zeros((len(examples), T, F))
    lengths = np.empty(len(examples), dtype=int)
    for n, e in enumerate(examples):
        fr = e.frames if columns is None else e.frames[:, columns]
        X[n, : len(fr)] = fr
        lengths[n] = len(fr)
    return X, lengths


def _forward(net: RecurrentNet, X: np.ndarray, lengths: np.ndarray, keep_cache: bool = False):
    Xs = (X - net.mean) / net.std
    N, T, _ = Xs.shape
    if net.linear:
        last = Xs[np.arange(N), lengths - 1]
        logits = last @ net.V + net.c
        cache = {"last": last}
    else:
        H = net.hidden
        D = net.n_inputs
        Wx, Wh = net.W[:D], net.W[D:]
        h = np.zeros((N, H))
        cell = np.zeros((N, H))
        steps = []
        for t in range(T):
            active = lengths > t
            if not active.any():
                break
            z = Xs[:, t] @ Wx + h @ Wh + net.b
            ig = _sigmoid(z[:, :H])
            fg = _sigmoid(z[:, H : 2 * H])
            og = _sigmoid(z[:, 2 * H : 3 * H])
            g = np.tanh(z[:, 3 * H :])
            c_new = fg * cell + ig * g
            tc = np.tanh(c_new)
            h_new = og * tc
            m = active[:, None]
            if keep_cache:
                steps.append((Xs[:, t], h, cell, ig, fg, og, g, tc, m))
            cell = np.where(m, c_new, cell)
            h = np.where(m, h_new, h)
        logits = h @ net.V + net.c
        cache = {"h": h, "steps": steps}
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    prob = e / e.sum(axis=1, keepdims=True)
    return prob, cache


def predict_proba(net: RecurrentNet, X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Positive-class probability for a padded batch."""
    if X.shape[-1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} inputs per frame, got {X.shape[-1]}")
    if len(X) == 0:
        return np.zeros(0)
    X = np.ascontiguousarray(X)
    out = []
    for s in range(0, len(X), 4096):
        out.append(_forward(net, X[s : s + 4096], lengths[s : s + 4096])[0][:, 1])
    # keep strictly inside (0, 1) even when the logits saturate
    return np.clip(np.concatenate(out), _P_LO, _P_HI)


def forward(net: RecurrentNet, frames) -> float:
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if not 1 <= len(frames) <= MAX_FRAMES:
        raise ValueError("1 to 8 frames expected")
    return float(predict_proba(net, frames[None], np.array([len(frames)]))[0])


def loss_and_grads(
    net: RecurrentNet, X: np.ndarray, lengths: np.ndarray, y: np.ndarray, w: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted cross-entropy (mean over the batch) and its gradients via BPTT."""
    N = len(y)
    prob, cache = _forward(net, X, lengths, keep_cache=True)
    p_true = prob[np.arange(N), y]
    loss = float((w * -np.log(np.maximum(p_true, 1e-300))).sum() / N)

    dlogits = prob.copy()
    dlogits[np.arange(N), y] -= 1.0
    dlogits *= (w / N)[:, None]
    grads = {"c": dlogits.sum(axis=0)}
    if net.linear:
        grads["V"] = cache["last"].T @ dlogits
        grads["W"] = np.zeros_like(net.W)
        grads["b"] = np.zeros_like(net.b)
        return loss, grads

    H = net.hidden
    D = net.n_inputs
    Wx, Wh = net.W[:D], net.W[D:]
    grads["V"] = cache["h"].T @ dlogits
    dh = dlogits @ net.V.T
    dc = np.zeros_like(dh)
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros_like(net.b)
    for x_t, h_prev, c_prev, ig, fg, og, g, tc, m in reversed(cache["steps"]):
        dh_new = dh * m
        dc_new = dc * m + dh_new * og * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc_new * g * ig * (1.0 - ig),
                dc_new * c_prev * fg * (1.0 - fg),
                dh_new * tc * og * (1.0 - og),
                dc_new * ig * (1.0 - g * g),
            ],
            axis=1,
        )
        dWx += x_t.T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh = dh * ~m + dz @ Wh.T
        dc = dc * ~m + dc_new * fg
    grads["W"] = np.vstack([dWx, dWh])
    grads["b"] = db
    return loss, grads


def class_weights(y: np.ndarray, enabled: bool = True) -> np.ndarray:
    """Per-sample weights, inversely proportional to class share (binary)."""
    y = np.asarray(y, dtype=int)
    if not enabled:
        return np.ones(len(y))
    counts = np.bincount(y, minlength=2).astype(float)
    cw = np.where(counts > 0, len(y) / (2.0 * np.maximum(counts, 1)), 0.0)
    return cw[y]


def train_arrays(
    X: np.ndarray,
    lengths: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    hidden: int = HIDDEN,
    linear: bool = False,
    net: RecurrentNet | None = None,
) -> tuple[RecurrentNet, list[float]]:
    """Train a binary net on a padded batch; returns the net and per-epoch mean loss."""
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise TrainingError("both binary classes must be present")
    # column subsets arrive as strided views; batches are much faster on a contiguous copy
    X = np.ascontiguousarray(X)
    N, _, D = X.shape
    if net is None:
        net = RecurrentNet.init(D, hidden, seed=cfg.seed, linear=linear)
    else:
        net = net.copy()
    valid = np.arange(X.shape[1])[None, :] < lengths[:, None]
    frames = X[valid]
    net.mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    net.std = np.where(std > 1e-12, std, 1.0)

    w = class_weights(y, cfg.class_weighting)
    rng = np.random.default_rng(cfg.seed + 1)
    params = net.params()
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    losses = []
    bs = max(1, min(cfg.batch_size, N))
    for epoch in range(cfg.epochs):
        perm = rng.permutation(N)
        total = 0.0
        for s in range(0, N, bs):
            idx = np.sort(perm[s : s + bs])
            Lmax = int(lengths[idx].max())
            loss, grads = loss_and_grads(net, X[idx, :Lmax], lengths[idx], y[idx], w[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {s // bs}")
            total += loss * len(idx)
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if not np.isfinite(norm):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {s // bs}")
            scale = 1.0 if norm <= cfg.clip_norm else cfg.clip_norm / norm
            step += 1
            for k, p in params.items():
                g = grads[k] * scale
                if cfg.optimizer == "sgd":
                    p -= cfg.learning_rate * g
                    continue
                m1[k] = b1 * m1[k] + (1 - b1) * g
                m2[k] = b2 * m2[k] + (1 - b2) * g * g
                mh = m1[k] / (1 - b1**step)
                vh = m2[k] / (1 - b2**step)
                p -= cfg.learning_rate * mh / (np.sqrt(vh) + eps)
        losses.append(total / N)
    return net, losses


def train(
    net: RecurrentNet, data: list[SequenceExample], cfg: TrainConfig, positive: int = 1
) -> tuple[RecurrentNet, list[float]]:
    """Train ``net`` on examples; ``label == positive`` is the positive class."""
    X, lengths = pack(data)
    if X.shape[-1] != net.n_inputs:
        raise ValueError("example width does not match the net")
    y = np.array([int(e.label) == positive for e in data], dtype=int)
    return train_arrays(X, lengths, y, cfg, hidden=net.hidden, linear=net.linear, net=net)


def decide_scores(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Class scores sum_{j != i} p_ij (q_i + q_j).

    ``p`` has shape (N, K, K) with ``p[:, i, j]`` the pairwise posterior
    of class i against j; ``q`` has shape (N, K).
    """
    N, k = q.shape
    scores = np.zeros((N, k))
    for i in range(k):
        s = np.zeros(N)
        for j in range(k):
            if j != i:
                s = s + p[:, i, j] * (q[:, i] + q[:, j])
        scores[:, i] = s
    return scores


def pairwise_matrix(p_pairs: dict[tuple[int, int], np.ndarray], n: int) -> np.ndarray:
    """Fill (N, K, K) from upper-triangle posteriors, with p_ji = 1 - p_ij."""
    p = np.zeros((n, K, K))
    for (i, j), v in p_pairs.items():
        p[:, i, j] = v
        p[:, j, i] = 1.0 - v
    return p


@dataclass
class EnsembleModel:
    nets: dict[str, RecurrentNet]
    subsets: dict[str, list[int]]
    catalog_version: str
    train_config: TrainConfig = field(default_factory=TrainConfig)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        missing = set(ALL_TAGS) - set(self.nets)
        if missing:
            raise ValueError(f"ensemble is missing nets {sorted(missing)}")

    def member_outputs(self, X: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """OVA outputs q (N, K) and the pairwise matrix p (N, K, K) for full-catalog inputs."""
        n = len(X)
        q = np.column_stack(
            [predict_proba(self.nets[t], X[:, :, self.subsets[t]], lengths) for t in OVA_TAGS]
        )
        pairs = {
            ij: predict_proba(self.nets[t], X[:, :, self.subsets[t]], lengths)
            for ij, t in zip(OVO_PAIRS, OVO_TAGS)
        }
        return q.reshape(n, K), pairwise_matrix(pairs, n)

    def predict(self, X: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if len(X) == 0:
            return np.zeros(0, dtype=int), np.zeros((0, K))
        q, p = self.member_outputs(X, lengths)
        scores = decide_scores(p, q)
        return np.argmax(scores, axis=1), scores

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "catalog_version": self.catalog_version,
            "train_config": asdict(self.train_config),
            "manifest": self.manifest,
            "nets": {
                t: {"subset": list(map(int, self.subsets[t])), **self.nets[t].to_dict()}
                for t in ALL_TAGS
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not an ensemble model file")
        return cls(
            nets={t: RecurrentNet.from_dict(v) for t, v in d["nets"].items()},
            subsets={t: list(v["subset"]) for t, v in d["nets"].items()},
            catalog_version=d["catalog_version"],
            train_config=TrainConfig(**d["train_config"]),
            manifest=d.get("manifest", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def decide(ens: EnsembleModel, frames) -> tuple[ClassLabel, np.ndarray]:
    """Class decision for one full-catalog frame sequence (1-8 frames)."""
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    labels, scores = ens.predict(frames[None], np.array([len(frames)]))
    return ClassLabel(int(labels[0])), scores[0]


def binary_task(tag: str, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mask and binary targets for one ensemble member."""
    labels = np.asarray(labels, dtype=int)
    if tag in OVA_TAGS:
        cls = OVA_TAGS.index(tag)
        return np.ones(len(labels), dtype=bool), (labels == cls).astype(int)
    i, j = OVO_PAIRS[OVO_TAGS.index(tag)]
    mask = (labels == i) | (labels == j)
    return mask, (labels[mask] == i).astype(int)


def train_ensemble(
    X: np.ndarray,
    lengths: np.ndarray,
    labels: np.ndarray,
    subsets: dict[str, list[int]],
    cfg: TrainConfig,
    catalog_version: str,
    hidden: int = HIDDEN,
    manifest: dict | None = None,
) -> EnsembleModel:
    """Train the K OVA and K(K-1)/2 OVO members, each on its feature subset."""
    nets = {}
    for k, tag in enumerate(ALL_TAGS):
        mask, y = binary_task(tag, labels)
        cols = subsets[tag]
        member_cfg = TrainConfig(**{**asdict(cfg), "seed": cfg.seed + 101 * k})
        nets[tag], losses = train_arrays(X[mask][:, :, cols], lengths[mask], y, member_cfg, hidden)
        log.info("trained %s on %d examples, final loss %.4f", tag, mask.sum(), losses[-1])
    return EnsembleModel(
        nets=nets,
        subsets={t: list(subsets[t]) for t in ALL_TAGS},
        catalog_version=catalog_version,
        train_config=cfg,
        manifest=dict(manifest or {}),
    )


__all__ = [
    "ALL_TAGS",
    "EnsembleModel",
    "HIDDEN",
    "MAX_FRAMES",
    "OVA_TAGS",
    "OVO_PAIRS",
    "OVO_TAGS",
    "RecurrentNet",
    "SequenceExample",
    "TrainConfig",
    "TrainingError",
    "binary_task",
    "class_weights",
    "decide",
    "decide_scores",
    "forward",
    "loss_and_grads",
    "pack",
    "pairwise_matrix",
    "predict_proba",
    "train",
    "train_arrays",
    "train_ensemble",
]
