"""Gaussian-process Bayesian optimisation of the filter and clustering parameters."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

from .clustering import N_STAGES, ClusterConfig, FilterConfig

log = logging.getLogger(__name__)

N_CANDIDATES = 2048
N_REFINE = 3
# acquisition candidates drawn around the best points so far
N_LOCAL = 2048
N_INCUMBENTS = 5
LOCAL_SIGMAS = (0.02, 0.08, 0.2)
XI = 0.01
_N_THRESH_MAX = 30


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValueError(f"{self.name}: lower bound must be below upper bound")
        if self.log and self.low <= 0:
            raise ValueError(f"{self.name}: log scale needs a positive lower bound")

    def value(self, u: float) -> float:
        u = min(max(float(u), 0.0), 1.0)
        if self.log:
            v = math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        else:
            v = self.low + u * (self.high - self.low)
        v = min(max(v, self.low), self.high)
        return float(round(v)) if self.integer else v

    def unit(self, v: float) -> float:
        v = min(max(float(v), self.low), self.high)
        if self.log:
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (v - self.low) / (self.high - self.low)


@dataclass
class SearchSpace:
    """Box of named dimensions; ``build`` turns a value dict into a config."""

    dims: tuple[Dimension, ...]
    build: Callable[[dict[str, float]], Any] | None = None

    def __len__(self) -> int:
        return len(self.dims)

    def values(self, u: np.ndarray) -> dict[str, float]:
        return {d.name: d.value(x) for d, x in zip(self.dims, u)}

    def encode(self, values: dict[str, float]) -> np.ndarray:
        return np.array([d.unit(values[d.name]) for d in self.dims])

    def make(self, u: np.ndarray) -> Any:
        vals = self.values(u)
        return vals if self.build is None else self.build(vals)


def _strict_filter(vals: dict[str, float]) -> FilterConfig:
    eta = sorted((vals[f"eta_vr_{k}"] for k in range(N_STAGES)), reverse=True)
    for k in range(1, N_STAGES):
        eta[k] = min(eta[k], eta[k - 1] * (1.0 - 1e-6))
    n = sorted(int(vals[f"n_thresh_{k}"]) for k in range(N_STAGES))
    for k in range(1, N_STAGES):
        n[k] = max(n[k], n[k - 1] + 1)
    top = _N_THRESH_MAX
    for k in range(N_STAGES - 1, -1, -1):
        n[k] = min(n[k], top - (N_STAGES - 1 - k))
    return FilterConfig(tuple(eta), tuple(n), vals["d_xy"])


def _build_cluster(vals: dict[str, float]) -> tuple[FilterConfig, ClusterConfig]:
    ccfg = ClusterConfig(
        nmin_50m=vals["nmin_50m"],
        alpha_r=vals["alpha_r"],
        eps_xyvr=vals["eps_xyvr"],
        eps_vr=vals["eps_vr"],
        vr_min=vals["vr_min"],
    )
    return _strict_filter(vals), ccfg


def cluster_values(fcfg: FilterConfig, ccfg: ClusterConfig) -> dict[str, float]:
    """Inverse of the cluster-space build step, for seeding a search with a known config."""
    vals = {k: getattr(ccfg, k) for k in ("nmin_50m", "alpha_r", "eps_xyvr", "eps_vr", "vr_min")}
    vals.update({f"eta_vr_{k}": v for k, v in enumerate(fcfg.eta_vr)})
    vals.update({f"n_thresh_{k}": v for k, v in enumerate(fcfg.n_thresh)})
    vals["d_xy"] = fcfg.d_xy
    return vals


def cluster_space() -> SearchSpace:
    """Filter + clustering parameters; stage orderings are enforced in ``build``."""
    dims = [
        Dimension("nmin_50m", 1.0, 10.0),
        Dimension("alpha_r", 0.0, 1.5),
        Dimension("eps_xyvr", 0.1, 3.0, log=True),
        Dimension("eps_vr", 0.5, 16.0, log=True),
        Dimension("vr_min", 0.01, 1.5, log=True),
    ]
    dims += [Dimension(f"eta_vr_{k}", 0.05, 2.0) for k in range(N_STAGES)]
    dims += [Dimension(f"n_thresh_{k}", 1, _N_THRESH_MAX, integer=True) for k in range(N_STAGES)]
    dims.append(Dimension("d_xy", 0.5, 5.0))
    return SearchSpace(tuple(dims), _build_cluster)


@dataclass
class Evaluation:
    index: int
    u: list[float]
    values: dict[str, float]
    score: float | None  # None when the objective was non-finite
    source: str  # "design" or "ei"

    def to_json(self) -> str:
        return json.dumps(
            {"index": self.index, "u": self.u, "values": self.values, "score": self.score, "source": self.source},
            sort_keys=True,
        )


@dataclass
class TuneResult:
    best_config: Any
    best_score: float
    history: list[Evaluation] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        return max(
            (e for e in self.history if e.score is not None), key=lambda e: e.score
        ).index


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float, xi: float = XI) -> np.ndarray:
    imp = mu - best - xi
    out = np.zeros_like(mu)
    ok = sigma > 1e-12
    z = imp[ok] / sigma[ok]
    out[ok] = imp[ok] * norm.cdf(z) + sigma[ok] * norm.pdf(z)
    return out


def _fit_gp(U: np.ndarray, y: np.ndarray, seed: int) -> GaussianProcessRegressor:
    d = U.shape[1]
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(
        length_scale=np.full(d, 0.5), length_scale_bounds=(1e-2, 1e2), nu=2.5
    ) + WhiteKernel(1e-4, (1e-8, 1e-1))
    gp = GaussianProcessRegressor(
        kernel=kernel, normalize_y=True, n_restarts_optimizer=1, random_state=seed
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gp.fit(U, y)
    return gp


def _local_candidates(U: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Perturb a few coordinates of the best evaluated points."""
    d = U.shape[1]
    top = U[np.argsort(-y, kind="stable")[:N_INCUMBENTS]]
    base = top[rng.integers(0, len(top), N_LOCAL)]
    sigma = rng.choice(LOCAL_SIGMAS, N_LOCAL)[:, None]
    # each coordinate moves with probability ~ 3/d, at least one moves
    move = rng.random((N_LOCAL, d)) < min(1.0, 3.0 / d)
    move[np.arange(N_LOCAL), rng.integers(0, d, N_LOCAL)] = True
    step = rng.normal(size=(N_LOCAL, d)) * sigma
    return np.clip(base + move * step, 0.0, 1.0)


def _propose(gp, U: np.ndarray, y: np.ndarray, best: float, rng: np.random.Generator) -> np.ndarray:
    d = U.shape[1]
    cand = np.vstack([rng.random((N_CANDIDATES, d)), _local_candidates(U, y, rng)])
    mu, sd = gp.predict(cand, return_std=True)
    ei = expected_improvement(mu, sd, best)
    starts = cand[np.argsort(-ei, kind="stable")[:N_REFINE]]

    def neg_ei(x):
        m, s = gp.predict(x[None], return_std=True)
        return -float(expected_improvement(m, s, best)[0])

    best_x, best_v = starts[0], neg_ei(starts[0])
    for x0 in starts:
        res = minimize(neg_ei, x0, method="L-BFGS-B", bounds=[(0.0, 1.0)] * d, options={"maxiter": 20})
        x = np.clip(res.x, 0.0, 1.0)
        v = neg_ei(x)
        if v < best_v:
            best_x, best_v = x, v
    # never re-propose an evaluated point; fall back to the best random candidate
    if np.min(np.abs(U - best_x).sum(axis=1)) < 1e-9:
        best_x = starts[0]
    return best_x


def _load_history(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def tune(
    space: SearchSpace,
    objective: Callable[[Any], float],
    budget: int = 100,
    seed: int = 0,
    history_path: str | Path | None = None,
    initial: list[dict[str, float]] | None = None,
) -> TuneResult:
    """Maximise ``objective`` over ``space``.

    The first ``max(5, budget // 10)`` points come from a Latin hypercube;
    each later point maximises expected improvement under a Matern-5/2 GP
    fit to all scores so far. Non-finite scores are recorded as ``None``
    and enter the surrogate as the worst score seen. When ``history_path``
    holds a previous run with the same seed, its evaluations are replayed
    instead of re-running the objective. ``initial`` value dicts (e.g. a
    shipped preset) are evaluated before the design and count against the
    budget.
    """
    if budget < 10:
        raise ValueError("budget must be >= 10")
    d = len(space)
    n_init = min(budget, max(5, budget // 10))
    design = qmc.LatinHypercube(d=d, seed=seed).random(n_init)
    seeds = [space.encode(v) for v in (initial or [])]
    design = np.vstack(seeds + [design])[:budget]
    n_init = len(design)
    rng = np.random.default_rng(seed)

    path = Path(history_path) if history_path is not None else None
    replay = _load_history(path) if path is not None else []
    fh = open(path, "a", encoding="utf-8") if path is not None else None

    history: list[Evaluation] = []
    U = np.zeros((0, d))
    raw: list[float] = []
    try:
        for k in range(budget):
            if k < n_init:
                u, source = design[k], "design"
            else:
                finite = [v for v in raw if np.isfinite(v)]
                if not finite:
                    u, source = rng.random(d), "random"
                else:
                    floor = min(finite)
                    y = np.array([v if np.isfinite(v) else floor for v in raw])
                    gp = _fit_gp(U, y, seed)
                    u, source = _propose(gp, U, y, max(finite), rng), "ei"
            if k < len(replay):
                if not np.allclose(replay[k]["u"], u, atol=1e-9):
                    raise ValueError("history file does not match this search; remove it or change seed")
                s = replay[k]["score"]
                score = float("-inf") if s is None else float(s)
            else:
                try:
                    score = float(objective(space.make(u)))
                except (ValueError, FloatingPointError) as exc:
                    log.warning("objective failed at step %d: %s", k, exc)
                    score = float("nan")
                if not np.isfinite(score):
                    score = float("-inf")
            ev = Evaluation(k, [float(v) for v in u], space.values(u), score if np.isfinite(score) else None, source)
            history.append(ev)
            if fh is not None and k >= len(replay):
                fh.write(ev.to_json() + "\n")
                fh.flush()
            U = np.vstack([U, u])
            raw.append(score)
            log.info("eval %d (%s): %s", k, source, ev.score)
    finally:
        if fh is not None:
            fh.close()

    scored = [e for e in history if e.score is not None]
    if not scored:
        raise ValueError("objective was non-finite at every evaluated point")
    best = max(scored, key=lambda e: e.score)
    return TuneResult(space.make(np.asarray(best.u)), best.score, history)


__all__ = [
    "Dimension",
    "Evaluation",
    "SearchSpace",
    "TuneResult",
    "cluster_space",
    "cluster_values",
    "expected_improvement",
    "tune",
]
