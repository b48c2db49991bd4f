"""Acceptance checks, one test per criterion.

Each test records a verdict line (printed in the terminal summary) and then
asserts it. The sensor-comparison criteria share one full experiment run
through the command-line tool on ``configs/benchmark.toml``.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import tomli
from sklearn.metrics import v_measure_score

from radardet.classifier import ALL_TAGS, EnsembleModel, RecurrentNet, decide, decide_scores, pairwise_matrix
from radardet.clustering import ClusterConfig, FilterConfig, cluster_stream, cluster_window, neighborhood, nmin_at_range
from radardet.config import RunConfig
from radardet.core import NO_INSTANCE, load_dataset
from radardet.featsel import guided_backward_eliminate, rank_features
from radardet.metrics import instance_scores, macro_f1, point_f1, v_measure

from cli_run import run_all, snapshot, write_config
from conftest import ACCEPTANCE
from metric_fixtures import F1_SCENES, FRAGMENTED_TEXTBOOK, INSTANCE_SCENES, POINT_SCENES, V_SCENES
from oracles import eq4_bruteforce, naive_dbscan, random_cloud
from test_classifier import gradient_probes
from test_clustering import cfg, pt
from test_featsel import nearest_centroid_task

ROOT = Path(__file__).resolve().parents[1]
EXPERIMENT_LIMIT_S = 30 * 60


def verdict(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


# ---------------------------------------------------------------- 1


def test_criterion_1_metric_oracles():
    failures, scenes = [], 0
    for name, pred, gt, (h, c, v) in V_SCENES:
        assert len(pred) <= 20
        scenes += 1
        got = v_measure(np.array(pred), np.array(gt))
        if not np.allclose(got, (h, c, v), atol=1e-12, rtol=0):
            failures.append(name)
    for name, cm, per, macro in F1_SCENES:
        scenes += 1
        got_per, got_macro = macro_f1(cm)
        if not (np.allclose(got_per, per, atol=1e-12, rtol=0) and abs(got_macro - macro) <= 1e-12):
            failures.append(name)
    for name, pred, gt, expected in POINT_SCENES:
        assert len(pred) <= 20
        scenes += 1
        if abs(point_f1(pred, gt) - expected) > 1e-12:
            failures.append(name)
    for name, pred, classes, gi, gc, t, exp in INSTANCE_SCENES:
        assert len(pred) <= 20
        scenes += 1
        c = instance_scores(pred, gi, gc, classes, t=t)
        counts_ok = (
            (c.tp["P"], c.tp["B"]) == exp["tp"]
            and (c.fp["P"], c.fp["B"]) == exp["fp"]
            and (c.fn["P"], c.fn["B"]) == exp["fn"]
            and (c.vru_tp, c.vru_fp, c.vru_fn, c.vru_tn) == exp["vru"]
        )
        rates = (c.instance_f1, c.tpr, c.tnr, c.baac)
        want = (exp["f1"], exp["tpr"], exp["tnr"], exp["baac"])
        if not (counts_ok and all(abs(a - b) <= 1e-12 for a, b in zip(rates, want))):
            failures.append(name)
    pred, gt = FRAGMENTED_TEXTBOOK
    v1 = v_measure(np.array(pred), np.array(gt))[2]
    textbook = v_measure_score(gt, pred)
    fragmented_ok = abs(v1 - 1.0) <= 1e-12 and textbook < 1.0
    ok = scenes >= 10 and not failures and fragmented_ok
    verdict(
        1, ok,
        f"{scenes} fixture scenes, mismatches {failures or 'none'}; "
        f"fragmented background: v1 {v1:.12f}, textbook {textbook:.4f}",
    )


# ---------------------------------------------------------------- 2


def test_criterion_2_clustering_equivalence():
    rng = np.random.default_rng(2024)
    agree, t0 = 0, time.perf_counter()
    for _ in range(1000):
        c = cfg(
            nmin_50m=float(rng.uniform(1, 5)),
            alpha_r=float(rng.uniform(0, 1.5)),
            eps_xyvr=float(rng.uniform(0.5, 4)),
            eps_vr=float(rng.uniform(0.5, 10)),
            vr_min=float(rng.uniform(0, 1)),
            eps_t=float(rng.uniform(0.02, 0.25)),
        )
        points = random_cloud(rng, int(rng.integers(1, 61)))
        agree += list(cluster_window(points, c).labels) == naive_dbscan(points, c)
    elapsed = time.perf_counter() - t0
    verdict(2, agree == 1000 and elapsed < 30, f"{agree}/1000 clouds agree, {elapsed:.1f} s (limit 30 s)")


# ---------------------------------------------------------------- 3


def test_criterion_3_hand_arithmetic():
    c = cfg(nmin_50m=3, alpha_r=0.5)
    checks = {
        "nmin r=25": abs(nmin_at_range(25.0, c) - 4.5) <= 1e-12,
        "nmin r=150 clipped": abs(nmin_at_range(150.0, c) - 2.1) <= 1e-12,
        "nmin r=50": abs(nmin_at_range(50.0, c) - 3.0) <= 1e-12,
    }
    n = cfg(eps_xyvr=1.0, eps_vr=2.0)
    dist = math.sqrt(0.6**2 + 0.0**2 + (1.0 / 2.0) ** 2)
    checks["neighbourhood distance 0.781"] = abs(dist - math.sqrt(0.61)) <= 1e-12 and round(dist, 3) == 0.781
    checks["neighbourhood true"] = neighborhood(pt(0, 0, 0.0, t=0.0), pt(0.6, 0, 1.0, t=0.01), n)
    p = pairwise_matrix({(0, 1): np.array([0.9]), (0, 2): np.array([0.9]), (1, 2): np.array([0.5])}, 1)
    s = decide_scores(p, np.array([[0.8, 0.1, 0.1]]))[0]
    checks["decision scores 1.62/0.19/0.19"] = np.allclose(s, [1.62, 0.19, 0.19], atol=1e-12, rtol=0)
    checks["decision picks pedestrian"] = int(np.argmax(s)) == 0
    bad = [k for k, v in checks.items() if not v]
    verdict(3, not bad, f"{len(checks) - len(bad)}/{len(checks)} hand-worked values match to 1e-12")


# ---------------------------------------------------------------- 4


def test_criterion_4_gradient_check():
    t0 = time.perf_counter()
    err = gradient_probes(100, seed=7)
    elapsed = time.perf_counter() - t0
    ok = len(err) == 100 and err.max() < 1e-5 and elapsed < 60
    verdict(4, ok, f"max relative error {err.max():.2e} over 100 probes, {elapsed:.1f} s")


# ---------------------------------------------------------------- 5


class _FixedOutputs(EnsembleModel):
    """Ensemble whose member outputs are looked up by the frame's first value."""

    table: tuple = ()

    def member_outputs(self, X, lengths):
        k = X[:, 0, 0].astype(int)
        q, p = self.table
        return q[k], p[k]


def test_criterion_5_decision_brute_force():
    rng = np.random.default_rng(5)
    n = 10_000
    grid = np.linspace(0, 1, 5)  # exact ties on half of the draws
    coarse = rng.random(n) < 0.5
    vals = {ij: np.where(coarse, rng.choice(grid, n), rng.random(n)) for ij in ((0, 1), (0, 2), (1, 2))}
    q = np.where(coarse[:, None], rng.choice(grid, (n, 3)), rng.random((n, 3)))
    stub = RecurrentNet.init(1, 1, seed=0)
    ens = _FixedOutputs(nets={t: stub for t in ALL_TAGS}, subsets={t: [0] for t in ALL_TAGS}, catalog_version="x")
    ens.table = (q, pairwise_matrix(vals, n))
    agree, ties = 0, 0
    for k in range(n):
        want = eq4_bruteforce({ij: float(v[k]) for ij, v in vals.items()}, list(q[k]))
        got, scores = decide(ens, [[float(k)]])
        agree += int(got) == want
        ties += int(np.sum(scores == scores.max()) > 1)
    verdict(5, agree == n, f"{agree}/{n} argmax agreement, {ties} tuples with tied scores")


# ---------------------------------------------------------------- 9


def test_criterion_9_feature_selection_sanity():
    bad = []
    for seed in range(20):
        X, y, train_fn, score_fn = nearest_centroid_task(seed)
        kept = guided_backward_eliminate(rank_features(X, y), train_fn, score_fn, tol=0.0).kept
        if 2 in kept or 0 not in kept:
            bad.append((seed, kept))
    verdict(9, not bad, f"noise dropped and separator kept on {20 - len(bad)}/20 seeds {bad or ''}")


# ---------------------------------------------------------------- 10


def test_criterion_10_cli_determinism(tmp_path):
    a = run_all(write_config(tmp_path, "first"))
    b = run_all(write_config(tmp_path, "second"))
    fa, fb = snapshot(tmp_path / "first"), snapshot(tmp_path / "second")
    differing = sorted(k for k in fa.keys() | fb.keys() if fa.get(k) != fb.get(k))
    stdout_diff = [k for k in a if a[k] != b[k]]
    verdict(
        10, not differing and not stdout_diff,
        f"{len(a)} commands, {len(fa)} output files; differing files {differing or 'none'}, "
        f"differing stdout {stdout_diff or 'none'}",
    )


# ---------------------------------------------------------------- 6-8: full experiment


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("experiment")
    with open(ROOT / "configs" / "benchmark.toml", "rb") as fh:
        settings = tomli.load(fh)
    settings["workdir"] = "run"  # keep the run inside this temporary directory
    config = root / "benchmark.json"
    config.write_text(json.dumps(settings))
    cfg = RunConfig.load(config)
    cfg_workdir = Path(cfg.workdir)
    t0 = time.perf_counter()
    run_all(config)
    elapsed = time.perf_counter() - t0
    reports = {
        name: json.loads((cfg_workdir / "reports" / f"{name}.json").read_text())
        for name in ("clustering", "classification", "combined", "summary")
    }
    return cfg, cfg_workdir, reports, elapsed


def test_criterion_6_sensor_ordering(experiment):
    cfg, _, rep, elapsed = experiment
    clu, cls, comb = rep["clustering"], rep["classification"], rep["combined"]
    d_v1 = clu["B,B"]["v1"] - clu["A,A"]["v1"]
    d_inst = comb["B,B"]["instance_f1"] - comb["A,A"]["instance_f1"]
    d_tpr = comb["B,B"]["tpr_vru"] - comb["A,A"]["tpr_vru"]
    d_f1 = cls["B,B"]["macro_f1"] - cls["A,A"]["macro_f1"]
    parts = {
        "budget>=60": cfg.tune.budget >= 60,
        "v1 +5": d_v1 >= 0.05,
        "instance F1 +3": d_inst >= 0.03,
        "TPR +5": d_tpr >= 0.05,
        "|macro F1| <5": abs(d_f1) < 0.05,
        "time <=30 min": elapsed <= EXPERIMENT_LIMIT_S,
    }
    failed = [k for k, v in parts.items() if not v]
    verdict(
        6, not failed,
        f"B-A: v1 {100 * d_v1:+.2f}, instance F1 {100 * d_inst:+.2f}, TPR {100 * d_tpr:+.2f}, "
        f"macro F1 {100 * d_f1:+.2f} points; {elapsed / 60:.1f} min; failed {failed or 'none'}",
    )


def test_criterion_7_cross_profile_degradation(experiment):
    _, _, rep, _ = experiment
    degr = rep["summary"]["cross_profile_degradation"]
    shares = {k: v["share"] for k, v in degr.items()}
    ok = all(s >= 0.9 for s in shares.values()) and all(v["pairs"] > 0 for v in degr.values())
    detail = ", ".join(f"{k} {v['degraded']}/{v['pairs']}" for k, v in sorted(degr.items()))
    verdict(7, ok, f"degraded pairs: {detail} (need >= 90% each)")


def test_criterion_8_filter_behaviour(experiment):
    cfg, workdir, _, _ = experiment
    split = json.loads((workdir / "benchmark" / "split.json").read_text())
    out, ok = [], True
    for p in cfg.profiles:
        tuned = json.loads((workdir / "tune" / f"{p}.json").read_text())
        fcfg = FilterConfig.from_dict(tuned["filter"])
        ccfg = ClusterConfig.from_dict(tuned["cluster"])
        seqs = [s for s in load_dataset(workdir / "benchmark" / f"{p}.csv") if s.id.rsplit("-", 1)[0] in split["test"]]
        vru_kept = vru = bg_removed = bg = 0
        for s in seqs:
            keep = ~cluster_stream(s, fcfg, ccfg).filtered
            is_bg = s.gt_instance == NO_INSTANCE
            vru_kept += int(keep[~is_bg].sum())
            vru += int((~is_bg).sum())
            bg_removed += int((~keep[is_bg]).sum())
            bg += int(is_bg.sum())
        kept, removed = vru_kept / vru, bg_removed / bg
        ok &= kept >= 0.95 and removed >= 0.80
        out.append(f"{p}: VRU kept {100 * kept:.1f}%, clutter removed {100 * removed:.1f}%")
    verdict(8, ok, "; ".join(out))


def test_point_f1_never_beats_oracle_clustering(experiment):
    _, _, rep, _ = experiment
    for key, r in rep["combined"].items():
        got, oracle = r["extra"]["per_sequence_point_f1"], r["extra"]["per_sequence_oracle_point_f1"]
        worse = [s for s in got if got[s] > oracle[s] + 1e-12]
        assert not worse, (key, worse)


def test_matched_classification_bar(experiment):
    _, _, rep, _ = experiment
    cls = rep["classification"]
    for train, other in (("A", "B"), ("B", "A")):
        assert cls[f"{train},{train}"]["macro_f1"] >= 0.85
        # a model from the other profile does worse on this profile's data
        assert cls[f"{other},{train}"]["macro_f1"] < cls[f"{train},{train}"]["macro_f1"]
