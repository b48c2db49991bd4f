"""Command-line entry point: ``radardet <command> CONFIG [--seed N]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .classifier import EnsembleModel, TrainConfig
from .clustering import DEFAULT_FILTER, PRESETS, ClusterConfig, FilterConfig
from .config import RunConfig
from .core import load_dataset, save_dataset, split_sequences
from .features import CATALOG, extract_all, load_feature_matrix, sample_clusters, save_feature_matrix
from .featsel import load_subsets, save_subsets
from .hyperopt import cluster_space, cluster_values, tune
from .metrics import render_table
from .simgen import PROFILES, benchmark_scripts, generate, save_manifest

log = logging.getLogger("radardet")


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def read_json(path: Path):
    if not path.exists():
        raise SystemExit(f"missing {path}; run the earlier pipeline stage first")
    return json.loads(path.read_text(encoding="utf-8"))


class Workdir:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.workdir)

    def path(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def sequences(self, profile: str, part: str) -> list:
        split = read_json(self.path("benchmark", "split.json"))
        wanted = set(split[part])
        seqs = load_dataset(self.path("benchmark", f"{profile}.csv"), sensor_profile_id=profile)
        by_script = {s.id.rsplit("-", 1)[0]: s for s in seqs}
        return [by_script[k] for k in split[part] if k in wanted and k in by_script]

    def configs(self, profile: str) -> tuple[FilterConfig, ClusterConfig]:
        d = read_json(self.path("tune", f"{profile}.json"))
        return FilterConfig.from_dict(d["filter"]), ClusterConfig.from_dict(d["cluster"])

    def model(self, profile: str) -> EnsembleModel:
        p = self.path("models", f"{profile}.json")
        if not p.exists():
            raise SystemExit(f"missing {p}; run 'train' first")
        return EnsembleModel.load(p)

    def combos(self) -> list[tuple[str, str]]:
        ps = self.cfg.profiles
        return [(a, a) for a in ps] + [(a, b) for a in ps for b in ps if a != b]


def cmd_generate(wd: Workdir) -> None:
    cfg = wd.cfg
    scripts = benchmark_scripts(cfg.seed, cfg.benchmark.n_scripts, cfg.benchmark.duration)
    save_manifest(wd.path("benchmark", "manifest.json"), scripts, cfg.seed)
    rendered = {}
    for p in cfg.profiles:
        rendered[p] = [generate(s, PROFILES[p]) for s in scripts]
        save_dataset(rendered[p], wd.path("benchmark", f"{p}.csv"))
    # split whole scripts so both renderings of a scene stay on the same side
    ref = rendered[cfg.profiles[-1]]
    train, test = split_sequences(
        ref, cfg.benchmark.test_fraction, cfg.benchmark.split_trials, rng_seed=cfg.seed
    )
    name = lambda s: s.id.rsplit("-", 1)[0]  # noqa: E731
    write_json(
        wd.path("benchmark", "split.json"),
        {"train": sorted(name(s) for s in train), "test": sorted(name(s) for s in test)},
    )
    print(f"generated {len(scripts)} scripts x {len(cfg.profiles)} profiles; {len(test)} test scripts")


def cmd_tune(wd: Workdir) -> None:
    cfg = wd.cfg
    for p in cfg.profiles:
        seqs = wd.sequences(p, "train")[: cfg.tune.max_sequences]
        objective = pipeline.tuning_objective(seqs, cfg.tune.clutter_weight)
        result = tune(
            cluster_space(),
            objective,
            budget=cfg.tune.budget,
            seed=cfg.seed,
            history_path=wd.path("tune", f"{p}-seed{cfg.seed}.jsonl"),
            initial=[cluster_values(DEFAULT_FILTER, PRESETS[pipeline.PROFILE_PRESET[p]])],
        )
        fcfg, ccfg = result.best_config
        write_json(
            wd.path("tune", f"{p}.json"),
            {
                "filter": fcfg.to_dict(),
                "cluster": ccfg.to_dict(),
                "objective": result.best_score,
                "v1_train": pipeline.mean_v1(seqs, fcfg, ccfg),
                "budget": cfg.tune.budget,
                "best_index": result.best_index,
            },
        )
        print(f"tuned {p}: objective {result.best_score:.4f}")


def cmd_features(wd: Workdir) -> None:
    for p in wd.cfg.profiles:
        fcfg, ccfg = wd.configs(p)
        seqs = wd.sequences(p, "train")
        samples = []
        for s in seqs:
            samples += sample_clusters(pipeline.oracle_labels(s, fcfg, ccfg), s)
        F = extract_all(samples, CATALOG)
        labels = [s.gt_class for s in samples]
        save_feature_matrix(wd.path("features", f"{p}.csv"), F, pipeline.sample_ids(samples), labels)
        counts = np.bincount([int(c) for c in labels], minlength=3)
        print(f"features {p}: {len(samples)} samples, class counts {counts.tolist()}")


def _examples(wd: Workdir, p: str) -> pipeline.ExampleSet:
    path = wd.path("features", f"{p}.csv")
    if not path.exists():
        raise SystemExit(f"missing {path}; run 'features' first")
    F, ids, labels = load_feature_matrix(path)
    return pipeline.examples_from_matrix(F, ids, labels)


def cmd_select(wd: Workdir) -> None:
    for p in wd.cfg.profiles:
        ex = _examples(wd, p)
        subsets, rankings = pipeline.select_features(ex, wd.cfg.select, seed=wd.cfg.seed)
        save_subsets(wd.path("select", f"{p}.json"), subsets, CATALOG.version)
        write_json(wd.path("select", f"{p}-rankings.json"), rankings)
        sizes = {t: len(s.kept) for t, s in sorted(subsets.items())}
        print(f"selected {p}: {sizes}")


def cmd_train(wd: Workdir) -> None:
    tc = wd.cfg.train
    for p in wd.cfg.profiles:
        ex = _examples(wd, p)
        n_all = len(ex)
        ex = pipeline.cap_per_class(ex, tc.max_per_class, seed=wd.cfg.seed)
        subsets = load_subsets(wd.path("select", f"{p}.json"))
        tcfg = TrainConfig(
            epochs=tc.epochs, learning_rate=tc.learning_rate, batch_size=tc.batch_size, seed=wd.cfg.seed
        )
        manifest = {
            "profile": p,
            "n_examples": int(len(ex)),
            "n_available": int(n_all),
            "hidden": tc.hidden,
            "surrogate_in_selection": wd.cfg.select.enabled,
            "surrogate_hidden": wd.cfg.select.surrogate_hidden,
            "surrogate_epochs": wd.cfg.select.surrogate_epochs,
        }
        model = pipeline.train_profile(ex, subsets, tcfg, hidden=tc.hidden, manifest=manifest)
        model.save(wd.path("models", f"{p}.json"))
        print(f"trained {p} on {len(ex)} of {n_all} examples")


def cmd_eval_cluster(wd: Workdir) -> None:
    out = {}
    for src, dst in wd.combos():
        rep = pipeline.run_ceiling_clustering(wd.sequences(dst, "test"), *wd.configs(src))
        out[f"{src},{dst}"] = rep.to_dict()
        print(f"A_{src},{dst}: v1 {rep.v1:.4f}")
    write_json(wd.path("reports", "clustering.json"), out)


def cmd_eval_class(wd: Workdir) -> None:
    out = {}
    models = {p: wd.model(p) for p in wd.cfg.profiles}
    for src, dst in wd.combos():
        rep = pipeline.run_ceiling_classification(wd.sequences(dst, "test"), models[src], *wd.configs(src))
        out[f"{src},{dst}"] = rep.to_dict()
        print(f"C_{src},{dst}: macro F1 {rep.macro_f1:.4f}")
    write_json(wd.path("reports", "classification.json"), out)


def cmd_eval_pipeline(wd: Workdir) -> None:
    out = {}
    models = {p: wd.model(p) for p in wd.cfg.profiles}
    for src, dst in wd.combos():
        fcfg, ccfg = wd.configs(src)
        rep = pipeline.run_combined(wd.sequences(dst, "test"), fcfg, ccfg, models[src])
        out[f"{src},{dst}"] = rep.to_dict()
        print(f"M_{src},{dst}: point F1 {rep.point_f1:.4f} instance F1 {rep.instance_f1:.4f} TPR {rep.tpr_vru:.4f}")
    write_json(wd.path("reports", "combined.json"), out)


def _jaccard(a: list[int], b: list[int]) -> float:
    sa, sb = set(a), set(b)
    return len(sa & sb) / len(sa | sb) if sa | sb else 1.0


def summarize(reports: dict, subsets: dict) -> dict:
    """Profile orderings, per-pair cross-profile degradation and subset overlap."""
    summary: dict = {}
    clu, cls, comb = reports["clustering"], reports["classification"], reports["combined"]
    if "A,A" in clu and "B,B" in clu:
        summary["delta_B_minus_A"] = {
            "v1": clu["B,B"]["v1"] - clu["A,A"]["v1"],
            "macro_f1": cls["B,B"]["macro_f1"] - cls["A,A"]["macro_f1"],
            "instance_f1": comb["B,B"]["instance_f1"] - comb["A,A"]["instance_f1"],
            "tpr_vru": comb["B,B"]["tpr_vru"] - comb["A,A"]["tpr_vru"],
        }
        degr = {}
        for metric, section, key in (
            ("v1", clu, "per_sequence_v1"),
            ("macro_f1", cls, "per_sequence_macro_f1"),
        ):
            for src, dst in (("A", "B"), ("B", "A")):
                matched = section[f"{dst},{dst}"]["extra"][key]
                cross = section[f"{src},{dst}"]["extra"][key]
                pairs = sorted(matched)
                worse = [s for s in pairs if cross[s] < matched[s]]
                degr[f"{metric} {src}->{dst}"] = {
                    "pairs": len(pairs),
                    "degraded": len(worse),
                    "share": len(worse) / len(pairs) if pairs else 0.0,
                }
        summary["cross_profile_degradation"] = degr
    if len(subsets) == 2:
        a, b = (subsets[k] for k in sorted(subsets))
        summary["subset_jaccard"] = {t: _jaccard(a[t], b[t]) for t in sorted(a) if t in b}
    return summary


def cmd_report(wd: Workdir) -> None:
    reports = {
        "clustering": read_json(wd.path("reports", "clustering.json")),
        "classification": read_json(wd.path("reports", "classification.json")),
        "combined": read_json(wd.path("reports", "combined.json")),
    }
    subsets = {}
    for p in wd.cfg.profiles:
        sp = wd.path("select", f"{p}.json")
        if sp.exists():
            subsets[p] = {t: s.kept for t, s in load_subsets(sp).items()}
    table = render_table(reports)
    summary = summarize(reports, subsets)
    if "subset_jaccard" in summary:
        table += "\nFeature subset overlap A vs B (Jaccard)\n"
        table += "".join(f"  {t:<4s} {100 * v:6.2f}%\n" for t, v in summary["subset_jaccard"].items())
    wd.path("reports", "table.txt").write_text(table, encoding="utf-8")
    write_json(wd.path("reports", "summary.json"), summary)
    sys.stdout.write(table)


COMMANDS = {
    "generate": cmd_generate,
    "tune": cmd_tune,
    "features": cmd_features,
    "select": cmd_select,
    "train": cmd_train,
    "eval-cluster": cmd_eval_cluster,
    "eval-class": cmd_eval_class,
    "eval-pipeline": cmd_eval_pipeline,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radardet", description="radar VRU detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="run configuration (.json or .toml)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    unknown = [p for p in cfg.profiles if p not in PROFILES]
    if unknown:
        raise SystemExit(f"unknown sensor profiles {unknown}")
    COMMANDS[args.command](Workdir(cfg))
    return 0


if __name__ == "__main__":
    sys.exit(main())
