"""Helpers that drive the command-line tool on a tiny configuration."""

import contextlib
import io
import json
from pathlib import Path

from radardet.cli import COMMANDS, main

TINY = {
    "seed": 3,
    "profiles": ["A", "B"],
    "benchmark": {"n_scripts": 5, "duration": 3.0, "test_fraction": 0.25, "split_trials": 50},
    "tune": {"budget": 10, "max_sequences": 2},
    "select": {"surrogate_hidden": 4, "surrogate_epochs": 1, "max_examples": 80, "ranking_examples": 80},
    "train": {"epochs": 1, "hidden": 4, "batch_size": 32},
}


def write_config(root: Path, workdir: str = "run", **overrides) -> Path:
    cfg = {**TINY, **overrides, "workdir": workdir}
    path = root / f"{workdir}.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def run_all(config: Path, extra: list[str] | None = None) -> dict[str, str]:
    """Run every command in pipeline order; return each command's stdout."""
    out = {}
    for name in COMMANDS:
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            assert main([name, str(config), *(extra or [])]) == 0
        out[name] = buf.getvalue()
    return out


def snapshot(workdir: Path) -> dict[str, bytes]:
    return {str(p.relative_to(workdir)): p.read_bytes() for p in sorted(workdir.rglob("*")) if p.is_file()}
