"""Data model, coordinate transforms, dataset CSV I/O and sequence splitting."""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

CSV_COLUMNS = (
    "seq_id",
    "t_s",
    "r_m",
    "phi_deg",
    "vr_mps",
    "amp_db",
    "sensor_id",
    "gt_instance",
    "gt_class",
)


class InputError(ValueError):
    """Rejected input (non-finite values, malformed rows, unknown labels)."""


class ClassLabel(enum.IntEnum):
    PEDESTRIAN = 0
    BICYCLE = 1
    STATIC = 2

    @property
    def code(self) -> str:
        return _CLASS_CODES[self]

    @property
    def tag(self) -> str:
        return "PBS"[self]

    @classmethod
    def from_code(cls, code: str) -> "ClassLabel":
        try:
            return _CODE_TO_CLASS[code]
        except KeyError:
            raise InputError(f"unknown class string {code!r}") from None


_CLASS_CODES = {
    ClassLabel.PEDESTRIAN: "ped",
    ClassLabel.BICYCLE: "bike",
    ClassLabel.STATIC: "static",
}
_CODE_TO_CLASS = {v: k for k, v in _CLASS_CODES.items()}

K = len(ClassLabel)
VRU_CLASSES = (ClassLabel.PEDESTRIAN, ClassLabel.BICYCLE)
NO_INSTANCE = -1


def _check_finite(**values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise InputError(f"non-finite field {name}={v!r}")


@dataclass(frozen=True)
class Detection:
    t: float
    r: float
    phi: float  # radians
    vr: float
    amp: float
    sensor_id: int = 0
    gt_instance: int | None = None
    gt_class: ClassLabel | None = None


@dataclass(frozen=True)
class CartesianDetection(Detection):
    x: float = 0.0
    y: float = 0.0


def to_cartesian(d: Detection) -> CartesianDetection:
    _check_finite(t=d.t, r=d.r, phi=d.phi, vr=d.vr, amp=d.amp)
    if d.r <= 0:
        raise InputError(f"range must be positive, got {d.r}")
    return CartesianDetection(
        t=d.t,
        r=d.r,
        phi=d.phi,
        vr=d.vr,
        amp=d.amp,
        sensor_id=d.sensor_id,
        gt_instance=d.gt_instance,
        gt_class=d.gt_class,
        x=d.r * math.cos(d.phi),
        y=d.r * math.sin(d.phi),
    )


@dataclass
class Sequence:
    """One recorded sequence stored column-wise.

    ``gt_instance`` uses -1 for background and ``gt_class`` holds
    ``ClassLabel`` integer codes (background is ``STATIC``).
    """

    id: str
    t: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    vr: np.ndarray
    amp: np.ndarray
    sensor_id: np.ndarray
    gt_instance: np.ndarray
    gt_class: np.ndarray
    sensor_profile_id: str = ""
    duration: float | None = None
    _xy: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.vr = np.asarray(self.vr, dtype=float)
        self.amp = np.asarray(self.amp, dtype=float)
        self.sensor_id = np.asarray(self.sensor_id, dtype=int)
        self.gt_instance = np.asarray(self.gt_instance, dtype=int)
        self.gt_class = np.asarray(self.gt_class, dtype=int)
        n = len(self.t)
        for name in ("r", "phi", "vr", "amp", "sensor_id", "gt_instance", "gt_class"):
            if len(getattr(self, name)) != n:
                raise InputError(f"column {name} has wrong length")
        if n and np.any(np.diff(self.t) < 0):
            raise InputError(f"sequence {self.id}: detections not sorted by t")
        if self.duration is None:
            self.duration = float(self.t[-1] - self.t[0]) if n else 0.0
        _check_instance_classes(self.id, self.gt_instance, self.gt_class)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def x(self) -> np.ndarray:
        return self._cartesian()[0]

    @property
    def y(self) -> np.ndarray:
        return self._cartesian()[1]

    def _cartesian(self) -> tuple[np.ndarray, np.ndarray]:
        if self._xy is None:
            self._xy = (self.r * np.cos(self.phi), self.r * np.sin(self.phi))
        return self._xy

    @property
    def detections(self) -> list[Detection]:
        return [self.detection(i) for i in range(len(self))]

    def detection(self, i: int) -> Detection:
        inst = int(self.gt_instance[i])
        return Detection(
            t=float(self.t[i]),
            r=float(self.r[i]),
            phi=float(self.phi[i]),
            vr=float(self.vr[i]),
            amp=float(self.amp[i]),
            sensor_id=int(self.sensor_id[i]),
            gt_instance=None if inst == NO_INSTANCE else inst,
            gt_class=ClassLabel(int(self.gt_class[i])),
        )

    def cartesian(self) -> list[CartesianDetection]:
        return [to_cartesian(d) for d in self.detections]

    def subset(self, mask: np.ndarray) -> "Sequence":
        return Sequence(
            id=self.id,
            t=self.t[mask],
            r=self.r[mask],
            phi=self.phi[mask],
            vr=self.vr[mask],
            amp=self.amp[mask],
            sensor_id=self.sensor_id[mask],
            gt_instance=self.gt_instance[mask],
            gt_class=self.gt_class[mask],
            sensor_profile_id=self.sensor_profile_id,
            duration=self.duration,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.gt_class, minlength=K)

    @classmethod
    def from_detections(
        cls, seq_id: str, detections: Iterable[Detection], sensor_profile_id: str = ""
    ) -> "Sequence":
        dets = sorted(detections, key=lambda d: d.t)
        return cls(
            id=seq_id,
            t=[d.t for d in dets],
            r=[d.r for d in dets],
            phi=[d.phi for d in dets],
            vr=[d.vr for d in dets],
            amp=[d.amp for d in dets],
            sensor_id=[d.sensor_id for d in dets],
            gt_instance=[NO_INSTANCE if d.gt_instance is None else d.gt_instance for d in dets],
            gt_class=[
                ClassLabel.STATIC if d.gt_class is None else d.gt_class for d in dets
            ],
            sensor_profile_id=sensor_profile_id,
        )


def _check_instance_classes(seq_id: str, inst: np.ndarray, cls: np.ndarray) -> None:
    labeled = inst != NO_INSTANCE
    if not labeled.any():
        return
    pairs = np.unique(np.stack([inst[labeled], cls[labeled]], axis=1), axis=0)
    ids, counts = np.unique(pairs[:, 0], return_counts=True)
    if np.any(counts > 1):
        raise InputError(
            f"sequence {seq_id}: instance {ids[counts > 1][0]} maps to several classes"
        )


def _parse_row(row: list[str], lineno: int) -> tuple:
    if len(row) != len(CSV_COLUMNS):
        raise InputError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
    try:
        seq_id = row[0]
        t, r, phi_deg, vr, amp = (float(v) for v in row[1:6])
        sensor_id = int(row[6])
        inst = NO_INSTANCE if row[7].strip() == "" else int(row[7])
    except ValueError as exc:
        raise InputError(f"line {lineno}: {exc}") from None
    for name, v in (("t_s", t), ("r_m", r), ("phi_deg", phi_deg), ("vr_mps", vr), ("amp_db", amp)):
        if not math.isfinite(v):
            raise InputError(f"line {lineno}: non-finite {name}")
    if r <= 0:
        raise InputError(f"line {lineno}: r_m must be positive")
    try:
        label = ClassLabel.from_code(row[8].strip())
    except InputError as exc:
        raise InputError(f"line {lineno}: {exc}") from None
    return seq_id, t, r, math.radians(phi_deg), vr, amp, sensor_id, inst, int(label)


def load_dataset(path: str | Path, sensor_profile_id: str = "") -> list[Sequence]:
    """Read the detection CSV; one ``Sequence`` per distinct ``seq_id``.

    Sequences keep the order of first appearance. Rows that are out of
    time order inside a sequence are stably re-sorted with a warning.
    """
    rows: dict[str, list[tuple]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise InputError(f"line 1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            parsed = _parse_row(row, lineno)
            rows.setdefault(parsed[0], []).append(parsed)

    seqs = []
    for seq_id, items in rows.items():
        cols = list(zip(*items))
        t = np.array(cols[1])
        order = np.argsort(t, kind="stable")
        if np.any(np.diff(t) < 0):
            warnings.warn(f"sequence {seq_id}: timestamps out of order, re-sorted", stacklevel=2)
        seqs.append(
            Sequence(
                id=seq_id,
                t=t[order],
                r=np.array(cols[2])[order],
                phi=np.array(cols[3])[order],
                vr=np.array(cols[4])[order],
                amp=np.array(cols[5])[order],
                sensor_id=np.array(cols[6])[order],
                gt_instance=np.array(cols[7])[order],
                gt_class=np.array(cols[8])[order],
                sensor_profile_id=sensor_profile_id,
            )
        )
    return seqs


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def save_dataset(seqs: Iterable[Sequence], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s in seqs:
            phi_deg = np.degrees(s.phi)
            for i in range(len(s)):
                inst = int(s.gt_instance[i])
                writer.writerow(
                    [
                        s.id,
                        _fmt(s.t[i]),
                        _fmt(s.r[i]),
                        _fmt(phi_deg[i]),
                        _fmt(s.vr[i]),
                        _fmt(s.amp[i]),
                        int(s.sensor_id[i]),
                        "" if inst == NO_INSTANCE else inst,
                        ClassLabel(int(s.gt_class[i])).code,
                    ]
                )


def split_sequences(
    seqs: list[Sequence],
    test_fraction: float = 0.2,
    trials: int = 10000,
    rng_seed: int = 0,
) -> tuple[list[Sequence], list[Sequence]]:
    """Sequence-level train/test split with class proportions close to the full set.

    Each trial draws a random permutation and takes the prefix whose
    detection share is closest to ``test_fraction``. Candidates whose
    share deviates more than 20 % (relative) from the request are
    discarded; of the rest, the one with the smallest L1 distance between
    test and full per-class detection proportions wins (first found on
    ties).
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not seqs:
        return [], []
    counts = np.array([s.class_counts() for s in seqs], dtype=float)
    sizes = counts.sum(axis=1)
    total = sizes.sum()
    full_prop = counts.sum(axis=0) / total
    rng = np.random.default_rng(rng_seed)

    best: tuple[float, np.ndarray] | None = None
    for _ in range(trials):
        perm = rng.permutation(len(seqs))
        share = np.cumsum(sizes[perm]) / total
        m = int(np.argmin(np.abs(share - test_fraction))) + 1
        if m >= len(seqs):
            continue
        frac = share[m - 1]
        if abs(frac - test_fraction) > 0.2 * test_fraction:
            continue
        test_idx = perm[:m]
        tc = counts[test_idx].sum(axis=0)
        dist = float(np.abs(tc / tc.sum() - full_prop).sum())
        if best is None or dist < best[0]:
            best = (dist, np.sort(test_idx))
    if best is None:
        raise ValueError(
            "no candidate split satisfies the test-size window; increase trials"
        )
    test_set = set(best[1].tolist())
    train = [s for i, s in enumerate(seqs) if i not in test_set]
    test = [s for i, s in enumerate(seqs) if i in test_set]
    return train, test


__all__ = [
    "CSV_COLUMNS",
    "CartesianDetection",
    "ClassLabel",
    "Detection",
    "InputError",
    "K",
    "NO_INSTANCE",
    "Sequence",
    "VRU_CLASSES",
    "load_dataset",
    "save_dataset",
    "split_sequences",
    "to_cartesian",
]
