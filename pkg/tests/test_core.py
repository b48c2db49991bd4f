import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radardet.core import (
    CSV_COLUMNS,
    NO_INSTANCE,
    ClassLabel,
    Detection,
    InputError,
    Sequence,
    load_dataset,
    save_dataset,
    split_sequences,
    to_cartesian,
)


def det(t=0.0, r=1.0, phi=0.0, vr=0.0, amp=0.0, **kw):
    return Detection(t=t, r=r, phi=phi, vr=vr, amp=amp, **kw)


def make_seq(seq_id, n, cls=ClassLabel.STATIC, inst=NO_INSTANCE):
    return Sequence(
        id=seq_id,
        t=np.arange(n) * 0.1,
        r=np.full(n, 10.0),
        phi=np.zeros(n),
        vr=np.zeros(n),
        amp=np.zeros(n),
        sensor_id=np.zeros(n, int),
        gt_instance=np.full(n, inst),
        gt_class=np.full(n, int(cls)),
    )


@pytest.mark.parametrize(
    "r, phi, x, y",
    [(1.0, 0.0, 1.0, 0.0), (2.0, math.pi / 2, 0.0, 2.0), (10.0, 0.3, 9.5534, 2.9552)],
)
def test_to_cartesian_examples(r, phi, x, y):
    c = to_cartesian(det(r=r, phi=phi))
    assert round(c.x, 4) == pytest.approx(x, abs=1e-12)
    assert round(c.y, 4) == pytest.approx(y, abs=1e-12)
    assert c.r == r and c.phi == phi


def test_to_cartesian_rejects_bad_input():
    with pytest.raises(InputError):
        to_cartesian(det(r=float("nan")))
    with pytest.raises(InputError):
        to_cartesian(det(vr=float("inf")))
    with pytest.raises(InputError):
        to_cartesian(det(r=0.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e4), st.floats(-math.pi, math.pi))
def test_to_cartesian_preserves_range(r, phi):
    c = to_cartesian(det(r=r, phi=phi))
    assert abs(math.hypot(c.x, c.y) - r) <= 1e-9 * r


def write_csv(path, rows):
    lines = [",".join(CSV_COLUMNS)] + [",".join(map(str, r)) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def test_load_three_rows(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(
        p,
        [
            ("s", 0.0, 10, 0, 0.5, 1, 0, 1, "ped"),
            ("s", 0.1, 10, 5, 0.5, 1, 0, 1, "ped"),
            ("s", 0.2, 12, -5, 0.0, 1, 0, "", "static"),
        ],
    )
    seqs = load_dataset(p)
    assert len(seqs) == 1 and len(seqs[0]) == 3
    assert seqs[0].phi[1] == pytest.approx(math.radians(5))
    assert seqs[0].gt_instance[2] == NO_INSTANCE
    assert seqs[0].gt_class[2] == ClassLabel.STATIC


def test_load_header_only(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(p, [])
    assert load_dataset(p) == []


def test_load_errors_name_line(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(p, [("s", 0.0, 10, 0, 0, 0, 0, "", "static"), ("s", "x", 10, 0, 0, 0, 0, "", "static")])
    with pytest.raises(InputError, match="line 3"):
        load_dataset(p)
    write_csv(p, [("s", 0.0, 10, 0, 0, 0, 0, "", "truck")])
    with pytest.raises(InputError, match="truck"):
        load_dataset(p)


def test_load_resorts_shuffled_rows(tmp_path):
    rng = np.random.default_rng(0)
    t = np.round(np.sort(rng.uniform(0, 10, 100)), 6)
    t[10] = t[11]  # a tie keeps file order
    rows = [("s", tt, 5 + k, 0, 0, k, 0, "", "static") for k, tt in enumerate(t)]
    perm = rng.permutation(100)
    p = tmp_path / "d.csv"
    write_csv(p, [rows[i] for i in perm])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        seq = load_dataset(p)[0]
    assert any("re-sorted" in str(x.message) for x in w)
    assert np.all(np.diff(seq.t) >= 0)
    # stable: tied rows stay in file order
    tied = [i for i in perm if i in (10, 11)]
    got = seq.amp[np.flatnonzero(seq.t == t[10])]
    assert list(got) == [float(i) for i in tied]


def test_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    n = 50
    s = Sequence(
        id="a",
        t=np.sort(rng.uniform(0, 5, n)),
        r=rng.uniform(1, 100, n),
        phi=rng.uniform(-1, 1, n),
        vr=rng.normal(size=n),
        amp=rng.normal(size=n),
        sensor_id=np.zeros(n, int),
        gt_instance=np.where(rng.random(n) < 0.5, 3, NO_INSTANCE),
        gt_class=np.full(n, 2),
    )
    s.gt_class[s.gt_instance == 3] = ClassLabel.BICYCLE
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_dataset([s], p1)
    save_dataset(load_dataset(p1), p2)
    assert p1.read_text() == p2.read_text()


def test_instance_with_two_classes_rejected():
    s = make_seq("a", 4, ClassLabel.PEDESTRIAN, inst=1)
    with pytest.raises(InputError):
        Sequence(s.id, s.t, s.r, s.phi, s.vr, s.amp, s.sensor_id, s.gt_instance, np.array([0, 0, 1, 0]))


def test_split_identical_sequences():
    seqs = [make_seq(f"s{i}", 10) for i in range(10)]
    train, test = split_sequences(seqs, 0.2, trials=50, rng_seed=3)
    assert len(test) == 2 and len(train) == 8


def test_split_picks_balanced_pair():
    seqs = [make_seq("a1", 100, ClassLabel.PEDESTRIAN, 1), make_seq("a2", 100, ClassLabel.PEDESTRIAN, 1)]
    seqs += [make_seq(f"b{i}", 100, ClassLabel.BICYCLE, 1) for i in range(3)]
    _, test = split_sequences(seqs, 0.4, trials=200, rng_seed=0)
    assert sorted(s.id[0] for s in test) == ["a", "b"]


def test_split_deterministic_and_by_sequence():
    seqs = [make_seq(f"s{i}", 10 + i, ClassLabel(i % 3), inst=NO_INSTANCE if i % 3 == 2 else i) for i in range(12)]
    a = split_sequences(seqs, 0.25, trials=100, rng_seed=7)
    b = split_sequences(seqs, 0.25, trials=100, rng_seed=7)
    assert [s.id for s in a[1]] == [s.id for s in b[1]]
    assert not {s.id for s in a[0]} & {s.id for s in a[1]}


def test_split_impossible_window():
    seqs = [make_seq("big", 1000), make_seq("small", 1)]
    with pytest.raises(ValueError, match="trials"):
        split_sequences(seqs, 0.3, trials=20)
