import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radardet.core import ClassLabel, Sequence
from radardet.features import (
    CATALOG,
    GROUPS,
    ClusterSample,
    extract,
    extract_all,
    load_feature_matrix,
    majority_class,
    sample_clusters,
    save_feature_matrix,
)

NAMES = CATALOG.names


def f(vec, name):
    return vec[NAMES.index(name)]


def sample_from_xy(xy, vr=None, amp=None):
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    vr = np.ones(n) if vr is None else np.asarray(vr, dtype=float)
    amp = np.zeros(n) if amp is None else np.asarray(amp, dtype=float)
    return ClusterSample(
        index=np.arange(n),
        x=xy[:, 0],
        y=xy[:, 1],
        r=np.hypot(xy[:, 0], xy[:, 1]),
        phi=np.arctan2(xy[:, 1], xy[:, 0]),
        vr=vr,
        amp=amp,
        t=np.zeros(n),
        t_start=0.0,
        t_end=0.15,
        source_cluster=1,
    )


def seq_from(t, gt_class=None):
    n = len(t)
    return Sequence(
        id="s",
        t=np.asarray(t, dtype=float),
        r=np.full(n, 10.0),
        phi=np.zeros(n),
        vr=np.ones(n),
        amp=np.zeros(n),
        sensor_id=np.zeros(n, int),
        gt_instance=np.full(n, -1),
        gt_class=np.full(n, 2) if gt_class is None else np.asarray(gt_class),
    )


def test_catalog_shape():
    assert len(CATALOG) == 52
    assert len(set(NAMES)) == 52
    for g in GROUPS:
        assert CATALOG.indices(g)


def test_cluster_spanning_031_s_gives_three_samples():
    seq = seq_from([0.0, 0.1, 0.2, 0.31])
    out = sample_clusters(np.array([1, 1, 1, 1]), seq)
    assert len(out) == 3
    assert [s.t_start for s in out] == pytest.approx([0.0, 0.15, 0.30])
    assert [len(s) for s in out] == [2, 1, 1]


def test_cluster_inside_one_bin():
    seq = seq_from([0.0, 0.05, 0.1])
    assert len(sample_clusters(np.array([4, 4, 4]), seq)) == 1


def test_empty_bins_dropped_and_noise_ignored():
    seq = seq_from([0.0, 0.1, 0.5, 0.55, 0.6])
    out = sample_clusters(np.array([1, -1, 1, 2, 2]), seq)
    assert [(s.source_cluster, len(s)) for s in out] == [(1, 1), (1, 1), (2, 2)]
    for s in out:
        assert np.all((s.t >= s.t_start - 1e-12) & (s.t < s.t_end))


def test_majority_class_vote():
    gt = [0] * 6 + [2] * 4
    seq = seq_from(np.linspace(0, 0.1, 10), gt)
    (s,) = sample_clusters(np.ones(10, int), seq)
    assert s.gt_class == ClassLabel.PEDESTRIAN
    assert majority_class(np.array([0, 0, 2, 2])) == ClassLabel.STATIC
    assert majority_class(np.array([0, 1])) == ClassLabel.PEDESTRIAN


def test_single_point_degenerate():
    v = extract(sample_from_xy([[3.0, 4.0]], vr=[2.0]))
    for u in ("r", "phi", "amp", "vr"):
        assert f(v, f"{u}_spread") == 0 and f(v, f"{u}_std") == 0
    assert f(v, "hull_area") == 0 and f(v, "circularity") == 1
    hist = [f(v, f"vr_hist_{k}") for k in range(8)]
    assert sorted(hist) == [0] * 7 + [1]


def test_unit_square_geometry():
    v = extract(sample_from_xy([[10, 0], [11, 0], [11, 1], [10, 1]]))
    assert f(v, "hull_area") == pytest.approx(1.0, abs=1e-12)
    assert f(v, "hull_perimeter") == pytest.approx(4.0, abs=1e-12)
    assert f(v, "circularity") == pytest.approx(math.pi / 4, abs=1e-12)
    assert round(f(v, "circularity"), 4) == 0.7854
    assert f(v, "x_spread") == 1 and f(v, "y_spread") == 1
    assert f(v, "mean_pair_dist") == pytest.approx((4 + 2 * math.sqrt(2)) / 6, abs=1e-12)


def test_rectangle_box_dims():
    v = extract(sample_from_xy([[10, 0], [12, 0], [12, 1], [10, 1]]))
    assert f(v, "box_length") == pytest.approx(2.0, abs=1e-12)
    assert f(v, "box_width") == pytest.approx(1.0, abs=1e-12)
    assert f(v, "box_aspect") == pytest.approx(0.5, abs=1e-12)


def test_vr_stats():
    v = extract(sample_from_xy([[10, 0], [11, 0], [12, 1]], vr=[1, 2, 3]))
    assert f(v, "vr_spread") == 2
    assert f(v, "vr_std") == pytest.approx(math.sqrt(2 / 3), abs=1e-12)
    assert round(f(v, "vr_std"), 4) == 0.8165
    assert f(v, "vr_mean") == 2 and f(v, "vr_median") == 2 and f(v, "vr_skew") == 0
    assert f(v, "vr_mad") == pytest.approx(2 / 3, abs=1e-12)


def test_collinear_points():
    v = extract(sample_from_xy([[10, 0], [11, 0], [13, 0]]))
    assert f(v, "hull_area") == 0
    assert f(v, "hull_perimeter") == pytest.approx(6.0, abs=1e-12)
    assert f(v, "circularity") == 0


def test_translation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        xy = rng.normal(0, 1, (12, 2)) + [20, 5]
        vr = rng.normal(0, 1, 12)
        a = extract(sample_from_xy(xy, vr))
        b = extract(sample_from_xy(xy + rng.uniform(-5, 5, 2), vr))
        geo = CATALOG.indices("geometric")
        np.testing.assert_allclose(a[geo], b[geo], rtol=1e-9, atol=1e-9)
        for name in ("r_mean", "phi_mean"):
            assert f(a, name) != f(b, name)


def test_order_independence_and_finiteness():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3, 7, 30):
        xy = rng.normal(0, 1, (n, 2)) + [15, 0]
        vr = rng.normal(0, 1, n)
        amp = rng.normal(0, 3, n)
        a = extract(sample_from_xy(xy, vr, amp))
        p = rng.permutation(n)
        b = extract(sample_from_xy(xy[p], vr[p], amp[p]))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (52,) and np.all(np.isfinite(a))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(1, 50), st.floats(-20, 20), st.floats(-10, 10), st.floats(-30, 30)),
        min_size=1,
        max_size=20,
    )
)
def test_always_finite(rows):
    a = np.array(rows)
    v = extract(sample_from_xy(a[:, :2], a[:, 2], a[:, 3]))
    assert v.shape == (52,) and np.all(np.isfinite(v))


def test_empty_sample_rejected():
    with pytest.raises(ValueError):
        extract(sample_from_xy(np.zeros((0, 2))))


def test_feature_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(5, 52))
    ids = [f"s|1|{k}" for k in range(5)]
    labels = [ClassLabel.PEDESTRIAN, None, ClassLabel.STATIC, ClassLabel.BICYCLE, None]
    p = tmp_path / "f.csv"
    save_feature_matrix(p, X, ids, labels)
    header = p.read_text().splitlines()[0].split(",")
    assert header[:2] == ["sample_id", "gt_class"] and header[2:] == NAMES
    X2, ids2, labels2 = load_feature_matrix(p)
    np.testing.assert_array_equal(X, X2)
    assert ids2 == ids and labels2 == labels
    assert extract_all([]).shape == (0, 52)
