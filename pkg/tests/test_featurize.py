import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from posm import featurize as fz

XY = fz.FeatureConfig(("X", "Y"))
XYT = fz.FeatureConfig(("X", "Y", "T"))
DELTAS = fz.FeatureConfig(("DX", "DY", "DT"))


def test_feature_order_is_canonical():
    assert fz.FeatureConfig(("DT", "y", "X")).features == ("X", "Y", "DT")


@pytest.mark.parametrize("bad", [(), ("X", "X"), ("Z",)])
def test_bad_feature_sets(bad):
    with pytest.raises(ValueError):
        fz.FeatureConfig(bad)


def test_delta_features_example():
    pts = np.array([[0, 0, 0], [2, 1, 10], [5, 3, 25.0]])
    np.testing.assert_array_equal(fz.derive_features(pts, DELTAS), [[0, 0, 0], [2, 1, 10], [3, 2, 15]])


def test_xy_is_identity_copy(rng):
    pts = rng.normal(size=(17, 3))
    np.testing.assert_array_equal(fz.derive_features(pts, XY), pts[:, :2])


def test_xyt_matches_pointwise_loop(rng):
    pts = np.cumsum(rng.uniform(0, 5, size=(100, 3)), axis=0)
    out = fz.derive_features(pts, XYT)
    for i in range(100):
        for j in range(3):
            assert out[i, j] == pts[i, j]


def test_delta_needs_two_points():
    with pytest.raises(ValueError, match="at least 2"):
        fz.derive_features(np.zeros((1, 3)), DELTAS)
    with pytest.raises(ValueError, match="empty"):
        fz.derive_features(np.zeros((0, 3)), XY)


@pytest.mark.parametrize("L,w,s,n", [(8, 6, 1, 3), (6, 6, 4, 1), (100, 32, 4, 18)])
def test_window_counts(L, w, s, n):
    wins = fz.make_windows(np.arange(L)[:, None], fz.WindowingConfig(w, s))
    assert len(wins) == n
    for k, win in enumerate(wins):
        assert win[0, 0] == k * s


def test_too_short_sequence():
    with pytest.raises(fz.SequenceTooShort, match="too short"):
        fz.make_windows(np.zeros((5, 2)), fz.WindowingConfig(6, 1))


def test_shift_cannot_exceed_window():
    with pytest.raises(ValueError):
        fz.WindowingConfig(4, 5)


@given(st.integers(1, 400), st.integers(1, 64), st.data())
def test_window_count_formula(L, w, data):
    s = data.draw(st.integers(1, w))
    cfg = fz.WindowingConfig(w, s)
    enumerated = [k for k in range(L) if k % s == 0 and k + w <= L]
    assert list(fz.window_starts(L, cfg)) == enumerated
    if L >= w:
        assert len(enumerated) == (L - w) // s + 1


def test_normalize_example():
    win = fz.normalize_window(np.array([[3, 4], [5, 6], [7, 8.0]]), XY)
    np.testing.assert_allclose(win.values, [[0, 0], [0.5, 0.5], [1, 1]])


def test_constant_column_maps_to_zero():
    raw = np.column_stack([np.arange(5.0), np.full(5, 3.0)])
    np.testing.assert_array_equal(fz.normalize_window(raw, XY).values[:, 1], 0.0)


def test_non_finite_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        fz.normalize_window(np.array([[0, 0], [np.nan, 1]]), XY)


def test_delta_columns_are_not_origin_shifted():
    raw = np.array([[5.0, 1, 1], [6, 2, 3], [7, 3, 2]])
    shifted = fz.origin_shift(raw, DELTAS)
    np.testing.assert_array_equal(shifted, raw)
    shifted = fz.origin_shift(raw, XYT)
    np.testing.assert_array_equal(shifted[0], 0.0)


finite = st.floats(-1e4, 1e4, allow_nan=False)


@given(arrays(np.float64, (32, 3), elements=finite))
def test_minmax_properties(raw):
    out = fz.normalize_window(raw, XYT).values
    shifted = fz.origin_shift(raw, XYT)
    np.testing.assert_array_equal(shifted[0], 0.0)
    for j in range(3):
        col = shifted[:, j]
        if col.max() - col.min() >= fz.EPS_RANGE:
            assert out[:, j].min() == 0.0
            assert out[:, j].max() == pytest.approx(1.0, abs=1e-12)
        else:
            assert np.all(out[:, j] == 0.0)
    assert np.all((out >= 0) & (out <= 1 + 1e-12))


@given(arrays(np.float64, (16, 3), elements=finite))
def test_normalize_is_idempotent(raw):
    once = fz.normalize_window(raw, XYT).values
    twice = fz.normalize_window(once, XYT).values
    np.testing.assert_allclose(twice, once, atol=1e-12)


@given(arrays(np.int64, (32, 2), elements=st.integers(-10**6, 10**6)),
       st.integers(-10**6, 10**6), st.integers(-10**6, 10**6))
def test_translation_invariance_is_exact_for_device_units(raw, x0, y0):
    a = fz.normalize_window(raw.astype(np.float64), XY).values
    b = fz.normalize_window((raw + [x0, y0]).astype(np.float64), XY).values
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("w,f,blen", [(6, 0.5, 3), (32, 0.3, 10), (10, 0.05, 1), (4, 0.99, 3)])
def test_block_len(w, f, blen):
    assert fz.MaskingConfig(f_mask=f).block_len(w) == blen


def _window(rng, w=32, n=2):
    return fz.Window(rng.uniform(size=(w, n)), ("s", 0))


@given(st.integers(0, 2**31), st.integers(2, 40), st.floats(0.05, 0.95), st.integers(1, 4))
def test_mask_locality(seed, w, f, n_feat):
    rng = np.random.default_rng(seed)
    cfg = fz.MaskingConfig(f_mask=f, m_views=3)
    win = _window(rng, w, n_feat)
    for v in fz.mask_views(win, cfg, rng, (0, 0)):
        rows = np.nonzero(v.mask.any(axis=1))[0]
        if len(rows):
            assert rows.min() >= v.block_start
            assert rows.max() < v.block_start + v.block_len
        assert v.block_len == cfg.block_len(w)
        assert 0 <= v.block_start <= w - v.block_len
        np.testing.assert_array_equal(v.masked_values[~v.mask], win.values[~v.mask])
        assert np.all(v.masked_values[v.mask] == cfg.mask_value)


def test_mask_views_count_target_and_determinism():
    cfg = fz.MaskingConfig()
    win = _window(np.random.default_rng(0))
    a = fz.mask_views(win, cfg, np.random.default_rng(5))
    b = fz.mask_views(win, cfg, np.random.default_rng(5))
    assert len(a) == 3
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.masked_values, y.masked_values)
        np.testing.assert_array_equal(x.target, win.values[:, :2])


def test_cell_rate_monte_carlo():
    cfg = fz.MaskingConfig(m_views=1)
    rng = np.random.default_rng(1)
    win = _window(rng)
    hits = cells = 0
    for _ in range(10_000):
        v = fz.mask_views(win, cfg, rng)[0]
        hits += v.mask.sum()
        cells += v.block_len * 2
    assert abs(hits / cells - 0.75) <= 0.02


def test_strokeset_rng_depends_on_seed_and_id():
    a = fz.strokeset_rng(1, "x").random()
    assert a == fz.strokeset_rng(1, "x").random()
    assert a != fz.strokeset_rng(1, "y").random()
    assert a != fz.strokeset_rng(2, "x").random()


def _seq(L, label=0, sid="s"):
    t = np.arange(L, dtype=np.float64)
    return fz.LabeledSequence(np.column_stack([t, np.sin(t), 10 * t]), label, sid)


def test_exclusive_train_example():
    pairs, rep = fz.build_exclusive_train([_seq(40, 3)], XY, fz.WindowingConfig(32, 4))
    assert len(pairs) == 3 and {y for _, y in pairs} == {3}
    assert rep.n_skipped == 0


def test_exclusive_train_empty_and_skips():
    pairs, rep = fz.build_exclusive_train([], XY, fz.WindowingConfig(32, 4))
    assert pairs == [] and rep.n_skipped == 0
    pairs, rep = fz.build_exclusive_train([_seq(10, sid="short")], XY, fz.WindowingConfig(32, 4))
    assert pairs == [] and rep.skipped == ["short"]


def test_exclusive_labels_follow_sources():
    pairs, _ = fz.build_exclusive_train([_seq(40, 0, "a"), _seq(50, 1, "b")], XY, fz.WindowingConfig(32, 4))
    for w, y in pairs:
        assert y == {"a": 0, "b": 1}[w.source[0]]


def test_drop_crossing_windows():
    s = fz.LabeledSequence(_seq(40).points, 0, "s", np.array([0, 20]))
    pairs, _ = fz.build_exclusive_train([s], XY, fz.WindowingConfig(8, 4))
    kept, _ = fz.build_exclusive_train([s], XY, fz.WindowingConfig(8, 4), drop_crossing=True)
    assert [w.source[1] for w, _ in kept] == [k for k in range(0, 33, 4) if not (k < 20 < k + 8)]
    assert len(kept) < len(pairs)


def test_test_arrays_examples():
    arrays_, _ = fz.build_test_arrays([_seq(8, 1)], XY, fz.WindowingConfig(6, 1))
    assert len(arrays_) == 1 and len(arrays_[0][0]) == 3 and arrays_[0][1] == 1
    arrays_, _ = fz.build_test_arrays([_seq(6)], XY, fz.WindowingConfig(6, 4))
    assert len(arrays_[0][0]) == 1


@given(st.integers(32, 300))
def test_smaller_test_shift_never_shortens_arrays(L):
    lengths = [len(fz.build_test_arrays([_seq(L)], XY, fz.WindowingConfig(32, s))[0][0][0])
               for s in range(32, 0, -1)]
    assert lengths == sorted(lengths)


def test_chain_count_example():
    chains, _ = fz.build_inclusive_chains([_seq(70)], 2, XY, fz.WindowingConfig(32, 4))
    assert len(chains) == 2
    chains, _ = fz.build_inclusive_chains([_seq(64)], 2, XY, fz.WindowingConfig(32, 4))
    assert len(chains) == 1


@given(st.integers(1, 250), st.integers(1, 4), st.integers(2, 16), st.data())
def test_chain_structure(L, n, w, data):
    s = data.draw(st.integers(1, w))
    chains, rep = fz.build_inclusive_chains([_seq(L)], n, XY, fz.WindowingConfig(w, s))
    expected = (L - n * w) // s + 1 if L >= n * w else 0
    assert len(chains) == expected
    assert rep.n_skipped == (expected == 0)
    for k, c in enumerate(chains):
        starts = [win.source[1] for win in c.windows]
        assert starts == [k * s + i * w for i in range(n)]
        assert c.values.shape == (n, w, 2)


def test_chain_windows_are_normalized_separately():
    chains, _ = fz.build_inclusive_chains([_seq(64)], 2, XY, fz.WindowingConfig(32, 4))
    for win in chains[0].windows:
        assert win.values[:, 0].min() == 0 and win.values[:, 0].max() == 1
