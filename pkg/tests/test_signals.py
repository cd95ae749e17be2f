from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kitrecover.errors import InvalidInput, NoOverlap
from kitrecover.signals import (
    FEATURE_NAMES,
    MODALITIES,
    N_TAXELS,
    MultimodalSample,
    Trial,
    align,
    apply_scaling,
    extract_features,
    fit_scaling,
    read_trial_file,
    resample,
    write_features,
    write_trial,
)


def make_trial(t, value=0.0, rng=None, rate=None) -> Trial:
    t = np.asarray(t, dtype=float)
    n = t.size
    cols = {}
    for name, width in MODALITIES.items():
        cols[name] = np.full((n, width), value) if rng is None else rng.normal(size=(n, width))
    cols["pose"][:, 3:] = [0.0, 0.0, 0.0, 1.0]
    return Trial("s", t, rate_hz=rate, **cols)


def test_feature_layout():
    assert len(FEATURE_NAMES) == 12 + 4 + 1 == 17


def test_sample_validation():
    good = MultimodalSample(0.0, np.zeros(6), np.zeros(6), np.r_[0, 0, 0, 0, 0, 0, 1.0], np.zeros(28), np.zeros(28))
    good.validate()
    bad = MultimodalSample(0.0, np.zeros(6), np.zeros(6), np.r_[0, 0, 0, 0, 0, 0, 1.1], np.zeros(28), np.zeros(28))
    with pytest.raises(InvalidInput):
        bad.validate()
    nan = MultimodalSample(np.nan, np.zeros(6), np.zeros(6), good.pose, np.zeros(28), np.zeros(28))
    with pytest.raises(InvalidInput):
        nan.validate()


def test_trial_invariants():
    with pytest.raises(InvalidInput):
        make_trial([])
    with pytest.raises(InvalidInput):
        make_trial([0.0, 0.1, 0.1])


def test_resample_constant_and_grid():
    t = np.arange(2001) / 1000.0
    tr = make_trial(t, value=3.5)
    out = resample(tr, 50.0)
    assert len(out) == 101
    np.testing.assert_allclose(np.diff(out.t), 0.02, atol=1e-12)
    assert np.all(out.wrench == 3.5) and np.all(out.taxels_right == 3.5)


def test_resample_midpoint():
    tr = make_trial([0.0, 0.1])
    tr.wrench[:, 0] = [0.0, 0.1]
    out = resample(tr, 20.0)
    np.testing.assert_allclose(out.t, [0.0, 0.05, 0.1])
    assert out.wrench[1, 0] == pytest.approx(0.05, abs=1e-15)


def test_resample_rejects_bad_rate():
    with pytest.raises(InvalidInput):
        resample(make_trial([0.0, 1.0]), 0.0)


@given(st.integers(0, 10_000), st.sampled_from([10.0, 25.0, 50.0]))
def test_resample_idempotent(seed, rate):
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(0.001, 0.05, size=40))
    once = resample(make_trial(t, rng=rng), rate)
    twice = resample(once, rate)
    np.testing.assert_allclose(twice.raw_matrix(), once.raw_matrix(), atol=1e-12)
    np.testing.assert_allclose(twice.t, once.t, atol=1e-12)


def _streams(spans, rates, rng):
    out = {}
    for (name, width), (a, b), r in zip(MODALITIES.items(), spans, rates):
        ts = np.arange(int(round((b - a) * r)) + 1) / r + a
        vals = rng.normal(size=(ts.size, width))
        if name == "pose":
            vals[:, 3:] = [0.0, 0.0, 0.0, 1.0]
        out[name] = (ts, vals)
    return out


def test_align_identity_grid():
    rng = np.random.default_rng(0)
    streams = _streams([(0, 1)] * 5, [50] * 5, rng)
    tr = align(streams, 50.0)
    np.testing.assert_allclose(tr.t, streams["wrench"][0], atol=1e-12)
    for name in MODALITIES:
        np.testing.assert_allclose(getattr(tr, name), streams[name][1], atol=1e-12)


def test_align_mixed_rates_matches_offline_interpolation():
    rng = np.random.default_rng(1)
    streams = _streams([(0, 2), (0, 2), (0.05, 1.95), (0, 2), (0, 2)], [1000, 1000, 100, 200, 200], rng)
    tr = align(streams, 50.0)
    assert tr.t[0] == pytest.approx(0.05) and tr.t[-1] <= 1.95 + 1e-12
    ts, vals = streams["pose"]
    for j in range(3):
        np.testing.assert_allclose(tr.pose[:, j], np.interp(tr.t, ts, vals[:, j]), atol=1e-12)
    ts, vals = streams["wrench"]
    np.testing.assert_allclose(tr.wrench[:, 2], np.interp(tr.t, ts, vals[:, 2]), atol=1e-12)


def test_align_disjoint_and_missing():
    rng = np.random.default_rng(2)
    streams = _streams([(0, 1), (2, 3), (0, 3), (0, 3), (0, 3)], [50] * 5, rng)
    with pytest.raises(NoOverlap):
        align(streams)
    streams.pop("twist")
    with pytest.raises(InvalidInput):
        align(streams)


def test_scaling_examples():
    prof = fit_scaling([np.array([[20.0, 0.0], [-5.0, 0.0]])])
    assert prof.zero_dims == (1,)
    np.testing.assert_allclose(apply_scaling(prof, np.array([[10.0, 0.3]])), [[0.5, 0.3]])
    with pytest.raises(InvalidInput):
        fit_scaling([])


@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_scaling_own_training_set(x):
    prof = fit_scaling([x])
    y = apply_scaling(prof, x)
    m = np.abs(y).max(axis=0)
    assert np.all(m <= 1.0 + 1e-12)
    nz = prof.max_abs > 0
    np.testing.assert_allclose(m[nz], 1.0)


def test_features_norm_and_zero_std():
    tr = make_trial(np.arange(20) / 50.0, rate=50.0)
    tr.wrench[:, :3] = [3.0, 4.0, 0.0]
    f = extract_features(tr)
    assert f.shape == (20, 17)
    np.testing.assert_allclose(f[:, 12], 5.0)
    np.testing.assert_allclose(f[:, 16], 0.0)


def test_features_taxel_std_is_trailing_max():
    rng = np.random.default_rng(3)
    tr = make_trial(np.arange(30) / 50.0, rng=rng, rate=50.0)
    f = extract_features(tr, std_window=0.1)
    taxels = np.hstack([tr.taxels_left, tr.taxels_right])
    for i in (0, 3, 4, 17, 29):
        lo = max(0, i - 4)
        assert f[i, 16] == pytest.approx(taxels[lo : i + 1].std(axis=0).max(), abs=1e-12)


def test_features_window_too_short():
    with pytest.raises(InvalidInput):
        extract_features(make_trial(np.arange(5) / 50.0, rate=50.0), std_window=0.01)


@given(st.integers(0, 1000), st.integers(1, 60))
def test_features_length_and_finite(seed, n):
    tr = make_trial(np.arange(n) / 50.0, rng=np.random.default_rng(seed), rate=50.0)
    f = extract_features(tr)
    assert f.shape == (n, 17) and np.all(np.isfinite(f))


def test_trial_file_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    tr = make_trial(np.arange(12) / 50.0, rng=rng, rate=50.0)
    write_trial(tmp_path / "raw.csv", tr)
    back = read_trial_file(tmp_path / "raw.csv")
    assert isinstance(back, Trial)
    np.testing.assert_array_equal(back.raw_matrix(), tr.raw_matrix())
    feats = extract_features(tr)
    write_features(tmp_path / "f.csv", tr.t, feats)
    t, f = read_trial_file(tmp_path / "f.csv")
    np.testing.assert_array_equal(f, feats)
    np.testing.assert_array_equal(t, tr.t)
    assert N_TAXELS == 28
