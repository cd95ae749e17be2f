from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kitrecover.bnp_hmm import HmmModel, Hyperparams, fit, forward_gradient
from kitrecover.errors import InvalidInput
from kitrecover.introspect import (
    ClassifierModel,
    Detector,
    IdentificationModel,
    LabeledWindow,
    calibrate,
    classify,
    detect,
    extract_window,
    flag_times,
    per_class_accuracy,
    reactivity_sweep,
    train_classifier,
)

RATE = 50.0


def gauss_model(d=2, sigma=0.1):
    return HmmModel(np.ones(1), np.ones((1, 1)), "gauss", np.zeros((1, d, 1)), sigma**2 * np.eye(d)[None])


def test_threshold_formula():
    idm = IdentificationModel(gauss_model(), 10.0, 45.0)
    assert idm.grad_range == 35.0
    assert idm.threshold == -7.5
    with pytest.raises(InvalidInput):
        IdentificationModel(gauss_model(), 5.0, 1.0)


def test_calibrate_constant_gradient():
    m = HmmModel(np.ones(1), np.ones((1, 1)), "var", np.eye(2)[None], 0.3 * np.eye(2)[None])
    x = np.tile([1.0, 2.0], (20, 1))
    idm = calibrate(m, [x])
    g = forward_gradient(m, x)[0]
    assert idm.grad_range == pytest.approx(0.0, abs=1e-12)
    assert idm.threshold == pytest.approx(g)
    assert flag_times(detect(idm, x)) == []
    with pytest.raises(InvalidInput):
        calibrate(m, [])


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_never_fires_on_calibration_data(seed, n):
    rng = np.random.default_rng(seed)
    m = gauss_model()
    trials = [rng.normal(scale=rng.uniform(0.05, 0.3), size=(int(rng.integers(2, 80)), 2)) for _ in range(n)]
    idm = calibrate(m, trials)
    assert all(flag_times(detect(idm, x)) == [] for x in trials)


def test_flag_at_first_sub_threshold_step():
    rng = np.random.default_rng(1)
    m = gauss_model()
    idm = calibrate(m, [rng.normal(scale=0.1, size=(200, 2)) for _ in range(5)])
    x = rng.normal(scale=0.1, size=(100, 2))
    x[60:66] += 3.0
    flags = flag_times(detect(idm, x))
    g = forward_gradient(m, x)
    first = int(np.flatnonzero(g < idm.threshold)[0])
    assert flags == [first / RATE]
    assert g[first] < -300


def test_debounce_suppresses_burst():
    rng = np.random.default_rng(2)
    m = gauss_model()
    idm = calibrate(m, [rng.normal(scale=0.1, size=(200, 2))])
    x = rng.normal(scale=0.05, size=(150, 2))
    x[50] += 3.0
    x[70] += 3.0  # 0.4 s later
    assert flag_times(detect(idm, x)) == [1.0]
    x[110] += 3.0  # 1.2 s after the first flag
    assert flag_times(detect(idm, x)) == [1.0, 2.2]


@given(st.integers(0, 10_000))
def test_flags_increasing_and_separated(seed):
    rng = np.random.default_rng(seed)
    m = gauss_model()
    idm = calibrate(m, [rng.normal(scale=0.1, size=(100, 2))])
    x = rng.normal(scale=0.05, size=(400, 2))
    hits = rng.choice(400, size=int(rng.integers(0, 40)), replace=False)
    x[hits] += 3.0
    ts = flag_times(detect(idm, x))
    assert all(b - a >= idm.debounce - 1e-9 for a, b in zip(ts, ts[1:]))


def test_detector_streaming_equals_batch():
    rng = np.random.default_rng(3)
    m = gauss_model()
    idm = calibrate(m, [rng.normal(scale=0.1, size=(100, 2))])
    x = rng.normal(scale=0.2, size=(120, 2))
    det = Detector(idm, RATE, t0=5.0)
    streamed = [det.step(row) for row in x]
    batch = detect(idm, x, times=5.0 + np.arange(120) / RATE)
    assert flag_times(streamed) == flag_times(batch)
    with pytest.raises(InvalidInput):
        detect(idm, np.zeros((4, 3)))


def test_identification_model_roundtrip():
    idm = IdentificationModel(gauss_model(), -3.0, 4.0, "2a", 1.0)
    back = IdentificationModel.from_dict(json.loads(json.dumps(idm.to_dict())))
    assert (back.grad_min, back.grad_max, back.node_id, back.debounce) == (-3.0, 4.0, "2a", 1.0)


# ---------------------------------------------------------------- classification

def test_extract_window_truncates():
    X = np.arange(40).reshape(20, 2)
    w = extract_window(X, 3, 0.1, 0.1, rate=50.0)
    np.testing.assert_array_equal(w, X[0:9])
    w = extract_window(X, 18, 0.04, 1.0, rate=50.0)
    np.testing.assert_array_equal(w, X[16:20])


def test_single_class_and_short_window():
    clf = ClassifierModel(("HC",), {"HC": gauss_model()})
    assert classify(clf, np.zeros((5, 2))).label == "HC"
    with pytest.raises(InvalidInput):
        classify(clf, np.zeros((1, 2)))


def test_label_attains_max_and_ties_go_first():
    m = gauss_model()
    clf = ClassifierModel(("OS", "HC"), {"OS": m, "HC": m})
    lab = classify(clf, np.zeros((5, 2)))
    assert lab.label == "OS"
    rng = np.random.default_rng(4)
    clf = ClassifierModel(("A", "B"), {"A": gauss_model(sigma=0.1), "B": gauss_model(sigma=1.0)})
    for _ in range(10):
        w = rng.normal(scale=rng.uniform(0.05, 2.0), size=(10, 2))
        out = classify(clf, w)
        assert out.loglik[out.label] == max(out.loglik.values())
        # argmax unaffected by a common shift of every score
        shifted = {k: v + 123.4 for k, v in out.loglik.items()}
        assert max(shifted, key=shifted.get) == out.label


def test_classifier_invariants():
    with pytest.raises(InvalidInput):
        ClassifierModel(("A", "A"), {"A": gauss_model()})
    with pytest.raises(InvalidInput):
        ClassifierModel(("A",), {"A": gauss_model()}, pre_window=0.0)
    with pytest.raises(InvalidInput):
        ClassifierModel(("A", "B"), {"A": gauss_model()})


def _var_windows(A, n, rng, T=100):
    out = []
    for _ in range(n):
        x = np.zeros((T, 3))
        x[0] = rng.normal(size=3)
        for t in range(1, T):
            x[t] = A @ x[t - 1] + 0.2 * rng.normal(size=3)
        out.append(x)
    return out


def _rot(th):
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


@pytest.fixture(scope="module")
def two_class_setup():
    rng = np.random.default_rng(5)
    A1 = 0.95 * _rot(0.3)
    A2 = np.diag([-0.7, 0.2, 0.9])
    train = {"P": _var_windows(A1, 15, rng), "Q": _var_windows(A2, 15, rng)}
    test = [("P", w) for w in _var_windows(A1, 50, rng)] + [("Q", w) for w in _var_windows(A2, 50, rng)]
    clf = train_classifier(train, Hyperparams(K_trunc=3), seed=0, k_splits=3)
    return clf, test


def test_separated_classes_classified(two_class_setup):
    clf, test = two_class_setup
    pred = [classify(clf, w).label for _, w in test]
    assert per_class_accuracy([t for t, _ in test], pred, ["P", "Q"]) >= 0.95


def test_classifier_roundtrip(two_class_setup):
    clf, test = two_class_setup
    back = ClassifierModel.from_dict(json.loads(json.dumps(clf.to_dict())))
    assert [classify(back, w).label for _, w in test[:10]] == [classify(clf, w).label for _, w in test[:10]]


def test_per_class_accuracy():
    assert per_class_accuracy(["A", "A", "B", "B"], ["A", "B", "B", "B"], ["A", "B"]) == 0.75


def test_reactivity_sweep_shape_and_consistency():
    rng = np.random.default_rng(6)
    A1, A2 = 0.95 * _rot(0.3), np.diag([-0.7, 0.2, 0.9])
    mk = lambda lab, A, n: [LabeledWindow(lab, w, 50) for w in _var_windows(A, n, rng)]
    train = mk("P", A1, 6) + mk("Q", A2, 6)
    test = mk("P", A1, 10) + mk("Q", A2, 10)

    def trainer(by_label, pre, post):
        return train_classifier(by_label, Hyperparams(K_trunc=2, max_iter=50), seed=0, k_splits=None,
                                pre_window=pre, post_window=post)

    acc = reactivity_sweep(trainer, train, test, [0.5], [0.5])
    assert acc.shape == (1, 1)
    full = reactivity_sweep(trainer, train, test, [0.5, 1.0], [0.5, 1.0])
    assert full.shape == (2, 2)
    assert full[0, 0] == acc[0, 0]
    by_label = {"P": [w.crop(1.0, 1.0) for w in train if w.label == "P"],
                "Q": [w.crop(1.0, 1.0) for w in train if w.label == "Q"]}
    clf = trainer(by_label, 1.0, 1.0)
    pred = [classify(clf, w.crop(1.0, 1.0)).label for w in test]
    assert full[1, 1] == per_class_accuracy([w.label for w in test], pred, ["P", "Q"])
    with pytest.raises(InvalidInput):
        reactivity_sweep(trainer, train, test, [], [1.0])


def test_fitted_nominal_model_gradient_pattern():
    """Nominal data keeps gradients in a bounded band; a structural break drives them far below."""
    rng = np.random.default_rng(7)
    A = 0.9 * _rot(0.2)
    nominal = _var_windows(A, 5, rng, T=150)
    m = fit(nominal, Hyperparams(K_trunc=3), seed=0)
    idm = calibrate(m, nominal)
    x = _var_windows(A, 1, rng, T=150)[0]
    x[80:] = _var_windows(np.diag([-0.9, -0.9, -0.9]), 1, rng, T=70)[0] * 3
    g = forward_gradient(m, x)
    assert g[80:].min() < idm.threshold - 10 * max(idm.grad_range, 1.0)
