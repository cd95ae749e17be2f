from __future__ import annotations

import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kitrecover.errors import InvalidInput
from kitrecover.harness import experiments as ex
from kitrecover.signals import extract_features
from kitrecover.simworld import (
    AnomalyInjector,
    Scenario,
    default_world,
    generate_nominal,
    inject,
    injected_span,
    make_dynamics,
    run_episode,
    write_run,
)
from kitrecover.simworld.generator import SkillRegistry, simulate_var
from kitrecover.simworld.inject import ANOMALY_CLASSES
from kitrecover.taskgraph import GoalTransform, build_kitting_graph, registry_key

REG = SkillRegistry.kitting()


def test_same_seed_identical():
    a = generate_nominal("3", 11, registry=REG)
    b = generate_nominal("3", 11, registry=REG)
    np.testing.assert_array_equal(a.raw_matrix(), b.raw_matrix())
    c = generate_nominal("3", 12, registry=REG)
    assert not np.array_equal(a.wrench, c.wrench)


def test_unknown_skill():
    with pytest.raises(InvalidInput):
        generate_nominal("9", 0, registry=REG)


def test_noiseless_limit_is_var_orbit():
    tr = generate_nominal("2a", 3, noise_scale=0.0, registry=REG)
    dyn = REG.get("2a")
    n = len(tr)
    seg = dyn.segment_index(n)
    x = dyn.centers[0].copy()
    ref = np.empty((n, 12))
    for t in range(n):
        c = dyn.centers[seg[t]]
        x = c + dyn.A[seg[t]] @ (x - c)
        ref[t] = x
    np.testing.assert_allclose(np.hstack([tr.wrench, tr.twist]), ref, atol=1e-12)


def test_segments_and_breaks():
    for sid in REG.skill_ids:
        dyn = REG.get(sid)
        assert 2 <= dyn.n_segments <= 4
        assert dyn.breaks[0] == 0.0 and np.all(np.diff(dyn.breaks) > 0)
        for A in dyn.A:
            assert np.abs(np.linalg.eigvals(A)).max() < 1.0


def test_lag1_regression_recovers_segment_dynamics():
    dyn = make_dynamics("probe", 1.0, seed=5)
    one = copy.deepcopy(dyn)
    one.breaks = np.array([0.0])
    one.centers = dyn.centers[:1]
    one.A = dyn.A[:1]
    X = simulate_var(one, 200_000, np.random.default_rng(0))
    U = np.hstack([X[:-1], np.ones((len(X) - 1, 1))])
    coef, *_ = np.linalg.lstsq(U, X[1:], rcond=None)
    A_hat = coef[:12].T
    assert np.linalg.norm(A_hat - dyn.A[0]) <= 0.1


def test_injector_validation():
    with pytest.raises(InvalidInput):
        AnomalyInjector("XX", "3", 0.5)
    with pytest.raises(InvalidInput):
        AnomalyInjector("HC", "3", -0.1)
    tr = generate_nominal("3", 0, registry=REG)
    with pytest.raises(InvalidInput):
        inject(tr, AnomalyInjector("HC", "3", 5.0))


@pytest.mark.parametrize("cls", ANOMALY_CLASSES)
def test_zero_magnitude_is_identity_for_force_classes(cls):
    tr = generate_nominal("3", 1, registry=REG)
    out = inject(tr, AnomalyInjector(cls, "3", 1.0, magnitude=0.0))
    if cls in ("HC", "TC", "WC"):
        np.testing.assert_array_equal(out.raw_matrix(), tr.raw_matrix())
    assert out is not tr


def test_hc_spike_exceeds_nominal_force():
    tr = generate_nominal("3", 2, registry=REG)
    nominal_max = max(extract_features(generate_nominal("3", s, registry=REG))[:, 12].max() for s in range(20))
    inj = AnomalyInjector("HC", "3", 1.2)
    a, b = injected_span(tr, inj)
    f = extract_features(inject(tr, inj))
    mid = int(round((a + b) / 2 * 50))
    assert f[mid, 12] > nominal_max
    # span covers the samples from onset through onset + 0.3 s, end exclusive
    assert (a, b) == pytest.approx((1.2, 1.5 - 1 / 50))


def test_os_and_no_signatures():
    tr = generate_nominal("3", 3, registry=REG)
    out = extract_features(inject(tr, AnomalyInjector("OS", "3", 1.0)))
    base = extract_features(tr)
    assert out[60:, 16].mean() < 0.3 * base[60:, 16].mean()
    assert np.mean(out[60:, 2] - base[60:, 2]) == pytest.approx(0.5 * 9.81, rel=0.05)
    grasp = generate_nominal("2a", 3, registry=REG)
    nog = inject(grasp, AnomalyInjector("NO", "2a", 1.3))
    assert np.abs(np.hstack([nog.taxels_left, nog.taxels_right])[70:] - 0.2).max() < 0.05


def test_scenario_roundtrip_and_ordering(tmp_path):
    sc = Scenario(
        seed=4, world=default_world(2, 1), modality="imperfect",
        injectors=[AnomalyInjector("HC", "3", 1.0, obj=1), AnomalyInjector("TC", "2a", 0.8, persistent=True)],
        demonstrations={("2a", "TC"): GoalTransform.from_parts((0, 0.02, 0))},
    )
    assert [i.obj for i in sc.injectors] == [0, 1]
    sc.save(tmp_path / "s.cfg")
    back = Scenario.load(tmp_path / "s.cfg")
    assert back.dumps() == sc.dumps()
    with pytest.raises(InvalidInput):
        Scenario(modality="psychic")


# ---------------------------------------------------------------- episodes

def _run(bank, scenario):
    return run_episode(build_kitting_graph(), bank, scenario)


def test_nominal_episode(kitting_bank):
    tr = _run(kitting_bank, Scenario(seed=1))
    assert tr.success and not tr.flags and tr.final_node == "4"
    assert np.all(np.diff(tr.t) > 0)
    with pytest.raises(RuntimeError):
        tr.finish("success")


def test_hc_at_node3(kitting_bank):
    tr = _run(kitting_bank, Scenario(seed=2, injectors=[AnomalyInjector("HC", "3", 1.0)]))
    assert tr.success
    assert len(tr.flags) == 1
    assert [a for _, _, a in tr.actions] == ["ReEnact(3)"]
    # perfect modality reports the ground truth
    assert all(lab == truth for _, _, lab, truth in tr.labels)


def test_persistent_tc_inserts_adaptation(kitting_bank):
    graph = build_kitting_graph()
    tr = run_episode(graph, kitting_bank, ex.persistent_tc_scenario(0))
    acts = [a for _, _, a in tr.actions]
    assert acts[:3] == ["ReEnact(1)", "ReEnact(1)", "RequestAdaptation(2a,TC)"]
    assert tr.success and tr.adaptations == ["2a/TC"]
    assert registry_key("2a", "TC") in graph.registry.entries


def test_missing_policy_is_recorded(kitting_bank):
    tr = _run(kitting_bank, Scenario(seed=3, injectors=[AnomalyInjector("WC", "3", 1.0)]))
    assert not tr.success and "policy" in tr.reason


def test_budget_exhaustion_is_recorded(kitting_bank):
    tr = _run(kitting_bank, Scenario(seed=3, budget_factor=0.5))
    assert tr.outcome == "failure" and "budget" in tr.reason


def test_missing_demonstration_fails(kitting_bank):
    sc = Scenario(seed=0, injectors=[AnomalyInjector("TC", "2a", 0.8, persistent=True)])
    tr = _run(kitting_bank, sc)
    assert not tr.success and "demonstration" in tr.reason


@settings(max_examples=3)
@given(st.integers(0, 1000))
def test_episode_bit_exact(kitting_bank, seed):
    sc = Scenario(seed=seed, injectors=[AnomalyInjector("OS", "2b", 0.9, seed=seed)])
    a, b = _run(kitting_bank, sc), _run(kitting_bank, sc)
    assert json.dumps(a.summary()) == json.dumps(b.summary())
    np.testing.assert_array_equal(np.asarray(a.features), np.asarray(b.features))


def test_write_run_layout(kitting_bank, tmp_path):
    tr = _run(kitting_bank, Scenario(seed=5, injectors=[AnomalyInjector("HC", "1", 1.0)]))
    run = write_run(tr, tmp_path)
    assert run.name.startswith("experiment_at_")
    names = {p.name for p in run.iterdir()}
    assert {"trial.csv", "anomaly_labels.txt", "summary.json"} <= names
    assert (run / "anomaly_labels.txt").read_text().splitlines() == ["HC"]
    summary = json.loads((run / "summary.json").read_text())
    assert summary["outcome"] == "success"
