from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kitrecover.errors import InvalidInput
from kitrecover.harness import ConfusionMatrix, MetricsReport, evaluate_identification, evaluate_success, match_flags
from kitrecover.harness.cli import main
from kitrecover.harness.metrics import grid_to_csv
from kitrecover.simworld import AnomalyInjector, Scenario

CLASSES = ("HC", "TC", "OS", "NO", "WC")


def test_all_events_matched():
    events = [(float(k), k + 0.3) for k in range(10)]
    flags = [a + 0.1 for a, _ in events]
    m = evaluate_identification([flags], [events])
    assert (m.precision, m.recall) == (1.0, 1.0)


def test_missed_and_extra_flags():
    events = [(float(3 * k), 3 * k + 0.3) for k in range(10)]
    flags = [a + 0.1 for a, _ in events[:8]] + [100.0]
    m = evaluate_identification([flags], [events])
    assert (m.tp, m.fp, m.fn) == (8, 1, 2)
    assert m.precision == pytest.approx(8 / 9)
    assert m.recall == pytest.approx(8 / 10)


def test_duplicate_inside_matched_event_is_not_false_positive():
    tp, fp, fn, dup = match_flags([1.0, 1.2], [(1.0, 1.5)])
    assert (tp, fp, fn, dup) == (1, 0, 0, 1)
    m = evaluate_identification([[], [5.0]], [[], []])
    assert (m.tn, m.fp) == (1, 1)
    with pytest.raises(InvalidInput):
        evaluate_identification([[]], [])


@given(st.lists(st.floats(0, 50), max_size=15), st.lists(st.floats(0, 50), max_size=10))
def test_matching_is_one_to_one(flags, starts):
    events = [(s, s + 0.3) for s in starts]
    tp, fp, fn, dup = match_flags(flags, events)
    assert tp + fn == len(events)
    assert tp + fp + dup == len(flags)
    assert 0 <= tp <= min(len(flags), len(events))


def test_confusion_identity_and_single_error():
    cm = ConfusionMatrix.from_pairs(CLASSES, CLASSES, CLASSES)
    np.testing.assert_array_equal(cm.counts, np.eye(5))
    assert cm.accuracy == 1.0
    truth = ["OS"] * 10
    pred = ["OS"] * 9 + ["HC"]
    cm = ConfusionMatrix.from_pairs(truth, pred, CLASSES)
    assert cm.overall_accuracy == pytest.approx(0.9)
    assert cm.accuracy == pytest.approx(0.9)  # OS is the only class with support
    with pytest.raises(InvalidInput):
        ConfusionMatrix.from_pairs(["HC"], ["XX"], CLASSES)


@given(st.lists(st.tuples(st.sampled_from(CLASSES), st.sampled_from(CLASSES)), min_size=1, max_size=60))
def test_confusion_row_sums(pairs):
    truth, pred = zip(*pairs)
    cm = ConfusionMatrix.from_pairs(truth, pred, CLASSES)
    for k, lab in enumerate(CLASSES):
        assert cm.counts[k].sum() == truth.count(lab)
    assert cm.counts.sum() == len(pairs)


def test_macro_metrics_toy():
    truth = ["a", "a", "b", "b", "c", "c"]
    pred = ["a", "b", "b", "b", "c", "a"]
    cm = ConfusionMatrix.from_pairs(truth, pred, ["a", "b", "c"])
    np.testing.assert_allclose(cm.recall(), [0.5, 1.0, 0.5])
    np.testing.assert_allclose(cm.precision(), [0.5, 2 / 3, 1.0])
    assert cm.macro_recall() == pytest.approx(2 / 3)
    assert cm.macro_precision() == pytest.approx((0.5 + 2 / 3 + 1.0) / 3)


class _Fake:
    def __init__(self, ok, modality="perfect"):
        self.success, self.modality, self.events = ok, modality, []


def test_evaluate_success_rates():
    table = evaluate_success([_Fake(True)] * 60, key=lambda t: ("3", "HC"))
    assert table[("3", "HC", "perfect")] == {"successes": 60, "total": 60, "rate": 1.0}
    table = evaluate_success([_Fake(True)] * 9 + [_Fake(False)], key=lambda t: ("2b", "OS"))
    assert table[("2b", "OS", "perfect")]["rate"] == pytest.approx(0.9)


def test_grid_csv_shape():
    grid = [0.5, 1.0, 1.5, 2.0]
    text = grid_to_csv(grid, grid, np.full((4, 4), 0.5))
    rows = [r.split(",") for r in text.strip().splitlines()]
    assert len(rows) == 5 and all(len(r) == 5 for r in rows)


def test_report_is_pure():
    cm = ConfusionMatrix.from_pairs(["HC", "OS"], ["HC", "HC"], CLASSES)
    rep = MetricsReport(classification=cm, trial_counts={"test": 2})
    assert rep.dumps() == rep.dumps()
    assert rep.to_markdown() == rep.to_markdown()
    assert json.loads(rep.dumps())["classification"]["counts"] == cm.counts.tolist()


# ---------------------------------------------------------------- CLI

def test_cli_rejects_unknown_command(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code != 0


def test_cli_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit) as exc:
        main(["train-dmp", "--config", str(cfg), "--out", str(tmp_path)])
    assert exc.value.code != 0


def test_cli_model_pipeline_deterministic(tmp_path, capsys):
    outs = []
    for rep in range(2):
        out = tmp_path / f"r{rep}"
        assert main(["train-dmp", "--skill", "3", "--out", str(out)]) == 0
        cfg = tmp_path / "hmm.json"
        cfg.write_text(json.dumps({"n_trials": 3, "max_iter": 30, "hyper": {"K_trunc": 4}}))
        assert main(["train-hmm", "--config", str(cfg), "--seed", "2", "--out", str(out)]) == 0
        assert main(["calibrate", "--model", str(out / "hmm.json"), "--n-trials", "3", "--out", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    assert {"dmp.json", "hmm.json", "identification.json"} <= set(outs[0])
    summary = json.loads(outs[0]["train-dmp.summary.json"])
    assert summary["reconstruction_rmse"] < 1e-3


def test_cli_missing_input_exits_nonzero(tmp_path, capsys):
    assert main(["calibrate", "--model", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 1


def test_cli_simulate_and_report(kitting_bank, tmp_path, capsys):
    models = tmp_path / "bank"
    kitting_bank.save(models)
    scen = tmp_path / "s.cfg"
    Scenario(seed=7, injectors=[AnomalyInjector("HC", "3", 1.0)]).save(scen)
    runs = []
    for rep in range(2):
        out = tmp_path / f"sim{rep}"
        assert main(["simulate", "--scenario", str(scen), "--models", str(models), "--out", str(out)]) == 0
        run = next(p for p in out.iterdir() if p.is_dir())
        runs.append({p.name: p.read_bytes() for p in sorted(run.iterdir())})
    assert runs[0] == runs[1]
    assert json.loads(runs[0]["summary.json"])["outcome"] == "success"
    rep = tmp_path / "rep"
    assert main(["report", "--runs", str(tmp_path / "sim0"), str(tmp_path / "sim1"), "--out", str(rep)]) == 0
    body = json.loads((rep / "report.json").read_text())
    assert body["trial_counts"]["episodes"] == 2
    assert body["success"][0]["rate"] == 1.0
