"""Command-line interface: ``kitrecover <command> [--seed N] [--config cfg.json] [--out DIR]``.

Every command writes its artifacts plus a ``summary.json`` into ``--out``.
The optional JSON config supplies defaults for any option of the command
(keys use the option names with underscores) and an optional ``hyper``
object overriding model hyperparameters.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import __version__
from ..bnp_hmm import HmmModel, Hyperparams, fit, select_model_kfold
from ..dmp import Demonstration, learn_from_demo, minimum_jerk, rollout
from ..errors import KitRecoverError
from ..introspect import ClassifierModel, calibrate
from ..signals import CANONICAL_RATE, Trial, extract_features, read_trial_file
from ..simworld import ModelBank, Scenario, generate_nominal, run_episode, write_run
from ..simworld.generator import SkillRegistry
from ..taskgraph import build_kitting_graph
from . import experiments as ex
from .metrics import MetricsReport, evaluate_identification, evaluate_success, grid_to_csv

log = logging.getLogger("kitrecover")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _hyper(args) -> Hyperparams:
    base = Hyperparams()
    overrides = dict(getattr(args, "hyper", None) or {})
    if getattr(args, "max_iter", None):
        overrides["max_iter"] = args.max_iter
    if getattr(args, "restarts", None):
        overrides["n_restarts"] = args.restarts
    return base.replace(**overrides) if overrides else base


def _features_from(path: str) -> np.ndarray:
    data = read_trial_file(path)
    if isinstance(data, Trial):
        return extract_features(data)
    return data[1]


def _synthetic_features(skill: str, seed: int, count: int, offset: int = 0) -> list[np.ndarray]:
    reg = SkillRegistry.kitting()
    return [extract_features(generate_nominal(skill, seed * 10_000 + offset + i, registry=reg)) for i in range(count)]


# ------------------------------------------------------------------ commands

def cmd_train_dmp(args, out: Path) -> dict:
    dt = 1.0 / args.rate
    if args.demo:
        data = read_trial_file(args.demo)
        if not isinstance(data, Trial):
            raise KitRecoverError("train-dmp needs a raw trial file with pose columns")
        x = data.pose[:, :3]
        dt = float(np.median(np.diff(data.t)))
    else:
        reg = SkillRegistry.kitting(args.seed)
        dyn = reg.get(args.skill)
        x = minimum_jerk(dyn.start, dyn.goal, dyn.duration, dt)
    model = learn_from_demo(Demonstration.from_positions(x, dt), n_basis=args.n_basis, K=args.K)
    model.save(out / "dmp.json")
    roll = rollout(model, dt=dt, t_max=model.tau)
    n = min(len(roll.x), len(x))
    rmse = float(np.sqrt(np.mean((roll.x[:n] - x[:n]) ** 2)))
    return {"model": "dmp.json", "tau": model.tau, "n_basis": model.n_basis, "reconstruction_rmse": rmse}


def cmd_train_hmm(args, out: Path) -> dict:
    trials = [_features_from(p) for p in args.trials] if args.trials else _synthetic_features(
        args.skill, args.seed, args.n_trials)
    hyper = _hyper(args)
    kw = dict(allocation=args.allocation, observation=args.observation)
    if args.k_splits:
        model = select_model_kfold(trials, args.k_splits, hyper, seed=args.seed, **kw)
    else:
        model = fit(trials, hyper, seed=args.seed, **kw)
    model.save(out / "hmm.json")
    return {"model": "hmm.json", "states": model.K, "trials": len(trials), "dim": model.dim}


def cmd_calibrate(args, out: Path) -> dict:
    model = HmmModel.load(args.model)
    trials = [_features_from(p) for p in args.trials] if args.trials else _synthetic_features(
        args.skill, args.seed, args.n_trials, offset=5000)
    idm = calibrate(model, trials, node_id=args.node or args.skill, debounce=args.debounce)
    _dump(out / "identification.json", idm.to_dict())
    return {"model": "identification.json", "grad_min": idm.grad_min, "grad_max": idm.grad_max,
            "threshold": idm.threshold, "trials": len(trials)}


def cmd_train_classifier(args, out: Path) -> dict:
    clf = ex.train_default_classifier(args.seed, args.pre, args.post, args.k_splits or None, _hyper(args))
    _dump(out / "classifier.json", clf.to_dict())
    return {"model": "classifier.json", "labels": list(clf.labels), "pre_window": args.pre, "post_window": args.post}


def _bank(args, need_classifier: bool) -> ModelBank:
    if args.models and (Path(args.models) / "bank.json").exists():
        bank = ModelBank.load(args.models)
    else:
        bank = ex.train_bank(args.bank_seed, _hyper(args))
    if need_classifier and bank.classifier is None:
        if args.classifier:
            bank.classifier = ClassifierModel.from_dict(json.loads(Path(args.classifier).read_text()))
        else:
            bank.classifier = ex.train_default_classifier(args.bank_seed, k_splits=None)
    if args.models and not (Path(args.models) / "bank.json").exists():
        bank.save(args.models)
    return bank


def cmd_simulate(args, out: Path) -> dict:
    scenario = Scenario.load(args.scenario) if args.scenario else Scenario(seed=args.seed or 0)
    if args.seed is not None:
        scenario.seed = args.seed
    bank = _bank(args, need_classifier=scenario.modality == "imperfect")
    graph = build_kitting_graph()
    trace = run_episode(graph, bank, scenario)
    run = write_run(trace, out, extra={"registry": dict(graph.registry.entries), "seed": scenario.seed})
    graph.save(run / "taskgraph.json")
    ident = evaluate_identification([[t for t, _, _ in trace.flags]], [[(e.t_start, e.t_end) for e in trace.events]])
    report = MetricsReport(identification=ident, success=evaluate_success([trace]),
                           trial_counts={"ticks": len(trace.t), "events": len(trace.events)})
    (run / "metrics.json").write_text(report.dumps() + "\n", encoding="utf-8")
    args.seed = scenario.seed
    return {"run_dir": run.name, "outcome": trace.outcome, "reason": trace.reason, **trace.counters()}


def cmd_evaluate(args, out: Path) -> dict:
    bank = _bank(args, need_classifier=False)
    ident = ex.run_identification(bank, args.n_nominal, args.n_injected, seed=args.seed + 1)
    clf = bank.classifier or ex.train_default_classifier(args.seed, k_splits=args.k_splits or None)
    cm, _, _ = ex.run_classification(clf, seed=args.seed + 1)
    traces = ex.run_scenarios(bank, ex.reenactment_scenarios(args.episodes_per_case, args.seed))
    report = MetricsReport(
        identification=ident.overall, identification_by_node=ident.by_node, classification=cm,
        success=evaluate_success(traces),
        trial_counts={"nominal": ident.n_nominal, "injected": ident.n_injected,
                      "classification_test": int(cm.counts.sum()), "episodes": len(traces)},
    )
    (out / "metrics.json").write_text(report.dumps() + "\n", encoding="utf-8")
    (out / "confusion.csv").write_text(cm.to_csv(), encoding="utf-8")
    (out / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    return {"identification": ident.overall.to_dict(), "classification_accuracy": cm.accuracy,
            "calibration_flags": ident.calibration_flags,
            "episode_success_rate": float(np.mean([t.success for t in traces])) if traces else None}


def cmd_sweep_reactivity(args, out: Path) -> dict:
    acc = ex.run_reactivity(args.pre, args.post, seed=args.seed, k_splits=args.k_splits or None, hyper=_hyper(args))
    (out / "reactivity.csv").write_text(grid_to_csv(args.pre, args.post, acc), encoding="utf-8")
    return {"grid": "reactivity.csv", "pre": args.pre, "post": args.post, "accuracy": acc.tolist()}


class _TraceView:
    """Minimal trace stand-in rebuilt from a run directory's summary."""

    def __init__(self, summary: dict):
        from ..simworld.episode import GroundTruthEvent

        self.modality = summary["modality"]
        self.success = summary["outcome"] == "success"
        self.events = [GroundTruthEvent(**e) for e in summary.get("events", [])]


def cmd_report(args, out: Path) -> dict:
    summaries = []
    for d in args.runs:
        for path in sorted(Path(d).rglob("summary.json")):
            body = json.loads(path.read_text(encoding="utf-8"))
            if "outcome" in body and "modality" in body:
                summaries.append(body)
    report = MetricsReport(success=evaluate_success(_TraceView(s) for s in summaries),
                           trial_counts={"episodes": len(summaries)})
    (out / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    (out / "report.json").write_text(report.dumps() + "\n", encoding="utf-8")
    return {"episodes": len(summaries), "successes": sum(s["outcome"] == "success" for s in summaries)}


COMMANDS = {
    "train-dmp": cmd_train_dmp,
    "train-hmm": cmd_train_hmm,
    "calibrate": cmd_calibrate,
    "train-classifier": cmd_train_classifier,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "sweep-reactivity": cmd_sweep_reactivity,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kitrecover", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", type=str, default=None, help="JSON file with option defaults")
        sp.add_argument("--out", type=str, default=".", help="output directory")
        return sp

    sp = add("train-dmp", "fit a motion primitive to a demonstration")
    sp.add_argument("--demo", help="raw trial file; its pose positions are the demonstration")
    sp.add_argument("--skill", default="2a", help="synthetic skill used when --demo is absent")
    sp.add_argument("--n-basis", type=int, default=50)
    sp.add_argument("--K", type=float, default=100.0)
    sp.add_argument("--rate", type=float, default=CANONICAL_RATE)

    for name, help_ in (("train-hmm", "fit a nominal sequence model"),
                        ("calibrate", "calibrate an identification threshold")):
        sp = add(name, help_)
        sp.add_argument("--trials", nargs="*", default=None, help="trial files (raw or featurized)")
        sp.add_argument("--skill", default="2a")
        sp.add_argument("--n-trials", type=int, default=7)
        if name == "train-hmm":
            sp.add_argument("--allocation", choices=("sticky_hdp", "hmm"), default="sticky_hdp")
            sp.add_argument("--observation", choices=("var", "gauss"), default="var")
            sp.add_argument("--k-splits", type=int, default=0)
            sp.add_argument("--max-iter", type=int, default=None)
            sp.add_argument("--restarts", type=int, default=None)
        else:
            sp.add_argument("--model", required=True, help="hmm.json from train-hmm")
            sp.add_argument("--node", default=None)
            sp.add_argument("--debounce", type=float, default=1.0)

    sp = add("train-classifier", "train the per-class anomaly models")
    sp.add_argument("--pre", type=float, default=2.0)
    sp.add_argument("--post", type=float, default=2.0)
    sp.add_argument("--k-splits", type=int, default=3)
    sp.add_argument("--max-iter", type=int, default=None)

    for name, help_ in (("simulate", "run one scenario episode"),
                        ("evaluate", "identification, classification and recovery metrics")):
        sp = add(name, help_)
        sp.add_argument("--models", default=None, help="model-bank directory (trained and saved if missing)")
        sp.add_argument("--classifier", default=None, help="classifier.json for the imperfect modality")
        sp.add_argument("--bank-seed", type=int, default=0, help="seed of the trained model bank")
        sp.add_argument("--max-iter", type=int, default=None)
        if name == "simulate":
            sp.add_argument("--scenario", default=None, help="scenario file")
            # an explicit --seed replaces the scenario's own seed
            sp.set_defaults(seed=None)
        else:
            sp.add_argument("--n-nominal", type=int, default=200)
            sp.add_argument("--n-injected", type=int, default=200)
            sp.add_argument("--episodes-per-case", type=int, default=6)
            sp.add_argument("--k-splits", type=int, default=0)

    sp = add("sweep-reactivity", "classification accuracy over pre/post window sizes")
    sp.add_argument("--pre", type=_floats, default=[0.5, 1.0, 1.5, 2.0])
    sp.add_argument("--post", type=_floats, default=[0.5, 1.0, 1.5, 2.0])
    sp.add_argument("--k-splits", type=int, default=0)
    sp.add_argument("--max-iter", type=int, default=None)

    sp = add("report", "aggregate run directories into a report")
    sp.add_argument("--runs", nargs="+", required=True)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        hyper = cfg.pop("hyper", None)
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
        args.hyper = hyper
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        summary = COMMANDS[args.command](args, out)
    except (KitRecoverError, OSError, ValueError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return 1
    summary = {"command": args.command, "seed": args.seed, **summary}
    _dump(out / f"{args.command}.summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
