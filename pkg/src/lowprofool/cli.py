"""Command-line entry point: ``lowprofool {synth,train,attack,evaluate,run}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import attacks, harness, tabular_data
from .harness import ExperimentConfig, StageError
from .model import Mlp
from .tabular_data import FeatureKind, Schema, SyntheticSpec

DEMO_SYNTHETIC = {"n": 1000, "separations": [3.0, 0.5], "noise": [1.0, 1.0], "correlation": 0.8}


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _common(p: argparse.ArgumentParser, attack_flags: bool = True) -> None:
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--importance-norm", choices=["unit_l2", "as_printed"])
    if attack_flags:
        p.add_argument("--method", choices=[*attacks.METHODS, "all"], default=None)
        p.add_argument("--lambda", dest="lam", type=float, help="fix lambda (disables tuning)")
        p.add_argument("--alpha", type=float, help="fix alpha (disables tuning)")
        p.add_argument("--iters", type=int, help="iteration budget")
        p.add_argument("--epsilon", type=float, help="FGSM step size")
        p.add_argument("--clip", choices=["per_step", "none"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowprofool", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset, schema and config")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=DEMO_SYNTHETIC["n"])
    p.add_argument("--separations", type=_floats, default=DEMO_SYNTHETIC["separations"])
    p.add_argument("--noise", type=_floats, default=None)
    p.add_argument("--correlation", type=float, default=DEMO_SYNTHETIC["correlation"])

    _common(sub.add_parser("train", help="prepare data and train the victim model"), attack_flags=False)
    _common(sub.add_parser("attack", help="tune and run attack campaigns on the test split"))
    p = sub.add_parser("evaluate", help="compute reports from stored outcomes")
    p.add_argument("--out", type=Path, required=True)
    _common(sub.add_parser("run", help="train, attack and evaluate end to end"))
    return parser


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None) is not None:
        config = ExperimentConfig.load(args.config)
    elif (args.out / "config.json").exists():
        config = ExperimentConfig.load(args.out / "config.json")
    else:
        config = ExperimentConfig(synthetic=dict(DEMO_SYNTHETIC))
    return _apply_overrides(config, args)


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "importance_norm", None):
        changes["importance_norm"] = args.importance_norm
    method = getattr(args, "method", None)
    if method and method != "all":
        changes["methods"] = (method,)
    attack = dict(config.attack)
    for flag, key in (("lam", "lambda"), ("alpha", "alpha"), ("iters", "max_iter"),
                      ("epsilon", "fgsm_epsilon"), ("clip", "clip_mode")):
        value = getattr(args, flag, None)
        if value is not None:
            attack[key] = value
    if attack != config.attack:
        changes["attack"] = attack
    if getattr(args, "lam", None) is not None or getattr(args, "alpha", None) is not None:
        changes["grid"] = None
    return dataclasses.replace(config, **changes) if changes else config


def cmd_synth(args) -> None:
    try:
        spec = SyntheticSpec(tuple(args.separations), tuple(args.noise) if args.noise else None,
                             args.correlation)
        dataset = tabular_data.generate_synthetic(args.n, spec, args.seed)
    except ValueError as exc:
        raise StageError("synth", str(exc)) from exc
    args.out.mkdir(parents=True, exist_ok=True)
    tabular_data.save_dataset(dataset, args.out / "data.csv", raw=True)
    schema = Schema("label", {name: FeatureKind.CONTINUOUS for name in dataset.feature_names})
    (args.out / "schema.json").write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")
    config = ExperimentConfig(name="synthetic", csv="data.csv", schema="schema.json", seed=args.seed)
    config.save(args.out / "config.json")
    print(f"wrote {dataset.n_samples} rows to {args.out / 'data.csv'}")


def cmd_train(args) -> None:
    config = _load_config(args)
    prepared = harness.prepare_data(config)
    result = harness.train_model(config, prepared)
    harness.write_training(args.out, config, prepared, result)
    print(f"train accuracy {result.accuracy:.3f}, loss {result.initial_loss:.4f} -> {result.final_loss:.4f}")


def _load_model(out: Path) -> Mlp:
    path = out / "model.npz"
    if not path.exists():
        raise StageError("attack", f"{path} not found; run 'train' first")
    return Mlp.load(path)


def cmd_attack(args) -> None:
    config = _load_config(args)
    prepared = harness.prepare_data(config)
    model = _load_model(args.out)
    params, tuning = harness.tune(config, prepared, model)
    outcomes = harness.attack(config, prepared, model, params)
    harness.write_attack(args.out, prepared, params, tuning, outcomes)
    for method, o in outcomes.items():
        wins = sum(x.succeeded for x in o)
        print(f"{method}: {wins}/{len(o)} succeeded")


def cmd_evaluate(args) -> None:
    config = ExperimentConfig.load(args.out / "config.json")
    prepared = harness.prepare_data(config)
    try:
        params = json.loads((args.out / "params.json").read_text(encoding="utf-8"))["params"]
        records = attacks.read_outcome_records(args.out / "outcomes.jsonl")
    except OSError as exc:
        raise StageError("evaluate", f"{exc}; run 'attack' first") from exc
    p = params["norm_p"]
    outcomes = harness.outcomes_from_records(records, prepared.split.test.X, prepared.importance, p)
    reports = harness.evaluate(config, prepared, outcomes, p)
    harness.write_reports(args.out, reports)
    print((args.out / "report.txt").read_text(encoding="utf-8"), end="")


def cmd_run(args) -> None:
    config = _load_config(args)
    harness.run_experiment(config, args.out)
    print((args.out / "report.txt").read_text(encoding="utf-8"), end="")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "attack": cmd_attack,
            "evaluate": cmd_evaluate, "run": cmd_run}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
