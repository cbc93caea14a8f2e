"""
COMMAND LINE - python -m app.main <command>
===========================================
gen-data   write a synthetic dataset
split      redraw the stratified train/val/test split
train      train independent or multi-task models
eval       score checkpoints (or the KB baseline) on a split
predict    affordance triples for one scene
sweep-t    one training run per number of propagation steps
gradcheck  finite-difference check of every backward pass
report     render saved evaluation reports as tables
stats      dataset statistics

Run flags mirror RunConfig field names (--hidden-size 64); --config loads a
JSON file first and flags override it; --dump-config writes the resolved
config and stops.

Exit codes: 0 success, 1 usage, 2 data validation, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import typing
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, ValidationError

from app.dataset.scenes import load_dataset
from app.dataset.synth import dataset_statistics, resplit, synth_generate
from app.db import DATA_DIR, LOG_LEVEL, PRECISION, RUNS_DIR
from app.errors import ConfigurationError, DataValidationError, NumericError
from app.events import configure_logging
from app.harness.checks import GRADCHECK_TOLERANCE, run_gradchecks
from app.harness.evaluate import evaluate, evaluate_kb
from app.harness.multitask import train_multitask
from app.harness.predict import Predictor
from app.harness.sweep import sweep_T
from app.harness.trainer import train
from app.metrics.report import load_report, render_tables, report_json, save_report
from app.models import RunConfig, SynthConfig

logger = logging.getLogger("cli")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> typing.NoReturn:
        raise UsageError(message)


# ===========================
# CONFIG FLAGS
# ===========================

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_model_flags(parser: argparse.ArgumentParser, model: type[BaseModel], skip: Sequence[str] = ()) -> None:
    """One flag per model field; unset flags stay out of the namespace."""
    for name, info in model.model_fields.items():
        if name in skip:
            continue
        annotation = info.annotation
        default = info.default
        kwargs: Dict[str, Any] = {"dest": name, "default": argparse.SUPPRESS, "help": f"(default: {default!r})"}
        args = typing.get_args(annotation)
        if typing.get_origin(annotation) is typing.Literal:
            kwargs["choices"] = list(args)
            kwargs["type"] = type(args[0])
        elif isinstance(default, bool) or annotation is bool or (args and bool in args):
            kwargs["action"] = argparse.BooleanOptionalAction
        elif isinstance(default, list):
            kwargs["nargs"] = "+"
        elif isinstance(default, dict) or typing.get_origin(annotation) is dict:
            kwargs["type"] = json.loads
        elif isinstance(default, (int, float, str)):
            kwargs["type"] = type(default)
        else:
            kwargs["type"] = next((a for a in args if a in (int, float, str)), str)
        parser.add_argument(_flag(name), **kwargs)


def resolve_config(model: type[BaseModel], args: argparse.Namespace, defaults: Optional[Dict[str, Any]] = None) -> BaseModel:
    """Defaults, then the --config file, then explicit flags."""
    values: Dict[str, Any] = dict(defaults or {})
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text()))
    values.update({k: v for k, v in vars(args).items() if k in model.model_fields})
    return model.model_validate(values)


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = resolve_config(RunConfig, args, {"data_dir": DATA_DIR, "out_dir": str(Path(RUNS_DIR) / "default"), "precision": PRECISION})
    if getattr(args, "dump_config", None):
        Path(args.dump_config).write_text(config.model_dump_json(indent=2) + "\n")
        logger.info("wrote resolved config to %s", args.dump_config)
    return config


# ===========================
# COMMANDS
# ===========================

def cmd_gen_data(args: argparse.Namespace) -> int:
    config = resolve_config(SynthConfig, args)
    sizes = {"train": args.train, "val": args.val, "test": args.test} if args.train is not None else None
    dataset = synth_generate(config, args.out, split_sizes=sizes, min_token_freq=args.min_token_freq, progress=True)
    print(f"{len(dataset.manifest.scene_ids)} scenes written to {dataset.root}")
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    splits = resplit(dataset, {"train": args.train, "val": args.val, "test": args.test}, args.seed, args.min_token_freq)
    print(json.dumps({k: len(getattr(splits, k)) for k in ("train", "val", "test", "unused")}))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _run_config(args)
    if args.dump_config:
        return EXIT_OK
    result = train(config) if config.regime == "independent" else train_multitask(config)
    for fit in result.fits:
        print(f"{fit.name}: best epoch {fit.best_epoch}, val {config.selection_metric} {fit.best_score:.4f} -> {fit.checkpoint}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    if args.kb:
        report = evaluate_kb(dataset, args.split, args.actions)
    elif args.checkpoint:
        report = evaluate(args.checkpoint, dataset, args.split)
    else:
        raise UsageError("eval needs --checkpoint or --kb")
    if args.out:
        save_report(report, args.out)
    print(render_tables([report]), end="")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    predictor = Predictor.load(args.checkpoint)
    for scene_id in args.scene:
        for prediction in predictor.predict(dataset.scene(scene_id)):
            print(json.dumps({"scene_id": scene_id, **prediction.model_dump(mode="json", exclude_none=True)}))
    return EXIT_OK


def cmd_sweep_t(args: argparse.Namespace) -> int:
    config = _run_config(args)
    if args.dump_config:
        return EXIT_OK
    table = sweep_T(config, args.steps_list)
    print(table.to_string(float_format=lambda v: f"{v:.3f}"))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradchecks(args.seed, per_entry=args.per_entry)
    failed = False
    for part, errors in results.items():
        for name, err in errors.items():
            status = "ok" if err <= args.tolerance else "FAIL"
            failed |= err > args.tolerance
            print(f"{part:13s} {name:40s} {err:.3e} {status}")
    if failed:
        raise NumericError(f"gradient check exceeded tolerance {args.tolerance:g}")
    print(f"all gradients within {args.tolerance:g}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    reports = [load_report(p) for p in args.reports]
    print(report_json(reports) if args.json else render_tables(reports), end="\n" if args.json else "")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.data)
    ids = dataset.split_ids(args.split) if args.split else None
    print(json.dumps(dataset_statistics(dataset, ids), indent=2, sort_keys=True))
    return EXIT_OK


# ===========================
# PARSER
# ===========================

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="app.main", description="Affordance reasoning with gated graph networks")
    parser.add_argument("--log-level", default=LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset")
    gen.add_argument("--out", default=DATA_DIR)
    gen.add_argument("--config", help="SynthConfig JSON file")
    gen.add_argument("--train", type=int)
    gen.add_argument("--val", type=int)
    gen.add_argument("--test", type=int)
    gen.add_argument("--min-token-freq", type=int, default=2)
    add_model_flags(gen, SynthConfig, skip=("group_weights",))
    gen.set_defaults(func=cmd_gen_data)

    split = sub.add_parser("split", help="redraw the stratified split")
    split.add_argument("--data", default=DATA_DIR)
    split.add_argument("--train", type=int, required=True)
    split.add_argument("--val", type=int, required=True)
    split.add_argument("--test", type=int, required=True)
    split.add_argument("--seed", type=int, default=0)
    split.add_argument("--min-token-freq", type=int, default=2)
    split.set_defaults(func=cmd_split)

    for name, func, help_text in (("train", cmd_train, "train models"), ("sweep-t", cmd_sweep_t, "train once per T")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--dump-config", help="write the resolved RunConfig here and exit")
        add_model_flags(p, RunConfig)
        if name == "sweep-t":
            p.add_argument("--steps-list", type=int, nargs="+", default=[0, 1, 2, 3, 4])
        p.set_defaults(func=func)

    ev = sub.add_parser("eval", help="score checkpoints on a split")
    ev.add_argument("--data", default=DATA_DIR)
    ev.add_argument("--checkpoint", nargs="+")
    ev.add_argument("--kb", action="store_true", help="evaluate the knowledge-base baseline")
    ev.add_argument("--actions", nargs="+")
    ev.add_argument("--split", default="test", choices=["train", "val", "test"])
    ev.add_argument("--out", help="write the EvalReport JSON here")
    ev.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="affordance triples for scenes")
    pr.add_argument("--data", default=DATA_DIR)
    pr.add_argument("--checkpoint", nargs="+", required=True)
    pr.add_argument("--scene", nargs="+", required=True)
    pr.set_defaults(func=cmd_predict)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    gc.add_argument("--per-entry", action="store_true", help="gate on the worst single entry instead of the norm-wise error")
    gc.set_defaults(func=cmd_gradcheck)

    rp = sub.add_parser("report", help="render saved reports")
    rp.add_argument("reports", nargs="+")
    rp.add_argument("--json", action="store_true")
    rp.set_defaults(func=cmd_report)

    st = sub.add_parser("stats", help="dataset statistics")
    st.add_argument("--data", default=DATA_DIR)
    st.add_argument("--split", choices=["train", "val", "test"])
    st.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, ValidationError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (DataValidationError, FileNotFoundError) as exc:
        logger.error("data validation failed: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
