"""``moef`` command line: generate | train | eval | ablate | inspect | gradcheck.

Settings come from a JSON config file (``--config`` or ``$MOEF_CONFIG``),
then ``--set section.key=value`` overrides, then the dedicated flags. Exit
codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from moef.config import RunConfig, describe_keys, dump_config, load_config, override
from moef.errors import ConfigError, DataError, MoefError, NumericError
from moef.mixture import VARIANTS

logger = logging.getLogger("moef")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
CHECKPOINT_NAME = "checkpoint.moef"


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_FAILURE


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> RunConfig:
    """Config file, then ``--set`` overrides, then dedicated flags (flags win)."""
    cfg = load_config(args.config)
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg = override(cfg, key.strip(), _parse_value(value))
    flags = {
        "data_dir": "paths.data_dir",
        "run_dir": "paths.run_dir",
        "seed": "train.seed",
        "epochs": "train.epochs",
        "variant": "model.variant",
        "num_experts": "model.num_experts",
    }
    for attr, key in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg = override(cfg, key, value)
    cfg.model_config()  # surfaces variant/encoder conflicts before any work
    return cfg


def _echo(cfg: RunConfig, out_dir: Optional[str]) -> None:
    text = dump_config(cfg)
    logger.info("resolved config:\n%s", text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _emit(payload, out_path: Optional[str] = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _bundle(cfg: RunConfig, signals: Optional[str] = None):
    from moef.harness.train import load_bundle
    from moef.signals import read_signals

    bundle = load_bundle(cfg.paths.data_dir, cfg.schema)
    if signals:
        bundle.signals = read_signals(signals)
    return bundle


def cmd_generate(cfg: RunConfig, args) -> int:
    from moef.synthgen import generate_world, write_dataset

    out_dir = args.out or cfg.paths.data_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    _echo(cfg, out_dir)
    world = generate_world(cfg.world, cfg.schema)
    manifest = write_dataset(world, cfg.world.split_timestamp, out_dir, cfg.schema)
    _emit({"out_dir": out_dir, "counts": manifest["counts"], "ceiling_auc": manifest["ceiling_auc"]})
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    from moef.harness.checkpoint import save_checkpoint
    from moef.harness.train import train, write_trace

    bundle = _bundle(cfg, args.signals)
    run_dir = cfg.paths.run_dir
    _echo(cfg, run_dir)

    def progress(step, loss):
        if step % 50 == 0:
            logger.info("step %d loss %.5f", step, loss)

    result = train(bundle.train, bundle.signals, cfg.model_config(), cfg.train, on_batch=progress)
    path = os.path.join(run_dir, CHECKPOINT_NAME)
    save_checkpoint(result.checkpoint, path)
    write_trace(result.loss_trace, os.path.join(run_dir, "loss_trace.csv"))
    _emit({"checkpoint": path, "loss_trace": result.loss_trace})
    return EXIT_OK


def _load_scores(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.float64, ndmin=1)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read scores {path}: {exc}") from exc


def cmd_eval(cfg: RunConfig, args) -> int:
    from moef.harness.checkpoint import load_checkpoint
    from moef.harness.train import evaluate

    ckpt = load_checkpoint(args.checkpoint or os.path.join(cfg.paths.run_dir, CHECKPOINT_NAME))
    cfg = replace(cfg, schema=ckpt.model_config.schema)
    bundle = _bundle(cfg, args.signals)
    scores = _load_scores(args.scores) if args.scores else None
    _emit(evaluate(ckpt, bundle, args.split, scores), args.out)
    return EXIT_OK


def _ablate_one(cfg_dict: dict, variant: str, seed: int) -> dict:
    from moef.config import RunConfig, from_dict
    from moef.harness.train import ablate

    cfg = from_dict(RunConfig, cfg_dict)
    bundle = _bundle(cfg)
    return ablate(bundle, cfg.model_config(), cfg.train, [variant], [seed])[0]


def format_table(summary: Sequence[dict]) -> str:
    lines = [f"{'variant':<22}{'runs':>5}  AUC (mean +- std)"]
    for row in summary:
        lines.append(f"{row['variant']:<22}{row['runs']:>5}  {row['mean']:.4f} +- {row['std']:.4f}")
    return "\n".join(lines)


def cmd_ablate(cfg: RunConfig, args) -> int:
    from moef.config import to_dict
    from moef.harness.train import ablate, summarize

    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variant(s) {', '.join(unknown)}; choose from {', '.join(VARIANTS)}")
    seeds = [int(s) for s in args.seeds.split(",")]
    run_dir = cfg.paths.run_dir
    _echo(cfg, run_dir)
    if args.jobs > 1:
        jobs = [(v, s) for v in variants for s in seeds]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_ablate_one, to_dict(cfg), v, s) for v, s in jobs]
            rows = [f.result() for f in futures]
    else:
        rows = ablate(
            _bundle(cfg), cfg.model_config(), cfg.train, variants, seeds, lambda r: logger.info("%s", r)
        )
    summary = summarize(rows)
    print(format_table(summary), file=sys.stderr)
    _emit({"runs": rows, "summary": summary}, os.path.join(run_dir, "ablation.json"))
    return EXIT_OK


def cmd_inspect(cfg: RunConfig, args) -> int:
    from moef.harness.checkpoint import load_checkpoint
    from moef.harness.train import export_inspection

    ckpt = load_checkpoint(args.checkpoint or os.path.join(cfg.paths.run_dir, CHECKPOINT_NAME))
    cfg = replace(cfg, schema=ckpt.model_config.schema)
    bundle = _bundle(cfg, args.signals)
    out_dir = args.out or os.path.join(cfg.paths.run_dir, "inspect")
    _emit(export_inspection(ckpt, bundle, out_dir, args.split))
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from moef.harness.gradcheck import TOLERANCE, grad_check, tiny_config

    model_cfg = tiny_config(args.variant or "full", args.num_experts or 2)
    worst, failed = 0.0, []
    for seed in range(args.restarts):
        report = grad_check(model_cfg, seed=seed)
        worst = max(worst, report.max_error, report.directional_error)
        if not report.passed():
            failed.append(seed)
    _emit({"restarts": args.restarts, "max_relative_error": worst, "tolerance": TOLERANCE, "failed_seeds": failed})
    return EXIT_OK if not failed else EXIT_NUMERIC


COMMANDS = {
    "generate": (cmd_generate, "generate a synthetic promotion world"),
    "train": (cmd_train, "train one model and write a checkpoint and loss trace"),
    "eval": (cmd_eval, "evaluate a checkpoint (overall, promotion and normal AUC/logloss)"),
    "ablate": (cmd_ablate, "train and evaluate variants over seeds"),
    "inspect": (cmd_inspect, "export per-record gate weights and expert outputs"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient check on a tiny model"),
}


def _config_epilog() -> str:
    lines = ["config keys (JSON file sections; override with --set key=value):"]
    for key, default in describe_keys():
        lines.append(f"  {key} = {json.dumps(default)}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (default: $MOEF_CONFIG, else built-in defaults)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--data-dir", help="dataset directory (paths.data_dir)")
    common.add_argument("--run-dir", help="run output directory (paths.run_dir)")
    common.add_argument("--seed", type=int, help="training seed (train.seed)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="moef",
        description="Occasion-gated mixture-of-experts CTR model: data generation, training and evaluation.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    sub = parser.add_subparsers(dest="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(
            name, parents=[common], help=help_text, epilog=_config_epilog(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        if name in ("train", "ablate"):
            p.add_argument("--epochs", type=int, help="training epochs (train.epochs)")
        if name in ("train", "gradcheck"):
            p.add_argument("--variant", choices=VARIANTS, help="model variant (model.variant)")
            p.add_argument("--num-experts", type=int, help="number of experts K (model.num_experts)")
        if name in ("train", "eval", "inspect"):
            p.add_argument("--signals", help="signal series file replacing <data-dir>/signals.csv")
        if name in ("eval", "inspect"):
            p.add_argument("--checkpoint", help="checkpoint file (default <run-dir>/checkpoint.moef)")
            p.add_argument("--split", choices=("train", "valid"), default="valid")
        if name in ("generate", "inspect"):
            p.add_argument("--out", help="output directory")
        if name == "eval":
            p.add_argument("--out", help="also write the report to this file")
            p.add_argument("--scores", help="score file (one per record) replacing model predictions")
        if name == "ablate":
            p.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANTS)}")
            p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        if name == "gradcheck":
            p.add_argument("--restarts", type=int, default=20)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        if args.print_config or args.command is None:
            if args.command is None and not args.print_config:
                parser.print_help()
                return EXIT_CONFIG
            print(dump_config(load_config()))
            return EXIT_OK
        cfg = resolve_config(args)
        handler, _ = COMMANDS[args.command]
        return handler(cfg, args)
    except MoefError as exc:
        print(f"moef {args.command or ''}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except FloatingPointError as exc:
        print(f"moef {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
