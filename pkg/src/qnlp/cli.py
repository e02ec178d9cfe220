"""Command-line entry point: ``qnlp {train,params,verify,decode,gen-data}``.

Exit status is 0 on success, 1 when a verification check or a metric target
fails, and 2 for usage errors (bad flags, invalid config fields, missing files).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError, QnlpError
from .qcore import q_hamilton
from .qlayers import param_count
from .qtransformer import Seq2SeqTransformer
from .tasks import CHARSET, write_pairwise, write_sva, write_transduction
from .training import TrainConfig, build_experiment, datasets, load_run, train
from .verify import run_suite

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="INI file with a [train] section; flags override it")
    group = parser.add_argument_group("configuration fields")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, dest=f.name, metavar=f.name.upper(), default=None,
                           help=f"(default: {f.default})")


def _config(args) -> TrainConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)}
    text = ""
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        text = args.config.read_text()
    return TrainConfig.from_ini(text, **overrides).validate()


def cmd_train(args) -> int:
    cfg = _config(args)
    out_dir = Path(args.out or cfg.output_dir)
    report, _ = train(cfg, out_dir)
    print(f"{report.metric_name} {report.final_metric:.4f} after {report.steps_run} steps "
          f"({report.wall_clock:.1f}s); initial loss {report.initial_loss:.4f}")
    print(f"parameters {report.params['total']} (weights {report.params['weights']}, "
          f"ratio vs real {report.params['weight_ratio']})")
    print(f"run written to {out_dir}")
    if cfg.target_metric is not None and report.final_metric < cfg.target_metric:
        print(f"target {report.metric_name} {cfg.target_metric} not reached", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _config(args)
    model = build_experiment(cfg).model
    reference = model.real_equivalent()
    report = param_count(model, reference)
    ref_layers = param_count(reference, reference).per_layer
    width = max(len(n) for n in report.per_layer.keys() | ref_layers.keys())
    print(f"{'layer':<{width}}  {cfg.variant:>12}  {'real':>12}")
    for name in sorted(report.per_layer.keys() | ref_layers.keys()):
        print(f"{name:<{width}}  {report.per_layer.get(name, 0):>12}  {ref_layers.get(name, 0):>12}")
    print(f"{'total':<{width}}  {report.total:>12}  {report.reference_total:>12}")
    print(f"{'weight matrices':<{width}}  {report.weights:>12}  {report.reference_weights:>12}")
    ratio = report.weight_ratio
    print(f"weight ratio {ratio} = {float(ratio):.4f}; total ratio {report.total_ratio:.4f}")
    if cfg.variant == "full" and ratio != Fraction(1, 4):
        print("FAIL weight ratio of the full variant is not exactly 1/4", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(q_hamilton, gradients=not args.quick)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failing: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_decode(args) -> int:
    run_dir = Path(args.run)
    for name in ("config.ini", "checkpoint.qnn"):
        if not (run_dir / name).is_file():
            raise UsageError(f"file not found: {run_dir / name}")
    sources = args.source or [line.rstrip("\n") for line in sys.stdin]
    if not sources or any(not s for s in sources):
        raise UsageError("empty source sequence")
    _, exp = load_run(run_dir)
    if not isinstance(exp.model, Seq2SeqTransformer):
        raise UsageError("decode needs a run of the arithmetic transduction task")
    decoded = exp.model.greedy_decode([CHARSET.encode(s) for s in sources])
    for ids in decoded:
        print(CHARSET.decode(ids))
    return EXIT_OK


_WRITERS = {"pairwise": write_pairwise, "arithmetic": write_transduction, "sva": write_sva}


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set = datasets(cfg)
    write = _WRITERS[cfg.task]
    write(out / "train.tsv", train_set)
    write(out / "val.tsv", val_set)
    print(f"wrote {len(train_set)} train / {len(val_set)} val {cfg.task} examples to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnlp", description="Quaternion NLP models: train, inspect, verify.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write config, metrics, checkpoint and report")
    _add_config_flags(p)
    p.add_argument("--out", help="run directory (default: the output_dir field)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("params", help="per-layer parameter counts against the real reference")
    _add_config_flags(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("verify", help="run algebra, oracle, gradient and softmax checks")
    p.add_argument("--quick", action="store_true", help="skip the finite-difference gradient checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("decode", help="greedy-decode sources with a trained arithmetic run")
    p.add_argument("run", help="run directory holding config.ini and checkpoint.qnn")
    p.add_argument("source", nargs="*", help="source strings (default: one per line on stdin)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("gen-data", help="write the train/val splits of a config as TSV files")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config field {exc}", file=sys.stderr)
    except (UsageError, QnlpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_USAGE
