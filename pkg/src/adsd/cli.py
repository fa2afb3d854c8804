"""Command-line entry point: ``adsd <verb> [flags]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 check
failure. ``ADSD_NUM_THREADS`` caps the BLAS/OpenMP thread pools; it must be
set before numpy loads, so it is applied before any package import.
"""

from __future__ import annotations

import os
import sys

THREADS_ENV = "ADSD_NUM_THREADS"
_POOL_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

if os.environ.get(THREADS_ENV):
    for _var in _POOL_VARS:
        os.environ[_var] = os.environ[THREADS_ENV]

import argparse  # noqa: E402
import logging  # noqa: E402
from dataclasses import replace  # noqa: E402
from pathlib import Path  # noqa: E402

from . import config as cfg  # noqa: E402
from .errors import AdsdError, ConfigError, DataError, UsageError  # noqa: E402

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("adsd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _train_config(path):
    from .train import TrainConfig
    return cfg.load_file(TrainConfig, path) if path else TrainConfig()


def cmd_gen_data(args) -> int:
    from .data.dataset import generate_dataset
    from .data.synth import default_palette
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    default_palette(args.classes)
    h, w = args.size
    m = generate_dataset(args.out, args.seed, args.count, h, w, args.classes)
    print(f"wrote {len(m.records)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .checkpoint import load_model, save_checkpoint
    from .data.dataset import Dataset
    from .train import Trainer, save_run
    config = _train_config(args.config)
    train_set = Dataset(args.data)
    val_set = Dataset(args.val) if args.val else None
    if len(train_set) == 0:
        raise DataError(f"{args.data} has no samples")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps(config), encoding="utf-8")
    report_rows = []
    if args.stage in ("pretrain", "both"):
        tr = Trainer(config, train_set, val_set)
        tr.pretrain()
        save_checkpoint(tr.model, out / "pretrain")
        report_rows += tr.report.rows
    if args.stage in ("finetune", "both"):
        init = Path(args.init) if args.init else out / "pretrain"
        model = load_model(init)
        model.seed = config.seed
        tr = Trainer(config, train_set, val_set, model=model)
        tr.finetune()
        print(f"checksum before fine-tune: {tr.checksums['before_finetune']}")
        report_rows += tr.report.rows
    tr.report.rows = report_rows
    save_run(out, tr)
    last = report_rows[-1] if report_rows else None
    if last is not None and last.val is not None:
        print(f"final val mIoU {last.val.miou:.4f}")
    print(f"report written to {out / 'report.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_model_config, load_state
    from .data.dataset import Dataset
    from .metrics import write_metrics_csv, write_per_class_csv
    from .model import ADSD
    from .train import evaluate
    model_cfg = _train_config(args.config).model if args.config else load_model_config(args.checkpoint)
    model = ADSD(model_cfg)
    load_state(model, args.checkpoint, skip_prefixes=("secondary.",))
    data = Dataset(args.data)
    if data.num_classes != model_cfg.num_classes:
        raise ConfigError(f"dataset has {data.num_classes} classes, checkpoint {model_cfg.num_classes}")
    metrics, _ = evaluate(model, data)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, metrics)
    per_class = report.with_name(report.stem + "_per_class" + report.suffix)
    write_per_class_csv(per_class, metrics, data.class_names)
    print(f"pixacc {metrics.pixacc:.4f} macc {metrics.macc:.4f} miou {metrics.miou:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import SUITES, run_suite
    names = list(SUITES) if args.suite == "all" else [args.suite]
    if args.suite != "all" and args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from all, {', '.join(SUITES)}")
    failed = []
    for name in names:
        for i, rep in enumerate(run_suite(name, args.instances)):
            print(rep.line(), flush=True)
            if not rep.passed:
                failed.append(f"{name}[{i}]")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


def cmd_compare_decoders(args) -> int:
    from .compare import MIN_SEEDS, compare_decoders
    from .data.dataset import Dataset
    if len(args.seeds) < MIN_SEEDS:
        raise UsageError(f"need at least {MIN_SEEDS} seeds, got {len(args.seeds)}")
    config = _train_config(args.config)
    summary = compare_decoders(config, Dataset(args.data), args.seeds, args.out,
                               Dataset(args.val) if args.val else None)
    n = len(summary.results)
    print(f"dual variance <= single on {sum(r.var_ok for r in summary.results)}/{n} seeds")
    print(f"dual level at epoch 20 <= single on {sum(r.level_ok for r in summary.results)}/{n} seeds")
    if not all(r.init_match for r in summary.results):
        print("initialization checksum mismatch between variants")
        return EXIT_CHECK
    print(f"summary written to {Path(args.out) / 'summary.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adsd", description="RGB-D segmentation training and verification tools.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic RGB-D dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), default=(64, 64))
    g.add_argument("--classes", type=int, default=4)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--config", help="key = value config file (defaults if omitted)")
    t.add_argument("--data", required=True)
    t.add_argument("--val", help="validation dataset evaluated after every epoch")
    t.add_argument("--out", required=True)
    t.add_argument("--stage", choices=("pretrain", "finetune", "both"), default="both")
    t.add_argument("--init", help="checkpoint to fine-tune from (default OUT/pretrain)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate the primary decoder of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="metrics CSV; per-class IoU goes next to it")
    e.add_argument("--config", help="expected model config; mismatches are reported")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    c.add_argument("--suite", default="all")
    c.add_argument("--instances", type=int, default=5)
    c.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("compare-decoders", help="dual vs single decoder convergence")
    d.add_argument("--config")
    d.add_argument("--data", required=True)
    d.add_argument("--val")
    d.add_argument("--seeds", type=_seed_list, required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_compare_decoders)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"adsd {args.verb}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"adsd {args.verb}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AdsdError as exc:
        print(f"adsd {args.verb}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
