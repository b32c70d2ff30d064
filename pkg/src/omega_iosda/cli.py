"""Command-line entry point: ``omega-iosda {generate,train,eval,ablate}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""
import argparse
import json
import os
import sys

from . import experiment
from .config import load_config, sweep_rows
from .data import write_feature_csv
from .errors import (
    ConfigError,
    DimensionError,
    GenerationError,
    InvalidArgument,
    MetricUndefined,
    NumericFailure,
    ParseError,
)
from .evaluation import compare_ablations, format_ablation_table, metrics_from_predictions
from .model import load_checkpoint
from .thresholding import predict_open

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _common(p):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. train.r=0 (repeatable)")
    p.add_argument("--seed", type=int, help="top-level seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="write into a non-empty output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="omega-iosda", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("generate", "write synthetic source/target CSVs and a manifest"),
                        ("train", "train one model and write its run directory"),
                        ("eval", "score the checkpoint in --out on the configured target"),
                        ("ablate", "run the ablation variants over the sweep seeds")]:
        _common(sub.add_parser(name, help=help_))
    return parser


def cmd_generate(cfg, args):
    if cfg["task"]["kind"] != "synthetic":
        raise ConfigError("generate needs task.kind: synthetic")
    experiment.prepare_out_dir(args.out, args.force)
    source, target = experiment.build_data(cfg)
    write_feature_csv(source, os.path.join(args.out, "source.csv"))
    write_feature_csv(target, os.path.join(args.out, "target.csv"))
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(experiment.manifest(cfg, source, target), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(source)} source and {len(target)} target samples to {args.out}")


def cmd_train(cfg, args):
    experiment.prepare_out_dir(args.out, args.force)

    def progress(h):
        hos = "" if h.metrics is None else f" hos={100 * h.metrics.hos:.2f}"
        print(f"epoch {h.epoch}: total={h.total:.4f}{hos}", flush=True)

    result = experiment.run(cfg, callback=progress)
    report = experiment.write_run(args.out, cfg, result, cfg["eval"]["dump_clusters"])
    if report is not None:
        sys.stdout.write(report.to_text())


def cmd_eval(cfg, args):
    net, meta = load_checkpoint(os.path.join(args.out, "model.ckpt"))
    _, target = experiment.build_data(cfg)
    if target.labels is None:
        raise InvalidArgument("evaluation needs target ground truth")
    _, probs = net.forward(target.X, "target", train=False)
    q = experiment.thresholds_from_metadata(meta, net.num_classes)
    report = metrics_from_predictions(predict_open(probs, q), target.labels, net.num_classes)
    with open(os.path.join(args.out, "eval_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    sys.stdout.write(report.to_text())


def cmd_ablate(cfg, args):
    experiment.prepare_out_dir(args.out, args.force)
    rows = sweep_rows(cfg)
    seeds = cfg["sweep"]["seeds"]
    if not rows or not seeds:
        raise ConfigError("sweep needs at least one variant and one seed")
    runs_path = os.path.join(args.out, "runs.csv")
    with open(runs_path, "w", encoding="utf-8") as fh:
        fh.write("variant,seed,final_hos,best_hos\n")
    histories = {name: [] for name, _, _ in rows}
    for seed in seeds:
        for name, row_cfg, variant in rows:
            result = experiment.run({**row_cfg, "seed": seed}, variant)
            series = [h.metrics for h in result.history]
            if not series or any(m is None for m in series):
                raise MetricUndefined("ablation needs target ground truth every epoch")
            histories[name].append(series)
            hos = [m.hos for m in series]
            # appended per run so partial sweeps survive a failure
            with open(runs_path, "a", encoding="utf-8") as fh:
                fh.write(f"{name},{seed},{100 * hos[-1]:.4f},{100 * max(hos):.4f}\n")
            print(f"{name} seed={seed}: final hos={100 * hos[-1]:.2f}", flush=True)
    names = list(histories)
    table = format_ablation_table(compare_ablations([histories[n] for n in names], names))
    with open(os.path.join(args.out, "ablation.csv"), "w", encoding="utf-8") as fh:
        fh.write(table)
    sys.stdout.write(table)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args)
    except (ConfigError, FileExistsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}; batch indices {exc.batch_indices}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, DimensionError, GenerationError, MetricUndefined, InvalidArgument, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
