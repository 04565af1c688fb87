"""Command-line entry point.

Subcommands: synth, cluster, train, eval, sweep, ablate, export-embeddings.
Exit codes: 0 success, 1 usage/config, 2 data format, 3 numeric failure.
Outputs never embed timestamps, so identical invocations produce
byte-identical artifacts.
"""

import argparse
import json
import os
import sys
import warnings

from . import datasynth, dtwcluster, trainer as trainer_mod
from .config import build_settings, load_config
from .datasynth import DatasetConfig, generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, DataFormatError, GaitScreenError, NumericError
from .model import load_checkpoint, save_checkpoint
from .tensor_io import export_csv
from .trainer import (PipelineOptions, ablate, collect_embeddings, evaluate,
                      imbalance_sweep, split_holdout, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    parser = _Parser(prog="gaitscreen",
                     description="gait-video screening pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--pos", type=int, default=0, help="positive sequence count (default 0)")
    p.add_argument("--neu", type=int, default=0, help="neutral sequence count (default 0)")
    p.add_argument("--neg", type=int, default=0, help="negative sequence count (default 0)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--sway-lo", type=float, default=3.0,
                   help="lower sway threshold between negative and neutral (default 3.0)")
    p.add_argument("--sway-hi", type=float, default=5.0,
                   help="upper sway threshold between neutral and positive (default 5.0)")

    p = sub.add_parser("cluster", help="partition sequences into K phase bags")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--k", type=int, default=4, help="bag count (default 4)")
    p.add_argument("--out", required=True, help="output directory for partition JSON")
    p.add_argument("--emit-distances", action="store_true", default=False,
                   help="also write per-sequence DTW distance matrices as CSV")

    for name, text in (("train", "train a model"),
                       ("eval", "evaluate a checkpoint"),
                       ("sweep", "class-imbalance sweep"),
                       ("ablate", "train and score one ablation variant"),
                       ("export-embeddings", "dump per-sequence metric features")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="run config JSON file")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path config override (repeatable)")
        if name == "ablate":
            p.add_argument("--variant", default="full", choices=trainer_mod.VARIANTS,
                           help="ablation variant (default full)")
    return parser


def _settings(args):
    return build_settings(load_config(args.config, args.override))


def _require_dir(path, what):
    if path is None:
        raise ConfigError(f"paths.{what} must be set for this command")
    if not os.path.isdir(path):
        raise ConfigError(f"paths.{what}: no such directory: {path}")
    return path


def _out_dir(settings):
    out = settings.paths["out"]
    if out is None:
        raise ConfigError("paths.out must be set for this command")
    os.makedirs(out, exist_ok=True)
    return out


def _load_text(settings):
    path = settings.paths["text_guidance"]
    if path is None:
        return datasynth.default_text_embeddings(settings.model.text_dim)
    return datasynth.load_text_embeddings(path, settings.model.text_dim)


def _report_line(tag, report):
    def fmt(v):
        return "   n/a" if v is None else f"{v:6.4f}"

    return (f"{tag:<12} Acc {fmt(report.accuracy)}  Sen {fmt(report.sensitivity)}  "
            f"Spe {fmt(report.specificity)}  F1 {fmt(report.macro_f1)}")


def _write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_history(path, history):
    with open(path, "w") as fh:
        fh.write("epoch,L_total,L_triplet,L_ce,L_binaryce\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['total']!r},{row['triplet']!r},"
                     f"{row['ce']!r},{row['binary_ce']!r}\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    bands = _bands_from_thresholds(args.sway_lo, args.sway_hi)
    config = DatasetConfig(thresholds=(args.sway_lo, args.sway_hi), **bands)
    dataset = generate_dataset(args.pos, args.neu, args.neg, config, seed=args.seed)
    if not dataset:
        warnings.warn("all class counts are zero; writing an empty dataset")
    save_dataset(dataset, args.out)
    counts = {label: sum(1 for s in dataset if s.label == label)
              for label in datasynth.LABELS}
    for label in datasynth.LABELS:
        print(f"{label}: {counts[label]}")
    print(f"wrote {len(dataset)} sequences to {args.out}")
    return EXIT_OK


def _bands_from_thresholds(t_lo, t_hi):
    """Scale the default band geometry to user thresholds."""
    if not 0 < t_lo < t_hi:
        raise ConfigError(f"need 0 < sway-lo < sway-hi, got {t_lo}, {t_hi}")
    gap = t_hi - t_lo
    return {
        "band_negative": (0.0, t_lo / 3.0),
        "band_neutral": (t_lo + 0.25 * gap, t_hi - 0.25 * gap),
        "band_positive": (t_hi + 1.5 * gap, t_hi + 2.5 * gap),
    }


def cmd_cluster(args):
    if not os.path.isdir(args.data):
        raise ConfigError(f"--data: no such directory: {args.data}")
    dataset = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    failures = []
    for seq in dataset:
        if args.k > seq.frame_count:
            failures.append({"subject_id": seq.subject_id,
                             "error": f"K={args.k} exceeds S={seq.frame_count}"})
            continue
        feats = dtwcluster.frame_features(seq.frames)
        dist = dtwcluster.distance_matrix(feats)
        bounds = dtwcluster.cluster_bags(dist, args.k)
        with open(os.path.join(args.out, f"partition_{seq.subject_id}.json"), "w") as fh:
            json.dump({"subject_id": seq.subject_id,
                       "boundaries": [int(b) for b in bounds]}, fh)
            fh.write("\n")
        if args.emit_distances:
            export_csv(os.path.join(args.out, f"distances_{seq.subject_id}.csv"), dist)
    if failures:
        with open(os.path.join(args.out, "errors.json"), "w") as fh:
            json.dump(failures, fh, indent=2)
            fh.write("\n")
        for failure in failures:
            print(f"error: {failure['subject_id']}: {failure['error']}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {len(dataset)} partitions to {args.out}")
    return EXIT_OK


def cmd_train(args):
    settings = _settings(args)
    dataset = load_dataset(_require_dir(settings.paths["dataset"], "dataset"))
    out = _out_dir(settings)
    text = _load_text(settings)

    fraction = settings.trainer.holdout_fraction
    if fraction > 0:
        train_set, held = split_holdout(dataset, fraction, settings.trainer.seed)
    else:
        train_set, held = dataset, []

    try:
        model, history = train(train_set, settings.model, settings.sampler,
                               settings.trainer, text)
    except NumericError as exc:
        if getattr(exc, "model", None) is not None:
            save_checkpoint(exc.model, os.path.join(out, "checkpoint"))
            _write_history(os.path.join(out, "history.csv"), exc.history)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    save_checkpoint(model, os.path.join(out, "checkpoint"))
    _write_history(os.path.join(out, "history.csv"), history)
    if held:
        options = PipelineOptions.for_variant(settings.trainer.variant, text,
                                              settings.model, settings.sampler.window)
        report = evaluate(model, held, options)
        _write_report(os.path.join(out, "report.json"), report)
        print(_report_line("holdout", report))
    print(f"checkpoint and history written to {out}")
    return EXIT_OK


def cmd_eval(args):
    settings = _settings(args)
    dataset = load_dataset(_require_dir(settings.paths["dataset"], "dataset"))
    model = load_checkpoint(_require_dir(settings.paths["checkpoint"], "checkpoint"))
    out = _out_dir(settings)
    text = _load_text(settings)
    options = PipelineOptions.for_variant(settings.trainer.variant, text,
                                          model.config, settings.sampler.window)
    report = evaluate(model, dataset, options)
    _write_report(os.path.join(out, "report.json"), report)
    print(_report_line("eval", report))
    return EXIT_OK


def cmd_sweep(args):
    settings = _settings(args)
    out = _out_dir(settings)
    text = _load_text(settings)
    rows = imbalance_sweep(settings.sweep_ratios, settings.model, settings.sampler,
                           settings.trainer, text, synth_config=settings.synth,
                           unit=settings.sweep_unit, eval_unit=settings.sweep_eval_unit)
    with open(os.path.join(out, "sweep.csv"), "w") as fh:
        fh.write("ratio,accuracy,macro_f1\n")
        for row in rows:
            rep = row["report"]
            f1 = "" if rep.macro_f1 is None else repr(rep.macro_f1)
            fh.write(f"{row['ratio']},{rep.accuracy!r},{f1}\n")
    for row in rows:
        print(_report_line(row["ratio"], row["report"]))
    print(f"sweep table written to {out}/sweep.csv")
    return EXIT_OK


def cmd_ablate(args):
    settings = _settings(args)
    dataset = load_dataset(_require_dir(settings.paths["dataset"], "dataset"))
    out = _out_dir(settings)
    text = _load_text(settings)
    report = ablate(args.variant, dataset, settings.model, settings.sampler,
                    settings.trainer, text)
    _write_report(os.path.join(out, f"report_{args.variant}.json"), report)
    print(_report_line(args.variant, report))
    return EXIT_OK


def cmd_export_embeddings(args):
    settings = _settings(args)
    dataset = load_dataset(_require_dir(settings.paths["dataset"], "dataset"))
    model = load_checkpoint(_require_dir(settings.paths["checkpoint"], "checkpoint"))
    out = _out_dir(settings)
    text = _load_text(settings)
    options = PipelineOptions.for_variant(settings.trainer.variant, text,
                                          model.config, settings.sampler.window)
    feats, labels, ids = collect_embeddings(model, dataset, options)
    path = os.path.join(out, "embeddings.csv")
    with open(path, "w") as fh:
        dim = feats.shape[1] if len(feats) else model.config.fused_dim
        fh.write("subject_id,label," + ",".join(f"f{i}" for i in range(dim)) + "\n")
        for sid, label, row in zip(ids, labels, feats):
            fh.write(f"{sid},{label}," + ",".join(repr(v) for v in row) + "\n")
    print(f"wrote {len(ids)} embeddings to {path}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GaitScreenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
