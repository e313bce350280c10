"""Command line interface.

Subcommands cover the pipeline end to end: ingest source manifests into
the unified JSONL, extract features into the binary cache, train the
seeded run set, evaluate held-out splits into a report bundle, score a
single clip, serve the HTTP API, and summarize a manifest.

Logs go to stderr through the logging module; data goes to stdout or to
the requested output files. Exit codes: 0 success, 1 I/O failure, 2
invalid input or usage, 3 statistical degeneracy (single-class splits,
too few records, zero-variance run metrics).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import dataset, model, plots, serve
from .audio_io import AudioError, read_wav
from .cache import CacheError, read_cache, write_cache
from .dataset import (
    DatasetError,
    SingleClass,
    SplitSpec,
    TooFewRecords,
    derive_flags,
    read_jsonl,
    write_jsonl,
)
from .dsp import extract_features, feature_digest
from .evaluation import ZeroVariance, build_report, evaluate_run, report_json
from .model import CorruptFile, TrainConfig, VersionMismatch, forward

log = logging.getLogger("coughscreen")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
EXIT_DEGENERATE = 3


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _parse_seeds(text: str) -> tuple:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


# ------------------------------------------------------------ subcommands

def cmd_ingest(args) -> int:
    loaders = {
        "coswara": lambda: dataset.load_coswara(args.manifest, args.audio_root),
        "coughvid": lambda: dataset.load_coughvid(args.manifest, args.audio_root, args.seed),
        "virufy": lambda: dataset.load_virufy(args.manifest, args.audio_root),
    }
    records = loaders[args.source]()
    if args.append and Path(args.out).exists():
        existing = read_jsonl(args.out)
        seen = {r.id for r in existing}
        dupes = [r.id for r in records if r.id in seen]
        if dupes:
            log.error("duplicate ids on append: %s", ", ".join(sorted(dupes)[:5]))
            return EXIT_INVALID
        records = existing + records
    write_jsonl(records, args.out)
    n_pos = sum(1 for r in records if r.label == dataset.POSITIVE)
    log.info("wrote %d records (%d positive) to %s", len(records), n_pos, args.out)
    return EXIT_OK


def cmd_features(args) -> int:
    records = read_jsonl(args.manifest)
    features = {}
    failures = 0
    for rec in records:
        try:
            clip = read_wav(rec.audio_path)
            features[rec.id] = extract_features(clip, derive_flags(rec))
        except (AudioError, FileNotFoundError, OSError) as exc:
            log.warning("skipping %s: %s", rec.id, exc)
            failures += 1
    if records and not features:
        log.error("no record could be featurized (%d failures)", failures)
        return EXIT_IO
    write_cache(args.out, features)
    log.info("cached features for %d/%d records at %s",
             len(features), len(records), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    records = read_jsonl(args.manifest)
    features = read_cache(args.features)
    usable = [r for r in records if r.id in features]
    if len(usable) < len(records):
        log.warning("%d records lack cached features and are excluded",
                    len(records) - len(usable))
    tc = TrainConfig(
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        lr=args.lr,
        seeds=args.seeds,
    )
    arch = model.ArchConfig(dropout_rate=args.dropout)
    data_hash = _sha256_file(args.manifest)
    result = model.train(usable, features, tc, arch, data_hash=data_hash)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, run in enumerate(result.runs, start=1):
        path = out_dir / f"run{i}_seed{run.history.seed}.cghm"
        model.save(run.params, path)
        paths.append(str(path))
        log.info("run %d (seed %d): best epoch %d, val loss %.4f, val AUC %.4f",
                 i, run.history.seed, run.history.best_epoch,
                 run.history.val_loss[run.history.best_epoch - 1],
                 run.history.val_auc[run.history.best_epoch - 1])

    report = result.report_dict()
    report["data_hash"] = data_hash
    report["config"] = {
        "batch_size": tc.batch_size, "max_epochs": tc.max_epochs,
        "patience": tc.patience, "lr": tc.lr, "seeds": list(tc.seeds),
        "dropout": arch.dropout_rate,
    }
    report["model_files"] = paths
    with open(out_dir / "train_report.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    plots.render_loss_png(out_dir / "loss_curves.png", [r.history for r in result.runs])
    log.info("wrote %d model files, train_report.json, loss_curves.png to %s",
             len(paths), out_dir)
    return EXIT_OK


def _expand_model_paths(raw_paths) -> list:
    paths = []
    for raw in raw_paths:
        p = Path(raw)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.cghm")))
        else:
            paths.append(p)
    if not paths:
        raise FileNotFoundError(f"no model files under {', '.join(map(str, raw_paths))}")
    return paths


def cmd_eval(args) -> int:
    records = read_jsonl(args.manifest)
    features = read_cache(args.features)
    data_hash = _sha256_file(args.manifest)

    run_evals = []
    curves = []
    for path in _expand_model_paths(args.models):
        params = model.load(path)
        trained_hash = params.meta.get("data_hash", "")
        if trained_hash and trained_hash != data_hash:
            log.warning("%s was trained on a different manifest "
                        "(hash %.12s vs %.12s); splits may not line up",
                        path, trained_hash, data_hash)
        ratios = tuple(params.meta.get("ratios", (0.70, 0.15, 0.15)))
        seed = params.meta.get("seed", params.seed)
        _, _, test_recs = dataset.split(records, SplitSpec(ratios=ratios, seed=seed))
        missing = [r.id for r in test_recs if r.id not in features]
        if missing:
            log.error("%d test records missing from the feature cache "
                      "(first: %s)", len(missing), missing[0])
            return EXIT_INVALID
        scores = forward(params, [features[r.id] for r in test_recs])
        labels = [1.0 if r.label == dataset.POSITIVE else 0.0 for r in test_recs]
        run_evals.append(evaluate_run(seed, scores, labels, threshold=args.threshold))
        r = run_evals[-1]
        curves.append((f"seed {seed}", r.fpr, r.tpr, r.thresholds))
        log.info("%s: test AUC %.4f, accuracy %.4f (n=%d)",
                 path.name, r.auc, r.accuracy, r.n_test)

    report = build_report(run_evals, threshold=args.threshold)
    report["data_hash"] = data_hash
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval_report.json", "w", encoding="utf-8") as fh:
        fh.write(report_json(report))
    plots.write_roc_csv(out_dir / "roc.csv", curves)
    plots.emit_roc_svg(out_dir / "roc.svg", curves)
    plots.render_roc_png(out_dir / "roc.png", curves)
    line = {
        "mean_auc": report["mean_auc"],
        "auc_ci95": report["auc_ci95"],
        "ci_degenerate": report["ci_degenerate"],
        "p_value_auc_gt_half": report["p_value_auc_gt_half"],
        "mean_accuracy": report["mean_accuracy"],
    }
    print(json.dumps(line, sort_keys=True))
    log.info("wrote eval_report.json, roc.csv, roc.svg, roc.png to %s", out_dir)
    return EXIT_OK


def cmd_predict(args) -> int:
    params = model.load(args.model)
    clip = read_wav(args.wav)
    flags = dataset.ClinicalFlags(
        respiratory_condition=args.respiratory_condition,
        fever_or_myalgia=args.fever_or_myalgia,
    )
    fv = extract_features(clip, flags)
    probability = float(forward(params, [fv])[0])
    data_hash = params.meta.get("data_hash", "")
    out = {
        "probability": probability,
        "label": "positive" if probability >= 0.5 else "negative",
        "model_version": model.LIB_VERSION + (f"+{data_hash[:12]}" if data_hash else ""),
        "feature_digest": feature_digest(fv),
    }
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        serve.run(args.model, host=args.host, port=args.port)
    except KeyboardInterrupt:
        log.info("interrupted, shutting down")
    return EXIT_OK


def cmd_summarize(args) -> int:
    records = read_jsonl(args.manifest)
    summary = dataset.summarize(records)
    if args.format == "csv":
        import csv as _csv

        writer = _csv.writer(sys.stdout)
        writer.writerows(dataset.summary_csv_rows(summary))
    else:
        print(dataset.format_summary(summary))
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> tuple:
    parser = argparse.ArgumentParser(
        prog="coughscreen",
        description="Cough audio COVID-19 screening pipeline.",
    )
    parser.add_argument("--config", help="JSON file of default option values")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("ingest", help="convert a source manifest to unified JSONL")
    p.add_argument("--source", required=True, choices=("coswara", "coughvid", "virufy"))
    p.add_argument("--manifest", required=True, help="source metadata CSV")
    p.add_argument("--audio-root", required=True, help="directory holding the audio")
    p.add_argument("--out", required=True, help="unified JSONL path")
    p.add_argument("--seed", type=int, default=0,
                   help="subsampling seed (coughvid negatives)")
    p.add_argument("--append", action="store_true",
                   help="append to an existing JSONL instead of overwriting")
    p.set_defaults(func=cmd_ingest)
    subparsers["ingest"] = p

    p = sub.add_parser("features", help="extract features into the binary cache")
    p.add_argument("--manifest", required=True, help="unified JSONL")
    p.add_argument("--out", required=True, help="feature cache path")
    p.set_defaults(func=cmd_features)
    subparsers["features"] = p

    p = sub.add_parser("train", help="run the seeded training protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="feature cache path")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", type=_parse_seeds, default=model.DEFAULT_SEEDS,
                   help="comma-separated run seeds")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--dropout", type=float, default=0.3)
    p.set_defaults(func=cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("eval", help="score held-out splits and write the report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--models", required=True, nargs="+",
                   help="model files or directories of .cghm files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)
    subparsers["eval"] = p

    p = sub.add_parser("predict", help="score one WAV clip")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--respiratory-condition", type=int, choices=(0, 1), default=0)
    p.add_argument("--fever-or-myalgia", type=int, choices=(0, 1), default=0)
    p.set_defaults(func=cmd_predict)
    subparsers["predict"] = p

    p = sub.add_parser("serve", help="run the HTTP scoring service")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    subparsers["serve"] = p

    p = sub.add_parser("summarize", help="print manifest counts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_summarize)
    subparsers["summarize"] = p

    return parser, subparsers


def _config_path(argv) -> str | None:
    for i, arg in enumerate(argv):
        if arg == "--config":
            if i + 1 >= len(argv):
                return None  # argparse reports the missing value
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def _apply_config(path, subparsers) -> None:
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError("config file must hold a JSON object")
    if "seeds" in config and isinstance(config["seeds"], list):
        config["seeds"] = tuple(int(s) for s in config["seeds"])
    for sp in subparsers.values():
        dests = {a.dest for a in sp._actions}
        sp.set_defaults(**{k: v for k, v in config.items() if k in dests})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, subparsers = build_parser()

    config = _config_path(argv)
    if config is not None:
        try:
            _apply_config(config, subparsers)
        except (OSError, FileNotFoundError) as exc:
            print(f"coughscreen: cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
        except (json.JSONDecodeError, ValueError) as exc:
            print(f"coughscreen: bad config: {exc}", file=sys.stderr)
            return EXIT_INVALID

    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TooFewRecords, SingleClass, ZeroVariance) as exc:
        log.error("statistical degeneracy: %s", exc)
        return EXIT_DEGENERATE
    except (DatasetError, CacheError, CorruptFile, VersionMismatch,
            AudioError, ValueError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        log.error("file not found: %s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
