"""Command-line entry point: ``ssnet <verb> [options]``.

Verbs: inspect, synth, prepare, train, eval, gradcheck, report.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numeric error
(divergence, non-finite gradients, failed gradient check).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from ssnet import metrics
from ssnet.dataset import (
    export_shards,
    generate_synthetic,
    get_scheme,
    import_shards,
    map_labels,
    normalize_set,
    profiles_for,
    split,
    undersample,
)
from ssnet.dataset.epochs import EpochSet, epoch_recording
from ssnet.dataset.sampling import AVAILABILITY, SplitSpec, preset_targets
from ssnet.errors import DataError, NumericError, ShapeMismatch
from ssnet.model import SSNetConfig, build
from ssnet.signal_io import read_edf, read_hypnogram, select_channels
from ssnet.trainer import HyperParams, best_model, checkpoint_load, evaluate, train

log = logging.getLogger("ssnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test")

DEFAULTS = {
    "seeds": {"data": 0, "init": 0, "train": 0},
    "scheme": "three",
    "preset": "none",
    "targets": None,
    "data": {"recordings": [], "shards": None, "channels": None},
    "split": {"train": 0.70, "val": 0.15, "test": 0.15, "mode": "stratified"},
    "model": {},
    "train": {},
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# configuration


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        text = Path(path).read_text()
        doc = yaml.safe_load(text) or {}
        if not isinstance(doc, dict):
            raise UsageError(f"config {path} must hold a mapping at the top level")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"config {path}: unknown keys {sorted(unknown)}")
        cfg = _merge(cfg, doc)
    return cfg


def apply_flags(cfg: dict, args) -> dict:
    """Flags win over the config file."""
    cfg = copy.deepcopy(cfg)
    for name in ("data", "init", "train"):
        v = getattr(args, f"seed_{name}", None)
        if v is not None:
            cfg["seeds"][name] = v
    if getattr(args, "scheme", None):
        cfg["scheme"] = args.scheme
    if getattr(args, "preset", None):
        cfg["preset"] = args.preset
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def provenance(cfg: dict) -> dict:
    return {"config_sha256": config_hash(cfg), "seeds": dict(cfg["seeds"])}


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")


# verbs


def cmd_inspect(args, cfg) -> int:
    record = read_edf(args.path)
    inv = record.inventory()
    if args.format == "json":
        print(json.dumps(inv, indent=2, sort_keys=True))
    else:
        print(f"{args.path}: {inv['n_signals']} channels, {inv['n_data_records']} records of {inv['record_duration_s']} s")
        for ch in inv["channels"]:
            print(f"  {ch['label']:<20} {ch['sample_rate_hz']:>8g} Hz  {ch['physical_dim']:<6} "
                  f"[{ch['physical_min']:g}, {ch['physical_max']:g}]  {ch['n_samples']} samples")
        if inv["n_annotations"]:
            print(f"  {inv['n_annotations']} annotations")
    return EXIT_OK


def cmd_synth(args, cfg) -> int:
    classes = args.classes
    if args.availability:
        counts = [AVAILABILITY[args.availability][c] for c in classes]
    elif args.counts:
        if len(args.counts) != len(classes):
            raise UsageError(f"--counts needs {len(classes)} values, one per class")
        counts = args.counts
    else:
        counts = [args.per_class] * len(classes)
    seed = cfg["seeds"]["data"]
    epochs = generate_synthetic(
        profiles_for(classes, args.noise), counts, args.channels, args.rate, seed, args.epoch_seconds
    )
    extra = {"provenance": provenance(cfg), "synth": {"classes": classes, "counts": list(map(int, counts)),
                                                       "noise_sigma": args.noise, "epoch_s": args.epoch_seconds}}
    manifest = export_shards(epochs, args.out, extra=extra)
    print(f"wrote {manifest['n_epochs']} epochs to {args.out}")
    return EXIT_OK


def _load_recordings(cfg: dict) -> EpochSet:
    data = cfg["data"]
    sets = []
    for k, entry in enumerate(data["recordings"] or []):
        if "edf" not in entry or "hypnogram" not in entry:
            raise UsageError(f"recording {k}: needs 'edf' and 'hypnogram' paths")
        record = read_edf(entry["edf"])
        if data.get("channels"):
            record = select_channels(record, data["channels"])
        ann = read_hypnogram(entry["hypnogram"], entry.get("format"))
        rid = entry.get("id") or Path(entry["edf"]).stem
        epochs = epoch_recording(record, ann, rid)
        # which scorer's label file was used is kept with the data
        epochs.meta = {"hypnograms": {rid: str(entry["hypnogram"])}}
        sets.append(epochs)
    if not sets:
        raise DataError("config lists no recordings and no shard source")
    merged = EpochSet.concat(sets)
    merged.meta = {"hypnograms": {k: v for s in sets for k, v in s.meta["hypnograms"].items()}}
    return merged


def cmd_prepare(args, cfg) -> int:
    if args.source:
        cfg["data"]["shards"] = args.source
    seed = cfg["seeds"]["data"]
    epochs = import_shards(cfg["data"]["shards"]) if cfg["data"]["shards"] else _load_recordings(cfg)
    if epochs.scheme:
        raise DataError("prepare expects per-stage epochs; the source already has a label scheme")
    if not epochs.normalized:
        epochs = normalize_set(epochs)
    if cfg["preset"] != "none":
        epochs = undersample(epochs, preset_targets(cfg["preset"], epochs), seed)
    elif cfg["targets"]:
        epochs = undersample(epochs, cfg["targets"], seed)
    epochs = map_labels(epochs, get_scheme(cfg["scheme"]))
    s = cfg["split"]
    spec = SplitSpec(s["train"], s["val"], s["test"], seed, s.get("mode", "stratified"))
    out = Path(args.out)
    extra = {"provenance": provenance(cfg)}
    parts = {}
    for name, part in zip(SPLITS, split(epochs, spec)):
        m = export_shards(part, out / name, extra=extra)
        parts[name] = {"n_epochs": m["n_epochs"], "class_counts": m["class_counts"]}
    manifest = {
        **extra,
        "config": cfg,
        "n_epochs": len(epochs),
        "class_counts": epochs.class_counts(),
        "label_scheme": epochs.scheme,
        "splits": parts,
    }
    _write_json(out / "prepare.json", manifest)
    print(" ".join(f"{k}={v['n_epochs']}" for k, v in parts.items()) + f" total={len(epochs)}")
    return EXIT_OK


def _model_config(cfg: dict, epochs: EpochSet, args) -> SSNetConfig:
    over = dict(cfg["model"])
    if args.dtype:
        over["dtype"] = args.dtype
    for name in ("cnn_maps", "lstm_sizes"):
        if getattr(args, name):
            over[name] = getattr(args, name)
    unknown = set(over) - {f.name for f in fields(SSNetConfig)}
    if unknown:
        raise UsageError(f"unknown model keys {sorted(unknown)}")
    n_classes = len(epochs.class_names)
    return SSNetConfig.from_dict({**over, "n_channels": epochs.n_channels, "epoch_len": epochs.epoch_len, "n_classes": n_classes})


def _hyperparams(cfg: dict, args) -> HyperParams:
    over = dict(cfg["train"])
    unknown = set(over) - {f.name for f in fields(HyperParams)}
    if unknown:
        raise UsageError(f"unknown train keys {sorted(unknown)}")
    for name in ("learning_rate", "batch_size", "max_epochs", "patience", "clip_norm"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    over["seed"] = cfg["seeds"]["train"]
    return HyperParams(**over)


def _set_dtype(epochs: EpochSet, dtype) -> tuple[np.ndarray, np.ndarray]:
    return epochs.x.astype(dtype, copy=False), epochs.labels


def cmd_train(args, cfg) -> int:
    data = Path(args.data)
    train_set, val_set = import_shards(data / "train"), import_shards(data / "val")
    hp = _hyperparams(cfg, args)
    out = Path(args.out)
    ckpt = out / "checkpoints"
    if args.resume:
        state = checkpoint_load(args.resume)
        model = state.model
    else:
        state = None
        model = build(_model_config(cfg, train_set, args), cfg["seeds"]["init"])
    dtype = model.dtype
    best, history, state = train(
        model, _set_dtype(train_set, dtype), _set_dtype(val_set, dtype), hp, resume=state, checkpoint_dir=ckpt
    )
    prov = provenance(cfg)
    _write_json(out / "history.json", {**prov, "hyperparams": asdict(hp), **history.to_dict()})
    _write_json(out / "model.json", {**prov, **best.manifest()})
    for name in ("last", "best"):
        meta_path = ckpt / name / "meta.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            meta["provenance"] = prov
            meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=float))
    print(f"trained {history.epochs_completed} epochs, best epoch {history.best_epoch}, "
          f"val loss {min(history.val_loss) if history.val_loss else float('nan'):.5f}")
    return EXIT_OK


def _resolve_checkpoint(path: Path) -> Path:
    for cand in (path, path / "checkpoints" / "last", path / "last"):
        if (cand / "meta.json").exists():
            return cand
    raise DataError(f"no checkpoint found at {path}")


def cmd_eval(args, cfg) -> int:
    state = checkpoint_load(_resolve_checkpoint(Path(args.checkpoint)))
    model = best_model(state)
    test = import_shards(args.data)
    c = model.config
    if test.x.shape[1:] != (c.n_channels, c.epoch_len):
        raise ShapeMismatch(f"shards hold {test.x.shape[1:]} epochs, model expects {(c.n_channels, c.epoch_len)}")
    if len(test.class_names) != c.n_classes:
        raise ShapeMismatch(f"shards have {len(test.class_names)} classes, model predicts {c.n_classes}")
    x, y = _set_dtype(test, model.dtype)
    loss, acc, pred = evaluate(model, x, y)
    cm = metrics.confusion(pred, y, c.n_classes, test.class_names)
    rows, avg = metrics.build_report(cm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "confusion.csv").write_text(metrics.render_confusion_csv(cm))
    (out / "metrics.csv").write_text(metrics.render_report(cm, rows + [avg], "csv"))
    doc = json.loads(metrics.render_report(cm, rows + [avg], "json"))
    doc.update({"provenance": provenance(cfg), "loss": loss, "overall_accuracy": 100.0 * acc,
                "checkpoint": str(args.checkpoint)})
    if c.n_classes == 5:
        doc["rem_detection"] = metrics.rem_detection_summary(cm)
    _write_json(out / "metrics.json", doc)
    table = metrics.render_report(cm, rows + [avg], "table")
    (out / "report.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    from ssnet.autodiff.suite import run_suite

    results = run_suite(args.seeds, cfg["seeds"]["init"], perturb_layer=args.perturb, include_model=not args.no_model)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all layers pass" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_report(args, cfg) -> int:
    cm, rows = metrics.report_from_json(Path(args.metrics).read_text())
    print(metrics.render_report(cm, rows, args.format), end="")
    return EXIT_OK


# parser


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed-data", type=int)
    common.add_argument("--seed-init", type=int)
    common.add_argument("--seed-train", type=int)
    common.add_argument("--scheme", choices=("three", "five"))
    common.add_argument("--preset", choices=("sleep-edfx", "isruc", "none"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = Parser(prog="ssnet", description="Sleep-stage pipeline: data preparation, training and evaluation.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=Parser)

    s = sub.add_parser("inspect", parents=[common], help="dump the header and channels of an EDF file")
    s.add_argument("path")
    s.add_argument("--format", choices=("table", "json"), default="json")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("synth", parents=[common], help="generate band-limited synthetic epochs as shards")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", nargs="+", default=["W", "N3", "REM"], choices=("W", "N1", "N2", "N3", "REM"))
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--counts", type=int, nargs="+", help="one epoch count per class")
    s.add_argument("--availability", choices=sorted(AVAILABILITY), help="use published per-stage totals as counts")
    s.add_argument("--channels", type=int, default=2)
    s.add_argument("--rate", type=float, default=100.0)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--epoch-seconds", type=float, default=30.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", parents=[common], help="normalize, undersample, label and split into shards")
    s.add_argument("--out", required=True)
    s.add_argument("--source", help="shard directory to prepare instead of the config's recordings")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common], help="train on prepared shards")
    s.add_argument("--data", required=True, help="prepare output directory (holds train/ and val/)")
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="checkpoint directory to continue from")
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--clip-norm", type=float)
    s.add_argument("--dtype", choices=("float32", "float64"))
    s.add_argument("--cnn-maps", type=int, nargs="+")
    s.add_argument("--lstm-sizes", type=int, nargs=2)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score a checkpoint on a shard directory")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="shard directory, e.g. <prepared>/test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every layer")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--no-model", action="store_true", help="skip the whole-model check")
    s.add_argument("--perturb", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("report", parents=[common], help="re-render a metrics.json file")
    s.add_argument("metrics")
    s.add_argument("--format", choices=("table", "csv", "json"), default="table")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = apply_flags(load_config(args.config), args)
        return args.func(args, cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, yaml.YAMLError) as e:
        print(f"data error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
