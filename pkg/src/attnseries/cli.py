"""Command-line entry point: generate, train, tune, evaluate, attribute, attend, embed.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 incompatible checkpoint, 4 unsupported operation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import MODES, NUM_BANDS, Dataset, generate, load, save
from .errors import (
    CompatibilityError,
    ConfigurationError,
    ContractError,
    DimensionError,
    ParseError,
    TrainingDiverged,
    UnsupportedOperation,
)
from .models import ModelSpec, build
from .train import fit, write_log
from .tune import AshaState, FitRunner, SearchSpace, run_study

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_COMPAT, EXIT_UNSUPPORTED = 0, 1, 2, 3, 4
COMMANDS = ("generate", "train", "tune", "evaluate", "attribute", "attend", "embed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment configuration JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--parallelism", type=int, default=None, help="concurrent tuning trials")
    common.add_argument("--dataset", help="dataset CSV (with its JSON sidecar)")
    common.add_argument("--checkpoint", help="checkpoint directory")
    common.add_argument("--mode", choices=MODES, help="raw or preprocessed series")
    parser = _Parser(prog="attnseries", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "generate": "write a synthetic dataset",
        "train": "train a model and write its checkpoint and log",
        "tune": "hyperparameter search with successive halving",
        "evaluate": "accuracy, kappa and f1 on a partition",
        "attribute": "input-gradient attribution per sample",
        "attend": "mean self-attention scores per layer and head",
        "embed": "time-averaged features projected by PCA",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs {' '.join(missing)}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path) -> Dataset:
    if not Path(path).exists():
        raise ParseError(f"dataset {path} not found")
    return load(path)


def worker_cap(requested: int) -> int:
    cap = os.environ.get("ATTNSERIES_THREADS")
    n = max(1, requested)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigurationError(f"ATTNSERIES_THREADS must be an integer, got {cap!r}")
    return n


def _base_spec(cfg: ExperimentConfig, ds: Dataset, mode: str) -> dict:
    return {"input_dim": NUM_BANDS, "num_classes": ds.num_classes, "seq_len": ds.nominal_length(mode)}


def _arrays(ds: Dataset, mode: str, partition: str):
    x, y, samples = ds.tensors(mode, partition)
    if len(x) == 0:
        raise ParseError(f"dataset has no usable samples in partition {partition!r}")
    return x, y, samples


def cmd_generate(args, cfg: ExperimentConfig):
    out = _out_dir(args)
    ds = generate(cfg.generator())
    save(ds, out / "dataset.csv")
    counts = np.bincount([s.label for s in ds.samples], minlength=ds.num_classes)
    for name, c in zip(ds.class_names, counts):
        print(f"class {name}: {c}")
    for part in ("train", "val", "test"):
        print(f"partition {part}: {len(ds.partition(part))} samples")
    print(f"total: {len(ds)}")


def cmd_train(args, cfg: ExperimentConfig):
    _require(args, "dataset", "out")
    ds = _load_dataset(args.dataset)
    mode = args.mode or cfg.mode
    out = _out_dir(args)
    spec = ModelSpec(**{**cfg.model_fields(), **_base_spec(cfg, ds, mode)}).validate()
    tc = cfg.train_config()
    x_tr, y_tr, _ = _arrays(ds, mode, "train")
    x_va, y_va, _ = _arrays(ds, mode, "val")
    model = build(spec, cfg.seed)
    result = fit(model, (x_tr, y_tr), (x_va, y_va), tc, log_path=out / "train_log.csv")
    save_checkpoint(model, out / "checkpoint",
                    {"mode": mode, "seed": cfg.seed, "best_epoch": result.best_epoch,
                     "epochs": len(result.history)})
    best = result.best
    kappa = "nan" if best is None else f"{best.report.kappa:.6f}"
    print(f"epochs={len(result.history)} best_epoch={result.best_epoch} val_kappa={kappa}")


def cmd_tune(args, cfg: ExperimentConfig):
    _require(args, "dataset", "out")
    ds = _load_dataset(args.dataset)
    mode = args.mode or cfg.mode
    out = _out_dir(args)
    settings = cfg.tune_settings()
    rungs = tuple(settings["rungs"])
    asha = AshaState(rungs=rungs, grace=rungs[0], max_epochs=rungs[-1])
    arch = cfg.model_fields()["architecture"]
    space = SearchSpace.for_architecture(arch)
    base_spec = _base_spec(cfg, ds, mode)
    base_train = {k: v for k, v in cfg.train.items() if k not in ("learning_rate", "weight_decay", "n_warmup")}
    base_train["max_epochs"] = rungs[-1]
    train_set = _arrays(ds, mode, "train")[:2]
    val_set = _arrays(ds, mode, "val")[:2]

    def make_runner(config, seed):
        return FitRunner(space, config, train_set, val_set, seed, base_spec, base_train)

    parallelism = worker_cap(args.parallelism or settings["parallelism"])
    ledger = out / "study.jsonl"
    result = run_study(space, make_runner, settings["budget_trials"], parallelism, cfg.seed, asha,
                       ledger_path=ledger, resume=ledger.exists(), sampler=settings["sampler"])
    with open(out / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "trial_id", "status", "best_kappa", "highest_rung", "config"])
        for rank, t in enumerate(result.trials, start=1):
            w.writerow([rank, t.trial_id, t.status, repr(float(t.score)), t.highest_rung,
                        json.dumps(t.config, sort_keys=True)])
    ranked = [t for t in result.trials if t.status != "failed"][:3]
    for rank, trial in enumerate(ranked, start=1):
        spec, tc = space.materialize(trial.config, base_spec, base_train)
        model_doc = {k: v for k, v in spec.to_dict().items()
                     if k not in ("input_dim", "num_classes", "seq_len", "resample_length")}
        train_doc = {k: v for k, v in tc.to_dict().items() if k != "seed"}
        doc = {"seed": cfg.seed, "data": {"mode": mode}, "model": model_doc, "train": train_doc}
        (out / f"top{rank}.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
        print(f"top{rank} trial={trial.trial_id} kappa={trial.best_kappa:.6f}")


def _model_for(args, ds: Dataset):
    _require(args, "checkpoint", "dataset")
    model, run = load_checkpoint(args.checkpoint)
    mode = args.mode or run.get("mode") or "preprocessed"
    spec = model.spec
    if spec.input_dim != NUM_BANDS:
        raise CompatibilityError(f"checkpoint expects {spec.input_dim} bands, dataset has {NUM_BANDS}")
    if spec.num_classes != ds.num_classes:
        raise CompatibilityError(
            f"checkpoint predicts {spec.num_classes} classes, dataset has {ds.num_classes}")
    if spec.architecture == "tempcnn" and spec.seq_len != ds.nominal_length(mode):
        raise CompatibilityError(
            f"TempCNN checkpoint was built for T={spec.seq_len}, {mode} series have T={ds.nominal_length(mode)}")
    return model, mode


def _analysis_rows(args, cfg, model, ds, mode):
    settings = cfg.analysis_settings()
    x, y, samples = _arrays(ds, mode, settings["partition"])
    labels = y.argmax(1)
    if settings["correct_only"]:
        keep = analysis.predict_logits(model, x).argmax(1) == labels
        x, labels = x[keep], labels[keep]
        samples = [s for s, k in zip(samples, keep) if k]
    n = settings["num_samples"]
    return x[:n], labels[:n], [s.sample_id for s in samples[:n]], settings


def cmd_evaluate(args, cfg: ExperimentConfig):
    ds = _load_dataset(args.dataset) if args.dataset else None
    model, mode = _model_for(args, ds)
    _require(args, "out")
    out = _out_dir(args)
    settings = cfg.analysis_settings()
    x, y, _ = _arrays(ds, mode, settings["partition"])
    pred = analysis.predict_logits(model, x).argmax(1)
    report = analysis.metrics(pred, y.argmax(1), ds.num_classes)
    analysis.write_confusion_csv(report.confusion, out / "confusion.csv", ds.class_names)
    with open(out / "f1.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "f1"])
        for name, v in zip(ds.class_names, report.f1):
            w.writerow([name, repr(float(v))])
    print(f"accuracy={report.accuracy:.6f} kappa={report.kappa:.6f} macro_f1={report.macro_f1:.6f} "
          f"n={len(pred)}")


def cmd_attribute(args, cfg: ExperimentConfig):
    ds = _load_dataset(args.dataset) if args.dataset else None
    model, mode = _model_for(args, ds)
    _require(args, "out")
    out = _out_dir(args)
    x, labels, ids, _ = _analysis_rows(args, cfg, model, ds, mode)
    att = analysis.input_gradients(model, x)
    analysis.write_attribution_csv(att, out / "attribution.csv", ids, labels)
    print(f"samples={len(ids)} rows={att.gradients.size}")


def cmd_attend(args, cfg: ExperimentConfig):
    ds = _load_dataset(args.dataset) if args.dataset else None
    model, mode = _model_for(args, ds)
    _require(args, "out")
    if not analysis.has_attention(model):
        raise UnsupportedOperation("architecture has no attention")
    out = _out_dir(args)
    x, _, ids, _ = _analysis_rows(args, cfg, model, ds, mode)
    summary = analysis.attention_summary(model, x)
    analysis.write_attention_csv(summary, out / "attention.csv", ids)
    print(f"samples={len(ids)} maps={len(summary.keys)}")


def cmd_embed(args, cfg: ExperimentConfig):
    ds = _load_dataset(args.dataset) if args.dataset else None
    model, mode = _model_for(args, ds)
    _require(args, "out")
    out = _out_dir(args)
    x, labels, ids, settings = _analysis_rows(args, cfg, model, ds, mode)
    layer = settings["layer_index"]
    n_layers = len(model.hidden_names)
    if layer < 0:
        layer += n_layers
    emb = analysis.extract_embeddings(model, x, labels, layer)
    k = min(settings["components"], emb.features.shape[1])
    proj = analysis.pca(emb, k)
    analysis.write_embeddings_csv(proj.points, labels, out / "embeddings.csv", layer, ids)
    with open(out / "explained_variance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "ratio"])
        for i, r in enumerate(proj.explained_ratio, start=1):
            w.writerow([i, repr(float(r))])
    print(f"samples={len(ids)} layer={model.hidden_names[layer]} components={k}")


HANDLERS = {
    "generate": cmd_generate, "train": cmd_train, "tune": cmd_tune, "evaluate": cmd_evaluate,
    "attribute": cmd_attribute, "attend": cmd_attend, "embed": cmd_embed,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "generate":
            _require(args, "out")
        cfg = ExperimentConfig.load(args.config).with_seed(args.seed)
        HANDLERS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, TrainingDiverged, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CompatibilityError as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except UnsupportedOperation as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
