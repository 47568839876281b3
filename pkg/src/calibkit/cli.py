"""Command-line front end tying generation, training, scoring, post-hoc
calibration, and diagram-data export into reproducible runs.

Exit codes: 0 on success, 2 on input/validation errors, 1 on internal
errors. Errors are reported as one JSON object on stderr. Every command
writes a manifest (``<output>.manifest.json``) recording the command, its
full argument map, the seed, the toolkit version, and all output paths, so
any result can be reproduced from its manifest alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, metrics, model, posthoc
from .losses import LossSpec
from .numerics import softmax_rows

REPORT_SCHEMA = "calibkit/report/v1"
MANIFEST_SCHEMA = "calibkit/manifest/v1"
RELIABILITY_SCHEMA = "calibkit/reliability/v1"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _parse_int_list(text: str) -> list[int]:
    if not text.strip():
        return []
    return [int(part) for part in text.split(",")]


def _parse_float_list(text: str) -> list[float]:
    if not text.strip():
        return []
    return [float(part) for part in text.split(",")]


def _write_json(doc: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _write_manifest(args: argparse.Namespace, outputs: list[Path]) -> Path:
    arg_map = {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in ("func", "command") and not key.startswith("_")
    }
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": args.command,
        "args": arg_map,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "outputs": [str(p) for p in outputs],
    }
    path = Path(str(outputs[0]) + ".manifest.json")
    _write_json(manifest, path)
    return path


def _report_dict(report: metrics.CalibrationReport, n: int, k: int) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "ece": report.ece,
        "sce": report.sce,
        "mce": report.mce,
        "class_ece": report.class_ece,
        "accuracy": report.accuracy,
        "mean_confidence": report.mean_confidence,
        "m": report.m,
        "n": n,
        "k": k,
    }


def _score_log(log: metrics.PredictionLog, bins: int) -> dict:
    report = metrics.calibration_report(log, metrics.BinningConfig(m=bins))
    return _report_dict(report, log.n, log.k)


def _model_dataset_log(model_path: str, dataset_path: str) -> metrics.PredictionLog:
    mdl = model.load_model_json(model_path)
    ds = data.load_dataset_csv(dataset_path)
    logits = model.forward(mdl, ds.features)
    return metrics.PredictionLog(probs=softmax_rows(logits), labels=ds.labels)


def _loss_spec_from_args(args: argparse.Namespace) -> LossSpec:
    return LossSpec(
        classification=args.loss,
        alpha=args.alpha,
        gamma=args.gamma,
        auxiliary=args.aux,
        beta=args.beta,
    )


def _train_config_from_args(args: argparse.Namespace, seed: int, loss: LossSpec) -> model.TrainConfig:
    return model.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        lr_milestones=_parse_int_list(args.milestones),
        lr_decay=args.lr_decay,
        seed=seed,
        loss=loss,
        val_fraction=args.val_fraction,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args: argparse.Namespace) -> int:
    if args.kind == "blobs":
        ds = data.gen_blobs(k=args.k, n=args.n, d=args.d, separation=args.sep, seed=args.seed)
    else:
        ds = data.gen_longtail(
            k=args.k,
            n_max=args.n,
            d=args.d,
            separation=args.sep,
            imbalance_factor=args.imbalance_factor,
            seed=args.seed,
        )
    out = Path(args.out)
    data.save_dataset_csv(ds, out)
    _write_manifest(args, [out])
    print(f"wrote {out} ({ds.n} samples, {ds.k} classes, {ds.d} dims)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    ds = data.load_dataset_csv(args.dataset)
    spec = _loss_spec_from_args(args)
    cfg = _train_config_from_args(args, args.seed, spec)
    layer_dims = [ds.d] + _parse_int_list(args.hidden) + [ds.k]
    result = model.train(ds, layer_dims, cfg)

    out = Path(args.out)
    model.save_model_json(result.model, out)
    history = out.with_name(out.stem + ".history.csv")
    with open(history, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,val_accuracy\n")
        for epoch, (loss_v, acc_v) in enumerate(zip(result.train_loss, result.val_accuracy)):
            fh.write(f"{epoch},{_fmt(loss_v)},{_fmt(acc_v)}\n")
    _write_manifest(args, [out, history])
    print(f"wrote {out} (selected epoch {result.selected_epoch}, "
          f"val accuracy {result.val_accuracy[result.selected_epoch]:.4f})")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    has_log = args.log is not None
    has_pair = args.model is not None and args.dataset is not None
    if has_log == has_pair or (args.model is None) != (args.dataset is None):
        raise ValueError("provide either --log or both --model and --dataset")
    if has_log:
        log = data.load_prediction_log_jsonl(args.log)
    else:
        log = _model_dataset_log(args.model, args.dataset)
    doc = _score_log(log, args.bins)
    out = Path(args.out)
    _write_json(doc, out)
    _write_manifest(args, [out])
    print(json.dumps(doc))
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    use_model = args.model is not None
    if use_model == (args.log is not None) or (use_model and args.holdout is None):
        raise ValueError("provide either --log or both --model and --holdout")

    mdl = model.load_model_json(args.model) if use_model else None

    def dataset_logits(path):
        ds = data.load_dataset_csv(path)
        return model.forward(mdl, ds.features), ds.labels

    # temperature scaling needs raw logits; dirichlet works on probabilities
    if args.method == "ts":
        if use_model:
            logits, labels = dataset_logits(args.holdout)
        else:
            logits, labels = data.load_logits_jsonl(args.log)
        calibrator = posthoc.fit_temperature(logits, labels)
    else:
        if use_model:
            logits, labels = dataset_logits(args.holdout)
            probs = softmax_rows(logits)
        else:
            log = data.load_prediction_log_jsonl(args.log)
            probs, labels = log.probs, log.labels
        grid = posthoc.default_odir_grid(lr=args.dc_lr, epochs=args.dc_epochs)
        calibrator = posthoc.fit_dirichlet(probs, labels, grid)

    out = Path(args.out)
    posthoc.save_calibrator_json(calibrator, out)
    outputs = [out]

    before = after = test_labels = None
    if args.method == "ts":
        if use_model and args.test is not None:
            test_logits, test_labels = dataset_logits(args.test)
        elif not use_model and args.test_log is not None:
            test_logits, test_labels = data.load_logits_jsonl(args.test_log)
        else:
            test_logits = None
        if test_logits is not None:
            before = softmax_rows(test_logits)
            after = posthoc.apply_temperature(calibrator, test_logits)
    else:
        if use_model and args.test is not None:
            test_logits, test_labels = dataset_logits(args.test)
            before = softmax_rows(test_logits)
        elif not use_model and args.test_log is not None:
            test_log = data.load_prediction_log_jsonl(args.test_log)
            before, test_labels = test_log.probs, test_log.labels
        if before is not None:
            after = posthoc.apply_dirichlet(calibrator, before)

    if before is not None:
        for tag, probs_out in (("before", before), ("after", after)):
            log = metrics.PredictionLog(probs=probs_out, labels=test_labels)
            path = out.with_name(out.stem + f".{tag}.json")
            _write_json(_score_log(log, args.bins), path)
            outputs.append(path)

    _write_manifest(args, outputs)
    if args.method == "ts":
        print(f"fitted temperature t={calibrator.t:g}")
    else:
        print("fitted dirichlet calibrator")
    return 0


def cmd_reliability(args: argparse.Namespace) -> int:
    has_log = args.log is not None
    has_pair = args.model is not None and args.dataset is not None
    if has_log == has_pair or (args.model is None) != (args.dataset is None):
        raise ValueError("provide either --log or both --model and --dataset")
    if has_log:
        log = data.load_prediction_log_jsonl(args.log)
    else:
        log = _model_dataset_log(args.model, args.dataset)

    cfg = metrics.BinningConfig(m=args.bins)
    full_table = metrics.reliability_table(log, cfg)
    if args.misclassified_only:
        preds = np.argmax(log.probs, axis=1)
        keep = preds != log.labels
        if np.any(keep):
            sub = metrics.PredictionLog(probs=log.probs[keep], labels=log.labels[keep])
            table = metrics.reliability_table(sub, cfg)
        else:
            table = metrics.ReliabilityTable(
                m=cfg.m,
                counts=np.zeros(cfg.m, dtype=np.int64),
                accuracy=np.zeros(cfg.m),
                mean_confidence=np.zeros(cfg.m),
                global_accuracy=full_table.global_accuracy,
                global_mean_confidence=full_table.global_mean_confidence,
            )
    else:
        table = full_table

    bins = [
        {
            "lower": (i - 1) / cfg.m,
            "upper": i / cfg.m,
            "count": int(table.counts[i - 1]),
            "accuracy": float(table.accuracy[i - 1]),
            "mean_confidence": float(table.mean_confidence[i - 1]),
        }
        for i in range(1, cfg.m + 1)
    ]
    out = Path(args.out)
    if args.format == "json":
        doc = {
            "schema": RELIABILITY_SCHEMA,
            "m": cfg.m,
            "n": log.n,
            "misclassified_only": args.misclassified_only,
            "global_accuracy": full_table.global_accuracy,
            "global_mean_confidence": full_table.global_mean_confidence,
            "bins": bins,
        }
        _write_json(doc, out)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("lower\tupper\tcount\taccuracy\tmean_confidence\n")
            for row in bins:
                fh.write(
                    f"{_fmt(row['lower'])}\t{_fmt(row['upper'])}\t{row['count']}\t"
                    f"{_fmt(row['accuracy'])}\t{_fmt(row['mean_confidence'])}\n"
                )
            fh.write(f"# global_accuracy\t{_fmt(full_table.global_accuracy)}\n")
            fh.write(f"# global_mean_confidence\t{_fmt(full_table.global_mean_confidence)}\n")
    _write_manifest(args, [out])
    print(f"wrote {out}")
    return 0


def cmd_sweep_beta(args: argparse.Namespace) -> int:
    betas = _parse_float_list(args.betas)
    seeds = _parse_int_list(args.seeds)
    if not betas or not seeds:
        raise ValueError("--betas and --seeds must be nonempty")
    train_ds = data.load_dataset_csv(args.dataset)
    test_ds = data.load_dataset_csv(args.test)
    layer_dims = [train_ds.d] + _parse_int_list(args.hidden) + [train_ds.k]
    cfg_bins = metrics.BinningConfig(m=args.bins)

    rows = []
    for beta in betas:
        for seed in seeds:
            spec = LossSpec(
                classification=args.loss,
                alpha=args.alpha,
                gamma=args.gamma,
                auxiliary=args.aux,
                beta=beta,
            )
            cfg = _train_config_from_args(args, seed, spec)
            result = model.train(train_ds, layer_dims, cfg)
            from .numerics import softmax_rows

            logits = model.forward(result.model, test_ds.features)
            log = metrics.PredictionLog(probs=softmax_rows(logits), labels=test_ds.labels)
            report = metrics.calibration_report(log, cfg_bins)
            rows.append((beta, seed, report.accuracy, report.ece, report.sce))

    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("beta,seed,accuracy,ece,sce\n")
        for beta, seed, acc, ece, sce in rows:
            fh.write(f"{_fmt(beta)},{seed},{_fmt(acc)},{_fmt(ece)},{_fmt(sce)}\n")
    _write_manifest(args, [out])
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_trainer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--milestones", default="", help="comma-separated 0-based epochs at which lr decays")
    p.add_argument("--lr-decay", type=float, default=0.1)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--hidden", default="32", help="comma-separated hidden layer sizes")


def _add_loss_flags(p: argparse.ArgumentParser, with_beta: bool = True) -> None:
    p.add_argument("--loss", choices=["nll", "ls", "fl", "brier"], default="nll")
    p.add_argument("--alpha", type=float, default=0.1, help="label-smoothing mass")
    p.add_argument("--gamma", type=float, default=1.0, help="focal-loss exponent")
    p.add_argument("--aux", choices=["none", "mdca", "dca"], default="none")
    if with_beta:
        p.add_argument("--beta", type=float, default=1.0, help="auxiliary loss weight")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calibkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"calibkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic dataset CSV")
    gen_sub = p_gen.add_subparsers(dest="kind", required=True)
    for kind in ("blobs", "longtail"):
        p = gen_sub.add_parser(kind)
        p.set_defaults(func=cmd_generate, command="generate")
        p.add_argument("--k", type=int, required=True, help="number of classes")
        p.add_argument("--n", type=int, required=True,
                       help="total samples (blobs) or largest class size (longtail)")
        p.add_argument("--d", type=int, default=2, help="feature dimensions")
        p.add_argument("--sep", type=float, default=6.0, help="minimum distance between cluster means")
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", required=True)
        if kind == "longtail":
            p.add_argument("--if", dest="imbalance_factor", type=float, required=True,
                           help="largest/smallest class count ratio")

    p_train = sub.add_parser("train", help="train an MLP and save it as JSON")
    p_train.set_defaults(func=cmd_train, command="train")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--out", required=True)
    _add_loss_flags(p_train)
    _add_trainer_flags(p_train)

    p_score = sub.add_parser("score", help="compute the calibration report of a model or log")
    p_score.set_defaults(func=cmd_score, command="score")
    p_score.add_argument("--model")
    p_score.add_argument("--dataset")
    p_score.add_argument("--log", help="prediction log (JSONL)")
    p_score.add_argument("--bins", type=int, default=15)
    p_score.add_argument("--out", required=True)

    p_cal = sub.add_parser("calibrate", help="fit a post-hoc calibrator on a hold-out set")
    p_cal.set_defaults(func=cmd_calibrate, command="calibrate")
    p_cal.add_argument("method", choices=["ts", "dirichlet"])
    p_cal.add_argument("--model")
    p_cal.add_argument("--holdout", help="hold-out dataset CSV (with --model)")
    p_cal.add_argument("--log", help="hold-out JSONL (logits required for ts)")
    p_cal.add_argument("--test", help="test dataset CSV for before/after reports")
    p_cal.add_argument("--test-log", help="test JSONL for before/after reports")
    p_cal.add_argument("--bins", type=int, default=15)
    p_cal.add_argument("--dc-lr", type=float, default=0.01)
    p_cal.add_argument("--dc-epochs", type=int, default=500)
    p_cal.add_argument("--out", required=True)

    p_rel = sub.add_parser("reliability", help="export reliability diagram data")
    p_rel.set_defaults(func=cmd_reliability, command="reliability")
    p_rel.add_argument("--model")
    p_rel.add_argument("--dataset")
    p_rel.add_argument("--log")
    p_rel.add_argument("--bins", type=int, default=15)
    p_rel.add_argument("--misclassified-only", action="store_true")
    p_rel.add_argument("--format", choices=["json", "tsv"], default="json")
    p_rel.add_argument("--out", required=True)

    p_sweep = sub.add_parser("sweep-beta", help="train over a (beta, seed) grid and tabulate metrics")
    p_sweep.set_defaults(func=cmd_sweep_beta, command="sweep-beta")
    p_sweep.add_argument("--dataset", required=True, help="training dataset CSV")
    p_sweep.add_argument("--test", required=True, help="test dataset CSV for metrics")
    p_sweep.add_argument("--betas", default="0.25,0.5,1,5,10",
                         help="comma-separated auxiliary weights")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated seeds")
    p_sweep.add_argument("--bins", type=int, default=15)
    p_sweep.add_argument("--out", required=True)
    _add_loss_flags(p_sweep, with_beta=False)
    p_sweep.set_defaults(aux="mdca")
    _add_trainer_flags(p_sweep)

    return parser


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        _emit_error("validation", str(exc))
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _emit_error("internal", f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
