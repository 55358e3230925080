"""Command-line interface: fit, score, eval, select-k, synth, experiment.

stdout carries machine-readable results (JSON or CSV); human-readable progress
goes to stderr. Exit codes: 0 ok, 2 input error, 3 numerical failure.

One CSV column convention serves two purposes, disambiguated by subcommand:
``fit`` reads the label column as weak labels (0 unlabeled / 1 labeled
anomaly) unless --labeled-ratio is given, in which case the column is ground
truth and the weak split is built automatically. ``eval`` and ``synth`` always
treat the column as ground truth. Keep the two readings straight: feeding
ground truth to a weak-mode fit leaks every anomaly label into training.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

import numpy as np

from .config import TrainConfig
from .data import (
    ANOMALY_KINDS,
    DataError,
    Dataset,
    SplitConfig,
    WeakLabel,
    WeakSplit,
    load_csv,
    make_weak_split,
    synth_multimodal,
    write_csv,
)
from .experiments import EXPERIMENT_KINDS, ExperimentConfig, run_experiment, write_results_csv
from .metrics import MetricError, evaluate
from .snapshot import SnapshotError, load as load_snapshot, save as save_snapshot
from .trainer import TrainingDivergenceError, fit as fit_model, infer
from .nn import NonFiniteGradientError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=None, help="maximum joint training epochs")
    p.add_argument("--pretrain-epochs", type=int, default=None, help="autoencoder pretraining epochs")
    p.add_argument("--patience", type=int, default=None, help="early-stopping patience in epochs")
    p.add_argument("--k", type=int, default=None, help="number of prototypes (default: silhouette sweep)")
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="learning rate")
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-unlabeled", type=int, default=None)
    p.add_argument("--batch-anomaly", type=int, default=None)
    p.add_argument("--margin", type=float, default=None, help="reconstruction hinge margin")
    p.add_argument("--score-loss", choices=("squared", "bce"), default=None)
    p.add_argument("--val-metric", choices=("objective", "auc_pr"), default=None,
                   help="early-stopping criterion: the weak-label loss objective (default) "
                        "or AUC-PR on the validation split (needs ground truth)")
    p.add_argument(
        "--ablate", action="append", default=[], metavar="COMPONENT",
        choices=("recon_loss", "np_loss", "weights", "decoder", "multi_prototype"),
        help="disable a model component (repeatable)",
    )


def _train_config(args, seed: int) -> TrainConfig:
    cfg = TrainConfig(seed=seed)
    overrides = {
        "epochs_max": args.epochs,
        "pretrain_epochs": args.pretrain_epochs,
        "patience": args.patience,
        "n_prototypes": args.k,
        "latent_dim": args.latent_dim,
        "learning_rate": args.lr,
        "weight_decay": args.weight_decay,
        "batch_unlabeled": args.batch_unlabeled,
        "batch_anomaly": args.batch_anomaly,
        "margin": args.margin,
        "score_loss": args.score_loss,
        "val_metric": args.val_metric,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    flag_by_component = {
        "recon_loss": "use_recon_loss",
        "np_loss": "use_np_loss",
        "weights": "use_weights",
        "decoder": "use_decoder",
        "multi_prototype": "multi_prototype",
    }
    for component in args.ablate:
        cfg = replace(cfg, **{flag_by_component[component]: False})
    return cfg


def _weak_mode_split(dataset: Dataset, val_fraction: float, seed: int) -> WeakSplit:
    """Split a weak-labeled dataset into train pools plus a validation slice."""
    if dataset.truth is None:
        raise DataError("the weak-label column is missing")
    labels = dataset.truth  # column read generically; here it means weak labels
    u_idx = np.flatnonzero(labels == 0)
    a_idx = np.flatnonzero(labels == 1)
    if len(a_idx) == 0:
        raise DataError("weak supervision requires >= 1 row labeled 1 (labeled anomaly)")
    rng = np.random.default_rng(seed)
    u_idx = rng.permutation(u_idx)
    a_idx = rng.permutation(a_idx)
    n_val_u = int(np.floor(val_fraction * len(u_idx) + 0.5))
    n_val_a = min(int(np.floor(val_fraction * len(a_idx) + 0.5)), len(a_idx) - 1)

    def strip_truth(d: Dataset) -> Dataset:
        return replace(d, truth=None)

    train_u = strip_truth(dataset.subset(u_idx[n_val_u:])).with_weak(WeakLabel.UNLABELED)
    train_a = strip_truth(dataset.subset(a_idx[n_val_a:])).with_weak(WeakLabel.LABELED_ANOMALY)
    val = dataset.subset(np.concatenate([u_idx[:n_val_u], a_idx[:n_val_a]]))
    val = replace(val, weak=np.concatenate([
        np.full(n_val_u, WeakLabel.UNLABELED, dtype=np.int64),
        np.full(n_val_a, WeakLabel.LABELED_ANOMALY, dtype=np.int64),
    ]), truth=None)
    empty_test = Dataset(features=np.empty((0, dataset.n_features)), ids=np.empty(0, dtype=np.int64))
    return WeakSplit(train_u, train_a, val, empty_test)


def _write_report(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "epoch", "loss_recon", "loss_np", "loss_score",
            "weight_recon", "weight_np", "weight_score", "val_objective", "stopped_early",
        ])
        for r in reports:
            writer.writerow([
                r.epoch, repr(r.loss_recon), repr(r.loss_np), repr(r.loss_score),
                repr(r.weight_recon), repr(r.weight_np), repr(r.weight_score),
                repr(r.val_objective), int(r.stopped_early),
            ])


def cmd_fit(args) -> int:
    dataset = load_csv(args.train_csv, label_column=args.label_column)
    if dataset.truth is None:
        raise DataError(f"{args.train_csv}: label column {args.label_column!r} not found")

    if args.labeled_ratio is not None:
        split = make_weak_split(dataset, SplitConfig(
            labeled_anomaly_ratio=args.labeled_ratio,
            val_fraction=args.val_fraction,
            test_fraction=args.test_fraction,
            seed=args.seed,
        ))
    else:
        split = _weak_mode_split(dataset, args.val_fraction, args.seed)

    config = _train_config(args, args.seed)
    _log(f"training on {len(split.train_unlabeled)} unlabeled + {len(split.train_anomalies)} labeled anomalies")
    snapshot, reports = fit_model(split, config)
    save_snapshot(snapshot, args.out)
    report_path = args.report if args.report else f"{args.out}.epochs.csv"
    _write_report(reports, report_path)
    _log(f"wrote model to {args.out} and epoch report to {report_path}")

    result = {
        "model": str(args.out),
        "report": str(report_path),
        "epochs": len(reports),
        "k": snapshot.k,
        "stopped_early": any(r.stopped_early for r in reports),
        "best_val_objective": min(r.val_objective for r in reports),
    }
    if args.labeled_ratio is not None and len(split.test) > 0:
        test_eval = evaluate(infer(snapshot, split.test.features), split.test.truth)
        result["test_auc_pr"] = test_eval.auc_pr
        result["test_auc_roc"] = test_eval.auc_roc
        result["n_test"] = len(split.test)
        if args.dump_splits:
            write_csv(split.test, f"{args.dump_splits}.test.csv", label_column=args.label_column)
            result["test_csv"] = f"{args.dump_splits}.test.csv"
    _emit_json(result)
    return EXIT_OK


def cmd_score(args) -> int:
    snapshot = load_snapshot(args.model)
    dataset = load_csv(args.csv, label_column=args.label_column)  # label column ignored if present
    scores = infer(snapshot, dataset.features)
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["id", "score"])
        for i, s in zip(dataset.ids, scores):
            writer.writerow([int(i), repr(float(s))])
    finally:
        if args.out:
            out.close()
    if args.out:
        _log(f"wrote {len(scores)} scores to {args.out}")
    return EXIT_OK


def _read_scores_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "score"]:
            raise DataError(f"{path}: expected a scores CSV with header 'id,score'")
        ids, scores = [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) < 2:
                raise DataError(f"{path}: row {row_no} is missing cells")
            try:
                ids.append(int(row[0]))
                scores.append(float(row[1]))
            except ValueError:
                raise DataError(f"{path}: unparsable id/score at row {row_no}") from None
    return np.asarray(ids, dtype=np.int64), np.asarray(scores, dtype=np.float64)


def cmd_eval(args) -> int:
    ids, scores = _read_scores_csv(args.scores)
    truth_ds = load_csv(args.truth, label_column=args.label_column)
    if truth_ds.truth is None:
        raise DataError(f"{args.truth}: label column {args.label_column!r} not found")
    if len(ids) != len(truth_ds.ids) or set(ids.tolist()) != set(truth_ds.ids.tolist()):
        raise DataError("scores and truth ids do not match")
    order = {int(i): pos for pos, i in enumerate(truth_ds.ids)}
    truth = np.asarray([truth_ds.truth[order[int(i)]] for i in ids], dtype=np.int64)
    result = evaluate(scores, truth)
    _emit_json({
        "auc_pr": result.auc_pr,
        "auc_roc": result.auc_roc,
        "n_pos": result.n_pos,
        "n_neg": result.n_neg,
    })
    return EXIT_OK


def cmd_select_k(args) -> int:
    from .cluster import choose_k
    from .nn import AdamConfig
    from .recon import make_decoder, make_encoder
    from .trainer import pretrain
    from .data import fit_norm

    dataset = load_csv(args.train_csv, label_column=args.label_column)
    features = dataset.features
    if dataset.truth is not None:
        features = features[dataset.truth == 0]  # cluster the unlabeled rows only
        _log(f"clustering {len(features)} unlabeled rows (label column present)")
    if len(features) == 0:
        raise DataError("no unlabeled rows to cluster")
    stats = fit_norm(features)
    x = stats.transform(features)

    rng = np.random.default_rng(args.seed)
    encoder = make_encoder(x.shape[1], args.latent_dim, 64, rng)
    decoder = make_decoder(args.latent_dim, x.shape[1], 64, rng)
    pretrain(encoder, decoder, x, args.pretrain_epochs, 128,
             AdamConfig(learning_rate=5e-3, weight_decay=5e-4), rng)
    latents = encoder.forward(x)
    norms = np.linalg.norm(latents, axis=1, keepdims=True)
    normalized = latents / np.where(norms > 0, norms, 1.0)
    chosen, scores = choose_k(normalized, k_max=args.k_max, seed=args.seed)
    _emit_json({
        "chosen_k": chosen,
        "silhouette": {str(k): scores[k] for k in sorted(scores)},
    })
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "silhouette"])
            for k in sorted(scores):
                writer.writerow([k, "" if scores[k] is None else repr(scores[k])])
    return EXIT_OK


def cmd_synth(args) -> int:
    dataset = synth_multimodal(args.n_normal, args.n_anomaly, args.n_features,
                               args.k_true, args.anomaly_kind, seed=args.seed)
    write_csv(dataset, args.out, label_column=args.label_column)
    _log(f"wrote {len(dataset)} rows ({args.n_anomaly} anomalies) to {args.out}")
    _emit_json({"rows": len(dataset), "n_features": dataset.n_features, "out": str(args.out)})
    return EXIT_OK


def cmd_experiment(args) -> int:
    base = ExperimentConfig(
        n_normal=args.n_normal,
        n_anomaly=args.n_anomaly,
        n_features=args.n_features,
        k_true=args.k_true,
        anomaly_kind=args.anomaly_kind,
        unseen_kind=args.unseen_kind,
        labeled_ratio=args.labeled_ratio,
        n_labeled=args.n_labeled,
        train=_train_config(args, args.seed),
    )
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    raw = [g.strip() for g in args.grid.split(",") if g.strip() != ""]
    if args.kind == "ratio_sweep":
        grid = [float(g) / 100.0 for g in raw]  # grid values are percentages
    elif args.kind == "contamination_sweep":
        grid = [float(g) / 100.0 for g in raw]
    elif args.kind == "k_sensitivity":
        grid = [int(g) for g in raw]
    else:
        grid = raw
    _log(f"running {args.kind} over grid={raw} seeds={seeds}")
    rows, summary = run_experiment(args.kind, base, grid, seeds)
    write_results_csv(rows, args.out)
    _log(f"wrote {len(rows)} result rows to {args.out}")
    _emit_json(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mnpad",
        description="Weakly supervised anomaly detection with reconstruction and multi-normal prototypes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train a model from a CSV")
    p.add_argument("train_csv")
    p.add_argument("--out", required=True, help="model snapshot output path")
    p.add_argument("--report", default=None, help="epoch report CSV (default: <out>.epochs.csv)")
    p.add_argument("--label-column", default="label")
    p.add_argument("--labeled-ratio", type=float, default=None,
                   help="treat the label column as ground truth and auto-build the weak split "
                        "with this labeled-anomaly fraction")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--test-fraction", type=float, default=0.2,
                   help="only used with --labeled-ratio")
    p.add_argument("--dump-splits", default=None, metavar="PREFIX",
                   help="with --labeled-ratio: write the held-out test split to PREFIX.test.csv")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score a CSV with a trained model")
    p.add_argument("model")
    p.add_argument("csv")
    p.add_argument("--out", default=None, help="scores CSV path (default: stdout)")
    p.add_argument("--label-column", default="label",
                   help="column to ignore when present in the input CSV")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute AUC-PR / AUC-ROC from scores + ground truth")
    p.add_argument("--scores", required=True, help="CSV with id,score columns")
    p.add_argument("--truth", required=True, help="CSV with the ground-truth label column")
    p.add_argument("--label-column", default="label")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("select-k", help="silhouette sweep for the prototype count")
    p.add_argument("train_csv")
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--label-column", default="label")
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--pretrain-epochs", type=int, default=20)
    p.add_argument("--out", default=None, help="optional CSV of per-k silhouettes")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("synth", help="generate a synthetic multi-modal dataset CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--n-normal", type=int, default=1900)
    p.add_argument("--n-anomaly", type=int, default=100)
    p.add_argument("--n-features", type=int, default=10)
    p.add_argument("--k-true", type=int, default=3)
    p.add_argument("--anomaly-kind", choices=ANOMALY_KINDS, default="uniform_far")
    p.add_argument("--label-column", default="label")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("experiment", help="run a seeded experiment harness")
    p.add_argument("--kind", required=True, choices=EXPERIMENT_KINDS)
    p.add_argument("--grid", required=True,
                   help="comma-separated grid: percentages for ratio/contamination sweeps, "
                        "prototype counts for k_sensitivity, seen anomaly kinds for unseen")
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--n-normal", type=int, default=1900)
    p.add_argument("--n-anomaly", type=int, default=100)
    p.add_argument("--n-features", type=int, default=10)
    p.add_argument("--k-true", type=int, default=3)
    p.add_argument("--anomaly-kind", choices=ANOMALY_KINDS, default="uniform_far")
    p.add_argument("--unseen-kind", choices=ANOMALY_KINDS, default="shifted_cluster")
    p.add_argument("--labeled-ratio", type=float, default=0.01)
    p.add_argument("--n-labeled", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainingDivergenceError, NonFiniteGradientError) as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (DataError, MetricError, SnapshotError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return EXIT_INPUT
    except ValueError as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
