"""Single command-line entry point for the whole pipeline.

Subcommands: synth, enhance, cluster, train, orient-train, orient,
predict, eval, report.  Every run prints its effective configuration and
is reproducible from (inputs, flags, seed); all randomness flows from the
--seed flag, with fixed per-component offsets.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from dxpipe import checkpoint as ckpt_io
from dxpipe import cluster as cluster_mod
from dxpipe import enhance as enhance_mod
from dxpipe import metrics as metrics_mod
from dxpipe import orient as orient_mod
from dxpipe import synth as synth_mod
from dxpipe import trainer as trainer_mod
from dxpipe.image import load_pgm, save_pgm
from dxpipe.nnet import ModelConfig


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dxpipe",
        description="grayscale radiograph pipeline: synthesize, enhance, "
        "orient, classify, evaluate",
    )
    parser.add_argument("--seed", type=int, default=42, help="master random seed")
    parser.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--scale", type=float, default=0.2, help="class-count scale factor")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.02, help="impulse-noise probability")
    p.add_argument("--amplify", action="store_true", help="add equalized copies of the two smallest classes")

    p = sub.add_parser("enhance", help="enhance a PGM file or directory")
    p.add_argument("input", type=Path)
    p.add_argument("--stage", choices=["chain", "sharpen", "median", "equalize", "clahe"], default="chain")
    p.add_argument("--tiles", type=int, nargs=2, default=[8, 8], metavar=("X", "Y"))
    p.add_argument("--clip", type=float, default=2.0)
    p.add_argument("--median-radius", type=int, default=1)

    p = sub.add_parser("cluster", help="perceptual-hash / k-means dataset report")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--k", type=int, default=6)

    for name in ("train", "orient-train"):
        p = sub.add_parser(name, help=f"{'pose' if name.startswith('orient') else 'region'} classifier training")
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--epochs", type=int, default=40)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--lr", type=float, default=0.01)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--lr-decay-factor", type=float, default=0.5)
        p.add_argument("--lr-decay-every", type=int, default=10)
        p.add_argument("--validation-fraction", type=float, default=0.15)
        p.add_argument("--no-augment", action="store_true", help="disable rotation augmentation")
        p.add_argument("--input-size", type=int, default=32)
        p.add_argument("--branch-a-dim", type=int, default=66)
        p.add_argument("--branch-b-dim", type=int, default=96)
        p.add_argument("--fusion-dim", type=int, default=128)
        p.add_argument("--dropout", type=float, default=0.5)
        p.add_argument("--full-scale", action="store_true", help="use the full-size 1056/1536/2048 feature dims")
        if name == "train":
            p.add_argument("--uniform-loss", action="store_true", help="disable class weighting")
            p.add_argument(
                "--weighting-report",
                type=Path,
                default=None,
                help="also train a uniform-loss twin and write the recall comparison JSON",
            )

    p = sub.add_parser("orient", help="auto-correct image orientation")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("inputs", type=Path, nargs="+")

    p = sub.add_parser("predict", help="classify images with a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("inputs", type=Path, nargs="*")

    p = sub.add_parser("eval", help="evaluate a checkpoint or a predictions CSV against a manifest")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--predictions", type=Path, default=None, help="predictions CSV from `predict`")
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("report", help="merge eval reports into a comparison table")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--model-name", default="model")
    p.add_argument("--annotators", type=Path, nargs="*", default=[])
    p.add_argument("--annotators-name", default="annotators")
    return parser


def _print_config(args: argparse.Namespace) -> None:
    pairs = ", ".join(f"{k}={v}" for k, v in sorted(vars(args).items()))
    print(f"config: {pairs}")


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        input_size=args.input_size,
        branch_a_dim=args.branch_a_dim,
        branch_b_dim=args.branch_b_dim,
        fusion_dim=args.fusion_dim,
        dropout_rate=args.dropout,
        full_scale=args.full_scale,
    )


def _train_config(args) -> trainer_mod.TrainConfig:
    return trainer_mod.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        lr_decay_factor=args.lr_decay_factor,
        lr_decay_every=args.lr_decay_every,
        augment_rotations=not args.no_augment,
        seed=args.seed,
        validation_fraction=args.validation_fraction,
    )


def _cmd_synth(args) -> int:
    params = synth_mod.SynthParams(
        image_size=args.image_size, noise_impulse_prob=args.noise, rng_seed=args.seed
    )
    specs = synth_mod.default_class_specs(args.scale)
    manifest = synth_mod.generate_dataset(specs, params, args.out_dir)
    if args.amplify:
        counts = manifest.class_counts()
        present = [c for c in range(synth_mod.NUM_CLASSES) if counts[c] > 0]
        smallest = sorted(present, key=lambda c: (counts[c], c))[:2]
        manifest = synth_mod.amplify_minority(manifest, smallest)
        synth_mod.save_manifest(manifest, args.out_dir / "manifest.csv")
    counts = ", ".join(str(int(c)) for c in manifest.class_counts())
    print(f"wrote {len(manifest.entries)} images to {args.out_dir} (class counts: {counts})")
    return 0


def _cmd_enhance(args) -> int:
    params = enhance_mod.ClaheParams(args.tiles[0], args.tiles[1], args.clip)
    stages = {
        "chain": lambda im: enhance_mod.enhance_chain(im, params, args.median_radius),
        "sharpen": enhance_mod.sharpen,
        "median": lambda im: enhance_mod.median_filter(im, args.median_radius),
        "equalize": enhance_mod.hist_equalize,
        "clahe": lambda im: enhance_mod.clahe(im, params),
    }
    fn = stages[args.stage]
    inputs = sorted(args.input.glob("*.pgm")) if args.input.is_dir() else [args.input]
    if not inputs:
        raise FileNotFoundError(f"no PGM files under {args.input}")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        save_pgm(fn(load_pgm(path)), args.out_dir / path.name)
        if args.verbose:
            print(f"  {path.name}")
    print(f"enhanced {len(inputs)} image(s) -> {args.out_dir}")
    return 0


def _cmd_cluster(args) -> int:
    manifest = synth_mod.load_manifest(args.manifest)
    report = cluster_mod.cluster_report(manifest, args.k, seed=args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "clusters.csv").write_text(cluster_mod.report_to_csv(report), encoding="ascii")
    (args.out_dir / "contingency.csv").write_text(
        cluster_mod.contingency_to_csv(report), encoding="ascii"
    )
    print(
        f"clustered {len(report.rows)} images into {args.k} groups "
        f"(inertia {report.result.inertia:.3f}, {report.result.n_iter} iterations)"
    )
    return 0


def _cmd_train(args) -> int:
    manifest = synth_mod.load_manifest(args.manifest)
    model_cfg = _model_config(args)
    t = _train_config(args)
    weights = np.ones(model_cfg.num_classes) if args.uniform_loss else None
    ckpt, log = trainer_mod.train(manifest, model_cfg, t, class_weights=weights)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_io.save_checkpoint(ckpt, args.out_dir / "checkpoint.bin")
    log.save(args.out_dir / "trainlog.csv")
    train_m, val_m = trainer_mod.split_for_config(manifest, t)
    synth_mod.save_manifest(train_m, args.out_dir / "train_manifest.csv")
    synth_mod.save_manifest(val_m, args.out_dir / "val_manifest.csv")
    if args.weighting_report is not None:
        comparison = trainer_mod.compare_weighting(manifest, model_cfg, t)
        args.weighting_report.write_text(
            json.dumps(comparison.to_dict(), indent=2) + "\n", encoding="ascii"
        )
    if args.verbose:
        print(log.to_csv(), end="")
    best = log.epochs[log.best_epoch]
    print(
        f"trained {t.epochs} epochs; best epoch {log.best_epoch} "
        f"(val_acc {best.val_acc:.4f}); wrote {args.out_dir / 'checkpoint.bin'}"
    )
    return 0


def _cmd_orient_train(args) -> int:
    manifest = synth_mod.load_manifest(args.manifest)
    ckpt, log = orient_mod.train_orient(manifest, _model_config(args), _train_config(args))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_io.save_checkpoint(ckpt, args.out_dir / "orient_checkpoint.bin")
    log.save(args.out_dir / "orient_trainlog.csv")
    if args.verbose:
        print(log.to_csv(), end="")
    best = log.epochs[log.best_epoch]
    print(
        f"trained pose model; best epoch {log.best_epoch} (val_acc {best.val_acc:.4f}); "
        f"wrote {args.out_dir / 'orient_checkpoint.bin'}"
    )
    return 0


def _cmd_orient(args) -> int:
    model = ckpt_io.load_model(args.checkpoint)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "detected_turns", "confidence"])
    for path in args.inputs:
        corrected, detected, confidence = orient_mod.correct_orientation(model, load_pgm(path))
        save_pgm(corrected, args.out_dir / path.name)
        writer.writerow([path.name, int(detected), f"{confidence:.6f}"])
    (args.out_dir / "orientation.csv").write_text(buf.getvalue(), encoding="ascii")
    print(f"corrected {len(args.inputs)} image(s) -> {args.out_dir}")
    return 0


def _load_eval_inputs(args):
    if args.manifest is not None:
        manifest = synth_mod.load_manifest(args.manifest)
        paths = [manifest.resolve(e) for e in manifest.entries]
        labels = np.array([e.class_id for e in manifest.entries], dtype=np.int64)
    else:
        if not args.inputs:
            raise ValueError("provide --manifest or image paths")
        paths = list(args.inputs)
        labels = None
    return paths, labels


def _scores_for(model, paths) -> np.ndarray:
    arrays = np.stack([load_pgm(p).to_array() for p in paths])
    inputs = arrays.astype(np.float32)[:, None] / 255.0
    scores = []
    for start in range(0, len(inputs), 128):
        scores.append(model.predict(inputs[start : start + 128]))
    return np.concatenate(scores)


def _cmd_predict(args) -> int:
    model = ckpt_io.load_model(args.checkpoint)
    paths, _ = _load_eval_inputs(args)
    scores = _scores_for(model, paths)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    c = scores.shape[1]
    writer.writerow(["path", "predicted"] + [f"score_{i}" for i in range(c)])
    for p, row in zip(paths, scores):
        writer.writerow([Path(p).name, int(row.argmax())] + [f"{v:.6f}" for v in row])
    (args.out_dir / "predictions.csv").write_text(buf.getvalue(), encoding="ascii")
    print(f"predicted {len(paths)} image(s) -> {args.out_dir / 'predictions.csv'}")
    return 0


def _read_predictions(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:2] != ["path", "predicted"]:
        raise ValueError(f"bad predictions header {header!r}")
    return {row[0]: np.array([float(v) for v in row[2:]], dtype=np.float64) for row in rows[1:]}


def _cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.predictions is None):
        raise ValueError("provide exactly one of --checkpoint or --predictions")
    manifest = synth_mod.load_manifest(args.manifest)
    labels = np.array([e.class_id for e in manifest.entries], dtype=np.int64)
    if args.checkpoint is not None:
        model = ckpt_io.load_model(args.checkpoint)
        paths = [manifest.resolve(e) for e in manifest.entries]
        scores = _scores_for(model, paths)
        num_classes = model.config.num_classes
    else:
        by_name = _read_predictions(args.predictions)
        try:
            scores = np.stack([by_name[Path(e.path).name] for e in manifest.entries])
        except KeyError as exc:
            raise ValueError(f"predictions missing manifest entry {exc}") from None
        num_classes = scores.shape[1]
    report = metrics_mod.build_report(
        labels, scores.argmax(axis=1), num_classes, score_matrix=scores
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    report.save(args.out_dir / "eval_report.json")
    for c, curve in enumerate(report.roc_curves or []):
        (args.out_dir / f"roc_class{c}.csv").write_text(
            metrics_mod.roc_to_csv(curve), encoding="ascii"
        )
    print(metrics_mod.render_per_class_table(report), end="")
    print(f"accuracy {report.accuracy:.4f}, macro AUC {report.macro_auc:.4f}")
    return 0


def _cmd_report(args) -> int:
    model_report = metrics_mod.EvalReport.from_json(args.model.read_text(encoding="ascii"))
    annotators = [
        metrics_mod.EvalReport.from_json(p.read_text(encoding="ascii")) for p in args.annotators
    ]
    rows = metrics_mod.compare_report(
        model_report, annotators, model_name=args.model_name, annotators_name=args.annotators_name
    )
    text = metrics_mod.comparison_to_csv(rows)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "comparison.csv").write_text(text, encoding="ascii")
    print(text, end="")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "enhance": _cmd_enhance,
    "cluster": _cmd_cluster,
    "train": _cmd_train,
    "orient-train": _cmd_orient_train,
    "orient": _cmd_orient,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def run(argv: list[str]) -> int:
    args = _build_parser().parse_args(argv)
    _print_config(args)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
