"""Training orchestration: class weighting, rotation augmentation,
stratified splits, the SGD loop with stepped learning-rate decay, and
best-validation checkpoint selection.

Everything is deterministic per seed: the split, the per-epoch shuffles and
rotation draws, the dropout masks, and therefore the resulting checkpoint
and log bytes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dxpipe.checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint
from dxpipe.image import Rotation, load_pgm, rotate_array
from dxpipe.metrics import confusion, per_class_metrics
from dxpipe.nnet import FusionNet, ModelConfig, sgd_step, softmax, weighted_ce
from dxpipe.synth import DatasetManifest


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 10
    augment_rotations: bool = True
    seed: int = 42
    validation_fraction: float = 0.15

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.lr_decay_every < 1:
            raise ValueError("epochs, batch_size and lr_decay_every must be >= 1")
        if self.lr < 0.0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValueError(f"lr_decay_factor must be in (0,1], got {self.lr_decay_factor}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(
                f"validation_fraction must be in (0,1), got {self.validation_fraction}"
            )


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_acc", "lr"])
        for e in self.epochs:
            writer.writerow(
                [e.epoch, f"{e.train_loss:.6f}", f"{e.val_loss:.6f}", f"{e.val_acc:.6f}", f"{e.lr:.8g}"]
            )
        return buf.getvalue()

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_csv(), encoding="ascii")


def compute_class_weights(manifest: DatasetManifest, num_classes: int = 6) -> np.ndarray:
    """Inverse-frequency weights N / (C * n_c); a balanced set yields all ones."""
    counts = manifest.class_counts(num_classes)
    if (counts == 0).any():
        empty = [int(c) for c in np.nonzero(counts == 0)[0]]
        raise ValueError(f"empty classes: {empty}")
    total = counts.sum()
    return total / (num_classes * counts.astype(np.float64))


def augment_epoch(
    manifest: DatasetManifest, seed, rotations: bool = True
) -> list[tuple[int, Rotation]]:
    """Shuffled (entry index, quarter-turn) stream for one epoch.

    One emission per manifest entry (augmentation happens on the fly, the
    dataset is not inflated); the region label never changes.  Pass a
    (seed, epoch) tuple for a per-epoch stream.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(manifest.entries))
    if rotations:
        turns = rng.integers(0, 4, size=len(order))
    else:
        turns = np.zeros(len(order), dtype=np.int64)
    return [(int(i), Rotation(int(t))) for i, t in zip(order, turns)]


def stratified_split(
    manifest: DatasetManifest, fraction: float, seed
) -> tuple[DatasetManifest, DatasetManifest]:
    """(train, validation) split keeping every class with >= 2 members in both."""
    by_class: dict[int, list[int]] = {}
    for i, e in enumerate(manifest.entries):
        by_class.setdefault(e.class_id, []).append(i)
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cid in sorted(by_class):
        idx = np.array(by_class[cid])
        perm = rng.permutation(len(idx))
        n = len(idx)
        if n < 2:
            train_idx.extend(int(i) for i in idx)
            continue
        n_val = min(n - 1, max(1, round(fraction * n)))
        chosen = idx[perm]
        val_idx.extend(int(i) for i in chosen[:n_val])
        train_idx.extend(int(i) for i in chosen[n_val:])
    return manifest.subset(sorted(train_idx)), manifest.subset(sorted(val_idx))


def load_image_array(manifest: DatasetManifest) -> np.ndarray:
    """All manifest images as a uint8 array (N, S, S)."""
    imgs = [load_pgm(manifest.resolve(e)).to_array() for e in manifest.entries]
    return np.stack(imgs)


def _batch_inputs(images: np.ndarray, picks: list[tuple[int, int]]) -> np.ndarray:
    """Stack rotated, normalized samples: picks are (image index, turns)."""
    stack = np.empty((len(picks), 1, images.shape[1], images.shape[2]), dtype=np.float32)
    for row, (i, t) in enumerate(picks):
        stack[row, 0] = rotate_array(images[i], t)
    stack /= 255.0
    return stack


def evaluate_arrays(
    model: FusionNet,
    images: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    batch_size: int = 128,
) -> tuple[float, float, np.ndarray]:
    """Eval-mode (loss, accuracy, softmax scores) over normalized images."""
    n = len(images)
    scores = np.empty((n, model.config.num_classes), dtype=np.float32)
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        xb = images[start : start + batch_size]
        yb = labels[start : start + batch_size]
        logits, _ = model.forward(xb, train_mode=False)
        loss, _ = weighted_ce(logits, yb, weights)
        loss_sum += loss * len(xb)
        scores[start : start + batch_size] = softmax(logits)
    acc = float((scores.argmax(axis=1) == labels).mean())
    return loss_sum / n, acc, scores


def _fit(
    model: FusionNet,
    images: np.ndarray,
    stream_fn,
    val_inputs: np.ndarray,
    val_labels: np.ndarray,
    weights: np.ndarray,
    t: TrainConfig,
) -> tuple[Checkpoint, TrainLog]:
    """Shared SGD loop.  stream_fn(epoch) yields (image index, turns, label)."""
    velocity: dict[str, np.ndarray] = {}
    dropout_rng = np.random.default_rng(np.random.SeedSequence([t.seed & (2**64 - 1), 0xD0]))
    log = TrainLog()
    best_acc = -1.0
    best_params: dict[str, np.ndarray] = {}
    for epoch in range(t.epochs):
        lr = t.lr * t.lr_decay_factor ** (epoch // t.lr_decay_every)
        stream = stream_fn(epoch)
        loss_sum = 0.0
        for start in range(0, len(stream), t.batch_size):
            chunk = stream[start : start + t.batch_size]
            xb = _batch_inputs(images, [(i, turn) for i, turn, _ in chunk])
            yb = np.array([label for _, _, label in chunk], dtype=np.int64)
            logits, cache = model.forward(xb, train_mode=True, rng=dropout_rng)
            loss, dlogits = weighted_ce(logits, yb, weights)
            grads = model.backward(cache, dlogits)
            sgd_step(model.params, grads, velocity, lr, t.momentum)
            loss_sum += loss * len(chunk)
        train_loss = loss_sum / len(stream)
        val_loss, val_acc, _ = evaluate_arrays(model, val_inputs, val_labels, weights)
        log.epochs.append(EpochStats(epoch, train_loss, val_loss, val_acc, lr))
        if val_acc > best_acc:
            best_acc = val_acc
            log.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
    model.params = best_params
    return checkpoint_from_model(model), log


def train(
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    t: TrainConfig,
    class_weights: np.ndarray | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Train the region classifier; returns the best-validation checkpoint.

    class_weights defaults to inverse-frequency weights over the training
    partition; pass np.ones(num_classes) for an unweighted baseline.
    """
    if not manifest.entries:
        raise ValueError("manifest is empty")
    train_m, val_m = split_for_config(manifest, t)
    counts = train_m.class_counts(model_cfg.num_classes)
    if (counts == 0).any():
        raise ValueError("a class is missing from the training split")
    if class_weights is None:
        class_weights = compute_class_weights(train_m, model_cfg.num_classes)

    images = load_image_array(train_m)
    labels = np.array([e.class_id for e in train_m.entries], dtype=np.int64)
    val_images = load_image_array(val_m).astype(np.float32)[:, None] / 255.0
    val_labels = np.array([e.class_id for e in val_m.entries], dtype=np.int64)

    def stream_fn(epoch: int):
        picks = augment_epoch(
            train_m,
            np.random.SeedSequence([t.seed & (2**64 - 1), 0xA0, epoch]),
            rotations=t.augment_rotations,
        )
        return [(i, int(r), int(labels[i])) for i, r in picks]

    model = FusionNet(model_cfg, seed=t.seed)
    return _fit(model, images, stream_fn, val_images, val_labels, class_weights, t)


def split_for_config(manifest: DatasetManifest, t: TrainConfig):
    """The exact (train, validation) partition train() uses for this config."""
    return stratified_split(
        manifest, t.validation_fraction, np.random.SeedSequence([t.seed & (2**64 - 1), 0x57])
    )


@dataclass
class WeightingComparison:
    """Same-seed weighted-loss vs uniform-loss outcomes on one validation split."""

    weighted_recall: list[float]
    uniform_recall: list[float]
    weighted_accuracy: float
    uniform_accuracy: float
    minority_class: int

    def to_dict(self) -> dict:
        return {
            "per_class": [
                {"class_id": c, "weighted_recall": wr, "uniform_recall": ur}
                for c, (wr, ur) in enumerate(zip(self.weighted_recall, self.uniform_recall))
            ],
            "weighted_accuracy": self.weighted_accuracy,
            "uniform_accuracy": self.uniform_accuracy,
            "minority_class": self.minority_class,
            "minority_recall": {
                "weighted": self.weighted_recall[self.minority_class],
                "uniform": self.uniform_recall[self.minority_class],
            },
        }


def compare_weighting(
    manifest: DatasetManifest, model_cfg: ModelConfig, t: TrainConfig
) -> WeightingComparison:
    """Train twice with the same seed (inverse-frequency vs uniform weights)
    and report per-class validation recall side by side.

    Both recall columns come from the same confusion-matrix pipeline on the
    same validation partition.
    """
    _, val_m = split_for_config(manifest, t)
    val_images = load_image_array(val_m).astype(np.float32)[:, None] / 255.0
    val_labels = np.array([e.class_id for e in val_m.entries], dtype=np.int64)
    uniform = np.ones(model_cfg.num_classes)

    recalls = {}
    accs = {}
    for mode, weights in (("weighted", None), ("uniform", uniform)):
        ckpt, _ = train(manifest, model_cfg, t, class_weights=weights)
        model = model_from_checkpoint(ckpt)
        _, acc, scores = evaluate_arrays(model, val_images, val_labels, uniform)
        cm = confusion(val_labels, scores.argmax(axis=1), model_cfg.num_classes)
        recalls[mode] = [float(r) for r in per_class_metrics(cm).sensitivity]
        accs[mode] = acc

    counts = manifest.class_counts(model_cfg.num_classes)
    minority = int(np.argmin(np.where(counts > 0, counts, np.iinfo(np.int64).max)))
    return WeightingComparison(
        weighted_recall=recalls["weighted"],
        uniform_recall=recalls["uniform"],
        weighted_accuracy=accs["weighted"],
        uniform_accuracy=accs["uniform"],
        minority_class=minority,
    )
