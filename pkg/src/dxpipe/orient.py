"""Learned 4-way pose detection and automatic rotation correction.

The pose model is the same fusion architecture with four output classes.
Its training stream emits every image under all four quarter-turns with the
turn index as the label, so quarter-turn rotations are lossless to undo:
whenever the predicted turn equals the applied one, correction restores the
original image exactly.
"""

from __future__ import annotations

import numpy as np

from dxpipe.checkpoint import Checkpoint
from dxpipe.image import Image, Rotation, rotate, rotate_array
from dxpipe.nnet import FusionNet, ModelConfig, config_for_orientation, softmax
from dxpipe.synth import DatasetManifest
from dxpipe.trainer import TrainConfig, TrainLog, _fit, load_image_array, split_for_config


def orientation_stream(n_images: int, seed) -> list[tuple[int, int, int]]:
    """Shuffled (image index, turns, label=turns) covering all four poses."""
    pairs = [(i, t, t) for i in range(n_images) for t in range(4)]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def _all_turn_inputs(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Every image under every quarter-turn, normalized, with turn labels."""
    n, s = len(images), images.shape[1]
    inputs = np.empty((4 * n, 1, s, s), dtype=np.float32)
    labels = np.empty(4 * n, dtype=np.int64)
    for i in range(n):
        for t in range(4):
            inputs[4 * i + t, 0] = rotate_array(images[i], t)
            labels[4 * i + t] = t
    inputs /= 255.0
    return inputs, labels


def train_orient(
    manifest: DatasetManifest, model_cfg: ModelConfig, t: TrainConfig
) -> tuple[Checkpoint, TrainLog]:
    """Train the pose classifier on canonical-pose images."""
    if not manifest.entries:
        raise ValueError("manifest is empty")
    cfg = config_for_orientation(model_cfg)
    train_m, val_m = split_for_config(manifest, t)
    images = load_image_array(train_m)
    val_inputs, val_labels = _all_turn_inputs(load_image_array(val_m))
    weights = np.ones(4)

    def stream_fn(epoch: int):
        return orientation_stream(
            len(images), np.random.SeedSequence([t.seed & (2**64 - 1), 0xB0, epoch])
        )

    model = FusionNet(cfg, seed=t.seed)
    return _fit(model, images, stream_fn, val_inputs, val_labels, weights, t)


def correct_orientation(model: FusionNet, img: Image) -> tuple[Image, Rotation, float]:
    """Detect the quarter-turn pose and rotate back to canonical.

    Returns (corrected image, detected rotation, confidence), where the
    confidence is the max softmax score.  Ties resolve to the lowest index.
    """
    if model.config.num_classes != 4:
        raise ValueError("pose model must have 4 output classes")
    x = img.to_array().astype(np.float32)[None, None] / 255.0
    logits, _ = model.forward(x, train_mode=False)
    scores = softmax(logits)[0]
    detected = Rotation(int(np.argmax(scores)))
    corrected = rotate(img, detected.inverse())
    return corrected, detected, float(scores.max())
