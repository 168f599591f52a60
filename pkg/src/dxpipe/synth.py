"""Procedural synthetic radiograph generator and dataset manifests.

Images are dark, noisy backgrounds with a top-to-bottom brightness gradient
(the orientation cue) and bright vertically elongated blobs whose placement
encodes the class:

    0  upper-left      1  upper-right
    2  lower-left      3  lower-right
    4  upper band crossing the vertical midline
    5  lower band crossing the vertical midline

The default class counts are (108, 126, 103, 105, 48, 15) - a 1/5-scale
profile that keeps the smallest class at ~3% of the total, so the
class-imbalance machinery has something real to chew on.

Manifests are CSV files (`path,class_id,rotation` plus a leading
`# seed=<n>` comment line); image paths are stored relative to the
manifest's directory.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dxpipe.enhance import hist_equalize
from dxpipe.image import Image, Rotation, load_pgm, save_pgm

NUM_CLASSES = 6

# full-size class counts, heavily imbalanced on purpose
FULL_CLASS_COUNTS = (541, 632, 513, 523, 242, 75)

CLASS_DESCRIPTIONS = (
    "upper-left region",
    "upper-right region",
    "lower-left region",
    "lower-right region",
    "upper region crossing the midline",
    "lower region crossing the midline",
)


@dataclass(frozen=True)
class ClassSpec:
    class_id: int
    description: str
    target_count: int

    def __post_init__(self) -> None:
        if not 0 <= self.class_id < NUM_CLASSES:
            raise ValueError(f"class_id must be 0..{NUM_CLASSES - 1}, got {self.class_id}")
        if self.target_count < 0:
            raise ValueError(f"target_count must be >= 0, got {self.target_count}")


@dataclass(frozen=True)
class SynthParams:
    image_size: int = 32
    noise_impulse_prob: float = 0.02
    blob_count_range: tuple[int, int] = (3, 6)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.image_size < 16:
            raise ValueError(f"image_size must be >= 16, got {self.image_size}")
        if not 0.0 <= self.noise_impulse_prob <= 1.0:
            raise ValueError(f"noise_impulse_prob must be in [0,1], got {self.noise_impulse_prob}")
        lo, hi = self.blob_count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad blob_count_range {self.blob_count_range}")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_id: int
    rotation: Rotation = Rotation(0)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    seed: int = 0
    root: Path = field(default_factory=Path)

    def class_counts(self, num_classes: int = NUM_CLASSES) -> np.ndarray:
        counts = np.zeros(num_classes, dtype=np.int64)
        for e in self.entries:
            counts[e.class_id] += 1
        return counts

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def subset(self, indices) -> "DatasetManifest":
        return DatasetManifest(
            entries=[self.entries[i] for i in indices], seed=self.seed, root=self.root
        )


def default_class_specs(scale: float = 0.2) -> list[ClassSpec]:
    """Scale the full-size class counts, rounding to the nearest integer."""
    return [
        ClassSpec(cid, CLASS_DESCRIPTIONS[cid], round(FULL_CLASS_COUNTS[cid] * scale))
        for cid in range(NUM_CLASSES)
    ]


# bounding boxes (x0, x1, y0, y1) as fractions of the image side
_CLASS_BOXES = (
    (0.08, 0.42, 0.10, 0.40),
    (0.58, 0.92, 0.10, 0.40),
    (0.08, 0.42, 0.60, 0.90),
    (0.58, 0.92, 0.60, 0.90),
    (0.25, 0.75, 0.10, 0.40),
    (0.25, 0.75, 0.60, 0.90),
)

_BG_TOP = 55.0
_BG_BOTTOM = 10.0
_BG_JITTER = 4
_BLOB_MIN_VAL = 150
_BLOB_MAX_VAL = 230


def generate_image(class_id: int, p: SynthParams, seed: int) -> Image:
    """Render one deterministic synthetic radiograph for the given class."""
    if not 0 <= class_id < NUM_CLASSES:
        raise ValueError(f"class_id must be 0..{NUM_CLASSES - 1}, got {class_id}")
    rng = np.random.default_rng(
        np.random.SeedSequence([p.rng_seed & (2**64 - 1), class_id, seed & (2**64 - 1)])
    )
    s = p.image_size

    rows = np.arange(s, dtype=np.float64)
    base = _BG_TOP + (_BG_BOTTOM - _BG_TOP) * rows / (s - 1)
    bg = base[:, None] + rng.integers(-_BG_JITTER, _BG_JITTER + 1, size=(s, s))
    canvas = np.clip(bg, 2, 63)

    x0f, x1f, y0f, y1f = _CLASS_BOXES[class_id]
    x0, x1 = x0f * s, x1f * s
    y0, y1 = y0f * s, y1f * s
    lo, hi = p.blob_count_range
    n_blobs = int(rng.integers(lo, hi + 1))
    yy, xx = np.mgrid[0:s, 0:s]
    for i in range(n_blobs):
        # blobs fan out left-to-right across the class box so bands for
        # classes 4/5 always straddle the midline
        cx = x0 + (i + 0.5) * (x1 - x0) / n_blobs + rng.uniform(-0.04, 0.04) * s
        cy = (y0 + y1) / 2.0 + rng.uniform(-0.08, 0.08) * s
        rx = max(1.0, rng.uniform(0.025, 0.05) * s)
        ry = rng.uniform(0.10, 0.16) * s
        val = float(rng.integers(_BLOB_MIN_VAL, _BLOB_MAX_VAL + 1))
        mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        canvas = np.where(mask, np.maximum(canvas, val), canvas)

    out = canvas.astype(np.uint8)
    if p.noise_impulse_prob > 0.0:
        impulses = rng.random((s, s)) < p.noise_impulse_prob
        salt = rng.integers(0, 2, size=(s, s)).astype(np.uint8) * 255
        out = np.where(impulses, salt, out)
    return Image.from_array(out)


def generate_dataset(
    specs: list[ClassSpec], p: SynthParams, out_dir: Path | str
) -> DatasetManifest:
    """Generate per-class images on disk plus the manifest describing them."""
    if not specs:
        raise ValueError("specs must be nonempty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(seed=p.rng_seed, root=out_dir)
    for spec in sorted(specs, key=lambda sp: sp.class_id):
        for i in range(spec.target_count):
            img = generate_image(spec.class_id, p, seed=(spec.class_id << 32) | i)
            name = f"class{spec.class_id}_{i:04d}.pgm"
            save_pgm(img, out_dir / name)
            manifest.entries.append(ManifestEntry(name, spec.class_id))
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def amplify_minority(
    manifest: DatasetManifest, class_ids: list[int]
) -> DatasetManifest:
    """Add a histogram-equalized copy of every image in the listed classes.

    New entries keep the source label and rotation; files land next to the
    originals with a `_he` suffix.
    """
    for cid in class_ids:
        if not 0 <= cid < NUM_CLASSES:
            raise ValueError(f"class_id {cid} out of range")
    wanted = set(class_ids)
    out = DatasetManifest(entries=list(manifest.entries), seed=manifest.seed, root=manifest.root)
    for e in manifest.entries:
        if e.class_id not in wanted:
            continue
        src = manifest.resolve(e)
        if not src.exists():
            raise FileNotFoundError(f"missing source image {src}")
        stem = Path(e.path).stem
        name = f"{stem}_he.pgm"
        save_pgm(hist_equalize(load_pgm(src)), manifest.root / name)
        out.entries.append(ManifestEntry(name, e.class_id, e.rotation))
    return out


def manifest_to_csv(manifest: DatasetManifest, relative_to: Path | None = None) -> str:
    """CSV text; paths are rewritten relative to `relative_to` when given."""
    buf = io.StringIO()
    buf.write(f"# seed={manifest.seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "class_id", "rotation"])
    for e in manifest.entries:
        rel = e.path
        if relative_to is not None:
            rel = os.path.relpath(manifest.root / e.path, relative_to)
        writer.writerow([rel, e.class_id, int(e.rotation)])
    return buf.getvalue()


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    """Write the manifest so its image paths resolve from the file's directory."""
    path = Path(path)
    path.write_text(manifest_to_csv(manifest, relative_to=path.parent), encoding="ascii")


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    text = path.read_text(encoding="ascii")
    seed = 0
    lines = text.splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            stripped = line[1:].strip()
            if stripped.startswith("seed="):
                seed = int(stripped[len("seed=") :])
            continue
        body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header != ["path", "class_id", "rotation"]:
        raise ValueError(f"bad manifest header {header!r} in {path}")
    entries = []
    seen = set()
    for row in reader:
        if not row:
            continue
        rel, cid, rot = row[0], int(row[1]), int(row[2])
        if rel in seen:
            raise ValueError(f"duplicate manifest path {rel!r}")
        seen.add(rel)
        entries.append(ManifestEntry(rel, cid, Rotation(rot)))
    return DatasetManifest(entries=entries, seed=seed, root=path.parent)


def load_images(manifest: DatasetManifest) -> list[Image]:
    return [load_pgm(manifest.resolve(e)) for e in manifest.entries]
