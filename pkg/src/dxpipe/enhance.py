"""Radiograph enhancement chain: Laplacian sharpening, median filtering,
global histogram equalization, and contrast-limited adaptive histogram
equalization (CLAHE).

All window operations replicate edges, all outputs stay in [0, 255], and
every stage is bit-reproducible (fixed rounding: half away from zero via
floor(x + 0.5)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dxpipe.image import Image


@dataclass(frozen=True)
class ClaheParams:
    """Tile grid and clip-limit multiplier for CLAHE.

    clip_factor scales the uniform-histogram bin height (tile_pixels / 256);
    the effective integer clip threshold is max(1, floor(clip_factor *
    tile_pixels / 256)).
    """

    tiles_x: int = 8
    tiles_y: int = 8
    clip_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError(f"tile grid must be >= 1x1, got {self.tiles_x}x{self.tiles_y}")
        if self.clip_factor < 1.0:
            raise ValueError(f"clip_factor must be >= 1.0, got {self.clip_factor}")


def laplacian(img: Image) -> np.ndarray:
    """Discrete 4-neighbor Laplacian, edge-replicated, as signed int32.

    Kernel [[0,1,0],[1,-4,1],[0,1,0]]; output is not clamped.
    """
    a = img.to_array().astype(np.int32)
    p = np.pad(a, 1, mode="edge")
    return (
        p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * p[1:-1, 1:-1]
    )


def sharpen(img: Image) -> Image:
    """Laplacian sharpening: out = clamp(s - lap(s), 0, 255)."""
    a = img.to_array().astype(np.int32)
    out = np.clip(a - laplacian(img), 0, 255).astype(np.uint8)
    return Image.from_array(out)


def median_filter(img: Image, radius: int) -> Image:
    """Exact median over the (2*radius+1)^2 window, edge-replicated."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    a = img.to_array()
    p = np.pad(a, radius, mode="edge")
    win = 2 * radius + 1
    windows = np.lib.stride_tricks.sliding_window_view(p, (win, win))
    # odd window size -> the median is an actual pixel value
    med = np.median(windows.reshape(a.shape[0], a.shape[1], win * win), axis=2)
    return Image.from_array(med.astype(np.uint8))


def equalize_lut(hist: np.ndarray, total: int) -> np.ndarray:
    """256-entry equalization lookup table from a pixel-count histogram.

    v -> floor(255 * (cdf(v) - cdf_min) / (total - cdf_min) + 0.5) where
    cdf_min is the smallest nonzero cdf value.  A histogram with a single
    occupied bin yields the identity table (degenerate rule).
    """
    hist = np.asarray(hist, dtype=np.int64)
    if hist.shape != (256,):
        raise ValueError(f"expected a 256-bin histogram, got shape {hist.shape}")
    cdf = np.cumsum(hist)
    occupied = np.nonzero(hist)[0]
    if occupied.size == 0:
        return np.arange(256, dtype=np.uint8)
    cdf_min = cdf[occupied[0]]
    if cdf_min == total:
        return np.arange(256, dtype=np.uint8)
    scaled = 255.0 * (cdf - cdf_min) / (total - cdf_min)
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def hist_equalize(img: Image) -> Image:
    """Global histogram equalization; a constant image is returned unchanged."""
    a = img.to_array()
    hist = np.bincount(a.ravel(), minlength=256)
    lut = equalize_lut(hist, a.size)
    return Image.from_array(lut[a])


def tile_bounds(extent: int, tiles: int) -> list[tuple[int, int]]:
    """Near-equal [start, stop) spans partitioning 0..extent into `tiles` runs."""
    if tiles > extent:
        raise ValueError(f"tile count {tiles} exceeds extent {extent}")
    edges = [(t * extent) // tiles for t in range(tiles + 1)]
    return [(edges[t], edges[t + 1]) for t in range(tiles)]


def clip_histogram(hist: np.ndarray, clip: int) -> np.ndarray:
    """Truncate bins above `clip` and redistribute the excess uniformly.

    Single pass: every bin gets excess // 256, the remainder goes one count
    each to bins 0 upward.  Total count is preserved exactly.
    """
    if clip < 1:
        raise ValueError(f"clip threshold must be >= 1, got {clip}")
    hist = np.asarray(hist, dtype=np.int64)
    clipped = np.minimum(hist, clip)
    excess = int((hist - clipped).sum())
    clipped += excess // 256
    remainder = excess % 256
    clipped[:remainder] += 1
    return clipped


def clahe(img: Image, p: ClaheParams) -> Image:
    """Contrast-limited adaptive histogram equalization.

    Per tile: 256-bin histogram, clip at max(1, floor(clip_factor *
    tile_pixels / 256)), redistribute, equalize as in hist_equalize (a
    constant tile keeps the identity mapping).  Output pixels bilinearly
    interpolate between the four surrounding tile mappings; beyond the
    outermost tile centers the edge mapping is replicated.
    """
    a = img.to_array()
    h, w = a.shape
    if p.tiles_x > w or p.tiles_y > h:
        raise ValueError(
            f"tile grid {p.tiles_x}x{p.tiles_y} exceeds image {w}x{h}"
        )
    xs = tile_bounds(w, p.tiles_x)
    ys = tile_bounds(h, p.tiles_y)

    luts = np.empty((p.tiles_y, p.tiles_x, 256), dtype=np.uint8)
    for ty, (y0, y1) in enumerate(ys):
        for tx, (x0, x1) in enumerate(xs):
            tile = a[y0:y1, x0:x1]
            hist = np.bincount(tile.ravel(), minlength=256)
            if np.count_nonzero(hist) <= 1:
                luts[ty, tx] = np.arange(256, dtype=np.uint8)
                continue
            n = tile.size
            limit = p.clip_factor * n / 256.0
            clip = n if limit >= n else max(1, int(limit))
            luts[ty, tx] = equalize_lut(clip_histogram(hist, clip), n)

    cx = np.array([(x0 + x1 - 1) / 2.0 for x0, x1 in xs])
    cy = np.array([(y0 + y1 - 1) / 2.0 for y0, y1 in ys])
    ix0, ix1, wx = _interp_axis(np.arange(w), cx)
    iy0, iy1, wy = _interp_axis(np.arange(h), cy)

    wx = wx[None, :]
    wy = wy[:, None]
    top = (1.0 - wx) * luts[iy0[:, None], ix0[None, :], a] + wx * luts[
        iy0[:, None], ix1[None, :], a
    ]
    bot = (1.0 - wx) * luts[iy1[:, None], ix0[None, :], a] + wx * luts[
        iy1[:, None], ix1[None, :], a
    ]
    out = (1.0 - wy) * top + wy * bot
    return Image.from_array(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def _interp_axis(coords: np.ndarray, centers: np.ndarray):
    """Per-coordinate (lower tile, upper tile, weight); clamps past the ends."""
    j = np.searchsorted(centers, coords, side="right") - 1
    i0 = np.clip(j, 0, len(centers) - 1)
    i1 = np.clip(j + 1, 0, len(centers) - 1)
    weight = np.zeros(len(coords))
    interior = (j >= 0) & (j < len(centers) - 1)
    if interior.any():
        lo = centers[i0[interior]]
        hi = centers[i1[interior]]
        weight[interior] = (coords[interior] - lo) / (hi - lo)
    return i0, i1, weight


def enhance_chain(img: Image, p: ClaheParams, median_radius: int = 1) -> Image:
    """Full chain: sharpen, then median filter, then CLAHE."""
    return clahe(median_filter(sharpen(img), median_radius), p)
