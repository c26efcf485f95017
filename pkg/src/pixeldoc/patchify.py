"""Image -> 14x14 patch sequences, fixed or variable (aspect-snapped) resolution."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetTooSmallError
from .raster import PixelImage

PATCH_PX = 14
PATCH_DIM = PATCH_PX * PATCH_PX * 3  # 588
DEFAULT_BUDGET = 4096
FIXED_SIDES = {"fixed224": 224, "fixed896": 896}


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    patch_px: int = PATCH_PX

    @property
    def target_height(self) -> int:
        return self.rows * self.patch_px

    @property
    def target_width(self) -> int:
        return self.cols * self.patch_px

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    @classmethod
    def for_image(cls, img: PixelImage) -> PatchGrid:
        if img.width % PATCH_PX or img.height % PATCH_PX:
            raise ValueError(f"{img.width}x{img.height} is not a multiple of the {PATCH_PX}px patch size")
        return cls(img.height // PATCH_PX, img.width // PATCH_PX)


@dataclass(frozen=True, eq=False)
class PatchSequence:
    grid: PatchGrid
    patches: np.ndarray  # (rows*cols, 588) float64 in [0, 1]; per patch (py, px, channel) order
    pos_emb: np.ndarray | None = None

    def __len__(self):
        return self.patches.shape[0]


def snap_aspect(long_side: int, short_side: int) -> int:
    """Nearest power of 4 to long/short in log space; a tie goes to the smaller one."""
    k = 0
    # geometric midpoint between 4^k and 4^(k+1) is 2^(2k+1); compare exactly in integers
    while long_side > (2 ** (2 * k + 1)) * short_side:
        k += 1
    return 4**k


def choose_grid(src_width: int, src_height: int, budget: int = DEFAULT_BUDGET) -> PatchGrid:
    if src_width < 1 or src_height < 1 or budget < 1:
        raise ValueError("source dimensions and budget must be >= 1")
    long_side, short_side = max(src_width, src_height), min(src_width, src_height)
    s = snap_aspect(long_side, short_side)
    if budget < s:
        raise BudgetTooSmallError(f"budget too small: {budget} patches cannot hold aspect ratio {s}:1")
    short = math.isqrt(budget // s)
    long_ = s * short
    if src_width >= src_height:
        return PatchGrid(rows=short, cols=long_)
    return PatchGrid(rows=long_, cols=short)


def fixed_grid(mode: str) -> PatchGrid:
    side = FIXED_SIDES[mode] // PATCH_PX
    return PatchGrid(side, side)


def _resize_axis(arr: np.ndarray, target: int, axis: int) -> np.ndarray:
    src = arr.shape[axis]
    if src == target:
        return arr
    pos = (np.arange(target, dtype=np.float64) + 0.5) * (src / target) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    shape = [1] * arr.ndim
    shape[axis] = target
    frac = frac.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1.0 - frac) + np.take(arr, hi, axis=axis) * frac


def resize_bilinear(img: PixelImage, target_w: int, target_h: int) -> PixelImage:
    """Separable bilinear resize using half-pixel centres and edge clamping."""
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (target_w, target_h) == (img.width, img.height):
        return PixelImage(img.width, img.height, img.pixels.copy())
    out = _resize_axis(img.pixels.astype(np.float64), target_w, axis=1)
    out = _resize_axis(out, target_h, axis=0)
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return PixelImage(target_w, target_h, out)


def patchify(img: PixelImage, grid: PatchGrid, d_model: int | None = None) -> PatchSequence:
    if (img.width, img.height) != (grid.target_width, grid.target_height):
        raise ValueError(
            f"image {img.width}x{img.height} does not match grid target {grid.target_width}x{grid.target_height}"
        )
    p = grid.patch_px
    x = img.pixels.astype(np.float64) / 255.0
    x = x.reshape(grid.rows, p, grid.cols, p, 3).transpose(0, 2, 1, 3, 4)
    patches = x.reshape(grid.rows * grid.cols, p * p * 3)
    pos = sinusoidal_pos_emb(grid.n_patches, d_model) if d_model else None
    return PatchSequence(grid, patches, pos)


def unpatchify(seq: PatchSequence) -> PixelImage:
    g, p = seq.grid, seq.grid.patch_px
    x = np.clip(np.asarray(seq.patches, dtype=np.float64), 0.0, 1.0)
    x = x.reshape(g.rows, g.cols, p, p, 3).transpose(0, 2, 1, 3, 4).reshape(g.target_height, g.target_width, 3)
    return PixelImage(g.target_width, g.target_height, np.floor(x * 255.0 + 0.5).astype(np.uint8))


def to_grid(img: PixelImage, mode: str = "fixed224", budget: int = DEFAULT_BUDGET) -> tuple[PixelImage, PatchGrid]:
    """Resize ``img`` for one of the patching modes: fixed224, fixed896 or variable."""
    if mode in FIXED_SIDES:
        grid = fixed_grid(mode)
    elif mode == "variable":
        grid = choose_grid(img.width, img.height, budget)
    else:
        raise ValueError(f"unknown patch mode {mode!r}")
    return resize_bilinear(img, grid.target_width, grid.target_height), grid


def sinusoidal_pos_emb(n_positions: int, d: int) -> np.ndarray:
    """Fixed 1-D sinusoidal embeddings, shape (n_positions, d)."""
    if d % 2 or d < 2:
        raise ValueError(f"embedding dimension must be even, got {d}")
    if n_positions < 1:
        raise ValueError("n_positions must be >= 1")
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    inv = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    angles = pos / inv
    pe = np.empty((n_positions, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe
