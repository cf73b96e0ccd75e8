"""Image grids written as PNG."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError


def to_uint8(images: np.ndarray) -> np.ndarray:
    """``(n, 3, h, w)`` in [-1, 1] to ``(n, h, w, 3)`` uint8 (round half to even)."""
    x = np.clip((np.asarray(images, dtype=np.float64) + 1.0) * 127.5, 0, 255)
    return np.rint(x).astype(np.uint8).transpose(0, 2, 3, 1)


def make_grid(images: np.ndarray, rows: int, cols: int, pad: int = 2) -> np.ndarray:
    """Tile ``rows * cols`` images row-major into one HxWx3 uint8 array."""
    if rows < 1 or cols < 1:
        raise ConfigurationError(f"grid must be at least 1x1, got {rows}x{cols}")
    if len(images) != rows * cols:
        raise ConfigurationError(f"a {rows}x{cols} grid needs {rows * cols} images, got {len(images)}")
    tiles = to_uint8(images)
    h, w = tiles.shape[1:3]
    grid = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), dtype=np.uint8)
    for k, tile in enumerate(tiles):
        r, c = divmod(k, cols)
        top, left = pad + r * (h + pad), pad + c * (w + pad)
        grid[top : top + h, left : left + w] = tile
    return grid


def parse_grid(spec: str) -> tuple[int, int]:
    """``"4x4"`` -> ``(4, 4)``."""
    try:
        rows, cols = (int(v) for v in spec.lower().split("x"))
    except ValueError as exc:
        raise ConfigurationError(f"grid must look like ROWSxCOLS, got {spec!r}") from exc
    return rows, cols


def save_grid(images: np.ndarray, path, rows: int, cols: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(make_grid(images, rows, cols)).save(path, format="PNG", optimize=False)
    return path
