"""Image mosaics: tiling, shuffling, synthetic images and the tile encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..linalg import HardPermutation, ShapeError, as_matrix

IMAGE_SIZE = 28


@dataclass
class MosaicInstance:
    tiles: np.ndarray  # (N, tile_h * tile_w), in presentation order
    truth: HardPermutation  # truth.assignment[k] = presented index of the tile at position k
    grid: tuple
    tile_shape: tuple
    source: str = "synthetic"

    @property
    def n(self) -> int:
        return self.tiles.shape[0]

    def target(self) -> np.ndarray:
        """Tiles in their correct row-major positions."""
        return self.tiles[self.truth.as_array()]

    def reassemble(self, assignment=None) -> np.ndarray:
        """Image obtained by placing ``tiles[assignment[k]]`` at position ``k``."""
        order = self.truth.as_array() if assignment is None else np.asarray(assignment)
        return assemble(self.tiles[order], self.grid, self.tile_shape)


def divisible_size(size: int, parts: int) -> int:
    return -(-size // parts) * parts


def upscale_nearest(image: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = image.shape
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return image[rows[:, None], cols[None, :]]


def split_tiles(image: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Row-major tiles ``(rows * cols, th, tw)`` of an image that divides evenly."""
    h, w = image.shape
    th, tw = h // rows, w // cols
    return image.reshape(rows, th, cols, tw).transpose(0, 2, 1, 3).reshape(rows * cols, th, tw)


def assemble(tiles, grid, tile_shape) -> np.ndarray:
    rows, cols = grid
    th, tw = tile_shape
    t = np.asarray(tiles).reshape(rows, cols, th, tw)
    return t.transpose(0, 2, 1, 3).reshape(rows * th, cols * tw)


def prepare_image(image, rows: int, cols: int) -> np.ndarray:
    """Upscale (nearest neighbour) to the next size divisible by the grid."""
    image = as_matrix(image, "image", ndim=2)
    h, w = image.shape
    if h < rows or w < cols:
        raise ShapeError(f"{h}x{w} image is too small for a {rows}x{cols} grid")
    H, W = divisible_size(h, rows), divisible_size(w, cols)
    if (H, W) != (h, w):
        image = upscale_nearest(image, H, W)
    return image


def make_mosaic(image, rows: int, cols: int, seed=None, order=None, source: str = "synthetic") -> MosaicInstance:
    """Cut ``image`` into a ``rows x cols`` grid and present the tiles shuffled.

    ``order[p]`` is the row-major position of the tile presented at index
    ``p``; when omitted it is a permutation drawn from ``seed``.
    """
    image = prepare_image(image, rows, cols)
    tiles = split_tiles(image, rows, cols)
    n = rows * cols
    if order is None:
        order = np.random.default_rng(seed).permutation(n)
    order = np.asarray(order, dtype=np.int64)
    presented = tiles[order]
    truth = HardPermutation(tuple(np.argsort(order)))
    return MosaicInstance(
        tiles=presented.reshape(n, -1),
        truth=truth,
        grid=(rows, cols),
        tile_shape=tiles.shape[1:],
        source=source,
    )


def synthetic_images(
    count: int, seed: int, blank_quadrants: bool = False, size: int = IMAGE_SIZE, stream: int = 0
) -> np.ndarray:
    """Seeded ``(count, size, size)`` images: a smooth ramp plus one bright blob.

    The ramp rises towards the bottom-right with a random angle, so tiles differ
    in both content and absolute position. With ``blank_quadrants`` two of the
    four quadrants of each image are replaced by the same constant background.
    ``stream`` selects an independent sequence (e.g. train vs test) per seed.
    """
    rng = np.random.default_rng([seed, stream, int(blank_quadrants)])
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    images = np.empty((count, size, size))
    half = size // 2
    quadrants = [(slice(0, half), slice(0, half)), (slice(0, half), slice(half, size)),
                 (slice(half, size), slice(0, half)), (slice(half, size), slice(half, size))]
    for i in range(count):
        angle = rng.uniform(np.pi / 12, 5 * np.pi / 12)
        ramp = np.cos(angle) * xx + np.sin(angle) * yy
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        radius = rng.uniform(0.08, 0.2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
        img = 0.6 * ramp + rng.uniform(0.6, 1.0) * blob + rng.uniform(-0.1, 0.1)
        if blank_quadrants:
            for q in rng.choice(4, size=2, replace=False):
                img[quadrants[q]] = 0.0
        images[i] = img
    return images


@dataclass
class TileEncoderParams:
    W: np.ndarray  # (embed_dim, tile_pixels)
    b: np.ndarray  # (embed_dim,)

    def __post_init__(self):
        self.W = as_matrix(self.W, "encoder W", ndim=2)
        self.b = as_matrix(self.b, "encoder b", ndim=1)
        if self.b.shape[0] != self.W.shape[0]:
            raise ShapeError("encoder bias does not match W")


def encode_tiles(params: TileEncoderParams, tiles):
    """``ReLU(W . tile + b)`` for every flattened tile. Returns ``(features, pre)``."""
    tiles = as_matrix(tiles, "tiles")
    if tiles.shape[-1] != params.W.shape[1]:
        raise ShapeError(f"tiles have {tiles.shape[-1]} pixels, encoder expects {params.W.shape[1]}")
    pre = tiles @ params.W.T + params.b
    return np.maximum(pre, 0.0), pre


def encode_tiles_vjp(params: TileEncoderParams, tiles, pre, dfeat):
    """Gradients ``(dW, db, dtiles)`` of ``<dfeat, features>``."""
    dpre = np.asarray(dfeat) * (pre > 0)
    flat_d = dpre.reshape(-1, dpre.shape[-1])
    flat_t = np.asarray(tiles).reshape(-1, tiles.shape[-1])
    return flat_d.T @ flat_t, flat_d.sum(axis=0), dpre @ params.W
