"""Render learned bases as 8-bit grayscale images (binary PGM).

Weights map to gray affinely with zero at mid-gray (128): ``128 + rint(127 *
v / scale)``. Because ``rint`` is odd-symmetric, negating a panel reflects its
grays about 128 exactly.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ChainMismatch, WrongLayerShape
from .gassom import SubspaceBank

MID_GRAY = 128
SEPARATOR = 255


def to_gray(v: np.ndarray, scale: float | None = None, contrast: float = 1.0) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if scale is None:
        scale = float(np.abs(v).max())
    if scale == 0:
        return np.full(v.shape, MID_GRAY, np.uint8)
    return (MID_GRAY + np.rint(127.0 * contrast * v / scale)).astype(np.uint8)


def _panel(vector: np.ndarray, w: int, P: int) -> np.ndarray:
    """(P*w, w) block: type planes stacked vertically, highest type on top."""
    planes = vector.reshape(P, w, w)
    return np.concatenate(planes[::-1], axis=0)


def _tile(images: Sequence[np.ndarray], cols: int) -> np.ndarray:
    h, w = images[0].shape
    rows = -(-len(images) // cols)
    out = np.full((rows * (h + 1) + 1, cols * (w + 1) + 1), SEPARATOR, np.uint8)
    for i, im in enumerate(images):
        r, c = divmod(i, cols)
        out[1 + r * (h + 1) : 1 + r * (h + 1) + h, 1 + c * (w + 1) : 1 + c * (w + 1) + w] = im
    return out


def subspace_image(bank: SubspaceBank, r: int, w: int) -> np.ndarray:
    """One node: its basis vectors side by side, on plane above off plane."""
    P = bank.D // (w * w)
    panels = np.concatenate([_panel(bank.bases[r, h], w, P) for h in range(bank.H)], axis=1)
    return to_gray(panels)


def export_layer1_grid(bank: SubspaceBank, layer_config) -> np.ndarray:
    """All layer-1 subspaces on their ``side x side`` lattice with 1-px separators."""
    w = layer_config.patch_width
    if layer_config.input_types != 2 or bank.D != 2 * w * w:
        raise WrongLayerShape(f"expected a layer-1 bank with D = 2*{w}*{w}, got D={bank.D}")
    return _tile([subspace_image(bank, r, w) for r in range(bank.R)], bank.side)


def composite_selection(vector: np.ndarray, num_types: int, w2: int) -> tuple[np.ndarray, np.ndarray]:
    """Per position of a layer-2 basis vector: strongest input type and its |weight|.

    Returns ``(types, magnitudes)``, each ``(w2, w2)`` indexed ``[y, x]``.
    """
    a = np.abs(np.asarray(vector).reshape(num_types, w2, w2))
    return np.argmax(a, axis=0), np.max(a, axis=0)


def layer2_composite(vector: np.ndarray, bank1: SubspaceBank, w1: int, w2: int) -> np.ndarray:
    """Render one layer-2 basis vector as a mosaic of layer-1 first basis vectors."""
    types, mags = composite_selection(vector, bank1.R, w2)
    peak = float(mags.max())
    P1 = bank1.D // (w1 * w1)
    th, tw = P1 * w1, w1
    out = np.full((w2 * th, w2 * tw), MID_GRAY, np.uint8)
    for yy in range(w2):
        for xx in range(w2):
            contrast = mags[yy, xx] / peak if peak > 0 else 0.0
            panel = _panel(bank1.bases[types[yy, xx], 0], w1, P1)
            out[yy * th : (yy + 1) * th, xx * tw : (xx + 1) * tw] = to_gray(panel, contrast=contrast)
    return out


def export_layer2_composite(bank2: SubspaceBank, bank1: SubspaceBank, configs, nodes=None, basis: int = 0) -> np.ndarray:
    """Composites of basis vector ``basis`` for the chosen layer-2 nodes (default all)."""
    c1, c2 = configs[0], configs[1]
    if c2.input_types != bank1.R or bank2.D != c2.patch_width**2 * bank1.R or bank1.D != c1.dim:
        raise ChainMismatch("layer-2 bank does not consume layer-1 event types")
    nodes = range(bank2.R) if nodes is None else nodes
    tiles = [layer2_composite(bank2.bases[r, basis], bank1, c1.patch_width, c2.patch_width) for r in nodes]
    return _tile(tiles, max(1, int(np.ceil(np.sqrt(len(tiles))))))


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", data)
    if not m:
        raise ValueError("only binary 8-bit PGM is supported")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, np.uint8, count=w * h, offset=m.end()).reshape(h, w)
