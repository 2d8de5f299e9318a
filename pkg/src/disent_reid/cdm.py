"""Clothing-irrelevant grayscale masks from parsing maps, and their fusion into the RGB stream.

Parsing maps follow the 20-class LIP label convention. Kept (clothing
independent) classes map to ``label / 19``; every other class maps to 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .images import read_gray8
from .tensor import Tensor, add, conv2d

LIP_CLASSES = (
    "Background", "Hat", "Hair", "Glove", "Sunglasses", "Upper-clothes", "Dress", "Coat",
    "Socks", "Pants", "Jumpsuits", "Scarf", "Skirt", "Face", "Left-arm", "Right-arm",
    "Left-leg", "Right-leg", "Left-shoe", "Right-shoe",
)
NUM_CLASSES = len(LIP_CLASSES)
LABEL = {name: i for i, name in enumerate(LIP_CLASSES)}
DEFAULT_KEPT = ("Background", "Hair", "Face", "Left-arm", "Right-arm",
                "Left-leg", "Right-leg", "Left-shoe", "Right-shoe")

# left/right pairs swapped by a horizontal flip
FLIP_PAIRS = (("Left-arm", "Right-arm"), ("Left-leg", "Right-leg"), ("Left-shoe", "Right-shoe"))


@dataclass(frozen=True)
class KeepTable:
    """(class name, label index, kept) for all 20 classes."""

    entries: tuple[tuple[str, int, bool], ...]

    def __post_init__(self):
        if len(self.entries) != NUM_CLASSES:
            raise ValueError(f"keep table needs {NUM_CLASSES} entries, got {len(self.entries)}")
        if sorted(e[1] for e in self.entries) != list(range(NUM_CLASSES)):
            raise ValueError("keep table label indices must be a permutation of 0..19")

    @classmethod
    def default(cls) -> KeepTable:
        return cls.from_kept_names(DEFAULT_KEPT)

    @classmethod
    def from_kept_names(cls, names) -> KeepTable:
        unknown = set(names) - set(LIP_CLASSES)
        if unknown:
            raise ValueError(f"unknown parsing classes: {sorted(unknown)}")
        return cls(tuple((n, i, n in names) for i, n in enumerate(LIP_CLASSES)))

    @classmethod
    def from_kept_labels(cls, labels) -> KeepTable:
        labels = {int(x) for x in labels}
        bad = [x for x in labels if not 0 <= x < NUM_CLASSES]
        if bad:
            raise ValueError(f"kept labels out of range 0..19: {sorted(bad)}")
        return cls(tuple((n, i, i in labels) for i, n in enumerate(LIP_CLASSES)))

    @property
    def kept_labels(self) -> tuple[int, ...]:
        return tuple(sorted(i for _, i, k in self.entries if k))

    def gray_lut(self) -> np.ndarray:
        """Lookup table label -> gray value."""
        lut = np.zeros(NUM_CLASSES)
        for _, idx, kept in self.entries:
            if kept:
                lut[idx] = idx / (NUM_CLASSES - 1)
        return lut


def validate_parsing(labels: np.ndarray, source: str = "parsing map") -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"{source}: expected a 2-d label image, got shape {labels.shape}")
    bad = np.argwhere((labels < 0) | (labels >= NUM_CLASSES))
    if len(bad):
        r, c = bad[0]
        raise ValueError(f"{source}: label {int(labels[r, c])} at pixel (row={r}, col={c}) "
                         f"is outside 0..{NUM_CLASSES - 1}")
    return labels.astype(np.uint8)


def load_parsing_map(path, table: KeepTable | None = None) -> np.ndarray:
    """Read an 8-bit PNG/PGM whose pixel values are label indices."""
    return validate_parsing(read_gray8(path), source=str(path))


def build_grayscale(parsing: np.ndarray, table: KeepTable | None = None) -> np.ndarray:
    """Map a parsing map (or a stack of them) to the disentangled grayscale mask."""
    table = table or KeepTable.default()
    return table.gray_lut()[np.asarray(parsing, dtype=np.intp)]


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows are output pixels: box-filter weights when shrinking, nearest when enlarging."""
    m = np.zeros((n_out, n_in))
    if n_out <= n_in:
        scale = n_in / n_out
        for i in range(n_out):
            lo, hi = i * scale, (i + 1) * scale
            for j in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
                m[i, j] = min(hi, j + 1) - max(lo, j)
        m /= m.sum(axis=1, keepdims=True)
    else:
        src = np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(int), n_in - 1)
        m[np.arange(n_out), src] = 1.0
    return m


def resize_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resize a mask ``[H,W]`` or a stack ``[N,H,W]`` to ``h x w``."""
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {h}x{w}")
    mask = np.asarray(mask, dtype=np.float64)
    ry = _resample_matrix(mask.shape[-2], h)
    rx = _resample_matrix(mask.shape[-1], w)
    return np.clip(ry @ mask @ rx.T, 0.0, 1.0)


def mask_stem(masks: np.ndarray, weight: Tensor, bias: Tensor, stride: int = 1, pad: int | None = None) -> Tensor:
    """Single-channel masks ``[N,H,W]`` through the dedicated 1->C1 stem convolution."""
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim == 2:
        masks = masks[None]
    if weight.shape[1] != 1:
        raise ValueError(f"mask stem weight must have one input channel, got {weight.shape}")
    if pad is None:
        pad = weight.shape[2] // 2
    return conv2d(Tensor(masks[:, None]), weight, bias, stride=stride, pad=pad)


def fuse(rgb_feat: Tensor, mask_feat: Tensor) -> Tensor:
    if rgb_feat.shape != mask_feat.shape:
        raise ValueError(f"fuse: RGB features {rgb_feat.shape} and mask features {mask_feat.shape} differ")
    return add(rgb_feat, mask_feat)
