"""8-bit image file helpers (PGM P5 by hand, everything else through Pillow)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_pgm(path, pixels: np.ndarray, comment: str | None = None) -> None:
    """Write a single-channel uint8 array as binary PGM (P5)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError(f"write_pgm expects a 2-d uint8 array, got {pixels.dtype} {pixels.shape}")
    h, w = pixels.shape
    header = b"P5\n"
    if comment:
        for line in comment.splitlines():
            header += b"# " + line.encode("utf-8") + b"\n"
    header += f"{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def read_pgm(path) -> tuple[np.ndarray, list[str]]:
    """Read a binary PGM; returns (pixels, comment lines)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    tokens: list[int] = []
    comments: list[str] = []
    while len(tokens) < 3:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            end = raw.index(b"\n", pos)
            comments.append(raw[pos + 1:end].decode("utf-8").strip())
            pos = end + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return data.copy(), comments


def read_gray8(path) -> np.ndarray:
    """Read an 8-bit single-channel PNG or PGM as a uint8 array."""
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return read_pgm(path)[0]
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise ValueError(f"{path}: expected a single-channel 8-bit image, got mode {im.mode}")
        return np.array(im, dtype=np.uint8)


def write_png_gray(path, pixels: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path)


def write_png_rgb(path, image: np.ndarray) -> None:
    """``image`` is float [3,H,W] in [0,1]; stored as 8-bit RGB."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)


def read_rgb(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """Decode any Pillow-readable image to float [3,H,W] in [0,1], optionally resized to (H, W)."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and (im.height, im.width) != tuple(size):
            im = im.resize((size[1], size[0]), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()
