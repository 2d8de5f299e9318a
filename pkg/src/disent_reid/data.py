"""Synthetic clothes-changing pedestrians, folder ingestion, PK sampling and augmentation."""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import cdm
from .images import read_gray8, read_rgb, write_png_gray, write_png_rgb
from .rng import stream

log = logging.getLogger(__name__)

SPLITS = ("train", "query", "gallery")

# row bands of the synthetic canvas at the reference 64x32 size
HEAD = (0, 12)
TORSO = (12, 36)
LEGS = (36, 56)
SHOES = (56, 64)
MARGIN = 4
SPLIT_COL = 16
HAIR = 2


@dataclass(frozen=True)
class SampleMeta:
    person_id: int
    clothes_id: int
    camera_id: int
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class SynthConfig:
    persons: int = 20
    train_outfits: int = 2
    test_outfits: int = 1
    images_per: int = 4
    cameras: int = 3
    height: int = 64
    width: int = 32
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("persons", "train_outfits", "test_outfits", "images_per", "cameras"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if (self.height, self.width) != (64, 32):
            raise ValueError("the synthetic band layout is defined on a 64x32 canvas")


@dataclass
class Dataset:
    """In-memory images ``[N,3,H,W]`` in [0,1], parsing maps ``[N,H,W]`` and per-sample metadata."""

    images: np.ndarray
    parsing: np.ndarray
    meta: list[SampleMeta]

    def __len__(self) -> int:
        return len(self.meta)

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        indices = np.asarray(indices, dtype=np.intp)
        return self.images[indices], self.parsing[indices]

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, m in enumerate(self.meta) if m.split == split], dtype=np.intp)


@dataclass
class FolderDataset:
    """Path index whose images are decoded (and resized) when a batch is requested."""

    image_paths: list[Path]
    parsing_paths: list[Path]
    meta: list[SampleMeta]
    size: tuple[int, int] = (64, 32)
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.meta)

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        h, w = self.size
        images, parsing = [], []
        for i in np.asarray(indices, dtype=np.intp):
            images.append(read_rgb(self.image_paths[i], (h, w)))
            labels = cdm.validate_parsing(read_gray8(self.parsing_paths[i]), str(self.parsing_paths[i]))
            if labels.shape != (h, w):
                labels = np.asarray(Image.fromarray(labels).resize((w, h), Image.NEAREST))
            parsing.append(labels)
        return np.stack(images), np.stack(parsing)

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, m in enumerate(self.meta) if m.split == split], dtype=np.intp)


# ---------------------------------------------------------------------------
# synthetic generator


def band_parsing(height: int = 64, width: int = 32) -> np.ndarray:
    """Ground-truth parsing map of the synthetic layout (identical for every image)."""
    L = cdm.LABEL
    p = np.full((height, width), L["Background"], dtype=np.uint8)
    inner = slice(MARGIN, width - MARGIN)
    p[HEAD[0]:HEAD[1], inner] = L["Face"]
    p[HEAD[0]:HEAD[0] + HAIR, inner] = L["Hair"]
    p[HEAD[0]:HEAD[1], MARGIN:MARGIN + HAIR] = L["Hair"]
    p[HEAD[0]:HEAD[1], width - MARGIN - HAIR:width - MARGIN] = L["Hair"]
    p[TORSO[0]:TORSO[1], inner] = L["Upper-clothes"]
    p[LEGS[0]:LEGS[1], MARGIN:SPLIT_COL] = L["Left-leg"]
    p[LEGS[0]:LEGS[1], SPLIT_COL:width - MARGIN] = L["Right-leg"]
    p[SHOES[0]:SHOES[1], MARGIN:SPLIT_COL] = L["Left-shoe"]
    p[SHOES[0]:SHOES[1], SPLIT_COL:width - MARGIN] = L["Right-shoe"]
    return p


# rendering style: dark-cell attenuation of the identity checker and the
# clothing stripes, per-channel color ranges, and the camera brightness spread
CHECKER_CONTRAST = 0.4
STRIPE_CONTRAST = 0.4
ID_COLOR_RANGE = (0.1, 0.9)
OUTFIT_COLOR_RANGE = (0.05, 0.95)
CAMERA_SHIFT = 0.08


def _identity_style(seed: int, person: int):
    r = stream(seed, "identity", person)
    color = r.uniform(*ID_COLOR_RANGE, size=3)
    phase = r.integers(0, 8, size=2)
    return color, phase


def _outfit_style(seed: int, clothes: int):
    r = stream(seed, "outfit", clothes)
    color = r.uniform(*OUTFIT_COLOR_RANGE, size=3)
    period = int(r.integers(2, 7))
    return color, period


def _camera_offset(cameras: int, camera: int) -> float:
    if cameras == 1:
        return 0.0
    return CAMERA_SHIFT * (2.0 * camera / (cameras - 1) - 1.0)


def render(cfg: SynthConfig, person: int, clothes: int, camera: int, noise_rng: np.random.Generator | None):
    """One image ``[3,H,W]`` for (person, outfit, camera); quantized to 8 bits."""
    h, w = cfg.height, cfg.width
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    img = np.full((3, h, w), 0.5)

    id_color, (py, px) = _identity_style(cfg.seed, person)
    checker = (((rows + py) // 4 + (cols + px) // 4) % 2).astype(float)
    id_tex = id_color[:, None, None] * (1.0 - CHECKER_CONTRAST * checker)[None]
    body = np.zeros((h, w), dtype=bool)
    body[:, MARGIN:w - MARGIN] = True
    for lo, hi in (HEAD, LEGS, SHOES):
        region = body & (rows >= lo) & (rows < hi)
        img[:, region] = id_tex[:, region]

    cl_color, period = _outfit_style(cfg.seed, clothes)
    stripes = ((rows // period) % 2).astype(float) * np.ones((1, w))
    cl_tex = cl_color[:, None, None] * (1.0 - STRIPE_CONTRAST * stripes)[None]
    torso = body & (rows >= TORSO[0]) & (rows < TORSO[1])
    img[:, torso] = cl_tex[:, torso]

    img = img + _camera_offset(cfg.cameras, camera)
    if noise_rng is not None and cfg.noise > 0:
        img = img + noise_rng.normal(0.0, cfg.noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return np.rint(img * 255.0) / 255.0


_SPLIT_CODE = {"train": 0, "query": 1, "gallery": 2}


def synthetic_layout(cfg: SynthConfig) -> list[tuple[int, int, int, int, str]]:
    """(person, outfit, camera, repeat, split) for every synthetic sample.

    Train: all train outfits on all cameras. Gallery: train outfits on camera 0.
    Query: every outfit (unseen test outfits and train outfits) on cameras 1..C-1.
    """
    if cfg.cameras < 2:
        raise ValueError("need at least 2 cameras so queries and gallery come from different views")
    if cfg.train_outfits < 2:
        raise ValueError("need at least 2 train outfits per person for clothes-change learning")
    n_out = cfg.train_outfits + cfg.test_outfits
    items = []
    for p in range(cfg.persons):
        for o in range(cfg.train_outfits):
            for c in range(cfg.cameras):
                for k in range(cfg.images_per):
                    items.append((p, o, c, k, "train"))
        for o in range(cfg.train_outfits):
            for k in range(cfg.images_per):
                items.append((p, o, 0, k, "gallery"))
        for o in range(n_out):
            for c in range(1, cfg.cameras):
                for k in range(cfg.images_per):
                    items.append((p, o, c, k, "query"))
    return items


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    n_out = cfg.train_outfits + cfg.test_outfits
    layout = synthetic_layout(cfg)
    images = np.empty((len(layout), 3, cfg.height, cfg.width))
    meta = []
    for i, (p, o, c, k, split) in enumerate(layout):
        clothes = p * n_out + o
        noise = stream(cfg.seed, "noise", _SPLIT_CODE[split], p, o, c, k)
        images[i] = render(cfg, p, clothes, c, noise)
        meta.append(SampleMeta(p, clothes, c, split))
    parsing = np.broadcast_to(band_parsing(cfg.height, cfg.width), (len(layout), cfg.height, cfg.width)).copy()
    return Dataset(images, parsing, meta)


def export_dataset(ds: Dataset, root) -> Path:
    """Write ``images/``, ``parsing/`` PNGs and a tab-separated ``meta.tsv``."""
    root = Path(root)
    lines = []
    for i, m in enumerate(ds.meta):
        rel = f"{m.split}/{i:05d}.png"
        for sub in ("images", "parsing"):
            (root / sub / m.split).mkdir(parents=True, exist_ok=True)
        write_png_rgb(root / "images" / rel, ds.images[i])
        write_png_gray(root / "parsing" / rel, ds.parsing[i])
        lines.append(f"{rel}\t{m.person_id}\t{m.clothes_id}\t{m.camera_id}\t{m.split}\n")
    (root / "meta.tsv").write_text("".join(lines), encoding="utf-8")
    return root


def load_exported(root) -> Dataset:
    root = Path(root)
    meta_path = root / "meta.tsv"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found")
    images, parsing, meta = [], [], []
    for lineno, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{meta_path}:{lineno}: expected 5 tab-separated fields")
        rel, pid, cid, cam, split = parts
        images.append(read_rgb(root / "images" / rel))
        parsing.append(cdm.load_parsing_map(root / "parsing" / rel))
        meta.append(SampleMeta(int(pid), int(cid), int(cam), split))
    return Dataset(np.stack(images), np.stack(parsing), meta)


# ---------------------------------------------------------------------------
# PRCC-style folders

_IMAGE_EXT = {".jpg", ".jpeg", ".png", ".bmp"}


def _split_role(split_dir: str, camera: str) -> str:
    if split_dir in SPLITS:
        return split_dir
    if split_dir == "test":
        return "gallery" if camera.upper() == "A" else "query"
    raise ValueError(f"unknown split directory {split_dir!r}")


def load_prcc_dir(root, size: tuple[int, int] = (64, 32)) -> FolderDataset:
    """Index ``root/<split>/<camera>/<person>/*.jpg`` with parsing PNGs under ``root/parsing/``.

    Cameras A and B share an outfit, camera C wears the other one.
    """
    root = Path(root)
    entries = []
    for split_dir in sorted(d for d in root.iterdir() if d.is_dir() and d.name != "parsing") if root.is_dir() else []:
        for cam_dir in sorted(d for d in split_dir.iterdir() if d.is_dir()):
            for pid_dir in sorted(d for d in cam_dir.iterdir() if d.is_dir()):
                for f in sorted(pid_dir.iterdir()):
                    if f.suffix.lower() in _IMAGE_EXT:
                        entries.append((split_dir.name, cam_dir.name, pid_dir.name, f))
    if not entries:
        raise ValueError(f"{root}: no identities found")

    cameras = sorted({e[1] for e in entries})
    letters = all(len(c) == 1 and c.upper() in "ABC" for c in cameras)
    cam_index = {c: ("ABC".index(c.upper()) if letters else i) for i, c in enumerate(cameras)}

    missing, image_paths, parsing_paths, meta = [], [], [], []
    skipped = 0
    for split_dir, cam, pid, f in entries:
        rel = f.relative_to(root)
        parse = (root / "parsing" / rel).with_suffix(".png")
        if not parse.exists():
            missing.append(str(rel.with_suffix(".png")))
            continue
        try:
            with Image.open(f) as im:
                im.verify()
        except Exception as exc:  # noqa: BLE001 - any decoder failure counts as undecodable
            log.warning("skipping undecodable image %s: %s", rel, exc)
            skipped += 1
            continue
        person = int(pid)
        other_outfit = int(letters and cam.upper() == "C")
        image_paths.append(f)
        parsing_paths.append(parse)
        meta.append(SampleMeta(person, person * 2 + other_outfit, cam_index[cam], _split_role(split_dir, cam)))
    if missing:
        raise ValueError(f"{root}: missing parsing maps for: {', '.join(missing)}")
    if skipped:
        log.warning("%d undecodable images skipped", skipped)
    return FolderDataset(image_paths, parsing_paths, meta, size=size, skipped=skipped)


def load_dataset_dir(root, size: tuple[int, int] = (64, 32)):
    """An exported synthetic directory (has meta.tsv) or a PRCC-style tree."""
    root = Path(root)
    if (root / "meta.tsv").exists():
        return load_exported(root)
    return load_prcc_dir(root, size=size)


# ---------------------------------------------------------------------------
# sampling and augmentation


def pk_sample(meta: Sequence[SampleMeta], P: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """P identities x K train images each, all drawn without replacement."""
    by_person: dict[int, list[int]] = {}
    for i, m in enumerate(meta):
        if m.split == "train":
            by_person.setdefault(m.person_id, []).append(i)
    eligible = sorted(p for p, idx in by_person.items() if len(idx) >= K)
    if len(eligible) < P:
        raise ValueError(f"PK sampling needs {P} persons with >= {K} train images; "
                         f"have {len(eligible)} of {len(by_person)} persons")
    persons = rng.choice(eligible, size=P, replace=False)
    out = [rng.choice(by_person[int(p)], size=K, replace=False) for p in persons]
    return np.concatenate(out).astype(np.intp)


@dataclass
class AugmentConfig:
    flip_p: float = 0.5
    crop_p: float = 1.0
    crop_pad: int = 4
    erase_p: float = 0.5
    erase_area: tuple[float, float] = (0.02, 0.4)
    erase_aspect: float = 0.3

    @classmethod
    def disabled(cls) -> AugmentConfig:
        return cls(flip_p=0.0, crop_p=0.0, erase_p=0.0)


_FLIP_LUT = np.arange(cdm.NUM_CLASSES, dtype=np.uint8)
for _a, _b in cdm.FLIP_PAIRS:
    _FLIP_LUT[cdm.LABEL[_a]], _FLIP_LUT[cdm.LABEL[_b]] = cdm.LABEL[_b], cdm.LABEL[_a]


def hflip(image: np.ndarray, parsing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mirror both arrays and swap left/right part labels."""
    return image[:, :, ::-1].copy(), _FLIP_LUT[parsing[:, ::-1]]


def augment(image: np.ndarray, parsing: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig | None = None):
    """Flip and crop act on image and parsing together; erasing touches the image only
    (erased parsing pixels become Background)."""
    cfg = cfg or AugmentConfig()
    image = np.asarray(image, dtype=np.float64)
    parsing = np.asarray(parsing, dtype=np.uint8)
    _, h, w = image.shape
    if rng.random() < cfg.flip_p:
        image, parsing = hflip(image, parsing)
    if rng.random() < cfg.crop_p and cfg.crop_pad > 0:
        pad = cfg.crop_pad
        big = np.zeros((3, h + 2 * pad, w + 2 * pad))
        big[:, pad:pad + h, pad:pad + w] = image
        bigp = np.zeros((h + 2 * pad, w + 2 * pad), dtype=np.uint8)
        bigp[pad:pad + h, pad:pad + w] = parsing
        oy, ox = rng.integers(0, 2 * pad + 1, size=2)
        image = big[:, oy:oy + h, ox:ox + w]
        parsing = bigp[oy:oy + h, ox:ox + w]
    if rng.random() < cfg.erase_p:
        image = image.copy()
        parsing = parsing.copy()
        for _ in range(100):
            area = rng.uniform(*cfg.erase_area) * h * w
            aspect = rng.uniform(cfg.erase_aspect, 1.0 / cfg.erase_aspect)
            eh = int(np.rint(np.sqrt(area * aspect)))
            ew = int(np.rint(np.sqrt(area / aspect)))
            if 0 < eh < h and 0 < ew < w:
                y = int(rng.integers(0, h - eh + 1))
                x = int(rng.integers(0, w - ew + 1))
                image[:, y:y + eh, x:x + ew] = rng.uniform(0.0, 1.0, size=(3, eh, ew))
                parsing[y:y + eh, x:x + ew] = cdm.LABEL["Background"]
                break
    return np.ascontiguousarray(image), np.ascontiguousarray(parsing)
