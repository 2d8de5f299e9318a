"""Four-stage toy backbone with GCA placement, mask fusion and a max-average pooling head."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cdm
from .gca import ATTENTION_AND_GATE, GATE_ONLY, MODES, GCAParams, gca_block, init_kernel
from .tensor import (
    Tensor,
    add,
    conv2d,
    global_avg_pool,
    global_max_pool,
    linear,
    mul,
    relu,
)


@dataclass
class BackboneConfig:
    height: int = 64
    width: int = 32
    in_channels: int = 3
    stem_channels: int = 16
    stem_kernel: int = 3
    stem_stride: int = 1
    stage_channels: tuple[int, ...] = (16, 32, 64, 128)
    stage_blocks: tuple[int, ...] = (1, 1, 1, 1)
    stage_strides: tuple[int, ...] = (2, 2, 2, 1)
    gca_modes: tuple[str, ...] = (ATTENTION_AND_GATE,) * 3 + (GATE_ONLY,)
    gca_kernel: int = 3
    use_gca: bool = True
    use_cdm: bool = True
    num_classes: int = 20
    keep_labels: tuple[int, ...] = field(default_factory=lambda: cdm.KeepTable.default().kept_labels)

    def __post_init__(self):
        for name in ("stage_channels", "stage_blocks", "stage_strides", "gca_modes"):
            value = tuple(getattr(self, name))
            setattr(self, name, value)
            if len(value) != 4:
                raise ValueError(f"{name} needs exactly 4 entries, got {len(value)}")
        if self.stage_strides[3] != 1:
            raise ValueError("stage 4 must keep stride 1")
        if any(b > a for a, b in zip(self.stage_channels[1:], self.stage_channels)):
            raise ValueError(f"stage channels must be nondecreasing, got {self.stage_channels}")
        if any(b < 1 for b in self.stage_blocks):
            raise ValueError("every stage needs at least one block")
        bad = [m for m in self.gca_modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown GCA modes {bad}")
        if self.gca_kernel % 2 == 0:
            raise ValueError(f"GCA kernel size must be odd, got {self.gca_kernel}")

    @property
    def embed_dim(self) -> int:
        return self.stage_channels[3]

    @property
    def mask_stride(self) -> int:
        # mask features land on the stage-1 output grid
        return self.stem_stride * self.stage_strides[0]

    @property
    def keep_table(self) -> cdm.KeepTable:
        return cdm.KeepTable.from_kept_labels(self.keep_labels)


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_params(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """He-normal conv/linear weights, zero biases, 1/k GCA kernels."""
    specs: list[tuple[str, tuple[int, ...]]] = []
    k = cfg.stem_kernel
    specs.append(("stem.w", (cfg.stem_channels, cfg.in_channels, k, k)))
    specs.append(("stem.b", (cfg.stem_channels,)))
    c_in = cfg.stem_channels
    for s in range(4):
        c_out = cfg.stage_channels[s]
        for blk in range(cfg.stage_blocks[s]):
            pre = f"s{s + 1}.b{blk + 1}"
            specs += [(f"{pre}.conv1.w", (c_out, c_in, 3, 3)), (f"{pre}.conv1.b", (c_out,)),
                      (f"{pre}.conv2.w", (c_out, c_out, 3, 3)), (f"{pre}.conv2.b", (c_out,))]
            c_in = c_out
    if cfg.use_cdm:
        specs += [("mask_stem.w", (cfg.stage_channels[0], 1, k, k)), ("mask_stem.b", (cfg.stage_channels[0],))]
    specs += [("fc.w", (cfg.num_classes, cfg.embed_dim)), ("fc.b", (cfg.num_classes,))]

    params: dict[str, Tensor] = {}
    for name, shape in specs:
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            data = _he(rng, shape, int(np.prod(shape[1:])))
        params[name] = Tensor(data, requires_grad=True, name=name)
    if cfg.use_gca:
        for s in range(4):
            if cfg.gca_modes[s] == ATTENTION_AND_GATE:
                name = f"s{s + 1}.gca.k"
                params[name] = init_kernel(cfg.gca_kernel, name=name)
    return params


def _stage(x: Tensor, params: dict[str, Tensor], cfg: BackboneConfig, s: int) -> Tensor:
    for blk in range(cfg.stage_blocks[s]):
        pre = f"s{s + 1}.b{blk + 1}"
        stride = cfg.stage_strides[s] if blk == 0 else 1
        x = relu(conv2d(x, params[f"{pre}.conv1.w"], params[f"{pre}.conv1.b"], stride=stride, pad=1))
        x = relu(conv2d(x, params[f"{pre}.conv2.w"], params[f"{pre}.conv2.b"], stride=1, pad=1))
    if cfg.use_gca:
        mode = cfg.gca_modes[s]
        kernel = params.get(f"s{s + 1}.gca.k")
        if mode == ATTENTION_AND_GATE and kernel is None:
            raise ValueError(f"stage {s + 1}: missing GCA kernel parameter")
        x = gca_block(x, GCAParams(kernel if kernel is not None else Tensor(np.zeros(1)), mode))
    return x


def pool_head(f: Tensor) -> Tensor:
    """Max-average pooling: mean of global max and global average per channel."""
    return mul(add(global_max_pool(f), global_avg_pool(f)), Tensor(np.full(f.shape[:2], 0.5)))


def classifier(embedding: Tensor, params: dict[str, Tensor]) -> Tensor:
    return linear(embedding, params["fc.w"], params["fc.b"])


def forward(images, masks, params: dict[str, Tensor], cfg: BackboneConfig):
    """Run the network.

    ``images`` is ``[N,3,H,W]`` (array or Tensor); ``masks`` is ``[N,H,W]``
    grayscale masks or None for the pure-RGB path. Returns
    ``(embedding, logits, stage4_features)``.
    """
    x = images if isinstance(images, Tensor) else Tensor(images)
    expected = (cfg.in_channels, cfg.height, cfg.width)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"input: expected [N,{expected[0]},{expected[1]},{expected[2]}], got {x.shape}")
    k = cfg.stem_kernel
    x = relu(conv2d(x, params["stem.w"], params["stem.b"], stride=cfg.stem_stride, pad=k // 2))
    x = _stage(x, params, cfg, 0)
    if masks is not None:
        if "mask_stem.w" not in params:
            raise ValueError("stage 1: masks given but the model has no mask stem (use_cdm is off)")
        masks = np.asarray(masks, dtype=np.float64)
        if masks.shape != (x.shape[0], cfg.height, cfg.width):
            masks = np.stack([cdm.resize_mask(m, cfg.height, cfg.width) for m in masks])
        mfeat = cdm.mask_stem(masks, params["mask_stem.w"], params["mask_stem.b"], stride=cfg.mask_stride)
        if mfeat.shape != x.shape:
            raise ValueError(f"stage 1: mask features {mfeat.shape} do not align with RGB features {x.shape}")
        x = cdm.fuse(x, mfeat)
    x = _stage(x, params, cfg, 1)
    x = _stage(x, params, cfg, 2)
    h3 = x.shape[2:]
    x = _stage(x, params, cfg, 3)
    assert x.shape[2:] == h3, "stage 4 must preserve the stage-3 spatial size"
    emb = pool_head(x)
    return emb, classifier(emb, params), x


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"DRCKPT01"


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    """Flat container: magic, u64 manifest length, manifest lines, little-endian f64 payload."""
    lines = []
    offset = 0
    for name, t in params.items():
        lines.append(f"{name}\t{','.join(str(s) for s in t.shape)}\t{offset}\n")
        offset += t.data.size * 8
    manifest = "".join(lines).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, Tensor]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    manifest = raw[16:16 + mlen].decode("utf-8")
    base = 16 + mlen
    params = {}
    for line in manifest.splitlines():
        name, shape_s, off = line.split("\t")
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=base + int(off)).reshape(shape)
        params[name] = Tensor(data.astype(np.float64), requires_grad=True, name=name)
    return params
