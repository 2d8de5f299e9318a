"""Two-stage training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cdm
from .backbone import BackboneConfig, forward, init_params, save_checkpoint
from .config import RunConfig
from .data import augment, generate_synthetic, load_dataset_dir, pk_sample
from .losses import combined_loss, id_loss, triplet_batch_hard
from .optim import AdamState, adam_step, lr_at
from .rng import stream
from .tensor import Record, backward

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    id_loss: float
    tri_loss: float
    combined: float

    def line(self) -> str:
        return (f"epoch {self.epoch:3d}  lr {self.lr:.3e}  L_id {self.id_loss:.6f}  "
                f"L_tri {self.tri_loss:.6f}  combined {self.combined:.6f}")


@dataclass
class TrainResult:
    params: dict
    backbone: BackboneConfig
    label_of: dict[int, int]
    history: list[EpochStats] = field(default_factory=list)


def load_data(cfg: RunConfig):
    if cfg["data.root"]:
        return load_dataset_dir(cfg["data.root"])
    return generate_synthetic(cfg.synth())


def train_labels(meta) -> dict[int, int]:
    """Map train person ids to contiguous class indices."""
    return {p: i for i, p in enumerate(sorted({m.person_id for m in meta if m.split == "train"}))}


def batches_per_epoch(cfg: RunConfig, n_train: int) -> int:
    n = cfg["train.batches_per_epoch"]
    if n > 0:
        return n
    return max(1, math.ceil(n_train / (cfg["sampler.P"] * cfg["sampler.K"])))


def _checkpoint(path: Path, params, cfg: RunConfig):
    """Checkpoint plus a sidecar config snapshot with the same stem."""
    save_checkpoint(path, params)
    cfg.save(path.with_suffix(".cfg"))


def _rotate_checkpoints(out: Path, keep: int = 2):
    ckpts = sorted(out.glob("epoch_*.ckpt"))
    for old in ckpts[:-keep]:
        old.unlink()
        old.with_suffix(".cfg").unlink(missing_ok=True)


def train(cfg: RunConfig, dataset=None, out_dir=None, echo=None) -> TrainResult:
    """Train from scratch; writes per-epoch checkpoints under ``out_dir`` when given."""
    dataset = dataset if dataset is not None else load_data(cfg)
    label_of = train_labels(dataset.meta)
    bcfg = cfg.backbone(num_classes=len(label_of))
    lcfg = cfg.loss()
    acfg = cfg.augment()
    seed = cfg["run.seed"]
    params = init_params(bcfg, stream(seed, "init"))
    state = AdamState(beta1=cfg["optim.beta1"], beta2=cfg["optim.beta2"], eps=cfg["optim.eps"])
    table = bcfg.keep_table
    P, K = cfg["sampler.P"], cfg["sampler.K"]
    n_batches = batches_per_epoch(cfg, len(dataset.indices("train")))
    two_stage = cfg["ablation.two_stage"]
    result = TrainResult(params, bcfg, label_of)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _checkpoint(out / "epoch_000.ckpt", params, cfg)

    for epoch in range(cfg["run.epochs"]):
        lr = lr_at(epoch, cfg["optim.lr"], cfg["optim.decay_every"], cfg["optim.decay_factor"])
        sums = np.zeros(3)
        for b in range(n_batches):
            idx = pk_sample(dataset.meta, P, K, stream(seed, "sampler", epoch, b))
            images, parsing = dataset.batch(idx)
            aug = stream(seed, "augment", epoch, b)
            pairs = [augment(im, pm, aug, acfg) for im, pm in zip(images, parsing)]
            images = np.stack([p[0] for p in pairs])
            masks = cdm.build_grayscale(np.stack([p[1] for p in pairs]), table) if bcfg.use_cdm else None
            labels = np.array([label_of[dataset.meta[i].person_id] for i in idx])
            with Record() as rec:
                emb, logits, _ = forward(images, masks, params, bcfg)
                l_id = id_loss(logits, labels)
                l_tri = triplet_batch_hard(emb, labels, lcfg.alpha)
                loss = combined_loss(epoch, lcfg, l_id, l_tri, two_stage)
            grads = backward(rec, loss)
            adam_step(params, {n: grads.get(p, np.zeros_like(p.data)) for n, p in params.items()}, state, lr)
            sums += (l_id.item(), l_tri.item(), loss.item())
        stats = EpochStats(epoch, lr, *(sums / n_batches))
        result.history.append(stats)
        if echo is not None:
            echo(stats.line())
        log.debug(stats.line())
        if out is not None:
            _checkpoint(out / f"epoch_{epoch + 1:03d}.ckpt", params, cfg)
            _rotate_checkpoints(out)
    if out is not None:
        _checkpoint(out / "final.ckpt", params, cfg)
    return result
