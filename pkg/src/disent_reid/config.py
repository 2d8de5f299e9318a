"""Run configuration.

File grammar: UTF-8, one ``section.key = value`` per line, ``#`` starts a
comment, blank lines ignored. Lists are comma separated; booleans accept
true/false/yes/no/1/0. Unknown keys are rejected.
"""
from __future__ import annotations

import difflib
from pathlib import Path
from typing import Any

from .backbone import BackboneConfig
from .cdm import KeepTable
from .data import AugmentConfig, SynthConfig
from .gca import ATTENTION_AND_GATE, GATE_ONLY
from .losses import LossConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


# key -> (parser, default)
SCHEMA: dict[str, tuple[Any, Any]] = {
    "run.seed": (int, 0),
    "run.epochs": (int, 40),
    "run.out": (str, "runs/default"),
    "model.stem_channels": (int, 16),
    "model.stage_channels": (_ints, (16, 32, 64, 128)),
    "model.stage_blocks": (_ints, (1, 1, 1, 1)),
    "model.stage_strides": (_ints, (2, 2, 2, 1)),
    "gca.kernel_size": (int, 3),
    "gca.modes": (_strs, (ATTENTION_AND_GATE,) * 3 + (GATE_ONLY,)),
    "cdm.keep_labels": (_ints, KeepTable.default().kept_labels),
    "loss.alpha": (float, 0.3),
    "loss.lambda1": (float, 0.1),
    "loss.lambda2": (float, 0.9),
    "loss.switch_epoch": (int, 10),
    "optim.lr": (float, 3.5e-4),
    "optim.decay_every": (int, 20),
    "optim.decay_factor": (float, 0.1),
    "optim.beta1": (float, 0.9),
    "optim.beta2": (float, 0.999),
    "optim.eps": (float, 1e-8),
    "data.root": (str, ""),
    "data.seed": (int, 0),
    "data.persons": (int, 20),
    "data.train_outfits": (int, 2),
    "data.test_outfits": (int, 1),
    "data.images_per": (int, 4),
    "data.cameras": (int, 3),
    "data.noise": (float, 0.05),
    "sampler.P": (int, 8),
    "sampler.K": (int, 4),
    "train.batches_per_epoch": (int, 10),
    "augment.flip_p": (float, 0.5),
    "augment.crop_p": (float, 1.0),
    "augment.crop_pad": (int, 4),
    "augment.erase_p": (float, 0.5),
    "ablation.use_cdm": (_bool, True),
    "ablation.use_gca": (_bool, True),
    "ablation.two_stage": (_bool, True),
}


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


class RunConfig:
    """Every key has a default; read values with ``cfg["loss.alpha"]``."""

    def __init__(self, overrides: dict[str, Any] | None = None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        for key, value in (overrides or {}).items():
            self[key] = value

    def __getitem__(self, key: str):
        return self.values[key]

    def __setitem__(self, key: str, value):
        if key not in SCHEMA:
            raise ConfigError(_unknown(key))
        parser = SCHEMA[key][0]
        self.values[key] = parser(value) if isinstance(value, str) and parser is not str else value

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def dumps(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.values.items())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def backbone(self, num_classes: int) -> BackboneConfig:
        return BackboneConfig(
            stem_channels=self["model.stem_channels"],
            stage_channels=self["model.stage_channels"],
            stage_blocks=self["model.stage_blocks"],
            stage_strides=self["model.stage_strides"],
            gca_modes=self["gca.modes"],
            gca_kernel=self["gca.kernel_size"],
            use_gca=self["ablation.use_gca"],
            use_cdm=self["ablation.use_cdm"],
            num_classes=num_classes,
            keep_labels=self["cdm.keep_labels"],
        )

    def loss(self) -> LossConfig:
        return LossConfig(self["loss.alpha"], self["loss.lambda1"], self["loss.lambda2"], self["loss.switch_epoch"])

    def synth(self) -> SynthConfig:
        return SynthConfig(
            persons=self["data.persons"], train_outfits=self["data.train_outfits"],
            test_outfits=self["data.test_outfits"], images_per=self["data.images_per"],
            cameras=self["data.cameras"], noise=self["data.noise"], seed=self["data.seed"],
        )

    def augment(self) -> AugmentConfig:
        return AugmentConfig(flip_p=self["augment.flip_p"], crop_p=self["augment.crop_p"],
                             crop_pad=self["augment.crop_pad"], erase_p=self["augment.erase_p"])


def _unknown(key: str) -> str:
    guess = difflib.get_close_matches(key, SCHEMA.keys(), n=1)
    hint = f"; did you mean {guess[0]!r}?" if guess else ""
    return f"unknown config key {key!r}{hint}"


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} must look like section.key")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: {_unknown(key)}")
        try:
            cfg[key] = value
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))
