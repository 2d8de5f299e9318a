"""Gated channel attention.

Stages 1-3 reweight channels with ECA-style weights and then self-gate;
stage 4 only self-gates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, conv1d_channels, global_avg_pool, mul, sigmoid

ATTENTION_AND_GATE = "attention_and_gate"
GATE_ONLY = "gate_only"
MODES = (ATTENTION_AND_GATE, GATE_ONLY)


@dataclass
class GCAParams:
    kernel: Tensor
    mode: str = ATTENTION_AND_GATE

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"GCA mode must be one of {MODES}, got {self.mode!r}")
        k = self.kernel.shape[0] if self.kernel.ndim == 1 else 0
        if k % 2 == 0:
            raise ValueError(f"GCA kernel length must be odd, got shape {self.kernel.shape}")


def init_kernel(k: int = 3, name: str | None = None) -> Tensor:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"GCA kernel size must be odd, got {k}")
    return Tensor(np.full(k, 1.0 / k), requires_grad=True, name=name)


def eca_weights(x: Tensor, kernel: Tensor) -> Tensor:
    """Channel weights in (0, 1): sigmoid of a 1-D conv over pooled channel means."""
    return sigmoid(conv1d_channels(global_avg_pool(x), kernel), open_interval=True)


def apply_attention(x: Tensor, weights: Tensor) -> Tensor:
    if weights.shape != x.shape[:2]:
        raise ValueError(f"attention weights {weights.shape} do not match features {x.shape}")
    return mul(x, weights)


def gate(a: Tensor) -> Tensor:
    """Self-gating ``a * sigmoid(a)``, entry by entry."""
    return mul(a, sigmoid(a))


def gca_block(x: Tensor, params: GCAParams) -> Tensor:
    if params.mode == GATE_ONLY:
        return gate(x)
    return gate(apply_attention(x, eca_weights(x, params.kernel)))
