"""Finite-difference gradient suite over every differentiable operation."""
from __future__ import annotations

import numpy as np

from .backbone import BackboneConfig, forward, init_params, pool_head
from .gca import GATE_ONLY, GCAParams, eca_weights, gate, gca_block
from .losses import id_loss, pairwise_distances, triplet_batch_hard
from .tensor import (
    Tensor,
    activation,
    conv1d_channels,
    conv2d,
    elementwise,
    global_avg_pool,
    global_max_pool,
    grad_check,
    linear,
    mul,
    sum_all,
)

EPS = 1e-5


def _t(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


def _away_from_kinks(rng, shape, eps=EPS):
    x = rng.uniform(-1.0, 1.0, size=shape)
    return Tensor(np.where(np.abs(x) < 20 * eps, 0.5, x))


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    """Random linear readout so every output entry matters."""
    return sum_all(mul(out, Tensor(w)))


def _distinct_max_map(rng, shape):
    # keep the per-channel maximum well separated so max-pool stays differentiable under +-eps
    x = rng.uniform(-1.0, 1.0, size=shape)
    n, c = shape[:2]
    flat = x.reshape(n, c, -1)
    flat[np.arange(n)[:, None], np.arange(c)[None, :], rng.integers(0, flat.shape[2], size=(n, c))] = 2.0
    return Tensor(x)


def _cases(rng):
    """(name, function, inputs) triples for one random draw."""
    cases = []
    x, w, b = _t(rng, (2, 3, 6, 5)), _t(rng, (4, 3, 3, 3)), _t(rng, (4,))
    r = rng.normal(size=(2, 4, 3, 3))
    cases.append(("conv2d", lambda x, w, b: _weighted(conv2d(x, w, b, stride=2, pad=1), r), [x, w, b]))

    v, k = _t(rng, (2, 7)), _t(rng, (3,))
    r1 = rng.normal(size=(2, 7))
    cases.append(("conv1d_channels", lambda v, k: _weighted(conv1d_channels(v, k), r1), [v, k]))

    x = _t(rng, (2, 3, 4, 4))
    r2 = rng.normal(size=(2, 3))
    cases.append(("global_avg_pool", lambda x: _weighted(global_avg_pool(x), r2), [x]))
    xm = _distinct_max_map(rng, (2, 3, 4, 4))
    cases.append(("global_max_pool", lambda x: _weighted(global_max_pool(x), r2), [xm]))

    r3 = rng.normal(size=(3, 4))
    cases.append(("sigmoid", lambda x: _weighted(activation("sigmoid", x), r3), [_t(rng, (3, 4), -3, 3)]))
    cases.append(("relu", lambda x: _weighted(activation("relu", x), r3), [_away_from_kinks(rng, (3, 4))]))

    a, bb = _t(rng, (2, 3, 2, 2)), _t(rng, (2, 3))
    r4 = rng.normal(size=(2, 3, 2, 2))
    for kind in ("add", "sub", "mul"):
        cases.append((f"elementwise_{kind}",
                      lambda a, b, kind=kind: _weighted(elementwise(kind, a, b), r4), [a, bb]))

    xl, wl, bl = _t(rng, (3, 5)), _t(rng, (4, 5)), _t(rng, (4,))
    r5 = rng.normal(size=(3, 4))
    cases.append(("linear", lambda x, w, b: _weighted(linear(x, w, b), r5), [xl, wl, bl]))

    xe, ke = _t(rng, (2, 5, 3, 3)), _t(rng, (3,))
    r6 = rng.normal(size=(2, 5))
    cases.append(("eca_weights", lambda x, k: _weighted(eca_weights(x, k), r6), [xe, ke]))
    r7 = rng.normal(size=(2, 5, 3, 3))
    cases.append(("gate", lambda a: _weighted(gate(a), r7), [_t(rng, (2, 5, 3, 3), -3, 3)]))
    cases.append(("gca_block", lambda x, k: _weighted(gca_block(x, GCAParams(k)), r7), [xe, ke]))
    cases.append(("gca_block_gate_only",
                  lambda x: _weighted(gca_block(x, GCAParams(Tensor(np.zeros(1)), GATE_ONLY)), r7), [xe]))

    xp = _distinct_max_map(rng, (2, 4, 3, 2))
    r8 = rng.normal(size=(2, 4))
    cases.append(("pool_head", lambda f: _weighted(pool_head(f), r8), [xp]))

    logits = _t(rng, (4, 5), -2, 2)
    labels = rng.integers(0, 5, size=4)
    cases.append(("id_loss", lambda z: id_loss(z, labels), [logits]))

    emb = _t(rng, (6, 4))
    r9 = rng.normal(size=(6, 6))
    cases.append(("pairwise_distances", lambda e: _weighted(pairwise_distances(e), r9), [emb]))
    tri_labels = np.array([0, 0, 1, 1, 2, 2])
    cases.append(("triplet_batch_hard", lambda e: triplet_batch_hard(e, tri_labels, 0.3), [_t(rng, (6, 4))]))
    return cases


def tiny_backbone() -> BackboneConfig:
    return BackboneConfig(height=16, width=8, stem_channels=3, stage_channels=(3, 4, 4, 5), num_classes=3)


def forward_case(rng, cfg: BackboneConfig | None = None, with_mask: bool = True):
    """All model parameters of a tiny backbone, checked through sum(logits) + readout of the embedding."""
    cfg = cfg or tiny_backbone()
    params = init_params(cfg, rng)
    for name, p in params.items():
        if name.endswith(".b"):
            p.data = rng.uniform(-0.1, 0.1, size=p.shape)
    images = rng.uniform(0, 1, size=(2, 3, cfg.height, cfg.width))
    masks = rng.uniform(0, 1, size=(2, cfg.height, cfg.width)) if with_mask and cfg.use_cdm else None
    names = list(params)
    r = rng.normal(size=(2, cfg.embed_dim))

    def f(*tensors):
        ps = dict(zip(names, tensors))
        emb, logits, _ = forward(images, masks, ps, cfg)
        return sum_all(logits) + _weighted(emb, r)

    return f, [params[n] for n in names]


def run_suite(seeds=range(5), include_forward: bool = True) -> dict[str, float]:
    """Worst relative error per operation across ``seeds``."""
    worst: dict[str, float] = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        cases = _cases(rng)
        if include_forward:
            f, inputs = forward_case(rng)
            cases.append(("forward", f, inputs))
        for name, f, inputs in cases:
            err = grad_check(f, inputs, EPS)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst
