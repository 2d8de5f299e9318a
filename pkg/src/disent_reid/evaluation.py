"""Retrieval evaluation under same-cloth (SC) and clothing-change (CC) protocols."""
from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import cdm
from .backbone import BackboneConfig, forward
from .data import SampleMeta
from .images import write_pgm

SAME_CLOTH = "same_cloth"
CLOTHING_CHANGE = "clothing_change"
PROTOCOLS = (SAME_CLOTH, CLOTHING_CHANGE)
SHORT_NAMES = {"sc": SAME_CLOTH, "cc": CLOTHING_CHANGE}


@dataclass
class EvalResult:
    protocol: str
    top1: float
    mAP: float
    valid_queries: int
    excluded_queries: int


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Unit rows; all-zero rows become the uniform unit vector so every row has norm 1."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    out = np.empty_like(x)
    tiny = norms[:, 0] < 1e-12
    out[~tiny] = x[~tiny] / norms[~tiny]
    out[tiny] = 1.0 / np.sqrt(x.shape[1])
    return out


def embed_all(dataset, indices, params, cfg: BackboneConfig, batch_size: int = 64):
    """Unaugmented forward over ``indices``; returns (normalized embeddings, meta)."""
    indices = np.asarray(indices, dtype=np.intp)
    table = cfg.keep_table
    chunks = []
    for start in range(0, len(indices), batch_size):
        idx = indices[start:start + batch_size]
        images, parsing = dataset.batch(idx)
        masks = cdm.build_grayscale(parsing, table) if cfg.use_cdm else None
        emb, _, _ = forward(images, masks, params, cfg)
        chunks.append(emb.data)
    emb = np.concatenate(chunks) if chunks else np.zeros((0, cfg.embed_dim))
    return l2_normalize(emb), [dataset.meta[i] for i in indices]


def distance_matrix(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    d2 = (q * q).sum(1)[:, None] + (g * g).sum(1)[None, :] - 2.0 * (q @ g.T)
    return np.sqrt(np.maximum(d2, 0.0))


def protocol_filter(q: SampleMeta, g: SampleMeta, mode: str) -> bool:
    """Is gallery entry ``g`` a valid candidate for query ``q`` under ``mode``?"""
    if mode not in PROTOCOLS:
        raise ValueError(f"unknown protocol {mode!r}")
    if g.person_id != q.person_id:
        return True
    if g.camera_id == q.camera_id:
        return False
    if mode == SAME_CLOTH:
        return g.clothes_id == q.clothes_id
    return g.clothes_id != q.clothes_id


def _valid_matrix(q_meta, g_meta, mode):
    qp = np.array([m.person_id for m in q_meta])[:, None]
    qc = np.array([m.clothes_id for m in q_meta])[:, None]
    qk = np.array([m.camera_id for m in q_meta])[:, None]
    gp = np.array([m.person_id for m in g_meta])[None, :]
    gc = np.array([m.clothes_id for m in g_meta])[None, :]
    gk = np.array([m.camera_id for m in g_meta])[None, :]
    same = qp == gp
    keep_same = (qc == gc) if mode == SAME_CLOTH else (qc != gc)
    valid = ~same | ((qk != gk) & keep_same)
    return valid, same


def cmc_map(dist: np.ndarray, q_meta: Sequence[SampleMeta], g_meta: Sequence[SampleMeta], mode: str) -> EvalResult:
    """Top-1 and mAP; ranks ascend by distance with ties broken by gallery index.

    Precision sums are accumulated as exact fractions and rounded once, so the
    metrics do not depend on summation order.
    """
    if mode not in PROTOCOLS:
        raise ValueError(f"unknown protocol {mode!r}")
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape != (len(q_meta), len(g_meta)):
        raise ValueError(f"distance matrix {dist.shape} does not match {len(q_meta)} queries x {len(g_meta)} gallery")
    if not np.all(np.isfinite(dist)):
        raise ValueError("distance matrix contains non-finite values")
    valid, same = _valid_matrix(q_meta, g_meta, mode)
    hits, ap_total = 0, Fraction(0)
    valid_queries = excluded = 0
    gidx = np.arange(dist.shape[1])
    for i in range(dist.shape[0]):
        cand = gidx[valid[i]]
        rel = same[i, cand]
        if not rel.any():
            excluded += 1
            continue
        order = np.lexsort((cand, dist[i, cand]))
        rel = rel[order]
        valid_queries += 1
        hits += int(rel[0])
        ranks = (np.flatnonzero(rel) + 1).tolist()
        ap_total += sum(Fraction(i, r) for i, r in enumerate(ranks, 1)) / len(ranks)
    n = valid_queries
    if not n:
        return EvalResult(mode, 0.0, 0.0, 0, excluded)
    return EvalResult(mode, float(Fraction(hits, n)), float(ap_total / n), n, excluded)


def protocol_queries(q_meta: Sequence[SampleMeta], g_meta: Sequence[SampleMeta], mode: str) -> np.ndarray:
    """Query subset for a protocol: SC uses queries whose outfit is in the gallery, CC the rest."""
    outfits = {(m.person_id, m.clothes_id) for m in g_meta}
    seen = np.array([(m.person_id, m.clothes_id) in outfits for m in q_meta], dtype=bool)
    return np.flatnonzero(seen if mode == SAME_CLOTH else ~seen)


def evaluate(dataset, params, cfg: BackboneConfig, protocols=PROTOCOLS) -> list[EvalResult]:
    q_emb, q_meta = embed_all(dataset, dataset.indices("query"), params, cfg)
    g_emb, g_meta = embed_all(dataset, dataset.indices("gallery"), params, cfg)
    dist = distance_matrix(q_emb, g_emb)
    results = []
    for mode in protocols:
        sel = protocol_queries(q_meta, g_meta, mode)
        results.append(cmc_map(dist[sel], [q_meta[i] for i in sel], g_meta, mode))
    return results


def format_report(results: Sequence[EvalResult]) -> str:
    return "".join(f"{r.protocol}\t{r.top1:.6f}\t{r.mAP:.6f}\t{r.valid_queries}\t{r.excluded_queries}\n"
                   for r in results)


def write_report(results: Sequence[EvalResult], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv = out_dir / "metrics.tsv"
    tsv.write_text(format_report(results), encoding="utf-8")
    js = out_dir / "metrics.json"
    js.write_text(json.dumps([asdict(r) for r in results], indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return tsv, js


def heatmap(features: np.ndarray, height: int, width: int) -> tuple[np.ndarray, bool]:
    """Channel-mean activation, min-max scaled to uint8 and upscaled by nearest neighbour.

    Returns (map, constant) where ``constant`` flags a degenerate all-equal input.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 4:
        if f.shape[0] != 1:
            raise ValueError(f"heatmap expects a single image's features, got batch of {f.shape[0]}")
        f = f[0]
    spatial = f.mean(axis=0)
    lo, hi = spatial.min(), spatial.max()
    constant = not hi > lo
    if constant:
        small = np.zeros(spatial.shape, dtype=np.uint8)
    else:
        small = np.rint((spatial - lo) / (hi - lo) * 255.0).astype(np.uint8)
    rows = np.minimum((np.arange(height) * spatial.shape[0]) // height, spatial.shape[0] - 1)
    cols = np.minimum((np.arange(width) * spatial.shape[1]) // width, spatial.shape[1] - 1)
    return small[rows][:, cols], constant


def heatmap_export(features, out, height: int = 64, width: int = 32) -> np.ndarray:
    data = features.data if hasattr(features, "data") else features
    hm, constant = heatmap(data, height, width)
    write_pgm(out, hm, comment="constant feature map; heatmap is all zero" if constant else None)
    return hm
