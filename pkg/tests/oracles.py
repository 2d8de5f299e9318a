"""Slow, obviously-correct reference implementations used only by the tests."""
import math
from fractions import Fraction

import numpy as np

from disent_reid.data import SampleMeta


def conv2d_loops(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(n):
        for o in range(co):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for ch in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                r = y * stride + dy - pad
                                q = xx * stride + dx - pad
                                if 0 <= r < h and 0 <= q < wd:
                                    acc += x[i, ch, r, q] * w[o, ch, dy, dx]
                    out[i, o, y, xx] = acc
    return out


def conv1d_loops(v, k):
    c, m = len(v), len(k)
    half = m // 2
    out = np.zeros(c)
    for i in range(c):
        for j in range(m):
            src = i + j - half
            if 0 <= src < c:
                out[i] += v[src] * k[j]
    return out


def linear_loops(x, w, b):
    n, d = x.shape
    k = w.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            out[i, j] = b[j] + sum(x[i, t] * w[j, t] for t in range(d))
    return out


def avg_pool_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c))
    for i in range(n):
        for ch in range(c):
            total = 0.0
            for r in range(h):
                for q in range(w):
                    total += x[i, ch, r, q]
            out[i, ch] = total / (h * w)
    return out


def max_pool_loops(x):
    n, c, h, w = x.shape
    out = np.full((n, c), -np.inf)
    for i in range(n):
        for ch in range(c):
            for r in range(h):
                for q in range(w):
                    out[i, ch] = max(out[i, ch], x[i, ch, r, q])
    return out


def distances_loops(e):
    n = len(e)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = math.sqrt(sum((a - b) ** 2 for a, b in zip(e[i], e[j])))
    return out


def softmax_ce_loops(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        z = [math.exp(v) for v in row]
        total -= math.log(z[y] / sum(z))
    return total / len(labels)


def valid_pair(q, g, mode):
    if q.person_id != g.person_id:
        return True
    if q.camera_id == g.camera_id:
        return False
    if mode == "same_cloth":
        return q.clothes_id == g.clothes_id
    return q.clothes_id != g.clothes_id


def brute_force_metrics(dist, q_meta, g_meta, mode):
    """Sort-free ranking: an entry's rank is one plus the number of valid entries ahead of it.

    Ahead means strictly closer, or equally close with a smaller gallery index.
    Precision sums are exact rationals rounded once. Returns (top1, mAP, valid, excluded).
    """
    hits, aps, excluded = [], [], 0
    for qi, q in enumerate(q_meta):
        valid = [j for j, g in enumerate(g_meta) if valid_pair(q, g, mode)]
        relevant = [j for j in valid if g_meta[j].person_id == q.person_id]
        if not relevant:
            excluded += 1
            continue

        def rank(j, qi=qi, valid=valid):
            ahead = 0
            for t in valid:
                if dist[qi, t] < dist[qi, j] or (dist[qi, t] == dist[qi, j] and t < j):
                    ahead += 1
            return ahead + 1

        first = min(valid, key=rank)
        hits.append(1 if g_meta[first].person_id == q.person_id else 0)
        ranks = sorted(rank(j) for j in relevant)
        aps.append(sum(Fraction(i + 1, r) for i, r in enumerate(ranks)) / len(ranks))
    n = len(hits)
    if not n:
        return 0.0, 0.0, 0, excluded
    return float(Fraction(sum(hits), n)), float(sum(aps) / n), n, excluded


def random_instance(r, nq, ng, persons=5):
    """Random query/gallery metadata; each person owns three outfits and there are three cameras."""
    def meta(n, split):
        out = []
        for _ in range(n):
            p = int(r.integers(persons))
            out.append(SampleMeta(p, p * 3 + int(r.integers(3)), int(r.integers(3)), split))
        return out
    return meta(nq, "query"), meta(ng, "gallery")


def adam_reference(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar-by-scalar Adam over a sequence of gradients."""
    p = np.array(p, dtype=np.float64).ravel()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, 1):
        g = np.asarray(g, dtype=np.float64).ravel()
        for i in range(len(p)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            p[i] -= lr * mh / (math.sqrt(vh) + eps)
    return p
