"""Independent reference implementations used to check the package.

Everything here is a straight-line numpy/stdlib transcription of the intended
math — explicit loops, no torch, no imports from the package's numeric code —
so a bug in the package cannot hide in its own oracle.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        shifted = x[i] - np.max(x[i])
        e = np.exp(shifted)
        out[i] = e / e.sum()
    return out


def attention_oracle(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V with explicit loops."""
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    a, b = Q.shape[0], K.shape[0]
    d_k = K.shape[1]
    scores = np.zeros((a, b))
    for i in range(a):
        for j in range(b):
            scores[i, j] = float(np.dot(Q[i], K[j])) / math.sqrt(d_k)
    weights = softmax_rows(scores)
    out = np.zeros((a, V.shape[1]))
    for i in range(a):
        for j in range(b):
            out[i] += weights[i, j] * V[j]
    return out


def multihead_oracle(Q: np.ndarray, K: np.ndarray, V: np.ndarray, params: dict) -> np.ndarray:
    """Concat of per-head attentions followed by the output projection."""
    w_q, w_k, w_v, w_o = (np.asarray(params[k], dtype=np.float64) for k in ("w_q", "w_k", "w_v", "w_o"))
    heads = []
    for i in range(w_q.shape[0]):
        heads.append(attention_oracle(Q @ w_q[i], K @ w_k[i], V @ w_v[i]))
    return np.concatenate(heads, axis=-1) @ w_o


def layernorm_oracle(x: np.ndarray, scale: np.ndarray, bias: np.ndarray, eps: float) -> np.ndarray:
    """Row-wise: scale * (x - mean) / sqrt(population variance + eps) + bias."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        mu = x[i].mean()
        var = ((x[i] - mu) ** 2).mean()
        out[i] = scale * (x[i] - mu) / math.sqrt(var + eps) + bias
    return out


def ffn_oracle(x: np.ndarray, w1, b1, w2, b2) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    hidden = np.maximum(x @ np.asarray(w1, dtype=np.float64) + b1, 0.0)
    return hidden @ np.asarray(w2, dtype=np.float64) + b2


def align_oracle(Q: np.ndarray, P: np.ndarray, params: dict) -> tuple[np.ndarray, np.ndarray]:
    """att = LN(MH(Q,P,P)) + Q ; F = LN(FFN(att)) + att."""
    eps = float(params["eps"])
    mh = multihead_oracle(Q, P, P, params)
    att = layernorm_oracle(mh, params["ln1_scale"], params["ln1_bias"], eps) + np.asarray(Q, dtype=np.float64)
    fnn = ffn_oracle(att, params["ffn_w1"], params["ffn_b1"], params["ffn_w2"], params["ffn_b2"])
    F = layernorm_oracle(fnn, params["ln2_scale"], params["ln2_bias"], eps) + att
    return F, att


def omega_oracle(q_n: np.ndarray, P: np.ndarray, params: dict) -> np.ndarray:
    """Single softmax over the h*d_k concatenated projections."""
    w_q = np.asarray(params["w_q"], dtype=np.float64)
    w_k = np.asarray(params["w_k"], dtype=np.float64)
    h, _, d_k = w_q.shape
    q_cat = np.concatenate([np.asarray(q_n, dtype=np.float64) @ w_q[i] for i in range(h)])
    k_cat = np.concatenate([np.asarray(P, dtype=np.float64) @ w_k[i] for i in range(h)], axis=1)
    scores = k_cat @ q_cat / math.sqrt(h * d_k)
    return softmax_rows(scores[None, :])[0]


def causal_attention_oracle(
    Q_in: np.ndarray, KV_in: np.ndarray, valid: np.ndarray, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, heads: int
) -> np.ndarray:
    """One causal attention layer: keys limited to valid positions <= t, the
    diagonal always allowed. Queries come from Q_in, keys/values from KV_in;
    weight matrices are (d, d) acting as x @ W + b."""
    Q_in = np.asarray(Q_in, dtype=np.float64)
    KV_in = np.asarray(KV_in, dtype=np.float64)
    n, d = Q_in.shape
    hs = d // heads
    q_all = Q_in @ np.asarray(w_q, np.float64) + b_q
    k_all = KV_in @ np.asarray(w_k, np.float64) + b_k
    v_all = KV_in @ np.asarray(w_v, np.float64) + b_v
    out = np.zeros((n, d))
    for h in range(heads):
        sl = slice(h * hs, (h + 1) * hs)
        q, k, v = q_all[:, sl], k_all[:, sl], v_all[:, sl]
        for t in range(n):
            keys = [s for s in range(t + 1) if valid[s] or s == t]
            scores = np.array([float(np.dot(q[t], k[s])) / math.sqrt(hs) for s in keys])
            weights = softmax_rows(scores[None, :])[0]
            for w, s in zip(weights, keys):
                out[t, sl] += w * v[s]
    return out @ np.asarray(w_o, np.float64) + b_o


# -- corpus ----------------------------------------------------------------------


def kcore_oracle(events: list[tuple[str, str, int]], k: int) -> list[tuple[str, str, int]]:
    """Fixpoint by simultaneous removal (different removal order, same core)."""
    current = list(events)
    while True:
        users = Counter(e[0] for e in current)
        items = Counter(e[1] for e in current)
        kept = [e for e in current if users[e[0]] >= k and items[e[1]] >= k]
        if len(kept) == len(current):
            return kept
        current = kept


def split_oracle(events: list[tuple[str, str, int]]) -> dict[str, dict]:
    """Sort each user's events by timestamp (stable) and slice off the last two."""
    per_user: dict[str, list[tuple[int, str]]] = {}
    for user, item, ts in events:
        per_user.setdefault(user, []).append((ts, item))
    out = {}
    for user, rows in per_user.items():
        rows = sorted(rows, key=lambda r: r[0])
        items = [it for _, it in rows]
        if len(items) >= 3:
            out[user] = {"train": items[:-2], "valid": items[-2], "test": items[-1]}
        else:
            out[user] = {"train": items, "valid": None, "test": None}
    return out


# -- evaluation -------------------------------------------------------------------


def rank_oracle(scores: dict[int, float], target: int) -> int:
    """Full sort, target first among ties."""
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0] != target))
    for position, (idx, _) in enumerate(ordered, start=1):
        if idx == target:
            return position
    raise KeyError(target)


def metrics_oracle(ranks: list[int], k: int) -> tuple[float, float]:
    hits = [1.0 if r <= k else 0.0 for r in ranks]
    gains = [1.0 / math.log2(r + 1) if r <= k else 0.0 for r in ranks]
    return math.fsum(hits) / len(ranks), math.fsum(gains) / len(ranks)


# -- loss ------------------------------------------------------------------------


def bce_oracle(pos: np.ndarray, neg: np.ndarray, mask: np.ndarray) -> float:
    """Direct -sum[log sigma(pos) + log(1 - sigma(neg))] over valid positions."""
    total = 0.0
    for p, g, m in zip(np.ravel(pos), np.ravel(neg), np.ravel(mask)):
        if m:
            total += math.log(1.0 / (1.0 + math.exp(-p)))
            total += math.log(1.0 - 1.0 / (1.0 + math.exp(-g)))
    return -total
