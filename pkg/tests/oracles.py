"""Reference implementations written as plain loops, independent of the package code."""
import math

import numpy as np


def softmax(xs, keep=None):
    keep = [True] * len(xs) if keep is None else list(keep)
    live = [x for x, k in zip(xs, keep) if k]
    if not live:
        return [0.0] * len(xs)
    m = max(live)
    e = [math.exp(x - m) if k else 0.0 for x, k in zip(xs, keep)]
    s = sum(e)
    return [v / s for v in e]


def attn(Q, K, V, keep=None):
    Q, K, V = (np.asarray(a, float) for a in (Q, K, V))
    out = np.zeros((Q.shape[0], V.shape[1]))
    for i in range(Q.shape[0]):
        logits = [float(Q[i] @ K[j]) / math.sqrt(Q.shape[1]) for j in range(K.shape[0])]
        w = softmax(logits, keep)
        for j in range(K.shape[0]):
            out[i] += w[j] * V[j]
    return out


def multi_head(Q, K, V, wq, wk, wv, wo, heads, keep=None):
    d = wq.shape[0]
    dh = d // heads
    parts = []
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        parts.append(attn(Q @ wq[:, cols], K @ wk[:, cols], V @ wv[:, cols], keep))
    return np.concatenate(parts, axis=1) @ wo


def layer_norm(x, gain=None, bias=None, eps=1e-5):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    for i, row in enumerate(x):
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[i] = [(v - mu) / math.sqrt(var + eps) for v in row]
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def gated_aggregate(X, wa, ba, wg, keep=None):
    X = np.asarray(X, float)
    scores = [float(np.tanh(X[i] @ wa + ba) @ wg[:, 0]) for i in range(X.shape[0])]
    w = softmax(scores, keep)
    return sum(w[i] * X[i] for i in range(X.shape[0])), w


def intra(P, wq, wk, wv, keep):
    """Row j attends over the other real rows; a lone real row gets zeros."""
    n, d = P.shape
    out = np.zeros((n, wv.shape[1]))
    for j in range(n):
        logits = [float((P[j] @ wq) @ (P[i] @ wk)) / math.sqrt(d) for i in range(n)]
        w = softmax(logits, [keep[i] and i != j for i in range(n)])
        out[j] = sum(w[i] * P[i] for i in range(n)) @ wv
    return out


def inter(P, N, wq, wk2, wv2, keep_n):
    d = P.shape[1]
    out = np.zeros((P.shape[0], wv2.shape[1]))
    for j in range(P.shape[0]):
        logits = [float((P[j] @ wq) @ (N[i] @ wk2)) / math.sqrt(d) for i in range(N.shape[0])]
        w = softmax(logits, keep_n)
        out[j] = sum(w[i] * (N[i] @ wv2) for i in range(N.shape[0]))
    return out


def denoise_alpha(P, p_hat, n_hat, prm, keep):
    """prm: dict with wu1..wu4 and bu1..bu4 and gamma, as numpy arrays."""
    g = max(float(prm["gamma"][0]), 0.0)
    s = []
    for j in range(P.shape[0]):
        sp = float(np.tanh(np.concatenate([P[j], p_hat[j]]) @ prm["wu1"] + prm["bu1"]) @ prm["wu2"][:, 0]
                   + prm["bu2"][0])
        sn = float(np.tanh(np.concatenate([P[j], n_hat[j]]) @ prm["wu3"] + prm["bu3"]) @ prm["wu4"][:, 0]
                   + prm["bu4"][0])
        s.append(sp - g * sn)
    return softmax(s, keep)


def neighbor_attention(r, nbrs, w1, w2, heads, keep=None):
    d = w1.shape[0]
    dh = d // heads
    out = []
    for m in range(heads):
        cols = slice(m * dh, (m + 1) * dh)
        logits = [float((r @ w1[:, cols]) @ (nb @ w2[:, cols])) / math.sqrt(dh) for nb in nbrs]
        out.append(softmax(logits, keep))
    return out


def neighbor_aggregate(r, nbrs, w1, w2, w3, heads, keep=None):
    d = w1.shape[0]
    dh = d // heads
    weights = neighbor_attention(r, nbrs, w1, w2, heads, keep)
    parts = []
    for m in range(heads):
        cols = slice(m * dh, (m + 1) * dh)
        parts.append(sum(weights[m][k] * (nbrs[k] @ w3[:, cols]) for k in range(len(nbrs))))
    return np.concatenate(parts)


def fuse_node(r, r_hat, wf1, wf2):
    x = np.concatenate([r, r_hat])
    return 1.0 / (1.0 + np.exp(-(x @ wf1))) * np.tanh(x @ wf2)


def fusion_weight(f, w1, b1, w2, b2):
    return float(np.tanh(f @ w1 + b1) @ w2[:, 0] + b2[0])


def softmax_loss(scores):
    pos = scores[0]
    return -math.log(math.exp(pos) / sum(math.exp(s) for s in scores))


# ---------------------------------------------------------------- metrics


def auc(labels, scores):
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def ranks(scores):
    """1-based ranks by descending score; equal scores keep input order."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    r = [0] * len(scores)
    for pos, i in enumerate(order):
        r[i] = pos + 1
    return r


def mrr(labels, scores):
    r = ranks(scores)
    rr = [1.0 / r[i] for i, y in enumerate(labels) if y == 1]
    return math.fsum(rr) / len(rr)  # correctly rounded, so equality can be exact


def ndcg(labels, scores, k):
    r = ranks(scores)
    dcg = sum((2 ** labels[i] - 1) / math.log2(r[i] + 1) for i in range(len(labels)) if r[i] <= k)
    ideal = sorted(labels, reverse=True)
    idcg = sum((2 ** y - 1) / math.log2(i + 2) for i, y in enumerate(ideal[:k]))
    return dcg / idcg
