"""Independent brute-force reference implementations used by the tests.

Everything here is plain numpy with explicit loops, deliberately sharing
no code with the package; the tests compare library outputs against these.
"""

import math

import numpy as np


def matmul_oracle(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def softmax_oracle(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


def layer_norm_oracle(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * ((x - mu) / np.sqrt(var + eps)) + beta


def sdpa_oracle(q, k, v, mask=None):
    t_q, d_k = q.shape
    t_k = k.shape[0]
    out = np.zeros((t_q, v.shape[1]))
    for t in range(t_q):
        scores = np.array([float(q[t] @ k[s]) / math.sqrt(d_k) for s in range(t_k)])
        if mask is not None:
            scores = np.where(mask[t], scores, -np.inf)
        e = np.exp(scores - scores.max())
        w = e / e.sum()
        for s in range(t_k):
            out[t] += w[s] * v[s]
    return out


def kernel_softmax_oracle(w_a):
    e = np.exp(w_a - w_a.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def local_conv_oracle(s, w_a, dilation):
    kern = kernel_softmax_oracle(w_a)
    taps = w_a.shape[0]
    t_len, d_h = s.shape
    out = np.zeros_like(s)
    for t in range(t_len):
        for c in range(d_h):
            acc = 0.0
            for j in range(taps):
                src = t - j * dilation
                if src >= 0:
                    acc += kern[j, c] * s[src, c]
            out[t, c] = acc
    return out


def adaptive_query_oracle(s, w_s, w_q):
    proj = s @ w_s
    scores = s @ w_q
    e = np.exp(scores - scores.max())
    w = e / e.sum()
    return (proj * w[:, None]).sum(axis=0)


def adaptive_query_prefix_oracle(s, w_s, w_q):
    t_len = s.shape[0]
    return np.stack(
        [adaptive_query_oracle(s[: t + 1], w_s, w_q) for t in range(t_len)]
    )


def dynamic_head_oracle(s_proj, cp, causal):
    w_a, w_s, w_q = cp.w_a.data, cp.w_s.data, cp.w_q.data
    d_h = s_proj.shape[1]
    local = local_conv_oracle(s_proj, w_a, cp.dilation)
    if causal:
        query = adaptive_query_prefix_oracle(s_proj, w_s, w_q)
    else:
        query = np.broadcast_to(adaptive_query_oracle(s_proj, w_s, w_q), local.shape)
    score = (local * query).sum(axis=-1) / math.sqrt(d_h)
    gate = 1.0 / (1.0 + np.exp(-score))
    return gate[:, None] * local


def multi_head_oracle(x, params, mask=None, causal_conv=False):
    outs = []
    for hp in params.self_heads:
        outs.append(
            sdpa_oracle(x @ hp.w_q.data, x @ hp.w_k.data, x @ hp.w_v.data, mask)
        )
    for cp in params.conv_heads:
        outs.append(dynamic_head_oracle(x @ cp.w_in.data, cp, causal_conv))
    return np.concatenate(outs, axis=-1) @ params.w_o.data


def feed_forward_oracle(x, ffn):
    hidden = np.maximum(x @ ffn.w1.data + ffn.b1.data, 0.0)
    return hidden @ ffn.w2.data + ffn.b2.data


def encoder_layer_oracle(x, layer):
    attn = multi_head_oracle(x, layer.mha)
    h = layer_norm_oracle(x + attn, layer.ln1.gamma.data, layer.ln1.beta.data)
    ff = feed_forward_oracle(h, layer.ffn)
    return layer_norm_oracle(h + ff, layer.ln2.gamma.data, layer.ln2.beta.data)


def cross_attention_oracle(y, memory, params):
    outs = []
    for hp in params.self_heads:
        outs.append(
            sdpa_oracle(y @ hp.w_q.data, memory @ hp.w_k.data, memory @ hp.w_v.data)
        )
    for cp in params.conv_heads:
        gated = dynamic_head_oracle(memory @ cp.w_in.data, cp, causal=False)
        pooled = gated.mean(axis=0)
        outs.append(np.broadcast_to(pooled, (y.shape[0], pooled.shape[0])).copy())
    return np.concatenate(outs, axis=-1) @ params.w_o.data


def decoder_layer_oracle(y, memory, layer):
    t_len = y.shape[0]
    mask = np.tril(np.ones((t_len, t_len), dtype=bool))
    attn = multi_head_oracle(y, layer.mha, mask=mask, causal_conv=True)
    h1 = layer_norm_oracle(y + attn, layer.ln1.gamma.data, layer.ln1.beta.data)
    cross = cross_attention_oracle(h1, memory, layer.xmha)
    h2 = layer_norm_oracle(h1 + cross, layer.ln2.gamma.data, layer.ln2.beta.data)
    ff = feed_forward_oracle(h2, layer.ffn)
    return layer_norm_oracle(h2 + ff, layer.ln3.gamma.data, layer.ln3.beta.data)


def cross_entropy_oracle(logits, targets, ignore_id=-1):
    total, count = 0.0, 0
    for row, t in zip(logits.reshape(-1, logits.shape[-1]), np.asarray(targets).reshape(-1)):
        if t == ignore_id:
            continue
        p = softmax_oracle(row)
        total -= math.log(p[t])
        count += 1
    return total / count
