"""Forward/backward primitives for the captioning network.

All functions are pure over numpy arrays and return (output, cache); the
matching ``*_bwd`` consumes the upstream gradient and the cache.  Shapes
are batch-first with the embedding width on the last axis.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

NEG_INF = -1e9  # additive mask value; finite so softmax gradients stay clean
LN_EPS = 1e-5

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = 0.5 * x * (1.0 + erf(x / _SQRT_2))
    return y, x


def gelu_bwd(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dout * (cdf + x * pdf)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def linear_bwd(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    dx = dout @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = x2.T @ d2
    db = d2.sum(axis=0)
    return dx, dw, db


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def layer_norm_bwd(dout: np.ndarray, cache):
    xhat, inv, g = cache
    dxhat = dout * g
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    dg = (dout * xhat).reshape(-1, dout.shape[-1]).sum(axis=0)
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    return dx, dg, db


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def attention(
    xq: np.ndarray,
    xkv: np.ndarray,
    weights: dict[str, np.ndarray],
    n_heads: int,
    mask: np.ndarray | None = None,
):
    """Multi-head attention.  ``mask`` is additive, broadcastable to
    (batch, heads, Tq, Tk); use NEG_INF for disallowed key positions."""
    q = _split_heads(linear(xq, weights["wq"], weights["bq"]), n_heads)
    k = _split_heads(linear(xkv, weights["wk"], weights["bk"]), n_heads)
    v = _split_heads(linear(xkv, weights["wv"], weights["bv"]), n_heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if mask is not None:
        scores = scores + mask.astype(scores.dtype, copy=False)
    attn = _softmax(scores)
    ctx = _merge_heads(attn @ v)
    out = linear(ctx, weights["wo"], weights["bo"])
    cache = (xq, xkv, q, k, v, attn, ctx, weights, n_heads, scale)
    return out, cache


def attention_bwd(dout: np.ndarray, cache):
    xq, xkv, q, k, v, attn, ctx, weights, n_heads, scale = cache
    dctx, dwo, dbo = linear_bwd(dout, ctx, weights["wo"])
    dctx = _split_heads(dctx, n_heads)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = (dscores @ k) * scale
    dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
    dxq, dwq, dbq = linear_bwd(_merge_heads(dq), xq, weights["wq"])
    dxk, dwk, dbk = linear_bwd(_merge_heads(dk), xkv, weights["wk"])
    dxv, dwv, dbv = linear_bwd(_merge_heads(dv), xkv, weights["wv"])
    grads = {
        "wq": dwq, "bq": dbq, "wk": dwk, "bk": dbk,
        "wv": dwv, "bv": dbv, "wo": dwo, "bo": dbo,
    }
    return dxq, dxk + dxv, grads


def feed_forward(x: np.ndarray, w1, b1, w2, b2):
    h = linear(x, w1, b1)
    a, gcache = gelu(h)
    out = linear(a, w2, b2)
    return out, (x, w1, a, gcache, w2)


def feed_forward_bwd(dout: np.ndarray, cache):
    x, w1, a, gcache, w2 = cache
    da, dw2, db2 = linear_bwd(dout, a, w2)
    dh = gelu_bwd(da, gcache)
    dx, dw1, db1 = linear_bwd(dh, x, w1)
    return dx, (dw1, db1, dw2, db2)


def key_mask_from_valid(valid: np.ndarray) -> np.ndarray:
    """(B, Tk) boolean validity -> additive mask of shape (B, 1, 1, Tk)."""
    return np.where(valid[:, None, None, :], 0.0, NEG_INF)


def causal_mask(t: int) -> np.ndarray:
    """(1, 1, T, T) additive mask allowing each position to see itself and
    earlier positions."""
    m = np.triu(np.full((t, t), NEG_INF), k=1)
    return m[None, None, :, :]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
