"""Small numpy layer set with hand-written backward passes.

Every forward returns ``(out, cache)`` and the matching backward takes
``(dout, cache)``.  Arrays carry leading batch dimensions; the dtype of the
weights decides the working precision (float32 for training, float64 for
gradient verification).
"""

from __future__ import annotations

import numpy as np

SLOPE = 0.2


def lrelu(x, slope=SLOPE):
    return np.where(x > 0, x, slope * x)


def lrelu_grad(x, slope=SLOPE):
    return np.where(x > 0, 1.0, slope).astype(x.dtype)


def dense_forward(x, W, b):
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"dense: input has {x.shape[-1]} channels, weight expects {W.shape[0]}")
    return x @ W + b, x


def dense_backward(dout, x, W):
    cin, cout = W.shape
    dW = x.reshape(-1, cin).T @ dout.reshape(-1, cout)
    db = dout.reshape(-1, cout).sum(axis=0)
    return dout @ W.T, dW, db


def dense_act_forward(x, W, b, slope=SLOPE):
    pre, _ = dense_forward(x, W, b)
    return lrelu(pre, slope), (x, pre)


def dense_act_backward(dout, cache, W, slope=SLOPE):
    x, pre = cache
    return dense_backward(dout * lrelu_grad(pre, slope), x, W)


def pointwise_mlp_forward(x, weights, slope=SLOPE):
    """Shared per-point ``lrelu(x @ W + b)`` for each ``(W, b)`` in turn."""
    caches = []
    for W, b in weights:
        x, c = dense_act_forward(x, W, b, slope)
        caches.append(c)
    return x, caches


def pointwise_mlp_backward(dout, caches, weights, slope=SLOPE):
    grads = []
    for (W, _), c in zip(reversed(weights), reversed(caches)):
        dout, dW, db = dense_act_backward(dout, c, W, slope)
        grads.append((dW, db))
    return dout, grads[::-1]


def maxpool_forward(x):
    """Channel-wise max over the point axis: ``(..., n, c) -> (..., c)``.

    On ties the smallest point index wins (numpy argmax convention).
    """
    idx = np.argmax(x, axis=-2)
    out = np.take_along_axis(x, idx[..., None, :], axis=-2)[..., 0, :]
    return out, (x.shape, idx)


def maxpool_backward(dout, cache):
    shape, idx = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    np.put_along_axis(dx, idx[..., None, :], dout[..., None, :], axis=-2)
    return dx


def _gather(Q, nbrs):
    """``Q[b, nbrs[b, i, j]]`` for ``Q (B, n, c)``, ``nbrs (B, n, k)``."""
    B = Q.shape[0]
    return Q[np.arange(B)[:, None, None], nbrs]


def edgeconv_forward(x, nbrs, W, b, slope=SLOPE):
    """EdgeConv: ``out_i = max_j lrelu([x_i, x_j - x_i] @ W + b)``.

    ``x`` is ``(B, n, c)``, ``nbrs`` is ``(B, n, k)`` and ``W`` is
    ``(2c, c_out)``.  Since lrelu is increasing the max is taken on the
    pre-activation; ties go to the first neighbor slot.
    """
    B, n, c = x.shape
    if nbrs.ndim != 3 or nbrs.shape[:2] != (B, n):
        raise ValueError(f"edgeconv: neighbor table shape {nbrs.shape} does not match input {x.shape}")
    if nbrs.shape[2] == 0:
        raise ValueError("edgeconv: neighbor rows are empty")
    if W.shape[0] != 2 * c:
        raise ValueError(f"edgeconv: input has {c} channels, weight expects {W.shape[0] // 2}")
    W_self, W_nbr = W[:c], W[c:]
    # [x_i, x_j - x_i] @ W = x_i @ (W_self - W_nbr) + x_j @ W_nbr
    P = x @ (W_self - W_nbr) + b
    Q = x @ W_nbr
    pre = P[:, :, None, :] + _gather(Q, nbrs)
    am = np.argmax(pre, axis=2)
    best = np.take_along_axis(pre, am[:, :, None, :], axis=2)[:, :, 0, :]
    return lrelu(best, slope), (x, nbrs, am, best)


def edgeconv_backward(dout, cache, W, slope=SLOPE):
    x, nbrs, am, best = cache
    B, n, c = x.shape
    co = W.shape[1]
    W_self, W_nbr = W[:c], W[c:]
    dbest = dout * lrelu_grad(best, slope)
    dP = dbest
    # route each (b, i, channel) to the winning neighbor's Q row
    node = np.take_along_axis(nbrs, am, axis=2)  # (B, n, co)
    flat = ((np.arange(B)[:, None, None] * n + node) * co + np.arange(co)).ravel()
    dQ = np.bincount(flat, weights=dbest.ravel(), minlength=B * n * co).reshape(B, n, co).astype(x.dtype)
    xf = x.reshape(-1, c)
    gP = xf.T @ dP.reshape(-1, co)
    gQ = xf.T @ dQ.reshape(-1, co)
    dW = np.concatenate([gP, gQ - gP], axis=0)
    db = dP.reshape(-1, co).sum(axis=0)
    dx = dP @ (W_self - W_nbr).T + dQ @ W_nbr.T
    return dx, dW, db


def edgeconv_reference(x, nbrs, W, b, slope=SLOPE):
    """Literal loop over points and neighbors; slow, used as a test oracle."""
    B, n, c = x.shape
    out = np.empty((B, n, W.shape[1]), dtype=x.dtype)
    for bi in range(B):
        for i in range(n):
            feats = []
            for j in nbrs[bi, i]:
                e = np.concatenate([x[bi, i], x[bi, j] - x[bi, i]])
                feats.append(lrelu(e @ W + b, slope))
            out[bi, i] = np.max(feats, axis=0)
    return out


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label):
    """Loss ``-log softmax(logits)[label]`` and its gradient ``softmax - onehot``.

    Works on a single logit vector or a batch ``(B, n)`` with ``label``
    of shape ``(B,)``; the batch loss is the mean and the gradient is scaled
    accordingly.  The loss is evaluated in float64.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    L = np.atleast_2d(logits).astype(np.float64)
    y = np.atleast_1d(np.asarray(label, dtype=np.int64))
    n = L.shape[-1]
    if np.any(y < 0) or np.any(y >= n):
        raise ValueError(f"label out of range [0, {n}): {y}")
    lp = log_softmax(L)
    rows = np.arange(len(y))
    loss = -lp[rows, y].mean()
    grad = np.exp(lp)
    grad[rows, y] -= 1.0
    grad /= len(y)
    grad = grad.astype(logits.dtype if logits.dtype.kind == "f" else np.float64)
    return float(loss), grad[0] if single else grad


class Adam:
    """Adam over a dict of parameter arrays (updated in place)."""

    def __init__(self, params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in params:
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


def glorot(rng, fan_in, fan_out, dtype=np.float32):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype)
