"""Minimal neural-network kernel: explicit forward/backward passes for the
layer set the ensemble needs, binary cross-entropy on logits, Adam, and a
finite-difference gradient checker.

Everything is float64. Layers are plain functions returning (output, cache);
the matching backward consumes exactly that cache.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NnError(Exception):
    pass


class ShapeMismatch(NnError):
    pass


class InputTooSmall(NnError):
    pass


class BatchTooSmall(NnError):
    pass


class NonFiniteTensor(NnError):
    pass


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteTensor(f"non-finite values entering {where}")


# sigmoid must stay strictly inside (0, 1) even when exp() under/overflows
_SIGMOID_LO = np.finfo(np.float64).tiny
_SIGMOID_HI = 1.0 - np.finfo(np.float64).epsneg


# ---------------------------------------------------------------- dense

def dense_forward(w: np.ndarray, b: np.ndarray, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense: x {x.shape} vs w {w.shape}")
    _check_finite(x, "dense")
    y = x @ w + b
    return y, (x, w)


def dense_backward(dy: np.ndarray, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------- conv2d

def conv2d_forward(kernel: np.ndarray, bias: np.ndarray, x: np.ndarray, stride: int):
    """Valid-padding cross-correlation. x is (N, C, H, W), kernel (O, C, kh, kw)."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeMismatch(f"conv2d: x {x.shape} vs kernel {kernel.shape}")
    _check_finite(x, "conv2d")
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    if h < kh or w < kw:
        raise InputTooSmall(f"conv2d: input {h}x{w} smaller than kernel {kh}x{kw}")
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, OH, OW, kh, kw)
    y = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2)) + bias[None, :, None, None]
    return y, (x, win, kernel, stride)


def conv2d_backward(dy: np.ndarray, cache):
    x, win, kernel, stride = cache
    o, c, kh, kw = kernel.shape
    oh, ow = dy.shape[2], dy.shape[3]
    db = dy.sum(axis=(0, 2, 3))
    dk = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)
    # Scatter gradients back through each kernel offset.
    dxw = np.tensordot(dy, kernel, axes=([1], [0]))  # (N, OH, OW, C, kh, kw)
    dx = np.zeros_like(x)
    for di in range(kh):
        for dj in range(kw):
            rows = slice(di, di + (oh - 1) * stride + 1, stride)
            cols = slice(dj, dj + (ow - 1) * stride + 1, stride)
            dx[:, :, rows, cols] += dxw[..., di, dj].transpose(0, 3, 1, 2)
    return dx, dk, db


# ---------------------------------------------------------------- pooling

def avgpool2_forward(x: np.ndarray):
    """Non-overlapping 2x2 mean pooling; odd trailing row/column dropped."""
    if x.ndim != 4:
        raise ShapeMismatch(f"avgpool2: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise InputTooSmall(f"avgpool2: spatial dims {h}x{w} below 2x2")
    h2, w2 = h // 2, w // 2
    y = x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))
    return y, x.shape


def avgpool2_backward(dy: np.ndarray, x_shape):
    n, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    dx = np.zeros(x_shape)
    spread = np.broadcast_to(
        (dy / 4.0)[:, :, :, None, :, None], (n, c, h2, 2, w2, 2)
    )
    dx[:, :, : 2 * h2, : 2 * w2] = spread.reshape(n, c, 2 * h2, 2 * w2)
    return dx


# ---------------------------------------------------------------- batchnorm

def batchnorm_forward(
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    x: np.ndarray,
    train: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
):
    """Per-channel normalization over all non-channel axes (channel = axis 1).

    Train mode normalizes by batch statistics and updates the running
    stats in place; eval mode uses the running stats.
    """
    _check_finite(x, "batchnorm")
    axes = (0,) + tuple(range(2, x.ndim))
    if train:
        if x.shape[0] < 2:
            raise BatchTooSmall("batchnorm needs batch size >= 2 in train mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
    shape = (1, -1) + (1,) * (x.ndim - 2)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    m = x.size // x.shape[1]
    return y, (xhat, gamma, inv, axes, shape, m, train)


def batchnorm_backward(dy: np.ndarray, cache):
    xhat, gamma, inv, axes, shape, m, train = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma.reshape(shape)
    if not train:
        return dxhat * inv.reshape(shape), dgamma, dbeta
    dx = (
        inv.reshape(shape)
        / m
        * (
            m * dxhat
            - dxhat.sum(axis=axes).reshape(shape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
        )
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------- pointwise

def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy: np.ndarray, mask):
    return dy * mask


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # extreme logits saturate in float64; pin them just inside (0, 1)
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI)


def dropout_forward(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator):
    """Inverted dropout: evaluation is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not train or rate == 0.0:
        return x, None
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), (mask, rate)


def dropout_backward(dy: np.ndarray, cache):
    if cache is None:
        return dy
    mask, rate = cache
    return dy * mask / (1.0 - rate)


# ---------------------------------------------------------------- loss

def bce_loss(logits: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy from pre-sigmoid logits.

    Uses the log-sum-exp form, so large logits cannot overflow. Returns
    (loss, gradient with respect to the logits).
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    t = np.asarray(y, dtype=np.float64).reshape(-1)
    if z.shape != t.shape:
        raise ShapeMismatch(f"bce: logits {z.shape} vs labels {t.shape}")
    n = len(z)
    per_sample = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    loss = per_sample.mean()
    dlogits = (sigmoid(z) - t) / n
    return loss, dlogits


# ---------------------------------------------------------------- adam

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 0.001) -> "AdamState":
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """One bias-corrected Adam update, applied to the params in place."""
    if len(params) != len(state.m):
        raise ShapeMismatch("adam state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"adam: param {p.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------- checking

def grad_check(loss_fn, params: list[np.ndarray], grads: list[np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must recompute the scalar loss from the current parameter
    values; every element of every parameter is perturbed in place to build
    the numeric gradient. The error is reported per parameter tensor as
    ||a - n|| / max(||a||, ||n||, 1e-12) and the max over tensors returned.

    The comparison is per tensor rather than per element because single
    elements can have true gradients below the finite-difference noise
    floor ulp(loss)/2h (about 1e-11 here), where an elementwise ratio
    measures rounding noise, not correctness. At the tolerances used by
    the tests, one wrong element still moves the tensor norm ratio far
    above the threshold (1/sqrt(n) of its relative size).
    """
    worst = 0.0
    for p, g in zip(params, grads):
        numeric = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            f_plus = loss_fn()
            p[idx] = orig - h
            f_minus = loss_fn()
            p[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * h)
        a_norm = float(np.linalg.norm(g))
        n_norm = float(np.linalg.norm(numeric))
        diff = float(np.linalg.norm(g - numeric))
        worst = max(worst, diff / max(a_norm, n_norm, 1e-12))
    return worst
