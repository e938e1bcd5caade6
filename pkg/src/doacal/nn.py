"""Minimal differentiable building blocks in plain numpy.

Forward/backward pairs for 1-D convolution with zero padding, batch
normalization, ReLU, tanh, dense layers, and an MSE loss, plus an Adam
optimizer.  Every backward pass returns exact analytic gradients and is
checked against central finite differences in the test suite.  All
computation is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def conv1d_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-length 1-D convolution with zero padding, no bias.

    x: (B, C_in, N); w: (C_out, C_in, W) -> (B, C_out, N).  Odd widths
    pad symmetrically; even widths pad one extra sample on the right
    ((W-1)//2 left, W//2 right).
    """
    b, c_in, n = x.shape
    c_out, c_in_w, width = w.shape
    if c_in_w != c_in:
        raise ValueError("kernel input channels do not match the input")
    left = (width - 1) // 2
    right = width // 2
    xp = np.zeros((b, c_in, n + left + right), dtype=np.float64)
    xp[:, :, left:left + n] = x
    # Windows (B, C_in, N, W) as a strided view of the padded input.
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c_in, n, width), strides=(s[0], s[1], s[2], s[2]),
        writeable=False)
    return np.einsum("bcnw,ocw->bon", windows, w, optimize=True)


def conv1d_backward(x: np.ndarray, w: np.ndarray,
                    grad_y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``conv1d_forward`` w.r.t. input and kernel."""
    b, c_in, n = x.shape
    c_out, _, width = w.shape
    left = (width - 1) // 2
    right = width // 2
    xp = np.zeros((b, c_in, n + left + right), dtype=np.float64)
    xp[:, :, left:left + n] = x
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c_in, n, width), strides=(s[0], s[1], s[2], s[2]),
        writeable=False)
    grad_w = np.einsum("bon,bcnw->ocw", grad_y, windows, optimize=True)

    # grad_x is the full correlation of grad_y with the flipped kernel,
    # realized as windows over grad_y padded with the mirrored margins.
    gyp = np.zeros((b, c_out, n + left + right), dtype=np.float64)
    gyp[:, :, right:right + n] = grad_y
    s = gyp.strides
    gy_windows = np.lib.stride_tricks.as_strided(
        gyp, shape=(b, c_out, n, width), strides=(s[0], s[1], s[2], s[2]),
        writeable=False)
    grad_x = np.einsum("bonw,ocw->bcn", gy_windows, w[:, :, ::-1], optimize=True)
    return grad_x, grad_w


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray,
                      training: bool, momentum: float = BN_MOMENTUM,
                      eps: float = BN_EPS):
    """Per-channel batch normalization over (batch, length).

    x: (B, C, N).  In training mode batch statistics are used and the
    running averages are updated in place; in inference mode the running
    statistics are used.  Returns (y, cache).
    """
    if training:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    cache = (xhat, inv_std, gamma, training)
    return y, cache


def batchnorm_backward(cache, grad_y: np.ndarray):
    """Gradients of ``batchnorm_forward``: (grad_x, grad_gamma, grad_beta)."""
    xhat, inv_std, gamma, training = cache
    grad_gamma = np.sum(grad_y * xhat, axis=(0, 2))
    grad_beta = np.sum(grad_y, axis=(0, 2))
    gxhat = grad_y * gamma[None, :, None]
    if training:
        b, _, n = xhat.shape
        count = b * n
        grad_x = (inv_std[None, :, None] / count) * (
            count * gxhat
            - np.sum(gxhat, axis=(0, 2))[None, :, None]
            - xhat * np.sum(gxhat * xhat, axis=(0, 2))[None, :, None])
    else:
        grad_x = gxhat * inv_std[None, :, None]
    return grad_x, grad_gamma, grad_beta


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    return grad_y * mask


def tanh_forward(x: np.ndarray):
    y = np.tanh(x)
    return y, y


def tanh_backward(y: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    return grad_y * (1.0 - y * y)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map: x (B, D_in), w (D_out, D_in), b (D_out) -> (B, D_out)."""
    if x.shape[1] != w.shape[1]:
        raise ValueError("input width does not match the weight matrix")
    return x @ w.T + b[None, :]


def dense_backward(x: np.ndarray, w: np.ndarray, grad_y: np.ndarray):
    grad_x = grad_y @ w
    grad_w = grad_y.T @ x
    grad_b = grad_y.sum(axis=0)
    return grad_x, grad_w, grad_b


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries; returns (loss, grad_pred)."""
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad


@dataclass
class AdamState:
    """First/second moment accumulators and step count for Adam."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One Adam update over a dict of arrays; params updated in place.

    The learning-rate schedule (if any) is applied by the caller via
    ``state.lr``.  Raises on non-finite gradients.
    """
    state.step += 1
    t = state.step
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for '{key}'")
        if key not in state.m:
            state.m[key] = np.zeros_like(params[key])
            state.v[key] = np.zeros_like(params[key])
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * (g * g)
        mhat = state.m[key] / (1.0 - state.beta1 ** t)
        vhat = state.v[key] / (1.0 - state.beta2 ** t)
        params[key] -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


def scheduled_lr(base_lr: float, epoch: int, halve_every: int = 5) -> float:
    """Learning rate halved every ``halve_every`` epochs (epoch 0-based)."""
    if halve_every <= 0:
        return base_lr
    return base_lr * (0.5 ** (epoch // halve_every))
