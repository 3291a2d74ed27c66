"""Layer kernels with exact backpropagation.

Everything operates on plain numpy arrays: float32 in training, float64
when checking gradients against finite differences. Convolutions are 3x3,
stride 1, zero 'same' padding, cross-correlation semantics (no kernel
flip); upsampling is 2x nearest neighbor. The 3x3 convolution inner loops
live in the kernels package (numba by default, numpy fallback).
"""

from __future__ import annotations

import numpy as np

from . import kernels


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; the documented RNG for init, shuffling, and noise."""
    return np.random.Generator(np.random.PCG64(seed))


def glorot_uniform(fan_in: int, fan_out: int, shape, rng: np.random.Generator,
                   dtype=np.float32) -> np.ndarray:
    """Uniform on [-L, L] with L = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w + b with x (B, n_in), w (n_in, n_out)."""
    return x @ w + b


def fc_backward(x: np.ndarray, w: np.ndarray, grad: np.ndarray):
    """Gradients (gx, gw, gb) of a scalar loss given upstream grad (B, n_out)."""
    return grad @ w.T, x.T @ grad, grad.sum(axis=0)


def conv2d_forward(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[1] != k.shape[1]:
        raise ValueError(f"input has {x.shape[1]} maps, kernel expects {k.shape[1]}")
    return kernels.conv2d_forward(x, k, b)


def conv2d_backward(x: np.ndarray, k: np.ndarray, grad: np.ndarray):
    """Gradients (gx, gk, gb) for the 3x3 same-padding cross-correlation."""
    gx = kernels.conv2d_input_grad(grad, k)
    gk, gb = kernels.conv2d_param_grad(x, grad)
    return gx, gk, gb


def upsample2x_forward(x: np.ndarray) -> np.ndarray:
    """Each pixel becomes a 2x2 block: (B, C, H, W) -> (B, C, 2H, 2W)."""
    return x.repeat(2, axis=-2).repeat(2, axis=-1)


def upsample2x_backward(grad: np.ndarray) -> np.ndarray:
    """Sum each 2x2 block of the upstream gradient."""
    B, C, H2, W2 = grad.shape
    return grad.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5))


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Derivative at exactly zero is defined as zero."""
    return grad * (x > 0)


def mae_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def mae_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """sign(pred - target) / element count, with sign(0) = 0."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return np.sign(pred - target) / pred.size


def sgd_step(params, grads, lr: float):
    """In-place plain SGD: p <- p - lr * g."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for p, g in zip(params, grads):
        kernels.sgd_update(p, g.astype(p.dtype, copy=False), lr)


def assert_finite(name: str, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite values in {name}")
