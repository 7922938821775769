"""Forward/backward kernels for the layers of a small CNN.

Backward functions take ``loss``: the gradient of the batch-mean objective
with respect to the layer output. Because the objective is a batch mean,
``loss`` already carries the 1/N factor, and weight gradients are plain sums
over the batch; they equal the batch average of per-sample gradients.
Arrays are NCHW and keep the dtype of their inputs.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(f"kernel {kernel} does not fit input {size} with padding {padding}")
    return out


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp, kh, kw, stride):
    """View of shape (N, C, H', W', kh, kw)."""
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride: int = 1, padding: int = 0):
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects input [N,C,H,W] and weights [K,C,kh,kw]")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {w.shape[1]}")
    K, C, kh, kw = w.shape
    conv_output_size(x.shape[2], kh, stride, padding)
    conv_output_size(x.shape[3], kw, stride, padding)
    win = _windows(_pad(x, padding), kh, kw, stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, H', W', K
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, loss, stride: int = 1, padding: int = 0):
    """Returns ``(grad_weights, grad_input)``.

    ``grad_weights[k, c, i, j] = sum over batch and output positions of
    activation window value times loss``. ``grad_input`` uses only the loss
    and the weights.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    loss = np.asarray(loss)
    N, C, H, W = x.shape
    K, _, kh, kw = w.shape
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    if loss.shape != (N, K, Ho, Wo) or w.shape[1] != C:
        raise ShapeError(f"loss shape {loss.shape} inconsistent with forward {(N, K, Ho, Wo)}")
    grad_w = conv2d_grad_weights(x, loss, kh, kw, stride, padding)
    return grad_w, conv2d_grad_input(w, loss, x.shape, stride, padding)


def conv2d_grad_weights(x, loss, kh, kw, stride=1, padding=0):
    win = _windows(_pad(np.asarray(x), padding), kh, kw, stride)
    return np.tensordot(loss, win, axes=([0, 2, 3], [0, 2, 3]))  # K, C, kh, kw


def conv2d_grad_input(w, loss, x_shape, stride=1, padding=0):
    N, C, H, W = x_shape
    K, _, kh, kw = w.shape
    Ho, Wo = loss.shape[2], loss.shape[3]
    dxp = np.zeros((N, C, H + 2 * padding, W + 2 * padding), dtype=np.result_type(w, loss))
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(loss, w[:, :, i, j], axes=([1], [0]))  # N, Ho, Wo, C
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += contrib.transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(dxp)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, loss):
    x = np.asarray(x)
    if np.shape(loss) != x.shape:
        raise ShapeError("relu loss shape mismatch")
    return np.where(x > 0, loss, 0).astype(np.result_type(loss))


def recompute_relu(activation):
    """Re-apply ReLU to a stored activation, zeroing any negative drift."""
    return np.maximum(activation, 0)


def maxpool_forward(x, window: int = 2, stride: int | None = None):
    """Returns ``(output, argmax)``; ``argmax`` indexes into each window, first max wins."""
    stride = stride or window
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError("maxpool expects [N,C,H,W]")
    conv_output_size(x.shape[2], window, stride, 0)
    conv_output_size(x.shape[3], window, stride, 0)
    win = _windows(x, window, window, stride)
    flat = win.reshape(win.shape[:4] + (window * window,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool_backward(loss, argmax, x_shape, window: int = 2, stride: int | None = None):
    stride = stride or window
    N, C, H, W = x_shape
    if loss.shape != argmax.shape:
        raise ShapeError("maxpool loss shape mismatch")
    Ho, Wo = argmax.shape[2], argmax.shape[3]
    rows = np.arange(Ho)[:, None] * stride + argmax // window
    cols = np.arange(Wo)[None, :] * stride + argmax % window
    plane = np.arange(N * C).reshape(N, C, 1, 1) * (H * W)
    flat_idx = (plane + rows * W + cols).ravel()
    dx = np.bincount(flat_idx, weights=np.asarray(loss, dtype=np.float64).ravel(), minlength=N * C * H * W)
    return dx.reshape(x_shape).astype(loss.dtype)


def fc_forward(x, w, b):
    x2 = np.asarray(x).reshape(len(x), -1)
    if x2.shape[1] != w.shape[1]:
        raise ShapeError(f"fc expects {w.shape[1]} features, got {x2.shape[1]}")
    return x2 @ w.T + b


def fc_backward(x, w, loss):
    """Returns ``(grad_w, grad_b, grad_input)``; grad_input has the shape of ``x``."""
    x = np.asarray(x)
    x2 = x.reshape(len(x), -1)
    if loss.shape != (len(x), w.shape[0]):
        raise ShapeError("fc loss shape mismatch")
    return loss.T @ x2, loss.sum(axis=0), (loss @ w).reshape(x.shape)


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    z = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError("softmax_xent expects logits [N,classes] and labels [N]")
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1
    return loss, (grad / n).astype(z.dtype)
