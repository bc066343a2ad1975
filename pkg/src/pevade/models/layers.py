"""Numpy building blocks with hand-written backward passes.

Everything is batch-first float64.  Max pooling routes gradients to the
first maximal element (numpy argmax order), which keeps every model
deterministic down to tie-breaking.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def strided_conv_forward(X: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Non-overlapping 1-D convolution: kernel size equals the stride.

    X is (B, L, C); W is (K*C, F).  Positions past the last full window
    are dropped.  Returns (Y, cols) with Y of shape (B, nwin, F).
    """
    B, L, C = X.shape
    KC, F = W.shape
    K = KC // C
    nwin = L // K
    cols = X[:, : nwin * K, :].reshape(B, nwin, KC)
    return cols @ W + b, cols


def strided_conv_backward(
    cols: np.ndarray, W: np.ndarray, dY: np.ndarray, length: int, channels: int
):
    """Gradients for :func:`strided_conv_forward`.

    Returns (dW, db, dX); positions dropped by the last partial window get
    zero gradient, matching the forward truncation.
    """
    B, nwin, KC = cols.shape
    F = dY.shape[-1]
    dW = cols.reshape(-1, KC).T @ dY.reshape(-1, F)
    db = dY.sum(axis=(0, 1))
    dcols = dY @ W.T
    dX = np.zeros((B, length, channels))
    dX[:, : nwin * (KC // channels), :] = dcols.reshape(B, -1, channels)
    return dW, db, dX


def unfold_same(X: np.ndarray, kernel: int):
    """(B, L, C) -> (B, L, K*C) windows under same-length zero padding."""
    pad_left = (kernel - 1) // 2
    pad_right = kernel - 1 - pad_left
    Xp = np.pad(X, ((0, 0), (pad_left, pad_right), (0, 0)))
    cols = sliding_window_view(Xp, kernel, axis=1)  # (B, L, C, K)
    B, L, C, K = cols.shape
    return np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(B, L, K * C)


def fold_same(dcols: np.ndarray, kernel: int, length: int, channels: int) -> np.ndarray:
    """Adjoint of :func:`unfold_same`."""
    B = dcols.shape[0]
    pad_left = (kernel - 1) // 2
    pad_right = kernel - 1 - pad_left
    d4 = dcols.reshape(B, length, kernel, channels)
    dXp = np.zeros((B, length + pad_left + pad_right, channels))
    for k in range(kernel):
        dXp[:, k : k + length, :] += d4[:, :, k, :]
    return dXp[:, pad_left : pad_left + length, :]


def maxpool_forward(X: np.ndarray, size: int):
    """(B, L, C) -> (B, L/size, C); L must be divisible by size."""
    B, L, C = X.shape
    S = X.reshape(B, L // size, size, C)
    arg = S.argmax(axis=2)
    out = np.take_along_axis(S, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, arg


def maxpool_backward(dY: np.ndarray, arg: np.ndarray, size: int) -> np.ndarray:
    B, P, C = dY.shape
    dS = np.zeros((B, P, size, C))
    np.put_along_axis(dS, arg[:, :, None, :], dY[:, :, None, :], axis=2)
    return dS.reshape(B, P * size, C)


def global_maxpool_forward(X: np.ndarray):
    """(B, L, C) -> (B, C) with the winning position per channel."""
    arg = X.argmax(axis=1)
    out = np.take_along_axis(X, arg[:, None, :], axis=1)[:, 0, :]
    return out, arg


def global_maxpool_backward(dY: np.ndarray, arg: np.ndarray, length: int) -> np.ndarray:
    B, C = dY.shape
    dX = np.zeros((B, length, C))
    np.put_along_axis(dX, arg[:, None, :], dY[:, None, :], axis=1)
    return dX


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)
