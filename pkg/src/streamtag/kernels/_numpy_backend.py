"""Pure-numpy attention kernel (reference backend)."""

import numpy as np


def attention_heads(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    """softmax(q @ k.T * scale) @ v per head.

    q: (H, N, hd), k/v: (H, M, hd) -> (H, N, hd), float64.
    """
    logits = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=-1, keepdims=True)
    return np.matmul(weights, v)
