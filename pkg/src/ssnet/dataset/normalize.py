"""Per-epoch, per-channel z-score normalization."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ssnet.errors import NonFiniteInput

EPS_STD = 1e-8


def zscore_array(x: np.ndarray, eps: float = EPS_STD) -> np.ndarray:
    """z-score along the last axis with the population (1/N) std.

    Channels whose std is at most ``eps`` become all zeros. Statistics are
    computed in float64 and the result is cast back to the input dtype.
    """
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("z-score input contains NaN or Inf")
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    centered = x64 - mean
    std = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    flat = std <= eps
    out = centered / np.where(flat, 1.0, std)
    out = np.where(flat, 0.0, out)
    return out.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)


def zscore(epoch: np.ndarray) -> np.ndarray:
    """Normalize one epoch [channels, samples] channel by channel."""
    return zscore_array(epoch)


def normalize_set(epochs, chunk: int = 4096):
    """z-score every epoch and channel of an EpochSet."""
    x = np.empty_like(epochs.x)
    for lo in range(0, len(x), chunk):
        x[lo : lo + chunk] = zscore_array(epochs.x[lo : lo + chunk])
    return replace(epochs, x=x, normalized=True)


def stats(epoch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population std."""
    e = np.asarray(epoch, dtype=np.float64)
    return e.mean(axis=-1), e.std(axis=-1)
