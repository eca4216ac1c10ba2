"""Sequential pseudo-labels from the anomaly activation map."""

import math

import numpy as np


def normalize_activation(raw) -> np.ndarray:
    """Min-max normalize along time; a constant map becomes all zeros."""
    raw = np.asarray(raw, dtype=np.float64).ravel()
    if not np.all(np.isfinite(raw)):
        raise ValueError("activation map contains non-finite values")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def interval_bounds(T: int, L: int) -> list[tuple[int, int]]:
    """Half-open 0-based intervals of length ceil(T/L); trailing ones may be short or empty."""
    if not 1 <= L <= T:
        raise ValueError(f"need 1 <= L <= T, got L={L}, T={T}")
    width = math.ceil(T / L)
    return [(min(l * width, T), min((l + 1) * width, T)) for l in range(L)]


def phi(activation, L: int, tau: float) -> np.ndarray:
    """Bit ``l`` is 1 iff the max activation in interval ``l`` is >= tau.

    An empty trailing interval (possible when L * ceil(T/L) - T >= ceil(T/L))
    yields bit 0.
    """
    m = np.asarray(activation, dtype=np.float64).ravel()
    bits = np.zeros(L, dtype=np.int64)
    for l, (a, b) in enumerate(interval_bounds(m.size, L)):
        if b > a and m[a:b].max() >= tau:
            bits[l] = 1
    return bits


def masked_labels(bits, y: int) -> tuple[np.ndarray, np.ndarray]:
    """Split the pseudo-label into (positive, negative) by the instance label."""
    bits = np.asarray(bits, dtype=np.int64)
    y = int(y)
    return y * bits, (1 - y) * bits
