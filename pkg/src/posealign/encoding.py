"""Deterministic sinusoidal embeddings of Euler angles.

Frequencies are integer multiples k = 1..dim/2 of the base angle, so the
encoding is exactly 360-degree periodic by construction (a geometric
frequency ladder would only be approximately periodic). Angles are reduced
modulo 360 in degrees, where the arithmetic is exact, before the radian
conversion.
"""

from __future__ import annotations

import numpy as np

from .geometry import EulerAngles


def angle_budgets(dim: int) -> tuple[int, int, int]:
    """Split an even embedding dim >= 6 into three even per-angle budgets.

    Leftover sin/cos pairs go to the leading angles, so dims divisible by 6
    split into equal thirds.
    """
    if dim < 6 or dim % 2 != 0:
        raise ValueError(f"euler embedding dim must be an even integer >= 6, got {dim}")
    pairs, rem = divmod(dim // 2, 3)
    return tuple(2 * (pairs + (1 if i < rem else 0)) for i in range(3))


def _wrap_degrees(angles: np.ndarray) -> np.ndarray:
    # Same fmod-then-fold arithmetic as geometry.normalize_angle, vectorized.
    wrapped = np.fmod(angles, 360.0)
    wrapped = np.where(wrapped < -180.0, wrapped + 360.0, wrapped)
    wrapped = np.where(wrapped >= 180.0, wrapped - 360.0, wrapped)
    return wrapped + 0.0


def encode_angle_batch(angles_deg: np.ndarray, dim: int) -> np.ndarray:
    """Encode a vector of n angles into an (n, dim) sin/cos feature block."""
    if dim <= 0 or dim % 2 != 0:
        raise ValueError(f"angle embedding dim must be a positive even integer, got {dim}")
    angles_deg = np.asarray(angles_deg, dtype=np.float64)
    if not np.all(np.isfinite(angles_deg)):
        raise ValueError("angles must be finite")
    theta = np.radians(_wrap_degrees(angles_deg))
    freqs = np.arange(1, dim // 2 + 1, dtype=np.float64)
    phase = np.multiply.outer(theta, freqs)
    return np.hstack([np.sin(phase), np.cos(phase)])


def encode_angle(angle_deg: float, dim: int) -> np.ndarray:
    """Encode one angle in degrees as [sin(k*theta)..., cos(k*theta)...]."""
    return encode_angle_batch(np.array([angle_deg], dtype=np.float64), dim)[0]


def encode_euler_batch(angles_deg: np.ndarray, dim: int) -> np.ndarray:
    """Encode an (n, 3) array of (pitch, yaw, roll) degrees into (n, dim)."""
    angles_deg = np.asarray(angles_deg, dtype=np.float64)
    if angles_deg.ndim != 2 or angles_deg.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) angle array, got shape {angles_deg.shape}")
    budgets = angle_budgets(dim)
    blocks = [encode_angle_batch(angles_deg[:, i], budgets[i]) for i in range(3)]
    return np.hstack(blocks)


def encode_euler(e: EulerAngles, dim: int) -> np.ndarray:
    """Encode one pose as the concatenation of its per-angle encodings."""
    return encode_euler_batch(np.array([e.as_tuple()], dtype=np.float64), dim)[0]
