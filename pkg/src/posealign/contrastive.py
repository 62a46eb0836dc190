"""Symmetric contrastive objective over paired global representations.

Two batches of representations of the same n identities under different
poses form an n x n cosine-similarity matrix; matched identities sit on the
diagonal. The loss is the mean of the two directional cross-entropy terms
(rows: view 1 against all of view 2, columns: the reverse), with a
learnable similarity scale. Minimizing it maximizes a lower bound
ln(n) - loss on the mutual information shared across poses.
"""

from __future__ import annotations

import math

import numpy as np

from .aligner import LOG_TEMPERATURE_MAX, LOG_TEMPERATURE_MIN


def tau_from_log_scale(log_scale: float) -> float:
    """Effective temperature tau = 1 / exp(log_scale)."""
    return 1.0 / math.exp(log_scale)


def clamp_log_scale(log_scale: float) -> float:
    """Keep exp(log_scale) in [1, 100]; applied after every optimizer step."""
    return min(max(log_scale, LOG_TEMPERATURE_MIN), LOG_TEMPERATURE_MAX)


def cosine_sim_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between the rows of a and b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"expected two equal (n, D) stacks, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    for name, norms in (("first", na), ("second", nb)):
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValueError(f"zero-norm representation at index {zero[0]} of the {name} batch")
    return (a @ b.T) / np.outer(na, nb)


def _directional_ce(z: np.ndarray) -> float:
    # Mean over rows of logsumexp(row) - diagonal, with max subtraction
    # (scales up to 100 push raw exps out of range).
    row_max = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - row_max).sum(axis=1)) + row_max[:, 0]
    return float(np.mean(lse - np.diag(z)))


def contrastive_loss(sim: np.ndarray, log_scale: float) -> float:
    """Mean of the two directional cross-entropy terms of sim * exp(log_scale)."""
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1] or sim.shape[0] < 1:
        raise ValueError(f"expected a square similarity matrix, got shape {sim.shape}")
    if not np.all(np.isfinite(sim)):
        raise ValueError("similarity matrix contains non-finite entries")
    z = sim * math.exp(log_scale)
    return 0.5 * (_directional_ce(z) + _directional_ce(z.T))


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=axis, keepdims=True)


def loss_and_sim_grad(sim: np.ndarray, log_scale: float) -> tuple[float, np.ndarray, float]:
    """Loss plus its gradients with respect to sim and log_scale."""
    sim = np.asarray(sim, dtype=np.float64)
    n = sim.shape[0]
    scale = math.exp(log_scale)
    z = sim * scale
    loss = 0.5 * (_directional_ce(z) + _directional_ce(z.T))
    d_z = (0.5 / n) * (_softmax(z, axis=1) + _softmax(z, axis=0) - 2.0 * np.eye(n))
    d_sim = scale * d_z
    d_log_scale = scale * float((d_z * sim).sum())
    return loss, d_sim, d_log_scale


def cosine_backward(
    a: np.ndarray, b: np.ndarray, sim: np.ndarray, d_sim: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate a similarity-matrix gradient to the two rep stacks."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    inv = d_sim / np.outer(na, nb)
    d_a = inv @ b - ((d_sim * sim).sum(axis=1) / na**2)[:, None] * a
    d_b = inv.T @ a - ((d_sim * sim).sum(axis=0) / nb**2)[:, None] * b
    return d_a, d_b


def mi_lower_bound(loss: float, n: int) -> float:
    """Lower bound ln(n) - loss on the mutual information across the pair."""
    if n < 1:
        raise ValueError(f"batch size must be a positive integer, got {n}")
    if not math.isfinite(loss):
        raise ValueError(f"loss must be finite, got {loss!r}")
    return math.log(n) - loss
