"""Dictionary-space pose alignment: tokenization, pose injection, pooled
dictionary weights, and the global representation, with exact analytic
parameter gradients.

Per face image the pipeline is

    tokens  = raw @ tokenizer_weights            (L, D)
    tokens += encode_euler(pose) @ euler_proj     broadcast over rows
    corr    = tokens @ dictionary.T               (L, C)
    weights = pool over rows of corr              (C,)
    rep     = weights @ dictionary                (D,)

All arithmetic is float64. Batched kernels stack the same operations over
a leading batch axis; the scalar entry points delegate to them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .encoding import encode_euler, encode_euler_batch
from .geometry import EulerAngles
from .seeding import STREAM_PARAMS, sub_rng

POOLINGS = ("max", "mean", "sum")

# Learnable similarity scale: tau = 1 / exp(log_temperature), clamped so
# exp(log_temperature) stays in [1, 100] after every optimizer step.
TAU_INIT = 0.07
LOG_TEMPERATURE_INIT = math.log(1.0 / TAU_INIT)
LOG_TEMPERATURE_MAX = math.log(100.0)
LOG_TEMPERATURE_MIN = 0.0

ARRAY_FIELDS = ("tokenizer_weights", "euler_proj", "dictionary")
PARAM_FIELDS = ARRAY_FIELDS + ("log_temperature",)


@dataclass(frozen=True)
class AlignerConfig:
    """Shapes and switches of one aligner instance."""

    num_tokens: int = 16      # L, rows of the token matrix
    feature_dim: int = 24     # F, raw per-token feature width
    token_dim: int = 64       # D, token embedding width
    dict_atoms: int = 256     # C, number of dictionary rows
    pooling: str = "max"
    euler_enabled: bool = True

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if min(self.num_tokens, self.feature_dim, self.dict_atoms) < 1 or self.token_dim < 6:
            raise ValueError(f"invalid aligner dims: {self}")
        if self.euler_enabled and self.token_dim % 2 != 0:
            raise ValueError("token_dim must be even when euler injection is enabled")


@dataclass
class AlignerParams:
    """Learnable state. Also reused as the container for gradients."""

    tokenizer_weights: np.ndarray  # (F, D)
    euler_proj: np.ndarray         # (D, D)
    dictionary: np.ndarray         # (C, D)
    log_temperature: float

    def copy(self) -> "AlignerParams":
        return AlignerParams(
            tokenizer_weights=self.tokenizer_weights.copy(),
            euler_proj=self.euler_proj.copy(),
            dictionary=self.dictionary.copy(),
            log_temperature=float(self.log_temperature),
        )

    def zeros_like(self) -> "AlignerParams":
        return AlignerParams(
            tokenizer_weights=np.zeros_like(self.tokenizer_weights),
            euler_proj=np.zeros_like(self.euler_proj),
            dictionary=np.zeros_like(self.dictionary),
            log_temperature=0.0,
        )

    def all_finite(self) -> bool:
        return (
            bool(np.all(np.isfinite(self.tokenizer_weights)))
            and bool(np.all(np.isfinite(self.euler_proj)))
            and bool(np.all(np.isfinite(self.dictionary)))
            and math.isfinite(self.log_temperature)
        )


def init_params(config: AlignerConfig, seed: int) -> AlignerParams:
    """Random initialization keeping initial correlations O(1).

    Tokenizer and pose projection are uniform in +-1/sqrt(fan_in); dictionary
    atoms are standard normal scaled by 1/sqrt(D).
    """
    rng = sub_rng(seed, STREAM_PARAMS)
    f, d, c = config.feature_dim, config.token_dim, config.dict_atoms
    bound_f = 1.0 / math.sqrt(f)
    bound_d = 1.0 / math.sqrt(d)
    return AlignerParams(
        tokenizer_weights=rng.uniform(-bound_f, bound_f, size=(f, d)),
        euler_proj=rng.uniform(-bound_d, bound_d, size=(d, d)),
        dictionary=rng.standard_normal((c, d)) / math.sqrt(d),
        log_temperature=LOG_TEMPERATURE_INIT,
    )


# ---------------------------------------------------------------------------
# per-sample operations

def tokenize(raw: np.ndarray, params: AlignerParams) -> np.ndarray:
    """Project raw (L, F) per-token features to (L, D) token embeddings."""
    raw = np.asarray(raw, dtype=np.float64)
    f = params.tokenizer_weights.shape[0]
    if raw.ndim != 2 or raw.shape[1] != f:
        raise ValueError(f"expected raw features of shape (L, {f}), got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw features must be finite")
    return raw @ params.tokenizer_weights


def inject_pose(
    tokens: np.ndarray, e: EulerAngles, params: AlignerParams, enabled: bool = True
) -> np.ndarray:
    """Add the projected pose embedding to every token row (no-op if disabled)."""
    if not enabled:
        return tokens
    d = params.euler_proj.shape[0]
    if tokens.ndim != 2 or tokens.shape[1] != d:
        raise ValueError(f"expected tokens of shape (L, {d}), got {tokens.shape}")
    shift = encode_euler(e, d) @ params.euler_proj
    return tokens + shift[None, :]


def pool_rows(corr: np.ndarray, pooling: str) -> np.ndarray:
    """Pool an (L, C) correlation matrix over rows into a (C,) weight vector."""
    if pooling == "max":
        return corr.max(axis=0)
    if pooling == "mean":
        return corr.mean(axis=0)
    if pooling == "sum":
        return corr.sum(axis=0)
    raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


def dictionary_weights(tokens: np.ndarray, params: AlignerParams, pooling: str = "max") -> np.ndarray:
    """Pooled correlations of tokens against every dictionary atom."""
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError(f"expected a nonempty (L, D) token matrix, got shape {tokens.shape}")
    if tokens.shape[1] != params.dictionary.shape[1]:
        raise ValueError(
            f"token dim {tokens.shape[1]} does not match dictionary dim {params.dictionary.shape[1]}"
        )
    return pool_rows(tokens @ params.dictionary.T, pooling)


def global_rep(weights: np.ndarray, params: AlignerParams) -> np.ndarray:
    """Weighted combination of dictionary atoms, the (D,) output per face."""
    weights = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(weights)):
        raise ValueError("dictionary weights must be finite")
    return weights @ params.dictionary


def forward(
    raw: np.ndarray,
    e: EulerAngles,
    params: AlignerParams,
    pooling: str = "max",
    euler_enabled: bool = True,
) -> np.ndarray:
    """Full per-sample pipeline from raw features to the global representation."""
    tokens = inject_pose(tokenize(raw, params), e, params, enabled=euler_enabled)
    return global_rep(dictionary_weights(tokens, params, pooling), params)


# ---------------------------------------------------------------------------
# batched kernels

@dataclass
class ForwardCache:
    """Intermediates of a batched forward pass needed by the backward pass."""

    raws: np.ndarray              # (B, L, F)
    encodings: np.ndarray | None  # (B, D) pose encodings, None when disabled
    tokens: np.ndarray            # (B, L, D)
    weights: np.ndarray           # (B, C)
    argmax_rows: np.ndarray | None  # (B, C) winning row per atom (max pooling)
    reps: np.ndarray              # (B, D)


def forward_batch(
    raws: np.ndarray,
    encodings: np.ndarray | None,
    params: AlignerParams,
    pooling: str,
) -> ForwardCache:
    """Run the aligner over a (B, L, F) stack of raw feature matrices."""
    raws = np.asarray(raws, dtype=np.float64)
    tokens = raws @ params.tokenizer_weights
    if encodings is not None:
        tokens = tokens + (encodings @ params.euler_proj)[:, None, :]
    corr = tokens @ params.dictionary.T  # (B, L, C)
    argmax_rows = None
    if pooling == "max":
        argmax_rows = corr.argmax(axis=1)  # first max wins: lowest row index
        weights = np.take_along_axis(corr, argmax_rows[:, None, :], axis=1)[:, 0, :]
    elif pooling == "mean":
        weights = corr.mean(axis=1)
    elif pooling == "sum":
        weights = corr.sum(axis=1)
    else:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    reps = weights @ params.dictionary
    return ForwardCache(raws, encodings, tokens, weights, argmax_rows, reps)


def backward_batch(
    cache: ForwardCache,
    d_reps: np.ndarray,
    params: AlignerParams,
    pooling: str,
    grads: AlignerParams,
) -> None:
    """Accumulate parameter gradients for d(loss)/d(reps) into ``grads``.

    Max pooling routes each atom's gradient entirely to its winning row
    (ties already resolved to the lowest index by the forward pass). For
    mean/sum pooling every token row receives the same gradient, which
    collapses the per-row contractions to batch-level ones.
    """
    b, l, d = cache.tokens.shape
    c = params.dictionary.shape[0]
    d_weights = d_reps @ params.dictionary.T          # (B, C)
    grads.dictionary += cache.weights.T @ d_reps      # rep = weights @ dictionary

    if pooling == "max":
        d_corr = np.zeros((b, l, c))
        np.put_along_axis(d_corr, cache.argmax_rows[:, None, :], d_weights[:, None, :], axis=1)
        # winning token per (sample, atom): corr grad flows only there
        winners = np.take_along_axis(
            cache.tokens, cache.argmax_rows[:, :, None], axis=1
        )  # (B, C, D)
        grads.dictionary += np.einsum("bc,bcd->cd", d_weights, winners)
        d_tokens = d_corr @ params.dictionary         # (B, L, D)
        grads.tokenizer_weights += cache.raws.reshape(b * l, -1).T @ d_tokens.reshape(b * l, d)
        if cache.encodings is not None:
            grads.euler_proj += cache.encodings.T @ d_tokens.sum(axis=1)
    else:
        scale = 1.0 / l if pooling == "mean" else 1.0
        d_row = scale * d_weights                     # (B, C), shared by every row
        token_sum = cache.tokens.sum(axis=1)          # (B, D)
        grads.dictionary += d_row.T @ token_sum
        d_token_row = d_row @ params.dictionary       # (B, D), gradient of each row
        raw_sum = cache.raws.sum(axis=1)              # (B, F)
        grads.tokenizer_weights += raw_sum.T @ d_token_row
        if cache.encodings is not None:
            grads.euler_proj += cache.encodings.T @ (l * d_token_row)


def encode_poses(angles_deg: np.ndarray, config: AlignerConfig) -> np.ndarray | None:
    """Batch-encode (n, 3) pose angles, or None when injection is disabled."""
    if not config.euler_enabled:
        return None
    return encode_euler_batch(angles_deg, config.token_dim)


def forward_reps(
    raws: np.ndarray,
    angles_deg: np.ndarray,
    params: AlignerParams,
    config: AlignerConfig,
) -> np.ndarray:
    """Convenience wrapper: (B, L, F) raws + (B, 3) angles -> (B, D) reps."""
    return forward_batch(raws, encode_poses(angles_deg, config), params, config.pooling).reps


def config_with(config: AlignerConfig, **changes) -> AlignerConfig:
    return replace(config, **changes)
