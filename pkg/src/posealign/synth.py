"""Deterministic synthetic identity/pose generator.

Raw per-token features mix an identity term and a pose term additively:

    raw = identity_gain * (A @ z)  broadcast over token rows
        + pose_gain * (B . g(pose))
        + gaussian noise

with z the identity latent and g(pose) the sin/cos features of the three
angles. Because the pose term is additive, identity stays linearly
decodable from the features for any pose, so the contrastive task is
solvable by construction. Every draw is keyed by (seed, stream, counter);
there is no global random state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import EulerAngles
from .seeding import (
    STREAM_BATCH,
    STREAM_EVAL,
    STREAM_IDENTITY,
    STREAM_NOISE,
    STREAM_WORLD,
    sub_rng,
)

POSE_FEATURES = 6  # sin/cos per angle


@dataclass(frozen=True)
class SynthWorldParams:
    identity_dim: int = 16
    num_tokens: int = 16
    feature_dim: int = 24
    noise_sigma: float = 0.05
    # Identity energy sits well below the pose term so an untrained aligner
    # retrieves at chance while the additive structure keeps the task
    # solvable; training then has to actively suppress the pose subspace.
    identity_gain: float = 0.3
    pose_gain: float = 2.0
    pool_size: int = 512
    pitch_range: tuple[float, float] = (-90.0, 90.0)
    yaw_range: tuple[float, float] = (-90.0, 90.0)
    roll_range: tuple[float, float] = (-45.0, 45.0)
    min_separation: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if min(self.identity_dim, self.num_tokens, self.feature_dim, self.pool_size) < 1:
            raise ValueError(f"invalid synthetic world dims: {self}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")


@dataclass
class SynthSample:
    identity_id: int
    identity_latent: np.ndarray
    pose: EulerAngles
    raw_features: np.ndarray


@dataclass
class PairBatch:
    """Two views per identity, the training/eval batch layout."""

    identity_ids: np.ndarray  # (n,)
    raw1: np.ndarray          # (n, L, F)
    raw2: np.ndarray
    angles1: np.ndarray       # (n, 3) degrees
    angles2: np.ndarray

    @property
    def n(self) -> int:
        return len(self.identity_ids)


class SynthWorld:
    """Materialized mixing matrices plus keyed sampling helpers."""

    def __init__(self, params: SynthWorldParams):
        self.params = params
        rng = sub_rng(params.seed, STREAM_WORLD)
        k, l, f = params.identity_dim, params.num_tokens, params.feature_dim
        # Entry scales keep both terms O(1) per feature.
        self.identity_mixer = rng.standard_normal((f, k)) / np.sqrt(k)
        self.pose_mixer = rng.standard_normal((l, f, POSE_FEATURES)) / np.sqrt(POSE_FEATURES)
        self._latent_cache: dict[int, np.ndarray] = {}

    def identity_latent(self, identity_id: int) -> np.ndarray:
        cached = self._latent_cache.get(identity_id)
        if cached is None:
            rng = sub_rng(self.params.seed, STREAM_IDENTITY, identity_id)
            cached = rng.standard_normal(self.params.identity_dim)
            self._latent_cache[identity_id] = cached
        return cached

    def pose_features(self, angles_deg: np.ndarray) -> np.ndarray:
        """(..., 3) degrees -> (..., 6) interleaved sin/cos features."""
        theta = np.radians(np.asarray(angles_deg, dtype=np.float64))
        out = np.empty(theta.shape[:-1] + (POSE_FEATURES,))
        out[..., 0::2] = np.sin(theta)
        out[..., 1::2] = np.cos(theta)
        return out

    def render_clean(self, z: np.ndarray, angles_deg: np.ndarray) -> np.ndarray:
        """Noise-free (L, F) features for one identity latent and pose."""
        p = self.params
        identity_term = p.identity_gain * (self.identity_mixer @ z)
        pose_term = p.pose_gain * (self.pose_mixer @ self.pose_features(angles_deg))
        return identity_term[None, :] + pose_term

    def render(self, z: np.ndarray, e: EulerAngles, draw: int = 0) -> np.ndarray:
        """Rendered features with noise keyed by (seed, draw index)."""
        return self._noisy(self.render_clean(z, np.array(e.as_tuple())), (draw,))

    def _noisy(self, clean: np.ndarray, key: tuple[int, ...]) -> np.ndarray:
        p = self.params
        if p.noise_sigma == 0.0:
            return clean
        rng = sub_rng(p.seed, STREAM_NOISE, *key)
        return clean + p.noise_sigma * rng.standard_normal(clean.shape)

    def make_sample(self, identity_id: int, pose: EulerAngles, draw: int = 0) -> SynthSample:
        z = self.identity_latent(identity_id)
        return SynthSample(identity_id, z, pose, self.render(z, pose, draw))

    # -- batch sampling ----------------------------------------------------

    def _draw_pose(self, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        return np.array(
            [
                rng.uniform(*p.pitch_range),
                rng.uniform(*p.yaw_range),
                rng.uniform(*p.roll_range),
            ]
        )

    def _draw_pose_pair(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        first = self._draw_pose(rng)
        for _ in range(10_000):
            second = self._draw_pose(rng)
            if np.abs(second - first).sum() >= p.min_separation:
                return first, second
        raise RuntimeError("could not draw a pose pair with the required separation")

    def _assemble_pairs(
        self, ids: np.ndarray, rng: np.random.Generator, stream: int, counter: int
    ) -> PairBatch:
        p = self.params
        n = len(ids)
        raw1 = np.empty((n, p.num_tokens, p.feature_dim))
        raw2 = np.empty_like(raw1)
        angles1 = np.empty((n, 3))
        angles2 = np.empty((n, 3))
        for i, identity in enumerate(ids):
            z = self.identity_latent(int(identity))
            angles1[i], angles2[i] = self._draw_pose_pair(rng)
            raw1[i] = self.render_clean(z, angles1[i])
            raw2[i] = self.render_clean(z, angles2[i])
        if p.noise_sigma > 0.0:
            noise_rng = sub_rng(p.seed, STREAM_NOISE, stream, counter)
            raw1 += p.noise_sigma * noise_rng.standard_normal(raw1.shape)
            raw2 += p.noise_sigma * noise_rng.standard_normal(raw2.shape)
        return PairBatch(np.asarray(ids), raw1, raw2, angles1, angles2)

    def make_pair_batch(self, n: int, counter: int, stream: int = STREAM_BATCH) -> PairBatch:
        """n distinct identities from the pool, two separated poses each."""
        p = self.params
        if n < 1:
            raise ValueError(f"batch size must be >= 1, got {n}")
        if n > p.pool_size:
            raise ValueError(f"batch of {n} identities exceeds the pool of {p.pool_size}")
        rng = sub_rng(p.seed, stream, counter)
        ids = rng.choice(p.pool_size, size=n, replace=False)
        return self._assemble_pairs(ids, rng, stream, counter)

    def make_pair_batch_for_ids(
        self, ids: np.ndarray, counter: int, stream: int
    ) -> PairBatch:
        """Pair batch over explicit identity ids (e.g. a held-out range)."""
        rng = sub_rng(self.params.seed, stream, counter)
        return self._assemble_pairs(np.asarray(ids, dtype=np.int64), rng, stream, counter)

    def held_out_ids(self, m: int) -> np.ndarray:
        """m identity ids disjoint from the training pool."""
        return self.params.pool_size + np.arange(m, dtype=np.int64)


# Bucket centers for pose-clustered evaluation sets, matching the
# dominant-angle bucket rule in analysis (15-degree frontal band).
BUCKET_CENTERS = {
    "frontal": (0.0, 0.0, 0.0),
    "left": (0.0, 45.0, 0.0),
    "right": (0.0, -45.0, 0.0),
    "up": (45.0, 0.0, 0.0),
    "down": (-45.0, 0.0, 0.0),
}


@dataclass
class BucketSamples:
    raws: np.ndarray          # (B, L, F)
    angles: np.ndarray        # (B, 3)
    buckets: list[str] = field(default_factory=list)
    identity_ids: list[int] = field(default_factory=list)


def make_bucket_samples(
    world: SynthWorld,
    identity_ids: np.ndarray,
    jitter: float = 10.0,
    counter: int = 0,
    stream: int = STREAM_BATCH,
) -> BucketSamples:
    """Pose-clustered samples: every identity appears once per bucket."""
    p = world.params
    rng = sub_rng(p.seed, stream, counter)
    raws, angles, buckets, ids = [], [], [], []
    for bucket, center in BUCKET_CENTERS.items():
        for j, identity in enumerate(identity_ids):
            pose = np.array(center) + rng.uniform(-jitter, jitter, size=3)
            z = world.identity_latent(int(identity))
            raws.append(world._noisy(world.render_clean(z, pose), (stream, counter, len(raws))))
            angles.append(pose)
            buckets.append(bucket)
            ids.append(int(identity))
    return BucketSamples(np.stack(raws), np.stack(angles), buckets, ids)


def make_pose_grid(
    world: SynthWorld,
    identity_ids: np.ndarray,
    poses_each: int,
    counter: int = 0,
    stream: int = STREAM_EVAL,
) -> BucketSamples:
    """Several uniformly drawn poses per identity (projection-style evals)."""
    p = world.params
    rng = sub_rng(p.seed, stream, counter, 1)
    raws, angles, ids = [], [], []
    for identity in identity_ids:
        z = world.identity_latent(int(identity))
        for _ in range(poses_each):
            pose = world._draw_pose(rng)
            raws.append(world._noisy(world.render_clean(z, pose), (stream, counter, 1, len(raws))))
            angles.append(pose)
            ids.append(int(identity))
    return BucketSamples(np.stack(raws), np.stack(angles), buckets=[], identity_ids=ids)


def export_tracks_jsonl(
    world: SynthWorld,
    path,
    n_tracks: int = 20,
    frames_per_track: int = 24,
    counter: int = 0,
) -> None:
    """Write synthetic pose tracks in the curation input format.

    Each track sweeps linearly between two drawn poses; every third track
    gets a shrunken sweep so the variation scores straddle the curation
    threshold across tracks.
    """
    p = world.params
    rng = sub_rng(p.seed, STREAM_BATCH, counter, n_tracks)
    width, height = 832, 480
    with open(path, "w", encoding="utf-8") as fh:
        for t in range(n_tracks):
            start = world._draw_pose(rng)
            end = world._draw_pose(rng)
            if t % 3 == 2:  # low-variation track
                end = start + 0.1 * (end - start)
            cx = rng.uniform(120, width - 120)
            cy = rng.uniform(100, height - 100)
            half = rng.uniform(40, 80)
            frames = []
            for j in range(frames_per_track):
                alpha = j / max(frames_per_track - 1, 1)
                pose = (1 - alpha) * start + alpha * end
                frames.append(
                    {
                        "i": j,
                        "faces": 1,
                        "bbox": [cx - half, cy - half, cx + half, cy + half],
                        "euler": [round(v, 4) for v in pose.tolist()],
                    }
                )
            record = {
                "video_id": f"synth-{t:04d}",
                "width": width,
                "height": height,
                "frames": frames,
            }
            fh.write(json.dumps(record) + "\n")
