"""Diagnostics over trained aligners: dictionary activation statistics,
deterministic 2D projection, pose-perturbation sweeps, and ablation grids.

Everything here emits plain data (and CSV); figure rendering lives with the
CLI report path.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .aligner import AlignerConfig, AlignerParams, forward_reps
from .contrastive import contrastive_loss, cosine_sim_matrix
from .geometry import EulerAngles
from .seeding import STREAM_PERTURB, sub_rng
from .synth import PairBatch
from .train import TrainConfig, retrieval_eval, smoothed_loss, train

POSE_BUCKETS = ("frontal", "left", "right", "up", "down")
FRONTAL_BAND = 15.0

ABLATION_HEADER = "pooling,dict_atoms,euler_enabled,perturb_range,final_loss,retrieval_accuracy,mean_drift"
ACTIVATION_HEADER = "kind,bucket,atom_index,count,value"
PROJECTION_HEADER = "id,bucket,x,y"


def pose_bucket(e: EulerAngles) -> str:
    """Coarse pose class by dominant angle, with a 15-degree frontal band."""
    if abs(e.yaw) <= FRONTAL_BAND and abs(e.pitch) <= FRONTAL_BAND:
        return "frontal"
    if abs(e.yaw) >= abs(e.pitch):
        return "left" if e.yaw > 0 else "right"
    return "up" if e.pitch > 0 else "down"


def top_k_atoms(weights: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest weights, descending, ties to the lowest index."""
    weights = np.asarray(weights)
    if weights.ndim != 1:
        raise ValueError(f"expected a flat weight vector, got shape {weights.shape}")
    if not 1 <= k <= weights.size:
        raise ValueError(f"k must be in [1, {weights.size}], got {k}")
    order = np.argsort(-weights, kind="stable")
    return order[:k]


@dataclass
class ActivationStats:
    top_k: int
    histograms: dict[str, Counter]
    within_jaccard: dict[str, float]
    cross_jaccard: float

    @property
    def mean_within_jaccard(self) -> float:
        return float(np.mean(list(self.within_jaccard.values())))


def _jaccard(a: frozenset, b: frozenset) -> float:
    return len(a & b) / len(a | b)


def activation_stats(
    weight_vectors: list[np.ndarray], buckets: list[str], k: int = 10
) -> ActivationStats:
    """Top-k activation histograms plus within/cross-bucket set overlap."""
    if len(weight_vectors) != len(buckets):
        raise ValueError("one bucket label per weight vector required")
    top_sets: dict[str, list[frozenset]] = {}
    histograms: dict[str, Counter] = {}
    for weights, bucket in zip(weight_vectors, buckets):
        atoms = top_k_atoms(np.asarray(weights), k)
        top_sets.setdefault(bucket, []).append(frozenset(int(a) for a in atoms))
        histograms.setdefault(bucket, Counter()).update(int(a) for a in atoms)
    if len(top_sets) < 2:
        raise ValueError(f"need at least 2 pose buckets, got {sorted(top_sets)}")
    for bucket, sets in top_sets.items():
        if len(sets) < 2:
            raise ValueError(f"bucket {bucket!r} has {len(sets)} samples; need at least 2")

    within = {}
    for bucket, sets in top_sets.items():
        pairs = [
            _jaccard(sets[i], sets[j]) for i in range(len(sets)) for j in range(i + 1, len(sets))
        ]
        within[bucket] = float(np.mean(pairs))
    names = sorted(top_sets)
    cross_pairs = []
    for i, first in enumerate(names):
        for second in names[i + 1:]:
            cross_pairs.extend(
                _jaccard(a, b) for a in top_sets[first] for b in top_sets[second]
            )
    return ActivationStats(
        top_k=k,
        histograms=histograms,
        within_jaccard=within,
        cross_jaccard=float(np.mean(cross_pairs)),
    )


# ---------------------------------------------------------------------------
# 2D projection

def project_2d(reps: np.ndarray, iterations: int = 100, tol: float = 1e-9) -> np.ndarray:
    """Project rows onto their top-2 principal directions.

    Uses orthogonal (subspace) power iteration on the covariance with a
    deterministic start from the first two coordinate axes; columns are
    ordered by explained variance at the end.
    """
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[0] < 3:
        raise ValueError(f"need at least 3 samples to project, got shape {reps.shape}")
    if reps.shape[1] < 2:
        raise ValueError("representations must have at least 2 dimensions")
    centered = reps - reps.mean(axis=0)
    if not np.any(centered):
        raise ValueError("cannot project rank-0 data (all rows identical)")
    cov = centered.T @ centered
    dim = cov.shape[0]
    basis = np.zeros((dim, 2))
    basis[0, 0] = 1.0
    basis[1, 1] = 1.0
    for _ in range(iterations):
        updated, _ = np.linalg.qr(cov @ basis)
        if np.linalg.norm(updated @ updated.T - basis @ basis.T) < tol:
            basis = updated
            break
        basis = updated
    variances = np.einsum("di,dc,ci->i", basis, cov, basis)
    basis = basis[:, np.argsort(-variances, kind="stable")]
    return centered @ basis


def separation_ratio(coords: np.ndarray, labels: list) -> float:
    """Mean inter-cluster centroid distance over mean intra-cluster spread."""
    coords = np.asarray(coords, dtype=np.float64)
    unique = sorted(set(labels), key=str)
    if len(unique) < 2:
        raise ValueError("separation ratio needs at least 2 clusters")
    labels = np.asarray(labels)
    centroids = {u: coords[labels == u].mean(axis=0) for u in unique}
    spreads = [
        float(np.linalg.norm(coords[labels == u] - centroids[u], axis=1).mean()) for u in unique
    ]
    gaps = [
        float(np.linalg.norm(centroids[a] - centroids[b]))
        for i, a in enumerate(unique)
        for b in unique[i + 1:]
    ]
    intra = float(np.mean(spreads))
    if intra == 0.0:
        return float("inf")
    return float(np.mean(gaps)) / intra


# ---------------------------------------------------------------------------
# perturbation sweeps and ablation grids

@dataclass(frozen=True)
class AblationResult:
    pooling: str
    dict_atoms: int
    euler_enabled: bool
    perturb_range: float
    final_loss: float
    retrieval_accuracy: float
    mean_drift: float

    def csv_row(self) -> str:
        return (
            f"{self.pooling},{int(self.dict_atoms)},{int(self.euler_enabled)},"
            f"{float(self.perturb_range)!r},{float(self.final_loss)!r},"
            f"{float(self.retrieval_accuracy)!r},{float(self.mean_drift)!r}"
        )


def _mean_cosine_drift(base: np.ndarray, perturbed: np.ndarray) -> float:
    dots = np.einsum("ij,ij->i", base, perturbed)
    norms = np.linalg.norm(base, axis=1) * np.linalg.norm(perturbed, axis=1)
    return float(np.mean(1.0 - dots / norms))


def perturbation_sweep(
    params: AlignerParams,
    config: AlignerConfig,
    batch: PairBatch,
    ranges: list[float],
    seed: int = 0,
) -> list[AblationResult]:
    """Representation drift and retrieval accuracy under angle noise.

    Each range r perturbs every evaluation angle by independent uniform
    noise in [-r, +r]. A zero range (or disabled pose injection) leaves the
    representations bitwise identical, so the drift is exactly 0.
    """
    base1 = forward_reps(batch.raw1, batch.angles1, params, config)
    base2 = forward_reps(batch.raw2, batch.angles2, params, config)
    base_accuracy = retrieval_eval(params, config, batch)
    results = []
    for index, r in enumerate(ranges):
        if r < 0:
            raise ValueError(f"perturbation range must be nonnegative, got {r}")
        rng = sub_rng(seed, STREAM_PERTURB, index)
        noise1 = rng.uniform(-r, r, size=batch.angles1.shape)
        noise2 = rng.uniform(-r, r, size=batch.angles2.shape)
        if not config.euler_enabled or (not noise1.any() and not noise2.any()):
            drift = 0.0
            accuracy = base_accuracy
            reps1, reps2 = base1, base2
        else:
            reps1 = forward_reps(batch.raw1, batch.angles1 + noise1, params, config)
            reps2 = forward_reps(batch.raw2, batch.angles2 + noise2, params, config)
            drift = 0.5 * (
                _mean_cosine_drift(base1, reps1) + _mean_cosine_drift(base2, reps2)
            )
            predictions = cosine_sim_matrix(reps1, reps2).argmax(axis=1)
            accuracy = float(np.mean(predictions == np.arange(batch.n)))
        loss = contrastive_loss(cosine_sim_matrix(reps1, reps2), params.log_temperature)
        results.append(
            AblationResult(
                pooling=config.pooling,
                dict_atoms=config.dict_atoms,
                euler_enabled=config.euler_enabled,
                perturb_range=float(r),
                final_loss=loss,
                retrieval_accuracy=accuracy,
                mean_drift=drift,
            )
        )
    return results


def ablation_grid(
    base_cfg: TrainConfig,
    poolings: list[str] | None = None,
    dict_sizes: list[int] | None = None,
    euler_settings: list[bool] | None = None,
    seeds: list[int] | None = None,
    smoothing_window: int = 50,
) -> list[AblationResult]:
    """Train one model per (pooling, atoms, euler) cell with shared seeds.

    Reported metrics are the per-cell medians across seeds; rows come back
    sorted by config descriptor.
    """
    poolings = poolings or [base_cfg.pooling]
    dict_sizes = dict_sizes or [base_cfg.dict_atoms]
    euler_settings = euler_settings if euler_settings is not None else [base_cfg.euler_enabled]
    seeds = seeds or [base_cfg.seed]
    if not poolings or not dict_sizes or not euler_settings or not seeds:
        raise ValueError("every ablation axis needs at least one value")

    results = []
    for pooling in sorted(poolings):
        for atoms in sorted(dict_sizes):
            for euler_enabled in sorted(euler_settings):
                losses, accuracies = [], []
                for seed in seeds:
                    cfg = replace(
                        base_cfg,
                        pooling=pooling,
                        dict_atoms=atoms,
                        euler_enabled=euler_enabled,
                        seed=seed,
                    )
                    _, metrics = train(cfg)
                    window = min(smoothing_window, max(cfg.steps, 1))
                    losses.append(smoothed_loss(metrics.rows, cfg.steps, window))
                    accuracies.append(metrics.retrieval_accuracy)
                results.append(
                    AblationResult(
                        pooling=pooling,
                        dict_atoms=atoms,
                        euler_enabled=euler_enabled,
                        perturb_range=0.0,
                        final_loss=float(np.median(losses)),
                        retrieval_accuracy=float(np.median(accuracies)),
                        mean_drift=0.0,
                    )
                )
    return results


# ---------------------------------------------------------------------------
# CSV output

def write_ablation_csv(path, results: list[AblationResult]) -> None:
    ordered = sorted(
        results,
        key=lambda r: (r.pooling, r.dict_atoms, r.euler_enabled, r.perturb_range),
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ABLATION_HEADER + "\n")
        for row in ordered:
            fh.write(row.csv_row() + "\n")


def write_activation_csv(path, stats: ActivationStats) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ACTIVATION_HEADER + "\n")
        for bucket in sorted(stats.histograms):
            for atom, count in sorted(stats.histograms[bucket].items()):
                fh.write(f"histogram,{bucket},{atom},{count},\n")
        for bucket in sorted(stats.within_jaccard):
            fh.write(f"within_jaccard,{bucket},,,{float(stats.within_jaccard[bucket])!r}\n")
        fh.write(f"cross_jaccard,,,,{float(stats.cross_jaccard)!r}\n")


def write_projection_csv(path, coords: np.ndarray, ids: list, buckets: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(PROJECTION_HEADER + "\n")
        for row_id, bucket, (x, y) in zip(ids, buckets, coords):
            fh.write(f"{row_id},{bucket},{float(x)!r},{float(y)!r}\n")
