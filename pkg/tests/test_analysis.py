from dataclasses import replace

import numpy as np
import pytest

from posealign.analysis import (
    AblationResult,
    ablation_grid,
    activation_stats,
    perturbation_sweep,
    pose_bucket,
    project_2d,
    separation_ratio,
    top_k_atoms,
    write_ablation_csv,
    write_activation_csv,
    write_projection_csv,
)
from posealign.geometry import EulerAngles
from posealign.synth import SynthWorld
from posealign.train import TrainConfig, make_eval_batch, train


class TestPoseBucket:
    @pytest.mark.parametrize(
        "angles,expected",
        [
            ((0, 0, 0), "frontal"),
            ((10, -14, 40), "frontal"),
            ((0, 40, 0), "left"),
            ((0, -40, 0), "right"),
            ((40, 10, 0), "up"),
            ((-40, 10, 0), "down"),
            ((30, 30, 0), "left"),  # ties go to the yaw axis
        ],
    )
    def test_rule(self, angles, expected):
        assert pose_bucket(EulerAngles(*angles)) == expected


class TestTopKAtoms:
    def test_sorted_prefix(self):
        assert top_k_atoms(np.array([0.1, 0.9, 0.5]), 2).tolist() == [1, 2]

    def test_tie_break_lowest_index(self):
        assert top_k_atoms(np.array([0.5, 0.5, 0.5]), 2).tolist() == [0, 1]

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(0)
        weights = rng.standard_normal(100)
        got = top_k_atoms(weights, 10)
        expected = sorted(range(100), key=lambda i: (-weights[i], i))[:10]
        assert got.tolist() == expected

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            top_k_atoms(np.ones(4), 5)
        with pytest.raises(ValueError):
            top_k_atoms(np.ones(4), 0)

    def test_descending_weight_order(self):
        rng = np.random.default_rng(1)
        weights = rng.standard_normal(50)
        atoms = top_k_atoms(weights, 7)
        values = weights[atoms]
        assert np.all(np.diff(values) <= 0)


class TestActivationStats:
    def test_constructed_extremes(self):
        # identical top-k within buckets, disjoint across
        a = np.zeros(20)
        a[:3] = [3, 2, 1]
        b = np.zeros(20)
        b[10:13] = [3, 2, 1]
        stats = activation_stats([a, a, b, b], ["one", "one", "two", "two"], k=3)
        assert stats.within_jaccard == {"one": 1.0, "two": 1.0}
        assert stats.cross_jaccard == 0.0

    def test_identical_weights_everywhere(self):
        w = np.arange(20.0)
        stats = activation_stats([w] * 4, ["one", "one", "two", "two"], k=5)
        assert stats.mean_within_jaccard == 1.0
        assert stats.cross_jaccard == 1.0

    def test_histogram_mass(self):
        rng = np.random.default_rng(2)
        vectors = [rng.standard_normal(30) for _ in range(6)]
        buckets = ["a", "a", "a", "b", "b", "b"]
        stats = activation_stats(vectors, buckets, k=4)
        for bucket in ("a", "b"):
            assert sum(stats.histograms[bucket].values()) == 3 * 4

    def test_single_bucket_rejected(self):
        w = np.ones(10)
        with pytest.raises(ValueError):
            activation_stats([w, w], ["a", "a"], k=2)

    def test_single_sample_bucket_rejected(self):
        w = np.ones(10)
        with pytest.raises(ValueError):
            activation_stats([w, w, w], ["a", "a", "b"], k=2)


class TestProject2d:
    def test_2d_data_preserves_distances(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((20, 2))
        data -= data.mean(axis=0)
        coords = project_2d(data)
        original = np.linalg.norm(data[:, None] - data[None, :], axis=2)
        projected = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
        assert np.abs(original - projected).max() < 1e-6

    def test_line_data_second_coordinate_zero(self):
        rng = np.random.default_rng(4)
        direction = rng.standard_normal(6)
        direction /= np.linalg.norm(direction)
        data = np.outer(rng.standard_normal(15), direction)
        coords = project_2d(data)
        assert np.linalg.norm(coords[:, 1]) <= 1e-6 * np.linalg.norm(data)

    def test_axis_aligned_line_orders_components(self):
        # degenerate start: variance lives on the second coordinate axis
        values = np.linspace(-2, 2, 9)
        data = np.zeros((9, 5))
        data[:, 1] = values
        coords = project_2d(data)
        assert np.abs(coords[:, 0]).max() > 1.0
        assert np.linalg.norm(coords[:, 1]) <= 1e-9

    @pytest.mark.parametrize(
        "spectrum,iterations",
        [
            ([5, 3, 1, 1, 0.5, 0.5, 0.2, 0.1], 100),  # clear eigengap: defaults converge
            (None, 4000),  # raw random data can have a weak gap; iterate to convergence
        ],
    )
    def test_matches_eigensolver_oracle(self, spectrum, iterations):
        rng = np.random.default_rng(5)
        data = rng.standard_normal((50, 8))
        if spectrum is not None:
            data = data @ np.diag(spectrum)
        centered = data - data.mean(axis=0)
        coords = project_2d(data, iterations=iterations)
        eigvals, eigvecs = np.linalg.eigh(centered.T @ centered)
        oracle_basis = eigvecs[:, np.argsort(eigvals)[::-1][:2]]
        # principal angles between the two 2D subspaces
        got_basis, _ = np.linalg.qr(np.linalg.lstsq(centered, coords, rcond=None)[0])
        overlap = np.linalg.svd(oracle_basis.T @ got_basis, compute_uv=False)
        assert np.all(np.abs(overlap - 1.0) < 1e-6)

    def test_rank_zero_rejected(self):
        with pytest.raises(ValueError, match="rank-0"):
            project_2d(np.ones((5, 4)))

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            project_2d(np.random.default_rng(0).standard_normal((2, 4)))

    def test_rotation_invariant_distances(self):
        rng = np.random.default_rng(6)
        data = rng.standard_normal((30, 5))
        rotation, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        # weak-gap data: iterate well past the 100-step default so both
        # projections land on the same converged subspace
        a = project_2d(data, iterations=4000)
        b = project_2d(data @ rotation, iterations=4000)
        da = np.linalg.norm(a[:, None] - a[None, :], axis=2)
        db = np.linalg.norm(b[:, None] - b[None, :], axis=2)
        assert np.abs(da - db).max() < 1e-8


class TestSeparationRatio:
    def test_tight_clusters_far_apart(self):
        coords = np.array([[0, 0], [0.1, 0], [10, 0], [10.1, 0.0]])
        ratio = separation_ratio(coords, ["a", "a", "b", "b"])
        assert ratio > 50

    def test_single_cluster_rejected(self):
        with pytest.raises(ValueError):
            separation_ratio(np.zeros((4, 2)), ["a"] * 4)

    def test_zero_spread_is_infinite(self):
        coords = np.array([[0, 0], [0, 0], [5, 5], [5, 5]])
        assert separation_ratio(coords, ["a", "a", "b", "b"]) == float("inf")


@pytest.fixture(scope="module")
def tiny_trained():
    cfg = TrainConfig(
        n_pairs_per_batch=8,
        steps=150,
        dict_atoms=32,
        token_dim=12,
        num_tokens=6,
        feature_dim=10,
        seed=0,
        eval_identities=8,
    )
    params, metrics = train(cfg)
    return cfg, params, SynthWorld(cfg.world_params())


class TestPerturbationSweep:
    def test_zero_range_zero_drift(self, tiny_trained):
        cfg, params, world = tiny_trained
        batch = make_eval_batch(world, 8)
        results = perturbation_sweep(params, cfg.aligner_config(), batch, [0.0], seed=0)
        assert results[0].mean_drift == 0.0
        assert results[0].perturb_range == 0.0

    def test_euler_disabled_zero_drift_everywhere(self, tiny_trained):
        cfg, params, world = tiny_trained
        off = replace(cfg, euler_enabled=False).aligner_config()
        batch = make_eval_batch(world, 8)
        results = perturbation_sweep(params, off, batch, [0.0, 5.0, 20.0], seed=0)
        assert all(r.mean_drift == 0.0 for r in results)

    def test_drift_positive_with_euler(self, tiny_trained):
        cfg, params, world = tiny_trained
        batch = make_eval_batch(world, 8)
        results = perturbation_sweep(params, cfg.aligner_config(), batch, [15.0], seed=0)
        assert results[0].mean_drift > 0.0

    def test_negative_range_rejected(self, tiny_trained):
        cfg, params, world = tiny_trained
        batch = make_eval_batch(world, 8)
        with pytest.raises(ValueError):
            perturbation_sweep(params, cfg.aligner_config(), batch, [-1.0], seed=0)

    def test_deterministic(self, tiny_trained):
        cfg, params, world = tiny_trained
        batch = make_eval_batch(world, 8)
        a = perturbation_sweep(params, cfg.aligner_config(), batch, [5.0, 10.0], seed=4)
        b = perturbation_sweep(params, cfg.aligner_config(), batch, [5.0, 10.0], seed=4)
        assert a == b


class TestAblationGrid:
    def test_single_config_matches_plain_run(self, tiny_trained):
        cfg, _, _ = tiny_trained
        rows = ablation_grid(cfg)
        assert len(rows) == 1
        _, metrics = train(cfg)
        assert rows[0].retrieval_accuracy == metrics.retrieval_accuracy
        assert rows[0].pooling == cfg.pooling

    def test_grid_row_count_is_axis_product(self, tiny_cfg):
        cfg = replace(tiny_cfg, steps=5, eval_identities=4)
        rows = ablation_grid(cfg, poolings=["max", "sum"], dict_sizes=[16, 32],
                             euler_settings=[True, False])
        assert len(rows) == 8
        descriptors = [(r.pooling, r.dict_atoms, r.euler_enabled) for r in rows]
        assert descriptors == sorted(descriptors)

    def test_all_metrics_finite(self, tiny_cfg):
        cfg = replace(tiny_cfg, steps=5, eval_identities=4)
        rows = ablation_grid(cfg, dict_sizes=[16, 32])
        assert all(np.isfinite(r.final_loss) and np.isfinite(r.retrieval_accuracy) for r in rows)


class TestCsvWriters:
    def test_ablation_csv(self, tmp_path):
        rows = [
            AblationResult("sum", 32, True, 0.0, 1.0, 0.5, 0.0),
            AblationResult("max", 16, False, 0.0, 0.5, 0.9, 0.0),
        ]
        path = tmp_path / "ablation.csv"
        write_ablation_csv(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "pooling,dict_atoms,euler_enabled,perturb_range,final_loss,retrieval_accuracy,mean_drift"
        assert len(lines) == 3
        assert lines[1].startswith("max,16,0,")  # sorted by descriptor

    def test_activation_csv(self, tmp_path):
        a = np.zeros(20)
        a[:3] = [3, 2, 1]
        b = np.zeros(20)
        b[10:13] = [3, 2, 1]
        stats = activation_stats([a, a, b, b], ["one", "one", "two", "two"], k=3)
        path = tmp_path / "activation_stats.csv"
        write_activation_csv(path, stats)
        lines = path.read_text().splitlines()
        assert lines[0] == "kind,bucket,atom_index,count,value"
        assert any(line.startswith("within_jaccard,one") for line in lines)
        assert lines[-1].startswith("cross_jaccard")

    def test_projection_csv(self, tmp_path):
        coords = np.array([[1.5, -2.5], [0.25, 0.75]])
        path = tmp_path / "projection.csv"
        write_projection_csv(path, coords, [512, 513], ["frontal", "left"])
        lines = path.read_text().splitlines()
        assert lines[0] == "id,bucket,x,y"
        assert lines[1] == "512,frontal,1.5,-2.5"
