import pytest

from posealign.synth import SynthWorld
from posealign.train import TrainConfig, train

DESK_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def desk_models():
    """Desk-default models for the acceptance seeds, trained once per session."""
    models = {}
    for seed in DESK_SEEDS:
        cfg = TrainConfig(seed=seed)
        params, metrics = train(cfg)
        models[seed] = (cfg, params, metrics, SynthWorld(cfg.world_params()))
    return models


@pytest.fixture()
def tiny_cfg():
    """Small, fast configuration for unit-level training tests."""
    return TrainConfig(
        n_pairs_per_batch=8,
        steps=40,
        dict_atoms=32,
        token_dim=12,
        num_tokens=6,
        feature_dim=10,
        seed=0,
        eval_identities=8,
    )
