"""Run configuration: one JSON file wiring training, the synthetic world,
curation, and analysis. Unknown keys are errors, and a loaded config
serializes back to an equivalent file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .synth import SynthWorldParams
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CurationSettings:
    threshold: float = 120.0
    max_faces: int = 1
    median_window: int = 0
    extrema_bias: float = 0.5


@dataclass(frozen=True)
class AnalysisSettings:
    top_k: int = 10
    eval_identities: int = 64
    projection_identities: int = 7
    poses_per_identity: int = 8
    bucket_identities: int = 12
    perturb_ranges: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)


@dataclass(frozen=True)
class TrainSettings:
    n_pairs_per_batch: int = 32
    steps: int = 2000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    pooling: str = "max"
    euler_enabled: bool = True
    dict_atoms: int = 256
    token_dim: int = 64
    num_tokens: int = 16
    feature_dim: int = 24


# World keys owned by the train side (duplicated there so the two cannot
# disagree); they are not accepted in the world section.
_WORLD_EXCLUDED = {"num_tokens", "feature_dim", "seed"}
_TUPLE_KEYS = {"pitch_range", "yaw_range", "roll_range", "perturb_ranges"}


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    output_dir: str = "out"
    train: TrainSettings = field(default_factory=TrainSettings)
    world: SynthWorldParams = field(default_factory=SynthWorldParams)
    curation: CurationSettings = field(default_factory=CurationSettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)

    def train_config(self, seed: int) -> TrainConfig:
        t = self.train
        return TrainConfig(
            n_pairs_per_batch=t.n_pairs_per_batch,
            steps=t.steps,
            learning_rate=t.learning_rate,
            beta1=t.beta1,
            beta2=t.beta2,
            eps=t.eps,
            pooling=t.pooling,
            euler_enabled=t.euler_enabled,
            dict_atoms=t.dict_atoms,
            token_dim=t.token_dim,
            num_tokens=t.num_tokens,
            feature_dim=t.feature_dim,
            seed=seed,
            eval_identities=self.analysis.eval_identities,
            world=self.world,
        )


def _section_fields(cls) -> dict[str, type]:
    return {f.name: f for f in fields(cls)}


def _parse_section(cls, payload: dict, section: str, skip: set[str] = frozenset()):
    known = _section_fields(cls)
    kwargs = {}
    for key, value in payload.items():
        if key in skip or key not in known:
            raise ConfigError(f"unknown key {key!r} in config section {section!r}")
        if key in _TUPLE_KEYS:
            if not isinstance(value, list):
                raise ConfigError(f"config key {section}.{key} must be a list")
            value = tuple(float(v) for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {section!r}: {exc}") from exc


def run_config_from_payload(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    known_top = {"seed", "output_dir", "train", "world", "curation", "analysis"}
    for key in payload:
        if key not in known_top:
            raise ConfigError(f"unknown key {key!r} at config top level")
    seed = payload.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError(f"config key 'seed' must be an integer, got {seed!r}")
    output_dir = payload.get("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError("config key 'output_dir' must be a string")

    def section(name):
        value = payload.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        return value

    return RunConfig(
        seed=seed,
        output_dir=output_dir,
        train=_parse_section(TrainSettings, section("train"), "train"),
        world=_parse_section(SynthWorldParams, section("world"), "world", skip=_WORLD_EXCLUDED),
        curation=_parse_section(CurationSettings, section("curation"), "curation"),
        analysis=_parse_section(AnalysisSettings, section("analysis"), "analysis"),
    )


def run_config_to_payload(cfg: RunConfig) -> dict:
    def section(obj, skip: set[str] = frozenset()) -> dict:
        out = {}
        for f in fields(obj):
            if f.name in skip:
                continue
            value = getattr(obj, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    payload = {
        "output_dir": cfg.output_dir,
        "train": section(cfg.train),
        "world": section(cfg.world, skip=_WORLD_EXCLUDED),
        "curation": section(cfg.curation),
        "analysis": section(cfg.analysis),
    }
    if cfg.seed is not None:
        payload["seed"] = cfg.seed
    return payload


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}")
    return run_config_from_payload(payload)


def save_run_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(run_config_to_payload(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
