"""Checkpoint container: JSON with base64 little-endian float32 arrays.

Wire layout::

    {"format_version": 1,
     "config": {"L": .., "F": .., "D": .., "C": .., "pooling": "max",
                "euler_enabled": true},
     "arrays": {"<name>": {"shape": [..], "dtype": "f32", "data": "<base64>"}}}

Loading validates every array shape against the config and restores values
as float64.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .aligner import AlignerConfig, AlignerParams

FORMAT_VERSION = 1
_CONFIG_KEYS = ("L", "F", "D", "C", "pooling", "euler_enabled")


class CheckpointError(ValueError):
    pass


def _encode_array(values: np.ndarray) -> dict:
    arr = np.ascontiguousarray(values, dtype="<f4")
    return {
        "shape": list(arr.shape),
        "dtype": "f32",
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(name: str, entry: dict, expected_shape: tuple[int, ...]) -> np.ndarray:
    if entry.get("dtype") != "f32":
        raise CheckpointError(f"array {name!r}: unsupported dtype {entry.get('dtype')!r}")
    shape = tuple(entry.get("shape", ()))
    if shape != expected_shape:
        raise CheckpointError(
            f"array {name!r}: shape {list(shape)} does not match config shape {list(expected_shape)}"
        )
    try:
        raw = base64.b64decode(entry["data"], validate=True)
    except Exception as exc:
        raise CheckpointError(f"array {name!r}: invalid base64 payload") from exc
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != 4 * count:
        raise CheckpointError(
            f"array {name!r}: payload holds {len(raw) // 4} values, config expects {count}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def _expected_shapes(config: AlignerConfig) -> dict[str, tuple[int, ...]]:
    return {
        "tokenizer_weights": (config.feature_dim, config.token_dim),
        "euler_proj": (config.token_dim, config.token_dim),
        "dictionary": (config.dict_atoms, config.token_dim),
        "log_temperature": (1,),
    }


def save_checkpoint(path, params: AlignerParams, config: AlignerConfig) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": {
            "L": config.num_tokens,
            "F": config.feature_dim,
            "D": config.token_dim,
            "C": config.dict_atoms,
            "pooling": config.pooling,
            "euler_enabled": config.euler_enabled,
        },
        "arrays": {
            "tokenizer_weights": _encode_array(params.tokenizer_weights),
            "euler_proj": _encode_array(params.euler_proj),
            "dictionary": _encode_array(params.dictionary),
            "log_temperature": _encode_array(np.array([params.log_temperature])),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[AlignerParams, AlignerConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {payload.get('format_version')!r}"
        )
    raw_config = payload.get("config")
    if not isinstance(raw_config, dict):
        raise CheckpointError("checkpoint is missing its config block")
    missing = [k for k in _CONFIG_KEYS if k not in raw_config]
    if missing:
        raise CheckpointError(f"checkpoint config is missing keys: {missing}")
    config = AlignerConfig(
        num_tokens=int(raw_config["L"]),
        feature_dim=int(raw_config["F"]),
        token_dim=int(raw_config["D"]),
        dict_atoms=int(raw_config["C"]),
        pooling=str(raw_config["pooling"]),
        euler_enabled=bool(raw_config["euler_enabled"]),
    )
    arrays = payload.get("arrays")
    if not isinstance(arrays, dict):
        raise CheckpointError("checkpoint is missing its arrays block")
    expected = _expected_shapes(config)
    missing = [k for k in expected if k not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint arrays are missing: {missing}")
    decoded = {name: _decode_array(name, arrays[name], shape) for name, shape in expected.items()}
    params = AlignerParams(
        tokenizer_weights=decoded["tokenizer_weights"],
        euler_proj=decoded["euler_proj"],
        dictionary=decoded["dictionary"],
        log_temperature=float(decoded["log_temperature"][0]),
    )
    return params, config
