"""Named parameter arrays, initialization and versioned JSON persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericError
from ..seeding import rng_for
from .config import CALENDAR_DIM, N_FREQ_CLASSES, ModelConfig

FORMAT_VERSION = 1


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical array name -> shape map; iteration order is the canonical
    serialization order."""
    d, f = config.d_model, config.ff_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for p in config.patch_lengths:
        shapes[f"patch_w_{p}"] = (p, d)
        shapes[f"patch_b_{p}"] = (d,)
    shapes["cal_w"] = (CALENDAR_DIM, d)
    shapes["cal_b"] = (d,)
    shapes["freq_emb"] = (N_FREQ_CLASSES, d)
    if config.use_positional_embedding:
        shapes["pos_emb"] = (config.context_patches, d)
    for i in range(config.n_layers):
        shapes[f"l{i}.ln1_g"] = (d,)
        shapes[f"l{i}.ln1_b"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"l{i}.attn_{name}"] = (d, d)
        shapes[f"l{i}.ln2_g"] = (d,)
        shapes[f"l{i}.ln2_b"] = (d,)
        shapes[f"l{i}.gate_w"] = (d, config.n_experts)
        for e in range(config.n_experts):
            shapes[f"l{i}.e{e}.w1"] = (d, f)
            shapes[f"l{i}.e{e}.b1"] = (f,)
            shapes[f"l{i}.e{e}.w2"] = (f, d)
            shapes[f"l{i}.e{e}.b2"] = (d,)
    shapes["lnf_g"] = (d,)
    shapes["lnf_b"] = (d,)
    for p in config.patch_lengths:
        shapes[f"head_w_{p}"] = (d, 3 * p)
        shapes[f"head_b_{p}"] = (3 * p,)
    return shapes


@dataclass
class Parameters:
    """All learned arrays of the model, keyed by canonical names."""

    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def check_finite(self):
        for name, arr in self.arrays.items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"parameter array {name!r} contains non-finite values")

    def validate_shapes(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.arrays):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise DataError(f"array set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise DataError(
                    f"array {name!r} has shape {self.arrays[name].shape}, expected {shape}")


def init_params(config: ModelConfig, seed: int | None = None) -> Parameters:
    """Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains."""
    rng = rng_for(config.seed if seed is None else seed, "tsfm-init")
    arrays = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        is_ln_gain = "ln" in leaf and leaf.endswith("_g")
        is_bias = leaf in ("b1", "b2") or "_b" in leaf
        if is_ln_gain:
            arrays[name] = np.ones(shape)
        elif is_bias:
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.normal(0.0, 0.02, size=shape)
    return Parameters(config=config, arrays=arrays)


def save_params(params: Parameters, path) -> None:
    """Versioned JSON; round-trips 64-bit values exactly and is byte-stable."""
    params.validate_shapes()
    params.check_finite()
    doc = {
        "format_version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "arrays": {
            name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in params.arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, allow_nan=False)
        fh.write("\n")


def load_params(path) -> Parameters:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version!r}")
    config = ModelConfig.from_dict(doc["config"])
    expected = param_shapes(config)
    arrays = {}
    stored = doc.get("arrays", {})
    for name, shape in expected.items():
        if name not in stored:
            raise DataError(f"model file is missing array {name!r}")
        entry = stored[name]
        if tuple(entry["shape"]) != shape:
            raise DataError(
                f"array {name!r} has stored shape {tuple(entry['shape'])}, expected {shape}")
        arr = np.array(entry["values"], dtype=float)
        if arr.size != int(np.prod(shape)):
            raise DataError(f"array {name!r} has {arr.size} values, expected {int(np.prod(shape))}")
        arrays[name] = arr.reshape(shape)
    unexpected = set(stored) - set(expected)
    if unexpected:
        raise DataError(f"model file has unexpected arrays {sorted(unexpected)}")
    params = Parameters(config=config, arrays=arrays)
    params.check_finite()
    return params
