"""Model parameters: construction, shape validation and (de)serialization.

All learned tensors live in a flat name -> float64 array mapping so the
optimizer, the gradient checker and the serializer can treat them uniformly.

Tensor map (E = embed_dim, H = hidden_dim, D = feature_dim, K = vocab_size):

    embedding            (E, K)   word embedding, one column per vocab entry
    att_w1 / att_b1      (H, D+H) / (H,)   attention net hidden layer
    att_w2 / att_b2      (H,) / ()         attention net scalar output
    lstm_W{i,f,c,o}      (H, E)   input-to-gate
    lstm_U{i,f,c,o}      (H, H)   hidden-to-gate
    lstm_Z{i,f,c,o}      (H, D)   context-to-gate
    lstm_b{i,f,c,o}      (H,)     gate bias
    init_h_w1 / _b1 / _w2 / _b2   (H, D) / (H,) / (H, H) / (H,)  h0 net
    init_c_w1 / _b1 / _w2 / _b2   same shapes                    c0 net
    out_w                (K, E)   logit projection
    out_h                (E, H)   hidden-state term of the output layer
    out_z                (E, D)   context term of the output layer
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataFormatError, ParameterError
from ..tensorio import load_tensors, save_tensors
from .config import ModelConfig

GATES = ("i", "f", "c", "o")

INIT_SCALE = 0.1


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    e, h, d, k = config.embed_dim, config.hidden_dim, config.feature_dim, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "embedding": (e, k),
        "att_w1": (h, d + h),
        "att_b1": (h,),
        "att_w2": (h,),
        "att_b2": (),
        "out_w": (k, e),
        "out_h": (e, h),
        "out_z": (e, d),
    }
    for g in GATES:
        shapes[f"lstm_W{g}"] = (h, e)
        shapes[f"lstm_U{g}"] = (h, h)
        shapes[f"lstm_Z{g}"] = (h, d)
        shapes[f"lstm_b{g}"] = (h,)
    for net in ("init_h", "init_c"):
        shapes[f"{net}_w1"] = (h, d)
        shapes[f"{net}_b1"] = (h,)
        shapes[f"{net}_w2"] = (h, h)
        shapes[f"{net}_b2"] = (h,)
    return shapes


class ModelWeights:
    """All learned parameters of the captioner, keyed by tensor name."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = tensor_shapes(config)
        if set(tensors) != set(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ParameterError(f"tensor names mismatch (missing={missing}, extra={extra})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ParameterError(
                    f"tensor {name}: expected shape {shape}, got {tensors[name].shape}"
                )
            if not np.all(np.isfinite(tensors[name])):
                raise ParameterError(f"tensor {name} contains non-finite values")
        self.config = config
        self.tensors = {name: np.asarray(tensors[name], dtype=np.float64) for name in expected}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ModelWeights":
        """Small random init; biases start at zero."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in tensor_shapes(config).items():
            if name.endswith(("_b1", "_b2")) or name.startswith("lstm_b"):
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.normal(0.0, INIT_SCALE, size=shape)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelWeights":
        return cls(config, {n: np.zeros(s) for n, s in tensor_shapes(config).items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t) for name, t in self.tensors.items()}

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, {n: t.copy() for n, t in self.tensors.items()})

    def allclose(self, other: "ModelWeights") -> bool:
        return all(np.array_equal(self.tensors[n], other.tensors[n]) for n in self.tensors)

    # Persistence: binary container plus a JSON sidecar holding the
    # hyperparameters and (optionally) the vocabulary token list.

    @staticmethod
    def sidecar_path(path: str | Path) -> Path:
        return Path(str(path) + ".json")

    def save(
        self,
        path: str | Path,
        vocab_tokens: list[str] | None = None,
        extra: dict | None = None,
    ) -> None:
        save_tensors(path, self.tensors)
        sidecar = {"format_version": 1, "model": self.config.to_dict()}
        if vocab_tokens is not None:
            sidecar["vocab"] = list(vocab_tokens)
        if extra:
            sidecar.update(extra)
        self.sidecar_path(path).write_text(json.dumps(sidecar, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> tuple["ModelWeights", dict]:
        sidecar_file = cls.sidecar_path(path)
        if not sidecar_file.exists():
            raise DataFormatError(f"missing weights sidecar {sidecar_file}")
        sidecar = json.loads(sidecar_file.read_text(encoding="utf-8"))
        config = ModelConfig.from_dict(sidecar["model"])
        return cls(config, load_tensors(path)), sidecar
