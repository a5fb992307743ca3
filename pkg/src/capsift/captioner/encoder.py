"""Image feature extraction.

The built-in encoder is three fixed random convolution stages (3x3, stride 2,
ReLU, zero bias) followed by block-average pooling down to a square grid.
Its filters are drawn once from a seeded generator and never trained, so the
captioner learns against a frozen feature space. Externally computed features
can be injected instead via the tensor container format.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DataFormatError, ParameterError
from ..tensorio import load_tensors, save_tensors

FEATURE_TENSOR_NAME = "features"


def _conv3x3_stride2(image: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Valid 3x3 stride-2 convolution with 1-pixel zero padding.

    image: (H, W, C_in), filters: (3, 3, C_in, C_out) -> (H/2, W/2, C_out).
    """
    h, w, c_in = image.shape
    padded = np.zeros((h + 2, w + 2, c_in))
    padded[1:-1, 1:-1, :] = image
    out_h, out_w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
    patches = np.empty((out_h, out_w, 3, 3, c_in))
    for dy in range(3):
        for dx in range(3):
            patches[:, :, dy, dx, :] = padded[dy : dy + 2 * out_h : 2, dx : dx + 2 * out_w : 2, :]
    flat = patches.reshape(out_h * out_w, 9 * c_in)
    return (flat @ filters.reshape(9 * c_in, -1)).reshape(out_h, out_w, -1)


class TinyEncoder:
    """Frozen random convolutional encoder producing an (L, D) feature map."""

    def __init__(
        self,
        feature_dim: int = 32,
        grid_size: int = 4,
        input_size: int = 32,
        seed: int = 0,
    ):
        reduced = input_size
        for _ in range(3):
            reduced = (reduced - 1) // 2 + 1
        if reduced % grid_size != 0:
            raise ParameterError(
                f"input_size {input_size} reduces to {reduced}, not divisible by grid {grid_size}"
            )
        self.feature_dim = feature_dim
        self.grid_size = grid_size
        self.input_size = input_size
        self.seed = seed
        self.num_locations = grid_size * grid_size
        channels = [3, max(4, feature_dim // 4), max(4, feature_dim // 2), feature_dim]
        rng = np.random.default_rng(seed)
        self.filters = [
            rng.normal(0.0, 1.0 / np.sqrt(9 * channels[i]), size=(3, 3, channels[i], channels[i + 1]))
            for i in range(3)
        ]

    @property
    def feature_shape(self) -> tuple[int, int]:
        return (self.num_locations, self.feature_dim)

    def encode_pixels(self, pixels: np.ndarray) -> np.ndarray:
        """(input_size, input_size, 3) floats in [0, 1] -> (L, D) feature map."""
        expected = (self.input_size, self.input_size, 3)
        if pixels.shape != expected:
            raise ParameterError(f"expected pixels of shape {expected}, got {pixels.shape}")
        x = np.asarray(pixels, dtype=np.float64)
        for filt in self.filters:
            x = np.maximum(_conv3x3_stride2(x, filt), 0.0)
        block = x.shape[0] // self.grid_size
        pooled = x.reshape(
            self.grid_size, block, self.grid_size, block, self.feature_dim
        ).mean(axis=(1, 3))
        return pooled.reshape(self.num_locations, self.feature_dim)

    def encode_image(self, data: bytes | Image.Image) -> np.ndarray:
        return self.encode_pixels(self.preprocess(data))

    def preprocess(self, data: bytes | Image.Image) -> np.ndarray:
        """Decode, convert to RGB, resize to the encoder input, scale to [0, 1]."""
        if isinstance(data, Image.Image):
            img = data
        else:
            try:
                img = Image.open(io.BytesIO(data))
                img.load()
            except (UnidentifiedImageError, OSError) as exc:
                raise DataFormatError(f"cannot decode image: {exc}") from exc
        img = img.convert("RGB").resize(
            (self.input_size, self.input_size), Image.Resampling.BILINEAR
        )
        return np.asarray(img, dtype=np.float64) / 255.0

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "grid_size": self.grid_size,
            "input_size": self.input_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TinyEncoder":
        return cls(**payload)


def reference_encoder(seed: int = 0) -> TinyEncoder:
    """Full-scale configuration: 224x224 input, 14x14 grid, 512-dim features."""
    return TinyEncoder(feature_dim=512, grid_size=14, input_size=224, seed=seed)


def save_feature_map(path: str | Path, features: np.ndarray) -> None:
    save_tensors(path, {FEATURE_TENSOR_NAME: np.asarray(features, dtype=np.float64)})


def load_feature_map(
    path: str | Path | bytes, expected_shape: tuple[int, int] | None = None
) -> np.ndarray:
    """Read an injected (L, D) feature map from the tensor container format."""
    if isinstance(path, bytes):
        from ..tensorio import parse_tensors

        tensors = parse_tensors(path)
    else:
        tensors = load_tensors(path)
    if FEATURE_TENSOR_NAME not in tensors:
        raise DataFormatError(f"feature file missing tensor {FEATURE_TENSOR_NAME!r}")
    features = tensors[FEATURE_TENSOR_NAME]
    if features.ndim != 2:
        raise DataFormatError(f"feature map must be 2-D, got shape {features.shape}")
    if expected_shape is not None and features.shape != tuple(expected_shape):
        raise DataFormatError(
            f"feature map shape {features.shape} does not match expected {expected_shape}"
        )
    if not np.all(np.isfinite(features)):
        raise DataFormatError("feature map contains non-finite values")
    return features
