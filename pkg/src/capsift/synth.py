"""Synthetic shapes-and-templates corpus.

Renders simple colored shapes on noisy backgrounds and pairs them with
template captions. Used to bootstrap demo datasets and to exercise training
end-to-end without any external imagery.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from itertools import product

import numpy as np
from PIL import Image

from .errors import ParameterError

SHAPES = ("circle", "square", "triangle", "stripe")
COLORS = {
    "red": (200, 40, 40),
    "green": (40, 170, 60),
    "blue": (50, 80, 200),
    "gray": (130, 130, 130),
}
SIZES = {"small": 0.18, "large": 0.34}
POSITIONS = {
    "top left": (0.30, 0.30),
    "top right": (0.70, 0.30),
    "bottom left": (0.30, 0.70),
    "bottom right": (0.70, 0.70),
}


@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray  # (H, W, 3) uint8
    caption: str

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.image).save(buf, format="PNG")
        return buf.getvalue()


def _render(shape: str, color: tuple[int, int, int], size: float,
            center: tuple[float, float], image_size: int, rng) -> np.ndarray:
    img = np.full((image_size, image_size, 3), 210, dtype=np.float64)
    img += rng.normal(0.0, 6.0, size=img.shape)
    cy, cx = center[1] * image_size, center[0] * image_size
    radius = size * image_size / 2.0
    ys, xs = np.mgrid[0:image_size, 0:image_size]
    if shape == "circle":
        mask = (ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2
    elif shape == "square":
        mask = (np.abs(ys - cy) <= radius) & (np.abs(xs - cx) <= radius)
    elif shape == "triangle":
        mask = (ys - cy <= radius) & (ys - cy >= -radius) & (
            np.abs(xs - cx) <= (ys - cy + radius) / 2.0
        )
    elif shape == "stripe":
        mask = np.abs((ys - cy) - 0.35 * (xs - cx)) <= radius / 2.0
    else:
        raise ParameterError(f"unknown shape {shape!r}")
    img[mask] = np.array(color, dtype=np.float64)
    return np.clip(img, 0, 255).astype(np.uint8)


def make_corpus(count: int = 16, seed: int = 0, image_size: int = 32) -> list[SynthSample]:
    """Deterministic sample set; combinations are drawn without replacement so
    every image-caption pair is distinct."""
    combos = list(product(SHAPES, COLORS, SIZES, POSITIONS))
    if count < 1 or count > len(combos):
        raise ParameterError(f"count must be in 1..{len(combos)}")
    rng = np.random.default_rng(seed)
    picks = rng.permutation(len(combos))[:count]
    samples = []
    for k in picks:
        shape, color, size, position = combos[int(k)]
        image = _render(shape, COLORS[color], SIZES[size], POSITIONS[position], image_size, rng)
        caption = f"a {size} {color} {shape} in the {position}"
        samples.append(SynthSample(image=image, caption=caption))
    return samples
