"""Model hyperparameters for the attention captioner."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import ParameterError


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions of the captioner plus decoding limits.

    vocab_size      number of vocabulary entries (incl. the four specials)
    embed_dim       word embedding size
    hidden_dim      LSTM state size (also the attention net's hidden width)
    feature_dim     per-location feature vector size
    num_locations   number of spatial feature locations
    max_caption_len maximum content tokens per caption
    output_uses_prev_hidden
                    feed the previous step's hidden state to the output layer
                    instead of the current one (off by default)
    """

    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    feature_dim: int = 32
    num_locations: int = 16
    max_caption_len: int = 20
    output_uses_prev_hidden: bool = False

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "feature_dim",
                     "num_locations", "max_caption_len"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.vocab_size < 4:
            raise ParameterError("vocab_size must cover the four special tokens")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**{k: payload[k] for k in cls.__dataclass_fields__ if k in payload})
